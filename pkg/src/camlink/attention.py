"""The embedding network: structural attention per snapshot, masked
temporal attention across the window, and a feed-forward head.

Structural layers attend over each node's graph neighborhood (plus
itself) within one snapshot; the first layer sees the raw appearance
feature concatenated with a learned camera encoding.  Temporal layers
run scaled dot-product attention over each node's window of per-step
representations (with a fixed sinusoidal step encoding added), masked
so a step attends only to present, non-future steps.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .dyngraph import GraphHistory
from .errors import ConfigError
from .linkpred import LinkClassifier
from . import numerics as nm

MODEL_FORMAT = "camlink-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The defaults are two structural layers with four 128-wide heads
    (512 features), two temporal layers with sixteen 8-wide heads
    (128 features), and a window of three snapshots.
    """

    feature_dim: int
    num_cameras: int
    camera_dim: int = 16
    structural_heads: tuple[int, ...] = (4, 4)
    structural_head_dim: tuple[int, ...] = (128, 128)
    temporal_heads: tuple[int, ...] = (16, 16)
    temporal_head_dim: tuple[int, ...] = (8, 8)
    ffn_hidden: int = 0          # 0 -> temporal output width
    out_dim: int = 0             # 0 -> temporal output width
    window: int = 3
    leaky_slope: float = 0.2
    classifier: str = "hadamard_mlp"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.feature_dim < 1 or self.num_cameras < 1 or self.camera_dim < 1:
            raise ConfigError("feature_dim, num_cameras and camera_dim must be positive")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        for heads, dims, tag in (
            (self.structural_heads, self.structural_head_dim, "structural"),
            (self.temporal_heads, self.temporal_head_dim, "temporal"),
        ):
            if len(heads) != len(dims) or not heads:
                raise ConfigError(f"{tag} heads/head_dim must be equal-length, non-empty")
            if any(h < 1 for h in heads) or any(d < 1 for d in dims):
                raise ConfigError(f"{tag} heads and head dims must be positive")
        if self.ffn_hidden < 0 or self.out_dim < 0:
            raise ConfigError("ffn_hidden and out_dim must be >= 0")
        from .linkpred import VARIANTS
        if self.classifier not in VARIANTS:
            raise ConfigError(f"unknown classifier {self.classifier!r}")

    @property
    def input_dim(self) -> int:
        return self.feature_dim + self.camera_dim

    @property
    def structural_out(self) -> int:
        return self.structural_heads[-1] * self.structural_head_dim[-1]

    @property
    def temporal_out(self) -> int:
        return self.temporal_heads[-1] * self.temporal_head_dim[-1]

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden or self.temporal_out

    @property
    def embedding_dim(self) -> int:
        return self.out_dim or self.temporal_out

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kw = dict(d)
        for k in ("structural_heads", "structural_head_dim", "temporal_heads", "temporal_head_dim"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sin/cos timestamp encoding, one row per window step."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    pe = np.where(i.astype(np.intp) % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


class StructuralLayerParams:
    """Per-head 1x1 projection plus the shared 2*head_dim attention vector."""

    def __init__(self, name: str, in_dim: int, heads: int, head_dim: int,
                 rng: np.random.Generator):
        self.in_dim = in_dim
        self.heads = heads
        self.head_dim = head_dim
        self.out_dim = heads * head_dim
        self.conv = [
            nm.Param(f"{name}.h{l}.conv", nm.glorot(rng, in_dim, head_dim))
            for l in range(heads)
        ]
        self.attn = [
            nm.Param(f"{name}.h{l}.attn", nm.glorot(rng, 2 * head_dim, 1))
            for l in range(heads)
        ]

    def params(self) -> list[nm.Param]:
        return [p for pair in zip(self.conv, self.attn) for p in pair]


class TemporalLayerParams:
    """Per-head query/key/value projections for scaled dot-product attention."""

    def __init__(self, name: str, in_dim: int, heads: int, head_dim: int,
                 rng: np.random.Generator):
        self.in_dim = in_dim
        self.heads = heads
        self.head_dim = head_dim
        self.out_dim = heads * head_dim
        self.w_q = [nm.Param(f"{name}.h{l}.wq", nm.glorot(rng, in_dim, head_dim)) for l in range(heads)]
        self.w_k = [nm.Param(f"{name}.h{l}.wk", nm.glorot(rng, in_dim, head_dim)) for l in range(heads)]
        self.w_v = [nm.Param(f"{name}.h{l}.wv", nm.glorot(rng, in_dim, head_dim)) for l in range(heads)]

    def params(self) -> list[nm.Param]:
        return [p for trio in zip(self.w_q, self.w_k, self.w_v) for p in trio]


class EmbeddingNetwork:
    """Camera encoding + stacked SALs + stacked TALs + feed-forward head."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        config.validate()
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.camera = nm.Param(
            "camera_table", nm.glorot(rng, config.num_cameras, config.camera_dim)
        )
        self.structural: list[StructuralLayerParams] = []
        in_dim = config.input_dim
        for i, (heads, hd) in enumerate(zip(config.structural_heads, config.structural_head_dim)):
            layer = StructuralLayerParams(f"sal{i}", in_dim, heads, hd, rng)
            self.structural.append(layer)
            in_dim = layer.out_dim
        self.step_encoding = sinusoidal_encoding(config.window, in_dim)
        self.temporal: list[TemporalLayerParams] = []
        for i, (heads, hd) in enumerate(zip(config.temporal_heads, config.temporal_head_dim)):
            layer = TemporalLayerParams(f"tal{i}", in_dim, heads, hd, rng)
            self.temporal.append(layer)
            in_dim = layer.out_dim
        hidden = config.ffn_width
        out = config.embedding_dim
        self.ffn_w1 = nm.Param("ffn.w1", nm.glorot(rng, in_dim, hidden))
        self.ffn_b1 = nm.Param("ffn.b1", np.zeros((1, hidden)))
        self.ffn_w2 = nm.Param("ffn.w2", nm.glorot(rng, hidden, out))
        self.ffn_b2 = nm.Param("ffn.b2", np.zeros((1, out)))

    def params(self) -> list[nm.Param]:
        out = [self.camera]
        for layer in self.structural:
            out.extend(layer.params())
        for layer in self.temporal:
            out.extend(layer.params())
        out.extend([self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2])
        return out


class Model:
    """Full trainable bundle: embedding network plus link classifier."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        self.network = EmbeddingNetwork(config, rng)
        self.classifier = LinkClassifier(config.classifier, config.embedding_dim, rng)

    def params(self) -> list[nm.Param]:
        return self.network.params() + self.classifier.params()

    def param_by_name(self) -> dict[str, nm.Param]:
        return {p.name: p for p in self.params()}

    def save(self, path) -> None:
        doc = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": self.config.to_dict(),
            "params": {
                p.name: {"shape": [p.value.rows, p.value.cols], "data": p.value.tolist()}
                for p in self.params()
            },
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "Model":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != MODEL_FORMAT:
            raise ConfigError(f"{path}: not a {MODEL_FORMAT} file")
        if doc.get("version") != MODEL_VERSION:
            raise ConfigError(f"{path}: unsupported model version {doc.get('version')}")
        model = cls(ModelConfig.from_dict(doc["config"]))
        stored = doc["params"]
        extra = set(stored) - {p.name for p in model.params()}
        if extra:
            raise ConfigError(f"{path}: unexpected params {sorted(extra)}")
        for p in model.params():
            entry = stored.get(p.name)
            if entry is None:
                raise ConfigError(f"{path}: missing param {p.name!r}")
            if entry["shape"] != [p.value.rows, p.value.cols]:
                raise ConfigError(
                    f"{path}: param {p.name!r} has shape {entry['shape']}, "
                    f"expected {[p.value.rows, p.value.cols]}"
                )
            p.value.array[:] = np.asarray(entry["data"], dtype=np.float64).reshape(p.value.shape)
        return model


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class WindowBatch:
    """Network input: per-node window features plus per-step neighborhoods.

    ``edges[s]`` holds (attending, attended) index pairs into the
    per-step compact node list ``step_nodes[s]``, self loops included.
    Every node must be present at one step at least; pre-birth and
    post-death steps are flagged absent and masked, never zero-filled
    into an attention average.
    """

    node_ids: list[int]
    cameras: np.ndarray              # (N,) int
    features: np.ndarray             # (N, S, D_F)
    present: np.ndarray              # (N, S) bool
    step_nodes: list[np.ndarray]     # per step: positions (into node_ids) present there
    edges: list[tuple[np.ndarray, np.ndarray]]
    times: list[int] | None = None   # frame indices, or None for synthetic batches

    @property
    def num_steps(self) -> int:
        return self.features.shape[1]

    def __post_init__(self):
        if self.node_ids and not self.present.any(axis=1).all():
            dead = int(np.argmin(self.present.any(axis=1)))
            raise ValueError(f"node {self.node_ids[dead]} is absent at every window step")

    @classmethod
    def from_history(cls, history: GraphHistory, t: int | None = None) -> "WindowBatch":
        wf = history.window_features(t)
        step_nodes, edges = [], []
        for s, time in enumerate(wf.times):
            idx = np.flatnonzero(wf.present[:, s])
            local = {wf.node_ids[p]: k for k, p in enumerate(idx)}
            src, dst = [], []
            for k, p in enumerate(idx):
                v = wf.node_ids[p]
                src.append(k)
                dst.append(k)
                for u in sorted(history.neighbors(v, time)):
                    ku = local.get(u)
                    if ku is not None:
                        src.append(k)
                        dst.append(ku)
            step_nodes.append(idx)
            edges.append((np.array(src, dtype=np.intp), np.array(dst, dtype=np.intp)))
        return cls(wf.node_ids, wf.cameras, wf.features, wf.present, step_nodes, edges, wf.times)


def structural_forward(layer: StructuralLayerParams, feats, src: np.ndarray,
                       dst: np.ndarray, num_nodes: int, slope: float) -> nm.Matrix:
    """One structural attention layer over a single snapshot.

    For each attending node i, every head computes
    sigma(sum_j alpha_ij * conv(e_j)) with alpha softmax-normalized over
    j in neighbors(i) plus i itself; head outputs are concatenated.
    """
    head_outs = []
    for conv, attn in zip(layer.conv, layer.attn):
        p = nm.matmul(feats, conv)
        pi = nm.gather_rows(p, src)
        pj = nm.gather_rows(p, dst)
        scores = nm.leaky_relu(nm.matmul(nm.concat_cols(pi, pj), attn), slope)
        alpha = nm.segment_softmax(scores, src, num_nodes)
        agg = nm.segment_sum(nm.scale_rows(pj, alpha), src, num_nodes)
        head_outs.append(nm.leaky_relu(agg, slope))
    out = head_outs[0]
    for h in head_outs[1:]:
        out = nm.concat_cols(out, h)
    return out


def temporal_mask(present: np.ndarray) -> nm.Matrix:
    """Additive {0, -inf} mask: forbid future steps and absent steps.

    Rows for absent query steps keep a self slot open so the softmax
    stays defined; their outputs are placeholders that downstream masks
    and losses never consume.
    """
    n, s = present.shape
    if n and not present.any(axis=1).all():
        raise ValueError("a node absent at every step cannot be masked consistently")
    causal = np.tril(np.ones((s, s), dtype=bool))
    allowed = present[:, None, :] & causal[None, :, :]
    allowed &= present[:, :, None]  # absent query rows cleared...
    aq_node, aq_step = np.nonzero(~present)
    allowed[aq_node, aq_step, aq_step] = True  # ...then opened on their own slot
    mask = np.where(allowed, 0.0, nm.NEG_INF)
    return nm.attention_mask(mask.reshape(n * s, s))


def temporal_forward(layer: TemporalLayerParams, x, mask, block: int) -> nm.Matrix:
    """One masked multi-head scaled dot-product attention layer.

    ``x`` stacks each node's window rows contiguously ((N*block) rows);
    per head the scores are (Q K^T) / sqrt(head_dim) + mask.
    """
    scaling = 1.0 / math.sqrt(layer.head_dim)
    head_outs = []
    for wq, wk, wv in zip(layer.w_q, layer.w_k, layer.w_v):
        q = nm.matmul(x, wq)
        k = nm.matmul(x, wk)
        v = nm.matmul(x, wv)
        attn = nm.softmax_rows(nm.block_qk(q, k, block, scaling), mask)
        head_outs.append(nm.block_weighted_sum(attn, v, block))
    out = head_outs[0]
    for h in head_outs[1:]:
        out = nm.concat_cols(out, h)
    return out


@dataclass
class EmbedResult:
    """Final embeddings for every (node, window step) pair.

    Row ``pos * num_steps + step`` of ``stacked`` is node
    ``node_ids[pos]`` at that window step; rows at absent steps are
    placeholders.
    """

    node_ids: list[int]
    times: list[int]
    present: np.ndarray
    stacked: nm.Matrix

    def __post_init__(self):
        self._pos = {v: i for i, v in enumerate(self.node_ids)}

    @property
    def num_steps(self) -> int:
        return len(self.times)

    def row(self, node_id: int, step: int) -> int:
        return self._pos[node_id] * self.num_steps + step

    def embedding(self, node_id: int, step: int) -> np.ndarray:
        if not self.present[self._pos[node_id], step]:
            raise LookupError(f"node {node_id} is absent at step {step}")
        return self.stacked.array[self.row(node_id, step)]

    def latest(self) -> dict[int, np.ndarray]:
        """Each node's embedding at its most recent present step."""
        out = {}
        for i, v in enumerate(self.node_ids):
            steps = np.flatnonzero(self.present[i])
            out[v] = self.stacked.array[i * self.num_steps + int(steps[-1])]
        return out

    def final_step(self) -> dict[int, np.ndarray]:
        """Embeddings of nodes present at the last window step."""
        last = self.num_steps - 1
        return {
            v: self.stacked.array[i * self.num_steps + last]
            for i, v in enumerate(self.node_ids)
            if self.present[i, last]
        }


def embed(network: EmbeddingNetwork, batch_or_history) -> EmbedResult:
    """Run the full embedding pipeline over one window of snapshots.

    Accepts a :class:`WindowBatch` or a :class:`GraphHistory` (embedded
    at its latest time).  Deterministic: identical inputs and params
    produce identical embeddings.
    """
    if isinstance(batch_or_history, GraphHistory):
        batch = WindowBatch.from_history(batch_or_history)
    else:
        batch = batch_or_history
    cfg = network.config
    n = len(batch.node_ids)
    s = batch.num_steps
    if n == 0:
        raise ValueError("cannot embed an empty window")
    if s > cfg.window:
        raise ConfigError(f"batch spans {s} steps but the network window is {cfg.window}")
    if batch.features.shape[2] != cfg.feature_dim:
        raise ConfigError(
            f"feature dim {batch.features.shape[2]} != model feature_dim {cfg.feature_dim}"
        )
    if batch.cameras.size and int(batch.cameras.max()) >= cfg.num_cameras:
        raise ConfigError(
            f"camera id {int(batch.cameras.max())} has no embedding "
            f"(model knows {cfg.num_cameras} cameras)"
        )

    slope = cfg.leaky_slope
    parts, rows = [], []
    for step in range(s):
        pos = batch.step_nodes[step]
        if pos.size == 0:
            continue
        x = nm.Matrix.from_array(batch.features[pos, step])
        cam_rows = nm.gather_rows(network.camera, batch.cameras[pos])
        h = nm.concat_cols(x, cam_rows)
        src, dst = batch.edges[step]
        for layer in network.structural:
            h = structural_forward(layer, h, src, dst, pos.size, slope)
        parts.append(h)
        rows.append(pos * s + step)

    stacked = nm.scatter_rows(nm.concat_rows(parts), np.concatenate(rows), n * s)
    pe = np.tile(network.step_encoding[:s], (n, 1))
    x = nm.add(stacked, nm.Matrix.from_array(pe))

    mask = temporal_mask(batch.present)
    for layer in network.temporal:
        x = temporal_forward(layer, x, mask, s)

    x = nm.add_bias(nm.matmul(x, network.ffn_w1), network.ffn_b1)
    x = nm.leaky_relu(x, slope)
    x = nm.add_bias(nm.matmul(x, network.ffn_w2), network.ffn_b2)

    times = batch.times if batch.times is not None else list(range(s))
    return EmbedResult(batch.node_ids, times, batch.present, x)

