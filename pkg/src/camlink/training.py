"""Model learning: random-walk positives, negative sampling, the binary
cross-entropy + classifier objective, and the chunked mini-batch loop.

Scenarios are cut into chunks of consecutive frames; the first
chunk_size - 1 snapshots are embedded and the final snapshot's
ground-truth link structure supervises them.  Per anchor the loss is

    sum over embedded steps of
        - sum_{j in walk positives}  log sigmoid(<e_i, e_j>)
        - w_g * sum_{k in negatives} log(1 - sigmoid(<e_i, e_k>))
        + classifier cross-entropy over positives (label 1) and
          negatives (label 0)

Chunks in a batch are merged into one disjoint graph; node counts are
padded to a fixed multiple with inert isolated nodes that take part in
neither attention neighborhoods nor the loss.  Training is bit
deterministic under a fixed seed.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .attention import EmbedResult, Model, WindowBatch, embed
from .dyngraph import SnapshotView
from .errors import ConfigError, DataError, UndefinedMetricError
from .linkpred import LinkClassifier, compute_auc
from .simulator import TrackingScenario
from . import numerics as nm

CHECKPOINT_FORMAT = "camlink-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    window: int = 3
    chunk_size: int = 3
    batch_chunks: int = 512
    epochs: int = 20
    walk_length: int = 3
    walks_per_node: int = 5
    negative_ratio: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    chunk_stride: int = 1
    val_every: int = 5            # every n-th chunk goes to validation
    pad_multiple: int = 8
    eval_pairs_per_chunk: int = 6

    def validate(self) -> None:
        problems = []
        if self.window < 1:
            problems.append(f"window must be >= 1, got {self.window}")
        if not 2 <= self.chunk_size <= self.window + 1:
            problems.append(
                f"chunk_size must lie in [2, window + 1]: the first chunk_size - 1 "
                f"snapshots are embedded; got chunk_size={self.chunk_size}, window={self.window}"
            )
        if self.batch_chunks < 1:
            problems.append("batch_chunks must be >= 1")
        if not 0 <= self.epochs <= 100:
            problems.append(f"epochs must lie in [0, 100], got {self.epochs}")
        if self.walk_length < 1 or self.walks_per_node < 1:
            problems.append("walk_length and walks_per_node must be >= 1")
        if self.negative_ratio <= 0:
            problems.append(f"negative_ratio must be > 0, got {self.negative_ratio}")
        if self.lr < 0:
            problems.append(f"lr must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            problems.append("need 0 <= beta1, beta2 < 1 and adam_eps > 0")
        if self.chunk_stride < 1 or self.pad_multiple < 1 or self.val_every < 0:
            problems.append("chunk_stride/pad_multiple must be >= 1, val_every >= 0")
        if self.eval_pairs_per_chunk < 1:
            problems.append("eval_pairs_per_chunk must be >= 1")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))


def train_config_from_kv(kv: dict[str, str]) -> TrainConfig:
    ints = {"window", "chunk_size", "batch_chunks", "epochs", "walk_length",
            "walks_per_node", "seed", "chunk_stride", "val_every", "pad_multiple",
            "eval_pairs_per_chunk"}
    floats = {"negative_ratio", "lr", "beta1", "beta2", "adam_eps"}
    kwargs: dict = {}
    for key, value in kv.items():
        try:
            if key in ints:
                kwargs[key] = int(value)
            elif key in floats:
                kwargs[key] = float(value)
            else:
                raise ConfigError(f"unknown train config key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    cfg = TrainConfig(**kwargs)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# datasets


@dataclass
class GraphChunk:
    """chunk_size consecutive snapshots with ground-truth components.

    Nodes are compact local ids over the tracklets observed in the
    embedded steps (the first chunk_size - 1 frames).  ``supervision``
    is the final snapshot's link structure restricted to those nodes.
    """

    times: list[int]
    gt_ids: np.ndarray               # (N,)
    cameras: np.ndarray              # (N,)
    features: np.ndarray             # (N, S, D)
    present: np.ndarray              # (N, S)
    step_nodes: list[np.ndarray]
    edges: list[tuple[np.ndarray, np.ndarray]]
    supervision: SnapshotView

    @property
    def num_steps(self) -> int:
        return self.features.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    def window_batch(self) -> WindowBatch:
        return WindowBatch(
            node_ids=list(range(self.num_nodes)),
            cameras=self.cameras,
            features=self.features,
            present=self.present,
            step_nodes=self.step_nodes,
            edges=self.edges,
        )


def build_chunks(scenario: TrackingScenario, config: TrainConfig) -> list[GraphChunk]:
    """Cut a ground-truth scenario into training chunks.

    The supervision graph links each new tracklet to the most recent
    earlier tracklet of the same identity, so connected components equal
    identities while the edge set stays sparse.
    """
    if not scenario.has_ground_truth:
        raise DataError("training requires ground-truth global ids in the scenario")
    frames = scenario.frames()
    registry: dict[tuple[int, int], int] = {}
    node_gt: list[int] = []
    node_cam: list[int] = []
    adj: dict[int, list[tuple[int, int]]] = {}
    last_of_gt: dict[int, int] = {}
    per_frame: list[list[tuple[int, np.ndarray]]] = []

    for t, obs_list in enumerate(frames):
        now = []
        for obs in obs_list:
            key = (obs.camera_id, obs.local_track_id)
            v = registry.get(key)
            if v is None:
                v = len(node_gt)
                registry[key] = v
                node_gt.append(obs.gt_global_id)
                node_cam.append(obs.camera_id)
                adj[v] = []
                prev = last_of_gt.get(obs.gt_global_id)
                if prev is not None:
                    adj[v].append((prev, t))
                    adj[prev].append((v, t))
                last_of_gt[obs.gt_global_id] = v
            now.append((v, obs.feature))
        per_frame.append(now)

    gt_arr = np.array(node_gt)
    cam_arr = np.array(node_cam)
    dim = scenario.feature_dim
    s = config.chunk_size - 1
    chunks: list[GraphChunk] = []
    for start in range(0, scenario.num_frames - config.chunk_size + 1, config.chunk_stride):
        times = list(range(start, start + config.chunk_size))
        seen: dict[int, dict[int, np.ndarray]] = {}
        for si, t in enumerate(times[:-1]):
            for v, feat in per_frame[t]:
                seen.setdefault(v, {})[si] = feat
        nodes = sorted(seen)
        if len(nodes) < 2:
            continue
        local = {v: i for i, v in enumerate(nodes)}
        feats = np.zeros((len(nodes), s, dim))
        present = np.zeros((len(nodes), s), dtype=bool)
        for v, stepmap in seen.items():
            for si, feat in stepmap.items():
                feats[local[v], si] = feat
                present[local[v], si] = True
        step_nodes, edges = [], []
        for si, t in enumerate(times[:-1]):
            idx = np.flatnonzero(present[:, si])
            compact = {int(i): k for k, i in enumerate(idx)}
            src, dst = [], []
            for k, i in enumerate(idx):
                v = nodes[int(i)]
                src.append(k)
                dst.append(k)
                for u, added in adj[v]:
                    lu = local.get(u)
                    ku = compact.get(lu) if lu is not None else None
                    if added <= t and ku is not None:
                        src.append(k)
                        dst.append(ku)
            step_nodes.append(idx)
            edges.append((np.array(src, dtype=np.intp), np.array(dst, dtype=np.intp)))
        final_t = times[-1]
        sup_adj = {
            local[v]: sorted(
                local[u] for u, added in adj[v] if added <= final_t and u in local
            )
            for v in nodes
        }
        supervision = SnapshotView(
            nodes=list(range(len(nodes))),
            adjacency=sup_adj,
            component={local[v]: int(gt_arr[v]) for v in nodes},
        )
        chunks.append(GraphChunk(
            times=times,
            gt_ids=gt_arr[nodes],
            cameras=cam_arr[nodes],
            features=feats,
            present=present,
            step_nodes=step_nodes,
            edges=edges,
            supervision=supervision,
        ))
    return chunks


# ---------------------------------------------------------------------------
# sampling


@dataclass
class TrainSample:
    anchor: int
    positives: list[int]
    negatives: list[int]


def sample_walk_positives(view: SnapshotView, v: int, length: int, count: int,
                          rng: np.random.Generator) -> list[int]:
    """Nodes visited by fixed-length uniform random walks from v (self excluded)."""
    out: list[int] = []
    for _ in range(count):
        cur = v
        for _ in range(length):
            nbrs = view.adjacency.get(cur)
            if not nbrs:
                break
            cur = nbrs[int(rng.integers(len(nbrs)))]
            if cur != v:
                out.append(cur)
    return out


def sample_negatives(view: SnapshotView, v: int, k: int,
                     rng: np.random.Generator) -> list[int]:
    """k nodes drawn uniformly (with replacement) outside v's component."""
    comp = view.component[v]
    pool = [u for u in view.nodes if view.component[u] != comp]
    if not pool or k <= 0:
        return []
    return [pool[int(i)] for i in rng.integers(0, len(pool), size=k)]


def draw_samples(view: SnapshotView, config: TrainConfig,
                 rng: np.random.Generator) -> list[TrainSample]:
    """One anchor per node; negative count balances the positive count."""
    samples = []
    for v in view.nodes:
        pos = sample_walk_positives(view, v, config.walk_length, config.walks_per_node, rng)
        if not pos:
            continue
        neg = sample_negatives(view, v, len(pos), rng)
        samples.append(TrainSample(v, pos, neg))
    return samples


# ---------------------------------------------------------------------------
# objective


def _pair_rows(result: EmbedResult, pairs: list[tuple[int, int]]):
    """Stacked-row index pairs for every embedded step where both are present."""
    if not pairs:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    s = result.num_steps
    ii = np.array([result._pos[a] for a, _ in pairs], dtype=np.intp)
    jj = np.array([result._pos[b] for _, b in pairs], dtype=np.intp)
    both = result.present[ii] & result.present[jj]
    pr, ps = np.nonzero(both)
    return ii[pr] * s + ps, jj[pr] * s + ps


def loss(result: EmbedResult, samples: list[TrainSample], classifier: LinkClassifier,
         w_g: float) -> nm.Matrix:
    """The training objective for one chunk (or one merged batch of chunks)."""
    pos_pairs = [(smp.anchor, j) for smp in samples for j in smp.positives]
    neg_pairs = [(smp.anchor, k) for smp in samples for k in smp.negatives]
    for a, b in pos_pairs + neg_pairs:
        if a not in result._pos or b not in result._pos:
            raise ValueError(f"sampled node pair ({a}, {b}) has no embedding")
    pi, pj = _pair_rows(result, pos_pairs)
    ni, nj = _pair_rows(result, neg_pairs)

    terms: list[nm.Matrix] = []
    if pi.size:
        ei, ej = nm.gather_rows(result.stacked, pi), nm.gather_rows(result.stacked, pj)
        ip = nm.row_sum(nm.mul(ei, ej))
        terms.append(nm.total_sum(nm.softplus(nm.scale(ip, -1.0))))
        terms.append(nm.total_sum(nm.softplus(nm.scale(classifier.logit(ei, ej), -1.0))))
    if ni.size:
        ei, ej = nm.gather_rows(result.stacked, ni), nm.gather_rows(result.stacked, nj)
        ip = nm.row_sum(nm.mul(ei, ej))
        terms.append(nm.scale(nm.total_sum(nm.softplus(ip)), w_g))
        terms.append(nm.total_sum(nm.softplus(classifier.logit(ei, ej))))
    if not terms:
        return nm.Matrix(1, 1)
    out = terms[0]
    for t in terms[1:]:
        out = nm.add(out, t)
    return out


# ---------------------------------------------------------------------------
# batching


def merge_chunks(chunks: list[GraphChunk], pad_multiple: int = 1
                 ) -> tuple[WindowBatch, list[int]]:
    """Disjoint union of chunk graphs, padded with inert isolated nodes.

    Pad nodes are present at every step with zero features and only a
    self loop, so they cannot enter any real node's neighborhood or the
    loss; returns the batch plus each chunk's node offset.
    """
    s = chunks[0].num_steps
    if any(c.num_steps != s for c in chunks):
        raise ValueError("cannot merge chunks with different step counts")
    dim = chunks[0].features.shape[2]
    offsets, total = [], 0
    for c in chunks:
        offsets.append(total)
        total += c.num_nodes
    target = -(-total // pad_multiple) * pad_multiple if pad_multiple > 1 else total
    n_pad = target - total

    feats = np.zeros((target, s, dim))
    present = np.zeros((target, s), dtype=bool)
    cams = np.zeros(target, dtype=np.intp)
    for c, off in zip(chunks, offsets):
        feats[off:off + c.num_nodes] = c.features
        present[off:off + c.num_nodes] = c.present
        cams[off:off + c.num_nodes] = c.cameras
    if n_pad:
        present[total:] = True

    step_nodes, edges = [], []
    for si in range(s):
        parts, srcs, dsts = [], [], []
        compact_off = 0
        for c, off in zip(chunks, offsets):
            parts.append(c.step_nodes[si] + off)
            srcs.append(c.edges[si][0] + compact_off)
            dsts.append(c.edges[si][1] + compact_off)
            compact_off += c.step_nodes[si].size
        if n_pad:
            parts.append(np.arange(total, target, dtype=np.intp))
            pad_idx = np.arange(compact_off, compact_off + n_pad, dtype=np.intp)
            srcs.append(pad_idx)
            dsts.append(pad_idx)
        step_nodes.append(np.concatenate(parts))
        edges.append((np.concatenate(srcs), np.concatenate(dsts)))

    batch = WindowBatch(
        node_ids=list(range(target)),
        cameras=cams,
        features=feats,
        present=present,
        step_nodes=step_nodes,
        edges=edges,
    )
    return batch, offsets


def _offset_samples(samples: list[TrainSample], off: int) -> list[TrainSample]:
    return [
        TrainSample(s.anchor + off, [p + off for p in s.positives], [n + off for n in s.negatives])
        for s in samples
    ]


# ---------------------------------------------------------------------------
# evaluation helpers


def eval_pair_set(chunks: list[GraphChunk], seed: int, per_chunk: int
                  ) -> list[tuple[int, int, int, int]]:
    """Fixed (chunk, a, b, label) pairs: same-identity vs cross-identity."""
    rng = np.random.default_rng([seed, 1717])
    pairs = []
    for ci, chunk in enumerate(chunks):
        groups: dict[int, list[int]] = {}
        for i, g in enumerate(chunk.gt_ids):
            groups.setdefault(int(g), []).append(i)
        rich = [g for g, vs in sorted(groups.items()) if len(vs) >= 2]
        gids = sorted(groups)
        for _ in range(per_chunk):
            if rich:
                g = rich[int(rng.integers(len(rich)))]
                a, b = rng.choice(groups[g], size=2, replace=False)
                pairs.append((ci, int(a), int(b), 1))
            if len(gids) >= 2:
                ga, gb = rng.choice(gids, size=2, replace=False)
                a = groups[int(ga)][int(rng.integers(len(groups[int(ga)])))]
                b = groups[int(gb)][int(rng.integers(len(groups[int(gb)])))]
                pairs.append((ci, int(a), int(b), 0))
    return pairs


def _latest_rows(chunk: GraphChunk) -> np.ndarray:
    """Stacked-row index of each node's last present step."""
    s = chunk.num_steps
    last = s - 1 - np.argmax(chunk.present[:, ::-1], axis=1)
    return np.arange(chunk.num_nodes) * s + last


def model_pair_scores(model: Model, chunks: list[GraphChunk],
                      pairs: list[tuple[int, int, int, int]],
                      batch_chunks: int = 64, pad_multiple: int = 1
                      ) -> list[tuple[float, int]]:
    """Classifier probabilities for eval pairs, embedding without a tape."""
    needed = sorted({ci for ci, _, _, _ in pairs})
    latest: dict[int, np.ndarray] = {}
    for gstart in range(0, len(needed), batch_chunks):
        group = needed[gstart:gstart + batch_chunks]
        batch, offsets = merge_chunks([chunks[ci] for ci in group], pad_multiple)
        emb = embed(model.network, batch)
        s = emb.num_steps
        for ci, off in zip(group, offsets):
            rows = _latest_rows(chunks[ci]) + off * s
            latest[ci] = emb.stacked.array[rows]
    a = np.stack([latest[ci][i] for ci, i, _, _ in pairs])
    b = np.stack([latest[ci][j] for ci, _, j, _ in pairs])
    probs = model.classifier.probability(
        nm.Matrix.from_array(a), nm.Matrix.from_array(b)
    ).array[:, 0]
    return [(float(p), label) for p, (_, _, _, label) in zip(probs, pairs)]


def raw_pair_scores(chunks: list[GraphChunk],
                    pairs: list[tuple[int, int, int, int]]) -> list[tuple[float, int]]:
    """No-attention baseline: sigmoid of raw-feature cosine similarity."""
    out = []
    for ci, i, j, label in pairs:
        chunk = chunks[ci]
        rows = _latest_rows(chunk)
        s = chunk.num_steps
        fa = chunk.features[i, rows[i] % s]
        fb = chunk.features[j, rows[j] % s]
        na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
        cos = float(fa @ fb / (na * nb)) if na > 0 and nb > 0 else 0.0
        out.append((float(expit(cos)), label))
    return out


def link_auc(model: Model, chunks: list[GraphChunk], seed: int = 0,
             per_chunk: int = 6) -> tuple[float, float]:
    """(model AUC, raw-feature baseline AUC) on one shared pair set."""
    pairs = eval_pair_set(chunks, seed, per_chunk)
    return (
        compute_auc(model_pair_scores(model, chunks, pairs)),
        compute_auc(raw_pair_scores(chunks, pairs)),
    )


def feature_stability(model: Model, chunks: list[GraphChunk],
                      batch_chunks: int = 64) -> tuple[float, float, int]:
    """Mean intra-identity cross-camera cosine distance: (raw, attended, pairs).

    Compares raw features against attended embeddings for pairs of
    same-identity nodes seen by different cameras at the same step.
    """
    def _cos_dist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        nx = np.linalg.norm(x, axis=1)
        ny = np.linalg.norm(y, axis=1)
        return 1.0 - (x * y).sum(axis=1) / np.maximum(nx * ny, 1e-12)

    raw_all, att_all = [], []
    for gstart in range(0, len(chunks), batch_chunks):
        group = list(range(gstart, min(gstart + batch_chunks, len(chunks))))
        batch, offsets = merge_chunks([chunks[ci] for ci in group], 1)
        emb = embed(model.network, batch)
        s = emb.num_steps
        for ci, off in zip(group, offsets):
            chunk = chunks[ci]
            step = s - 1
            alive = np.flatnonzero(chunk.present[:, step])
            ii, jj = [], []
            for x in range(alive.size):
                for y in range(x + 1, alive.size):
                    a, b = int(alive[x]), int(alive[y])
                    if chunk.gt_ids[a] == chunk.gt_ids[b] and chunk.cameras[a] != chunk.cameras[b]:
                        ii.append(a)
                        jj.append(b)
            if not ii:
                continue
            ia, ja = np.array(ii), np.array(jj)
            raw_all.append(_cos_dist(chunk.features[ia, step], chunk.features[ja, step]))
            rows_a = (ia + off) * s + step
            rows_b = (ja + off) * s + step
            att_all.append(_cos_dist(emb.stacked.array[rows_a], emb.stacked.array[rows_b]))
    if not raw_all:
        return float("nan"), float("nan"), 0
    raw = np.concatenate(raw_all)
    att = np.concatenate(att_all)
    return float(raw.mean()), float(att.mean()), int(raw.size)


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_auc: float


@dataclass
class TrainResult:
    model: Model
    history: list[EpochStats]
    best_epoch: int
    best_val_auc: float


class Trainer:
    """Stateful training loop with checkpoint/resume support."""

    def __init__(self, chunks: list[GraphChunk], config: TrainConfig, model: Model):
        config.validate()
        if not chunks:
            raise ConfigError("empty dataset: no training chunks")
        if any(c.num_steps != config.chunk_size - 1 for c in chunks):
            raise ConfigError("chunks do not match chunk_size - 1 embedded steps")
        self.config = config
        self.model = model
        self.chunks = chunks
        if config.val_every > 1:
            self.val_idx = [i for i in range(len(chunks)) if i % config.val_every == config.val_every - 1]
            self.train_idx = [i for i in range(len(chunks)) if i % config.val_every != config.val_every - 1]
        else:
            self.val_idx = []
            self.train_idx = list(range(len(chunks)))
        if not self.train_idx:
            self.train_idx = list(range(len(chunks)))
        if not self.val_idx:
            self.val_idx = list(self.train_idx)
        self.val_chunks = [chunks[i] for i in self.val_idx]
        self.val_pairs = eval_pair_set(self.val_chunks, config.seed, config.eval_pairs_per_chunk)
        self.rng = np.random.default_rng(config.seed)
        self.adam = nm.AdamState(model.params())
        self.epoch = 0
        self.history: list[EpochStats] = []
        self.best_epoch = -1
        self.best_val_auc = float("-inf")
        self._best_params: dict[str, np.ndarray] | None = None

    # -- one epoch -------------------------------------------------------

    def _epoch(self) -> EpochStats:
        cfg = self.config
        order = [self.train_idx[i] for i in self.rng.permutation(len(self.train_idx))]
        losses = []
        params = self.model.params()
        classifier = self.model.classifier
        for bstart in range(0, len(order), cfg.batch_chunks):
            group = order[bstart:bstart + cfg.batch_chunks]
            batch, offsets = merge_chunks([self.chunks[ci] for ci in group], cfg.pad_multiple)
            samples: list[TrainSample] = []
            for ci, off in zip(group, offsets):
                drawn = draw_samples(self.chunks[ci].supervision, cfg, self.rng)
                samples.extend(_offset_samples(drawn, off))
            if not samples:
                continue
            nm.zero_grads(params)
            with nm.Tape() as tape:
                emb = embed(self.model.network, batch)
                total = loss(emb, samples, classifier, cfg.negative_ratio)
                mean_loss = nm.scale(total, 1.0 / len(group))
            nm.backward(tape, mean_loss)
            nm.adam_step(params, self.adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            losses.append(float(mean_loss))
        val_auc = self._validate()
        stats = EpochStats(self.epoch + 1, float(np.mean(losses)) if losses else 0.0, val_auc)
        self.history.append(stats)
        if val_auc > self.best_val_auc:
            self.best_val_auc = val_auc
            self.best_epoch = stats.epoch
            self._best_params = {p.name: p.value.array.copy() for p in self.model.params()}
        self.epoch += 1
        return stats

    def _validate(self) -> float:
        scores = model_pair_scores(
            self.model, self.val_chunks, self.val_pairs,
            batch_chunks=self.config.batch_chunks, pad_multiple=1,
        )
        try:
            return compute_auc(scores)
        except UndefinedMetricError:
            return 0.5  # degenerate validation sets score as chance

    def run(self, epochs: int | None = None) -> TrainResult:
        target = self.config.epochs if epochs is None else epochs
        while self.epoch < target:
            self._epoch()
        return self.result()

    def result(self) -> TrainResult:
        best = Model(self.model.config)
        current = {p.name: p.value.array for p in self.model.params()}
        source = self._best_params if self._best_params is not None else current
        for p in best.params():
            p.value.array[:] = source[p.name]
        return TrainResult(
            model=best,
            history=list(self.history),
            best_epoch=self.best_epoch if self.best_epoch >= 0 else self.epoch,
            best_val_auc=self.best_val_auc if self._best_params is not None else 0.0,
        )

    # -- checkpointing -----------------------------------------------------

    def checkpoint_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "train_config": dataclasses.asdict(self.config),
            "model_config": self.model.config.to_dict(),
            "params": {p.name: p.value.tolist() for p in self.model.params()},
            "adam": {
                "step": self.adam.step,
                "m": {k: v.ravel().tolist() for k, v in self.adam.m.items()},
                "v": {k: v.ravel().tolist() for k, v in self.adam.v.items()},
            },
            "epoch": self.epoch,
            "history": [dataclasses.asdict(h) for h in self.history],
            "best_epoch": self.best_epoch,
            "best_val_auc": self.best_val_auc if self.best_val_auc != float("-inf") else None,
            "best_params": (
                {k: v.ravel().tolist() for k, v in self._best_params.items()}
                if self._best_params is not None else None
            ),
            "rng_state": _rng_state_to_json(self.rng),
        }

    @classmethod
    def from_checkpoint(cls, chunks: list[GraphChunk], doc: dict) -> "Trainer":
        from .attention import ModelConfig
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ConfigError("not a camlink checkpoint")
        config = TrainConfig(**doc["train_config"])
        model = Model(ModelConfig.from_dict(doc["model_config"]))
        for p in model.params():
            p.value.array[:] = np.asarray(doc["params"][p.name]).reshape(p.value.shape)
        trainer = cls(chunks, config, model)
        trainer.adam.step = doc["adam"]["step"]
        for name in trainer.adam.m:
            trainer.adam.m[name][:] = np.asarray(doc["adam"]["m"][name]).reshape(trainer.adam.m[name].shape)
            trainer.adam.v[name][:] = np.asarray(doc["adam"]["v"][name]).reshape(trainer.adam.v[name].shape)
        trainer.epoch = doc["epoch"]
        trainer.history = [EpochStats(**h) for h in doc["history"]]
        trainer.best_epoch = doc["best_epoch"]
        trainer.best_val_auc = doc["best_val_auc"] if doc["best_val_auc"] is not None else float("-inf")
        if doc["best_params"] is not None:
            trainer._best_params = {
                p.name: np.asarray(doc["best_params"][p.name]).reshape(p.value.shape)
                for p in model.params()
            }
        _rng_state_from_json(trainer.rng, doc["rng_state"])
        return trainer


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": state["has_uint32"],
        "uinteger": state["uinteger"],
    }


def _rng_state_from_json(rng: np.random.Generator, doc: dict) -> None:
    rng.bit_generator.state = {
        "bit_generator": doc["bit_generator"],
        "state": {"state": int(doc["state"]), "inc": int(doc["inc"])},
        "has_uint32": doc["has_uint32"],
        "uinteger": doc["uinteger"],
    }


def train(chunks: list[GraphChunk], config: TrainConfig, model: Model) -> TrainResult:
    """Train to config.epochs and return the best model on validation AUC."""
    return Trainer(chunks, config, model).run()


def write_training_csv(path, history: list[EpochStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "val_auc"])
        for h in history:
            writer.writerow([h.epoch, repr(h.loss), repr(h.val_auc)])
