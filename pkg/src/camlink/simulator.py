"""Deterministic synthetic multi-camera world.

Each identity carries a latent appearance vector; every camera observes
it through its own fixed near-orthogonal affine transform (rotation +
per-axis scale + bias) plus Gaussian noise.  That preserves appearance
geometry within one camera while breaking raw feature comparability
across cameras -- the failure mode the attention embedding is meant to
fix.  Identities move between cameras under a dwell-time transition
model, overlapping cameras see them simultaneously, and tracklets can
fragment mid-life into a fresh local id with the same ground truth.

Everything is a pure function of the config, bit-reproducible per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, DataError, UndefinedMetricError


def overlap_matrix(num_cameras: int, pairs=()) -> tuple[tuple[bool, ...], ...]:
    """FOV-overlap matrix from symmetric camera pairs (diagonal always true)."""
    m = np.eye(num_cameras, dtype=bool)
    for a, b in pairs:
        m[a, b] = m[b, a] = True
    return tuple(tuple(bool(x) for x in row) for row in m)


def movement_complete(num_cameras: int) -> tuple[tuple[bool, ...], ...]:
    m = np.ones((num_cameras, num_cameras), dtype=bool)
    return tuple(tuple(bool(x) for x in row) for row in m)


def movement_ring(num_cameras: int) -> tuple[tuple[bool, ...], ...]:
    m = np.eye(num_cameras, dtype=bool)
    for c in range(num_cameras):
        m[c, (c + 1) % num_cameras] = True
        m[c, (c - 1) % num_cameras] = True
    return tuple(tuple(bool(x) for x in row) for row in m)


@dataclass(frozen=True)
class WorldConfig:
    num_cameras: int = 4
    num_identities: int = 8
    frames: int = 200
    feature_dim: int = 32
    identity_spread: float = 1.0
    camera_distortion: float = 0.5
    observation_noise: float = 0.05
    fragmentation_prob: float = 0.0
    dwell_min: int = 20
    dwell_max: int = 60
    overlap: tuple[tuple[bool, ...], ...] | None = None   # None -> no overlap
    movement: tuple[tuple[bool, ...], ...] | None = None  # None -> complete graph
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.num_cameras < 1:
            problems.append(f"num_cameras must be >= 1, got {self.num_cameras}")
        if self.num_identities < 1:
            problems.append(f"num_identities must be >= 1, got {self.num_identities}")
        if self.frames < 1:
            problems.append(f"frames must be >= 1, got {self.frames}")
        if self.feature_dim < 2:
            problems.append(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.identity_spread <= 0:
            problems.append(f"identity_spread must be > 0, got {self.identity_spread}")
        if self.camera_distortion < 0:
            problems.append(f"camera_distortion must be >= 0, got {self.camera_distortion}")
        if self.observation_noise < 0:
            problems.append(f"observation_noise must be >= 0, got {self.observation_noise}")
        if not 0.0 <= self.fragmentation_prob <= 1.0:
            problems.append(f"fragmentation_prob must lie in [0, 1], got {self.fragmentation_prob}")
        if not 1 <= self.dwell_min <= self.dwell_max:
            problems.append(f"need 1 <= dwell_min <= dwell_max, got {self.dwell_min}..{self.dwell_max}")
        for name, m in (("overlap", self.overlap), ("movement", self.movement)):
            if m is None:
                continue
            arr = np.asarray(m, dtype=bool)
            if arr.shape != (self.num_cameras, self.num_cameras):
                problems.append(f"{name} must be {self.num_cameras}x{self.num_cameras}")
            elif name == "overlap" and (not (arr == arr.T).all() or not arr.diagonal().all()):
                problems.append("overlap must be symmetric with a true diagonal")
        if problems:
            raise ConfigError("invalid world config: " + "; ".join(problems))

    def overlap_array(self) -> np.ndarray:
        if self.overlap is None:
            return np.eye(self.num_cameras, dtype=bool)
        return np.asarray(self.overlap, dtype=bool)

    def movement_array(self) -> np.ndarray:
        if self.movement is None:
            return np.ones((self.num_cameras, self.num_cameras), dtype=bool)
        return np.asarray(self.movement, dtype=bool)


@dataclass(frozen=True)
class Observation:
    t: int
    camera_id: int
    local_track_id: int
    gt_global_id: int | None
    bbox: tuple[float, float, float, float]
    feature: np.ndarray


@dataclass
class TrackingScenario:
    """Simulator output: per-frame observations plus the identity table."""

    observations: list[Observation]
    num_cameras: int
    feature_dim: int
    num_frames: int
    meta: dict = field(default_factory=dict)

    def frames(self) -> list[list[Observation]]:
        out: list[list[Observation]] = [[] for _ in range(self.num_frames)]
        for obs in self.observations:
            out[obs.t].append(obs)
        return out

    def identity_table(self) -> dict[tuple[int, int], int | None]:
        table: dict[tuple[int, int], int | None] = {}
        for obs in self.observations:
            key = (obs.camera_id, obs.local_track_id)
            if key in table and table[key] != obs.gt_global_id:
                raise DataError(f"track {key} maps to two ground-truth ids")
            table[key] = obs.gt_global_id
        return table

    @property
    def has_ground_truth(self) -> bool:
        return all(o.gt_global_id is not None for o in self.observations)


def _camera_transforms(cfg: WorldConfig, rng: np.random.Generator):
    """Per-camera (A, b): orthogonal-ish rotation * diagonal scale, plus bias.

    Exactly the identity map at camera_distortion = 0; always invertible,
    so within one noiseless camera the latent -> feature map is injective.
    """
    d, m = cfg.feature_dim, cfg.camera_distortion
    mats, biases = [], []
    for _ in range(cfg.num_cameras):
        g = rng.standard_normal((d, d))
        skew = (g - g.T) / 2.0
        norm = np.linalg.norm(skew, 2)
        if norm > 0:
            skew /= norm
        rot = expm(m * (np.pi / 2.0) * skew)
        scl = np.exp(m * 0.25 * rng.standard_normal(d))
        raw = rng.standard_normal(d)
        bias = m * 0.4 * cfg.identity_spread * raw / np.linalg.norm(raw)
        mats.append(rot * scl[None, :])
        biases.append(bias)
    return mats, biases


def generate(config: WorldConfig) -> TrackingScenario:
    """Produce a fully seed-deterministic tracking scenario."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    d = config.feature_dim

    latents = rng.standard_normal((config.num_identities, d))
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)
    latents *= config.identity_spread

    mats, biases = _camera_transforms(config, rng)
    base = np.stack([
        [mats[c] @ latents[i] + biases[c] for c in range(config.num_cameras)]
        for i in range(config.num_identities)
    ])  # (identities, cameras, d)

    overlap = config.overlap_array()
    movement = config.movement_array()
    home = rng.integers(0, config.num_cameras, size=config.num_identities)
    dwell = rng.integers(config.dwell_min, config.dwell_max + 1, size=config.num_identities)

    next_track = [0] * config.num_cameras
    active: dict[tuple[int, int], int] = {}      # (identity, camera) -> local id
    walks: dict[tuple[int, int], tuple] = {}     # (identity, camera) -> (pos, vel, size)
    observations: list[Observation] = []

    for t in range(config.frames):
        if t > 0:
            for i in range(config.num_identities):
                dwell[i] -= 1
                if dwell[i] <= 0:
                    options = np.flatnonzero(movement[home[i]])
                    options = options[options != home[i]]
                    if options.size:
                        home[i] = int(options[rng.integers(options.size)])
                    dwell[i] = int(rng.integers(config.dwell_min, config.dwell_max + 1))

        for i in range(config.num_identities):
            visible = np.flatnonzero(overlap[home[i]])
            visible_set = set(int(c) for c in visible)
            for key in [k for k in list(active) if k[0] == i and k[1] not in visible_set]:
                del active[key]
                walks.pop(key, None)
            for c in sorted(visible_set):
                key = (i, c)
                if key not in active:
                    active[key] = next_track[c]
                    next_track[c] += 1
                    w = float(rng.uniform(0.06, 0.14))
                    h = float(rng.uniform(0.10, 0.20))
                    pos = rng.uniform(0.0, 1.0, size=2)
                    vel = rng.standard_normal(2) * 0.01
                    walks[key] = [pos, vel, (w, h)]
                elif config.fragmentation_prob > 0 and rng.random() < config.fragmentation_prob:
                    # the tracker "loses" the object: same ground truth, fresh local id
                    active[key] = next_track[c]
                    next_track[c] += 1

                pos, vel, (w, h) = walks[key]
                vel = 0.85 * vel + 0.15 * rng.standard_normal(2) * 0.03
                pos = np.clip(pos + vel, 0.0, 1.0 - max(w, h))
                walks[key][0], walks[key][1] = pos, vel

                feat = base[i, c].copy()
                if config.observation_noise > 0:
                    feat += config.observation_noise * rng.standard_normal(d)
                observations.append(Observation(
                    t=t,
                    camera_id=c,
                    local_track_id=active[key],
                    gt_global_id=i,
                    bbox=(float(pos[0]), float(pos[1]), w, h),
                    feature=feat,
                ))

    observations.sort(key=lambda o: (o.t, o.camera_id, o.local_track_id))
    return TrackingScenario(
        observations=observations,
        num_cameras=config.num_cameras,
        feature_dim=d,
        num_frames=config.frames,
        meta={"config": config_to_kv(config)},
    )


def to_tracklet_stream(scenario: TrackingScenario) -> list[list[Observation]]:
    """Per-frame observation lists, ordered for graph consumption."""
    return scenario.frames()


def fragmented_pairs(scenario: TrackingScenario) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """((camera, old_track), (camera, new_track)) pairs split by fragmentation.

    A gap-free local-id change for one identity within one camera can
    only come from a fragmentation event.
    """
    last_seen: dict[tuple[int, int], tuple[int, int]] = {}  # (gt, cam) -> (t, track)
    pairs = []
    for obs in scenario.observations:
        if obs.gt_global_id is None:
            continue
        key = (obs.gt_global_id, obs.camera_id)
        prev = last_seen.get(key)
        if prev is not None:
            pt, ptrack = prev
            if ptrack != obs.local_track_id and obs.t == pt + 1:
                pairs.append(((obs.camera_id, ptrack), (obs.camera_id, obs.local_track_id)))
        if prev is None or obs.t >= prev[0]:
            last_seen[key] = (obs.t, obs.local_track_id)
    return sorted(set(pairs))


@dataclass(frozen=True)
class SeparabilityReport:
    intra_identity_mean: float
    inter_identity_mean: float
    intra_same_camera: float
    intra_cross_camera: float
    pairs_sampled: int


def separability_report(scenario: TrackingScenario, max_observations: int = 1500) -> SeparabilityReport:
    """Cosine-distance statistics of raw features within/between identities."""
    obs = [o for o in scenario.observations if o.gt_global_id is not None]
    gids = {o.gt_global_id for o in obs}
    if len(gids) < 2:
        raise UndefinedMetricError("inter-identity statistics need >= 2 identities")
    if len(obs) > max_observations:
        keep = np.random.default_rng(0).choice(len(obs), size=max_observations, replace=False)
        obs = [obs[i] for i in sorted(keep)]
    feats = np.stack([o.feature for o in obs])
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    unit = feats / norms
    dist = 1.0 - unit @ unit.T
    gid = np.array([o.gt_global_id for o in obs])
    cam = np.array([o.camera_id for o in obs])
    iu = np.triu_indices(len(obs), k=1)
    same_id = gid[iu[0]] == gid[iu[1]]
    same_cam = cam[iu[0]] == cam[iu[1]]
    d = dist[iu]

    def _mean(mask):
        return float(d[mask].mean()) if mask.any() else float("nan")

    return SeparabilityReport(
        intra_identity_mean=_mean(same_id),
        inter_identity_mean=_mean(~same_id),
        intra_same_camera=_mean(same_id & same_cam),
        intra_cross_camera=_mean(same_id & ~same_cam),
        pairs_sampled=int(iu[0].size),
    )


# ---------------------------------------------------------------------------
# scenario file format: JSON Lines, one observation per line


def write_scenario(scenario: TrackingScenario, path) -> None:
    with open(path, "w") as fh:
        for o in scenario.observations:
            rec = {
                "t": o.t,
                "cam": o.camera_id,
                "track": o.local_track_id,
                "gt": o.gt_global_id,
                "bbox": [float(x) for x in o.bbox],
                "feat": [float(x) for x in o.feature],
            }
            if o.gt_global_id is None:
                del rec["gt"]
            fh.write(json.dumps(rec) + "\n")


def read_scenario(path) -> TrackingScenario:
    """Parse a scenario file; the "gt" field is optional per line."""
    observations: list[Observation] = []
    dims = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                obs = Observation(
                    t=int(rec["t"]),
                    camera_id=int(rec["cam"]),
                    local_track_id=int(rec["track"]),
                    gt_global_id=int(rec["gt"]) if "gt" in rec and rec["gt"] is not None else None,
                    bbox=tuple(float(x) for x in rec["bbox"]),
                    feature=np.asarray(rec["feat"], dtype=np.float64),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}:{lineno}: bad observation line ({exc})") from exc
            if len(obs.bbox) != 4:
                raise DataError(f"{path}:{lineno}: bbox must have 4 entries")
            if not np.isfinite(obs.feature).all():
                raise DataError(f"{path}:{lineno}: non-finite feature")
            dims.add(obs.feature.shape[0])
            observations.append(obs)
    if not observations:
        raise DataError(f"{path}: empty scenario")
    if len(dims) != 1:
        raise DataError(f"{path}: inconsistent feature dims {sorted(dims)}")
    observations.sort(key=lambda o: (o.t, o.camera_id, o.local_track_id))
    scenario = TrackingScenario(
        observations=observations,
        num_cameras=max(o.camera_id for o in observations) + 1,
        feature_dim=dims.pop(),
        num_frames=max(o.t for o in observations) + 1,
    )
    scenario.identity_table()  # raises if a track serves two identities
    return scenario


# ---------------------------------------------------------------------------
# flat key=value config files


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_pairs(value: str) -> list[tuple[int, int]]:
    pairs = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        a, _, b = part.partition("-")
        pairs.append((int(a), int(b)))
    return pairs


def world_config_from_kv(kv: dict[str, str]) -> WorldConfig:
    ints = {"num_cameras", "num_identities", "frames", "feature_dim",
            "dwell_min", "dwell_max", "seed"}
    floats = {"identity_spread", "camera_distortion", "observation_noise",
              "fragmentation_prob"}
    kwargs: dict = {}
    plain = {k: v for k, v in kv.items() if k not in ("overlap", "movement")}
    for key, value in plain.items():
        try:
            if key in ints:
                kwargs[key] = int(value)
            elif key in floats:
                kwargs[key] = float(value)
            else:
                raise ConfigError(f"unknown world config key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    cfg = WorldConfig(**kwargs)
    c = cfg.num_cameras
    overlap = kv.get("overlap")
    if overlap is not None and overlap != "none":
        cfg = WorldConfig(**{**kwargs, "overlap": overlap_matrix(c, _parse_pairs(overlap))})
    movement = kv.get("movement")
    if movement is not None:
        if movement == "complete":
            mv = movement_complete(c)
        elif movement == "ring":
            mv = movement_ring(c)
        else:
            m = np.eye(c, dtype=bool)
            for a, b in _parse_pairs(movement):
                m[a, b] = m[b, a] = True
            mv = tuple(tuple(bool(x) for x in row) for row in m)
        kwargs["overlap"] = cfg.overlap
        cfg = WorldConfig(**{**kwargs, "movement": mv})
    cfg.validate()
    return cfg


def _pairs_to_str(matrix, diagonal_implied: bool) -> str:
    arr = np.asarray(matrix, dtype=bool)
    pairs = [
        f"{a}-{b}"
        for a in range(arr.shape[0])
        for b in range(a + (1 if diagonal_implied else 0), arr.shape[1])
        if arr[a, b] and (not diagonal_implied or a != b)
    ]
    return ",".join(pairs) if pairs else "none"


def config_to_kv(config: WorldConfig) -> dict[str, str]:
    kv = {
        "num_cameras": str(config.num_cameras),
        "num_identities": str(config.num_identities),
        "frames": str(config.frames),
        "feature_dim": str(config.feature_dim),
        "identity_spread": repr(config.identity_spread),
        "camera_distortion": repr(config.camera_distortion),
        "observation_noise": repr(config.observation_noise),
        "fragmentation_prob": repr(config.fragmentation_prob),
        "dwell_min": str(config.dwell_min),
        "dwell_max": str(config.dwell_max),
        "seed": str(config.seed),
    }
    if config.overlap is not None:
        kv["overlap"] = _pairs_to_str(config.overlap, diagonal_implied=True)
    if config.movement is not None:
        kv["movement"] = _pairs_to_str(config.movement, diagonal_implied=False)
    return kv


def read_world_config(path) -> WorldConfig:
    with open(path) as fh:
        return world_config_from_kv(parse_kv_text(fh.read()))
