"""Online tracking loop: stream observations in, global identities out.

Each frame: new tracklets become graph nodes, continuing tracklets get
feature updates, the window is re-embedded, new nodes are associated to
existing components by link prediction, and (periodically) fragmented
components are merged back together.  Per-observation predictions carry
the component's global ID as of that frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import Model, WindowBatch, embed
from .dyngraph import GraphHistory, TrackletNode
from .errors import ConfigError
from .linkpred import associate, merge_fragments
from .simulator import Observation, TrackingScenario


@dataclass(frozen=True)
class Prediction:
    t: int
    camera_id: int
    local_track_id: int
    bbox: tuple[float, float, float, float]
    global_id: int


@dataclass
class TrackResult:
    predictions: list[Prediction]
    decisions: list[dict]
    merges: list[dict]
    history: GraphHistory
    peak_nodes: int


class OnlineTracker:
    """Drives the dynamic graph + embedding + association pipeline."""

    def __init__(self, model: Model, *, threshold: float = 0.5,
                 merge_threshold: float = 0.6, merge_every: int = 1,
                 staleness: int | None = None, window: int | None = None):
        if not 0.0 <= threshold <= 1.0 or not 0.0 <= merge_threshold <= 1.0:
            raise ConfigError("thresholds must lie in [0, 1]")
        if merge_every < 0:
            raise ConfigError("merge_every must be >= 0 (0 disables merging)")
        self.model = model
        self.threshold = threshold
        self.merge_threshold = merge_threshold
        self.merge_every = merge_every
        self.staleness = staleness
        w = window if window is not None else model.config.window
        if w > model.config.window:
            raise ConfigError(
                f"window {w} exceeds the model's trained window {model.config.window}"
            )
        self.history = GraphHistory(window=w)
        self.embeddings: dict[int, np.ndarray] = {}
        self.predictions: list[Prediction] = []
        self.decisions: list[dict] = []
        self.merges: list[dict] = []
        self.peak_nodes = 0

    def step(self, t: int, observations: list[Observation]) -> None:
        """Ingest one frame of observations and assign global identities."""
        history = self.history
        births, updates = [], []
        for obs in sorted(observations, key=lambda o: (o.camera_id, o.local_track_id)):
            v = history.node_for_track(obs.camera_id, obs.local_track_id)
            if v is not None and history.node(v).last_time == t - 1:
                updates.append((v, obs))
            else:
                births.append(obs)
        new_ids = history.add_nodes(t, [
            TrackletNode(
                camera_id=obs.camera_id,
                local_track_id=obs.local_track_id,
                birth_time=t,
                features={t: obs.feature},
            )
            for obs in births
        ])
        for v, obs in updates:
            history.update_features(v, t, obs.feature)
        self.peak_nodes = max(self.peak_nodes, history.node_count)

        batch = WindowBatch.from_history(history)
        if batch.node_ids:
            result = embed(self.model.network, batch)
            self.embeddings.update(result.latest())

        decisions, merges = associate(
            history, self.embeddings, new_ids, self.threshold,
            self.model.classifier, staleness=self.staleness,
        )
        for d in decisions:
            self.decisions.append({
                "t": t,
                "new_node": d.new_node,
                "candidate": d.candidate_node,
                "score": d.score,
                "accepted": d.accepted,
            })
        if self.merge_every and t % self.merge_every == 0:
            for m in merge_fragments(history, self.embeddings, self.merge_threshold,
                                     self.model.classifier, staleness=self.staleness):
                self.merges.append({
                    "t": t,
                    "component_a": m.component_a,
                    "component_b": m.component_b,
                    "score": m.score,
                    "surviving": m.surviving_global_id,
                })

        for obs in observations:
            v = history.node_for_track(obs.camera_id, obs.local_track_id)
            self.predictions.append(Prediction(
                t=t,
                camera_id=obs.camera_id,
                local_track_id=obs.local_track_id,
                bbox=obs.bbox,
                global_id=history.global_id(v),
            ))

    def run(self, scenario: TrackingScenario) -> TrackResult:
        for t, frame in enumerate(scenario.frames()):
            self.step(t, frame)
        return TrackResult(
            predictions=self.predictions,
            decisions=self.decisions,
            merges=self.merges,
            history=self.history,
            peak_nodes=self.peak_nodes,
        )


def track_scenario(scenario: TrackingScenario, model: Model, *,
                   threshold: float = 0.5, merge_threshold: float = 0.6,
                   merge_every: int = 1, staleness: int | None = None,
                   window: int | None = None) -> TrackResult:
    """Convenience wrapper: run the whole scenario through a fresh tracker."""
    if scenario.feature_dim != model.config.feature_dim:
        raise ConfigError(
            f"scenario feature dim {scenario.feature_dim} does not match "
            f"model feature_dim {model.config.feature_dim}"
        )
    tracker = OnlineTracker(
        model, threshold=threshold, merge_threshold=merge_threshold,
        merge_every=merge_every, staleness=staleness, window=window,
    )
    return tracker.run(scenario)


# ---------------------------------------------------------------------------
# throughput benchmark


@dataclass(frozen=True)
class BenchPoint:
    nodes: int
    edges: int
    hz: float
    step_seconds: float


def bench_association(model: Model, node_count: int, *, live: int = 48,
                      new_per_step: int = 4, steps: int = 20,
                      seed: int = 0) -> BenchPoint:
    """Measure association-step throughput on a graph of the given size.

    Builds a history holding ``node_count`` nodes (mostly tracklets that
    ended long ago, chained into small components), keeps ``live``
    tracklets observed inside the window, then times the per-frame work:
    embed the window, score new nodes against every component, apply
    links.  Component merging is a separate recovery pass and is not
    part of the measured step.
    """
    import time

    if node_count < live + steps * new_per_step + 1:
        raise ConfigError(f"node_count {node_count} too small for live={live}, steps={steps}")
    cfg = model.config
    rng = np.random.default_rng(seed)
    tracker = OnlineTracker(model, threshold=0.99, merge_every=0)
    history = tracker.history

    backlog = node_count - live - steps * new_per_step

    def fake_obs(t, cam, track):
        return Observation(
            t=t, camera_id=cam, local_track_id=track, gt_global_id=None,
            bbox=(0.1, 0.1, 0.05, 0.05),
            feature=rng.standard_normal(cfg.feature_dim),
        )

    # frame 0: the backlog, chained into components of ~3 across cameras
    tracker.step(0, [fake_obs(0, i % cfg.num_cameras, i) for i in range(backlog)])
    for start in range(0, backlog - 2, 3):
        history.link(start, start + 1)
        history.link(start + 1, start + 2)
    # stale nodes keep the embedding they had when last observed
    emb_dim = cfg.embedding_dim
    for v in range(backlog):
        vec = rng.standard_normal(emb_dim)
        tracker.embeddings[v] = vec / np.linalg.norm(vec)

    # live tracklets observed every frame from here on
    live_tracks = [(i % cfg.num_cameras, backlog + i) for i in range(live)]
    t = 1
    tracker.step(t, [fake_obs(t, cam, trk) for cam, trk in live_tracks])
    for _ in range(cfg.window):  # roll the backlog frame out of the window
        t += 1
        tracker.step(t, [fake_obs(t, cam, trk) for cam, trk in live_tracks])

    next_track = backlog + live
    elapsed = 0.0
    for _ in range(steps):
        t += 1
        frame = [fake_obs(t, cam, trk) for cam, trk in live_tracks]
        for k in range(new_per_step):
            frame.append(fake_obs(t, (next_track + k) % cfg.num_cameras, next_track + k))
        next_track += new_per_step
        start = time.perf_counter()
        tracker.step(t, frame)
        elapsed += time.perf_counter() - start

    per_step = elapsed / steps
    return BenchPoint(
        nodes=history.node_count,
        edges=history.edge_count,
        hz=1.0 / per_step,
        step_seconds=per_step,
    )
