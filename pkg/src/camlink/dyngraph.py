"""The growing multi-camera tracklet graph.

Nodes are local tracklets, edges assert "same physical object", and the
connected components of the accumulated edge set are the global
identities.  Only a sliding window of the most recent snapshots is kept
for the attention layers; nodes and edges themselves are never
discarded, so components (and therefore global IDs) persist after a
tracklet ends.

The global ID of a component is the smallest node_id it contains, i.e.
the oldest tracklet, which keeps established identities stable across
merges.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


class DuplicateTrackletError(DataError):
    """A (camera, local track id) pair is already active in the graph."""


@dataclass
class TrackletNode:
    """One local tracklet: a single camera's view of one object.

    ``features`` maps frame index -> raw appearance vector f(v); the
    node is "present" at exactly those frames.  ``node_id`` is assigned
    by the graph on insertion.
    """

    camera_id: int
    local_track_id: int
    birth_time: int
    features: dict[int, np.ndarray]
    node_id: int | None = None
    last_time: int = field(init=False)

    def __post_init__(self):
        if not self.features:
            raise DataError("a tracklet needs at least one feature observation")
        if self.birth_time != min(self.features):
            raise DataError(
                f"birth_time {self.birth_time} is not the first observation "
                f"{min(self.features)}"
            )
        if self.camera_id < 0:
            raise DataError(f"camera_id must be >= 0, got {self.camera_id}")
        self.features = {t: np.asarray(f, dtype=np.float64) for t, f in self.features.items()}
        dims = {f.shape for f in self.features.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise DataError(f"tracklet features must share one 1-D shape, got {dims}")
        self.last_time = max(self.features)

    @property
    def feature_dim(self) -> int:
        return self.features[self.birth_time].shape[0]


@dataclass(frozen=True)
class MergeReport:
    merged: bool
    surviving_global_id: int


class GraphSnapshot:
    """Read-only view of the graph at one window time."""

    def __init__(self, history: "GraphHistory", time: int, node_count: int):
        self._history = history
        self.time = time
        self._node_count = node_count

    @property
    def node_ids(self) -> range:
        # vertex sets only grow, so the snapshot holds exactly the first ids
        return range(self._node_count)

    def neighbors(self, v: int) -> set[int]:
        return self._history.neighbors(v, self.time)

    def edges(self) -> list[tuple[int, int]]:
        return sorted(
            (a, b) for (a, b), t in self._history._edge_times.items() if t <= self.time
        )


@dataclass
class WindowFeatures:
    """Per-node, per-step feature table over the current window.

    ``present[i, s]`` is False for steps before a node's birth or after
    its last observation; such steps carry a zero placeholder row in
    ``features`` and are masked downstream, never averaged in.
    """

    times: list[int]
    node_ids: list[int]
    cameras: np.ndarray          # (N,) int
    features: np.ndarray         # (N, S, D) float64
    present: np.ndarray          # (N, S) bool


class GraphHistory:
    """Sliding window of graph snapshots plus the accumulated identity partition."""

    def __init__(self, window: int = 3):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self._nodes: dict[int, TrackletNode] = {}
        self._times: list[int] = []
        self._counts: list[int] = []
        self._adj: dict[int, list[tuple[int, int]]] = {}
        self._edge_times: dict[tuple[int, int], int] = {}
        self._by_track: dict[tuple[int, int], int] = {}
        self.feature_dim: int | None = None
        # union-find with per-root metadata
        self._parent: dict[int, int] = {}
        self._rank: dict[int, int] = {}
        self._minid: dict[int, int] = {}
        self._rep: dict[int, tuple[int, int]] = {}
        self._cam_nodes: dict[int, dict[int, list[int]]] = {}

    # -- basic accessors ---------------------------------------------------

    @property
    def latest_time(self) -> int | None:
        return self._times[-1] if self._times else None

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return len(self._edge_times)

    def window_times(self) -> list[int]:
        return list(self._times)

    def node(self, v: int) -> TrackletNode:
        try:
            return self._nodes[v]
        except KeyError:
            raise LookupError(f"unknown node {v}") from None

    def node_for_track(self, camera_id: int, local_track_id: int) -> int | None:
        return self._by_track.get((camera_id, local_track_id))

    def snapshot(self, t: int) -> GraphSnapshot:
        if t not in self._times:
            raise LookupError(f"time {t} is not inside the window {self._times}")
        return GraphSnapshot(self, t, self._counts[self._times.index(t)])

    # -- growth ---------------------------------------------------------------

    def add_nodes(self, t: int, new_tracklets: list[TrackletNode]) -> list[int]:
        """Advance to frame t, ingesting the new tracklets born there.

        Prior nodes are carried forward; each new node starts as a
        singleton component.  Frames must be consecutive, starting at 0.
        """
        if self._times:
            if t != self._times[-1] + 1:
                raise ValueError(f"expected frame {self._times[-1] + 1}, got {t}")
        elif t != 0:
            raise ValueError(f"an empty history starts at frame 0, got {t}")

        ids = []
        for trk in new_tracklets:
            if trk.birth_time != t:
                raise DataError(f"tracklet born at {trk.birth_time} added at frame {t}")
            if self.feature_dim is None:
                self.feature_dim = trk.feature_dim
            elif trk.feature_dim != self.feature_dim:
                raise DataError(
                    f"feature dim {trk.feature_dim} != graph dim {self.feature_dim}"
                )
            key = (trk.camera_id, trk.local_track_id)
            prev = self._by_track.get(key)
            if prev is not None and self._nodes[prev].last_time >= t - 1:
                raise DuplicateTrackletError(
                    f"camera {trk.camera_id} track {trk.local_track_id} is still active"
                )
            v = len(self._nodes)
            trk.node_id = v
            self._nodes[v] = trk
            self._by_track[key] = v
            self._parent[v] = v
            self._rank[v] = 0
            self._minid[v] = v
            self._rep[v] = (trk.last_time, v)
            self._cam_nodes[v] = {trk.camera_id: [v]}
            ids.append(v)

        self._times.append(t)
        self._counts.append(len(self._nodes))
        if len(self._times) > self.window:
            self._times = self._times[-self.window:]
            self._counts = self._counts[-self.window:]
        return ids

    def update_features(self, v: int, t: int, feature) -> None:
        """Record a continuing observation of an existing tracklet at frame t."""
        node = self.node(v)
        if t != self.latest_time:
            raise ValueError(f"observations go to the current frame {self.latest_time}, got {t}")
        if t in node.features:
            raise DataError(f"node {v} already observed at frame {t}")
        f = np.asarray(feature, dtype=np.float64)
        if f.shape != (self.feature_dim,):
            raise DataError(f"feature shape {f.shape} != ({self.feature_dim},)")
        node.features[t] = f
        node.last_time = t
        root = self._find(v)
        if (t, v) > self._rep[root]:
            self._rep[root] = (t, v)

    # -- identity partition -----------------------------------------------

    def _find(self, v: int) -> int:
        root = v
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[v] != root:
            self._parent[v], v = root, self._parent[v]
        return root

    def link(self, a: int, b: int) -> MergeReport:
        """Assert nodes a and b are the same object; unify their components."""
        if a == b:
            raise ValueError(f"cannot link node {a} to itself")
        if a not in self._nodes or b not in self._nodes:
            raise LookupError(f"unknown node in link({a}, {b})")
        if self.latest_time is None:
            raise ValueError("cannot link before the first snapshot")
        key = (min(a, b), max(a, b))
        if key not in self._edge_times:
            self._edge_times[key] = self.latest_time
            self._adj.setdefault(a, []).append((b, self.latest_time))
            self._adj.setdefault(b, []).append((a, self.latest_time))

        ra, rb = self._find(a), self._find(b)
        if ra == rb:
            return MergeReport(False, self._minid[ra])
        if self._rank[ra] < self._rank[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        if self._rank[ra] == self._rank[rb]:
            self._rank[ra] += 1
        self._minid[ra] = min(self._minid[ra], self._minid.pop(rb))
        self._rep[ra] = max(self._rep[ra], self._rep.pop(rb))
        spans = self._cam_nodes.pop(rb)
        mine = self._cam_nodes[ra]
        for cam, members in spans.items():
            mine.setdefault(cam, []).extend(members)
        return MergeReport(True, self._minid[ra])

    def root_of(self, v: int) -> int:
        if v not in self._nodes:
            raise LookupError(f"unknown node {v}")
        return self._find(v)

    def global_id(self, v: int) -> int:
        if v not in self._nodes:
            raise LookupError(f"unknown node {v}")
        return self._minid[self._find(v)]

    def same_component(self, a: int, b: int) -> bool:
        return self._find(a) == self._find(b)

    def components(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for v in self._nodes:
            out.setdefault(self._minid[self._find(v)], []).append(v)
        return {gid: sorted(vs) for gid, vs in sorted(out.items())}

    def component_roots(self) -> list[int]:
        roots = {self._find(v) for v in self._nodes}
        return sorted(roots, key=lambda r: self._minid[r])

    def representative(self, root: int) -> int:
        """Most recently observed member node (ties -> larger node id)."""
        return self._rep[self._find(root)][1]

    def component_last_time(self, root: int) -> int:
        return self._rep[self._find(root)][0]

    def covisible(self, root: int, camera_id: int, t0: int, t1: int) -> bool:
        """True if any member in camera_id was observed somewhere in [t0, t1]."""
        members = self._cam_nodes[self._find(root)].get(camera_id, ())
        for m in members:
            node = self._nodes[m]
            if node.birth_time <= t1 and t0 <= node.last_time:
                return True
        return False

    def components_covisible(self, ra: int, rb: int) -> bool:
        """True if merging would put two same-camera, time-overlapping tracklets together."""
        a, b = self._cam_nodes[self._find(ra)], self._cam_nodes[self._find(rb)]
        if len(b) < len(a):
            a, b = b, a
        for cam, members in a.items():
            others = b.get(cam)
            if not others:
                continue
            for m in members:
                mn = self._nodes[m]
                for o in others:
                    on = self._nodes[o]
                    if mn.birth_time <= on.last_time and on.birth_time <= mn.last_time:
                        return True
        return False

    # -- attention inputs ---------------------------------------------------

    def neighbors(self, v: int, t: int) -> set[int]:
        """Nodes adjacent to v in snapshot t's accumulated edge set."""
        if t not in self._times:
            raise LookupError(f"time {t} is not inside the window {self._times}")
        count = self._counts[self._times.index(t)]
        if v not in self._nodes or v >= count:
            raise LookupError(f"node {v} is not in the snapshot at time {t}")
        return {u for u, added in self._adj.get(v, ()) if added <= t}

    def window_features(self, t: int | None = None) -> WindowFeatures:
        """Feature table for steps t-W+1..t, with explicit absence flags.

        Nodes with no observation anywhere in the window are omitted;
        they do not participate in attention.
        """
        if not self._times:
            raise LookupError("history is empty")
        if t is None:
            t = self._times[-1]
        if t not in self._times:
            raise LookupError(f"time {t} is not inside the window {self._times}")
        times = [s for s in self._times if s <= t]
        alive = sorted(
            v for v, node in self._nodes.items()
            if any(s in node.features for s in times)
        )
        dim = self.feature_dim or 0
        feats = np.zeros((len(alive), len(times), dim))
        present = np.zeros((len(alive), len(times)), dtype=bool)
        cams = np.zeros(len(alive), dtype=np.intp)
        for i, v in enumerate(alive):
            node = self._nodes[v]
            cams[i] = node.camera_id
            for s, time in enumerate(times):
                f = node.features.get(time)
                if f is not None:
                    feats[i, s] = f
                    present[i, s] = True
        return WindowFeatures(times, alive, cams, feats, present)

    # -- serialization ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        """Graph state as a plain document (nodes, edges, components)."""
        return {
            "time": self.latest_time,
            "window_times": self.window_times(),
            "nodes": [
                {
                    "id": v,
                    "camera": n.camera_id,
                    "local_track": n.local_track_id,
                    "birth": n.birth_time,
                    "last": n.last_time,
                    "global_id": self.global_id(v),
                }
                for v, n in sorted(self._nodes.items())
            ],
            "edges": [[a, b, t] for (a, b), t in sorted(self._edge_times.items())],
            "components": {str(g): vs for g, vs in self.components().items()},
        }


@dataclass
class SnapshotView:
    """A frozen single-snapshot view used for sampling walks and negatives."""

    nodes: list[int]
    adjacency: dict[int, list[int]]
    component: dict[int, int]

    @classmethod
    def from_history(cls, history: GraphHistory, t: int | None = None) -> "SnapshotView":
        if t is None:
            t = history.latest_time
        snap = history.snapshot(t)
        nodes = list(snap.node_ids)
        adj = {v: sorted(history.neighbors(v, t)) for v in nodes}
        comp = {v: history.global_id(v) for v in nodes}
        return cls(nodes, adj, comp)
