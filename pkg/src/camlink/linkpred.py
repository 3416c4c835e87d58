"""Link prediction: from node embeddings to identity decisions.

A classifier turns a pair of embeddings into the probability that the
two tracklets are the same object.  :func:`associate` assigns each new
tracklet to an existing component (or leaves it a fresh identity), and
:func:`merge_fragments` reunites components that a single-camera
tracker fragmented.  Both respect the exclusivity constraint that two
tracklets co-visible in the same camera can never share a global ID.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .dyngraph import GraphHistory, MergeReport
from .errors import ConfigError, UndefinedMetricError
from . import numerics as nm

VARIANTS = ("cosine_sigmoid", "hadamard_mlp")

_DIFF = np.array([[-1.0], [1.0]])  # two-class softmax(z)[1] == sigmoid(z1 - z0)


class LinkClassifier:
    """Scores a pair of embeddings with a probability of being linked.

    ``cosine_sigmoid``: sigmoid of the inner product of unit-normalized
    vectors (no learnable weights).  ``hadamard_mlp``: elementwise
    product fed through an affine map to two logits with a softmax,
    reported as the probability of the "link" class.
    """

    def __init__(self, variant: str, dim: int, rng: np.random.Generator | None = None):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown link classifier {variant!r}, expected one of {VARIANTS}")
        self.variant = variant
        self.dim = dim
        self.weight = None
        self.bias = None
        if variant == "hadamard_mlp":
            rng = rng if rng is not None else np.random.default_rng(0)
            self.weight = nm.Param("clf.weight", nm.glorot(rng, dim, 2))
            self.bias = nm.Param("clf.bias", np.zeros((1, 2)))

    def params(self) -> list[nm.Param]:
        if self.variant == "hadamard_mlp":
            return [self.weight, self.bias]
        return []

    def logit(self, ei, ej) -> nm.Matrix:
        """Pairwise link logits (P x 1); probability = sigmoid(logit)."""
        if self.variant == "hadamard_mlp":
            z = nm.add_bias(nm.matmul(nm.mul(ei, ej), self.weight), self.bias)
            return nm.matmul(z, _DIFF)
        return nm.row_sum(nm.mul(nm.unit_rows(ei), nm.unit_rows(ej)))

    def probability(self, ei, ej) -> nm.Matrix:
        return nm.sigmoid(self.logit(ei, ej))


def score_pair(classifier: LinkClassifier, e_i, e_j) -> float:
    """Probability that two embedding vectors denote the same object."""
    a = nm.Matrix.from_array(np.asarray(e_i, dtype=np.float64).reshape(1, -1))
    b = nm.Matrix.from_array(np.asarray(e_j, dtype=np.float64).reshape(1, -1))
    if a.cols != b.cols:
        raise nm.ShapeError(f"embedding dims differ: {a.cols} vs {b.cols}")
    return float(classifier.probability(a, b))


def _scores_against(classifier: LinkClassifier, anchor: np.ndarray,
                    candidates: np.ndarray) -> np.ndarray:
    tiled = np.broadcast_to(anchor, candidates.shape)
    a = nm.Matrix.from_array(np.ascontiguousarray(tiled))
    b = nm.Matrix.from_array(candidates)
    return classifier.probability(a, b).array[:, 0]


@dataclass(frozen=True)
class LinkDecision:
    """One scored candidate edge for a new node."""

    new_node: int
    candidate_node: int
    candidate_global_id: int
    score: float
    accepted: bool


@dataclass(frozen=True)
class FragmentMerge:
    component_a: int
    component_b: int
    score: float
    surviving_global_id: int


def _candidate_components(history: GraphHistory, embeddings: dict[int, np.ndarray],
                          exclude_roots: set[int], staleness: int | None):
    now = history.latest_time
    gids, roots, reps, vecs = [], [], [], []
    for root in history.component_roots():
        if root in exclude_roots:
            continue
        if staleness is not None and now - history.component_last_time(root) > staleness:
            continue
        rep = history.representative(root)
        vec = embeddings.get(rep)
        if vec is None:
            continue
        gids.append(history.global_id(root))
        roots.append(root)
        reps.append(rep)
        vecs.append(np.asarray(vec, dtype=np.float64))
    return gids, roots, reps, vecs


def associate(history: GraphHistory, embeddings: dict[int, np.ndarray],
              new_nodes: list[int], threshold: float, classifier: LinkClassifier,
              *, staleness: int | None = None) -> tuple[list[LinkDecision], list[MergeReport]]:
    """Assign new tracklets to existing components by thresholded link scores.

    Each new node is scored against one representative per existing
    component (its most recently observed member).  The argmax
    component is accepted when its score reaches the threshold, subject
    to same-camera co-visibility exclusion; conflicts are resolved in
    descending score order (ties by smaller global ID) and losers keep
    their fresh singleton identity.  Accepted links are applied to the
    history before returning.
    """
    if not new_nodes:
        return [], []
    exclude = {history.root_of(v) for v in new_nodes}
    gids, roots, reps, vecs = _candidate_components(history, embeddings, exclude, staleness)
    if not gids:
        return [], []
    cand = np.vstack(vecs)

    proposals = []
    for v in sorted(new_nodes):
        node = history.node(v)
        vec = embeddings.get(v)
        if vec is None:
            raise ValueError(f"no embedding for new node {v}")
        ok = np.array([
            not history.covisible(r, node.camera_id, node.birth_time, node.last_time)
            for r in roots
        ])
        if not ok.any():
            continue
        scores = _scores_against(classifier, np.asarray(vec, dtype=np.float64), cand)
        scores = np.where(ok, scores, -np.inf)
        best = int(np.argmax(scores))  # candidates are gid-sorted, so ties pick the smaller
        proposals.append((float(scores[best]), gids[best], v, reps[best]))

    decisions, merges = [], []
    for score, gid, v, rep in sorted(proposals, key=lambda p: (-p[0], p[1], p[2])):
        node = history.node(v)
        root = history.root_of(rep)
        accepted = (
            score >= threshold
            and not history.covisible(root, node.camera_id, node.birth_time, node.last_time)
        )
        if accepted:
            merges.append(history.link(v, rep))
        decisions.append(LinkDecision(v, rep, gid, score, accepted))
    decisions.sort(key=lambda d: d.new_node)
    return decisions, merges


def merge_fragments(history: GraphHistory, embeddings: dict[int, np.ndarray],
                    merge_threshold: float, classifier: LinkClassifier,
                    *, staleness: int | None = None) -> list[FragmentMerge]:
    """Merge component pairs whose representatives score above the threshold.

    Pairs whose members would violate same-camera co-visibility are
    never merged; the oldest global ID survives each merge.
    """
    gids, roots, reps, vecs = _candidate_components(history, embeddings, set(), staleness)
    if len(gids) < 2:
        return []
    emb = np.vstack(vecs)

    scored = []
    for i in range(len(gids) - 1):
        s = _scores_against(classifier, emb[i], emb[i + 1:])
        for off in np.flatnonzero(s >= merge_threshold):
            j = i + 1 + int(off)
            if not history.components_covisible(roots[i], roots[j]):
                scored.append((float(s[off]), gids[i], gids[j], reps[i], reps[j]))

    applied = []
    for score, ga, gb, ra, rb in sorted(scored, key=lambda p: (-p[0], p[1], p[2])):
        if history.same_component(ra, rb):
            continue
        if history.components_covisible(ra, rb):
            continue  # an earlier merge may have introduced a conflict
        report = history.link(ra, rb)
        applied.append(FragmentMerge(ga, gb, score, report.surviving_global_id))
    return applied


def compute_auc(scores: list[tuple[float, int]]) -> float:
    """Rank-based AUC: P(random positive outranks random negative), ties 0.5."""
    if not scores:
        raise UndefinedMetricError("AUC needs at least one score")
    values = np.array([s for s, _ in scores], dtype=np.float64)
    labels = np.array([1 if l else 0 for _, l in scores])
    npos = int(labels.sum())
    nneg = labels.size - npos
    if npos == 0 or nneg == 0:
        raise UndefinedMetricError(
            f"AUC undefined with {npos} positives and {nneg} negatives"
        )
    ranks = rankdata(values)  # mid-ranks implement the tie = 0.5 convention
    return float((ranks[labels == 1].sum() - npos * (npos + 1) / 2.0) / (npos * nneg))
