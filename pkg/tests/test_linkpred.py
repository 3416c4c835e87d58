import math

import numpy as np
import pytest

from camlink.dyngraph import GraphHistory, TrackletNode
from camlink.errors import UndefinedMetricError
from camlink.linkpred import (LinkClassifier, associate, compute_auc,
                              merge_fragments, score_pair)
from camlink.numerics import ShapeError, ZeroRowError

COS = LinkClassifier("cosine_sigmoid", 4)


def history_nodes(specs, dim=4):
    """specs: list of (camera, birth, features_by_time). One frame per time step."""
    frames = 1 + max(max(f) for _, _, f in specs)
    h = GraphHistory(window=frames)
    for t in range(frames):
        h.add_nodes(t, [
            TrackletNode(cam, i, t, {t: np.asarray(feats[t], dtype=float)})
            for i, (cam, birth, feats) in enumerate(specs) if birth == t
        ])
        for i, (cam, birth, feats) in enumerate(specs):
            if birth < t and t in feats:
                h.update_features(i, t, np.asarray(feats[t], dtype=float))
    return h


class TestScorePair:
    def test_identical_unit_vectors(self):
        v = np.array([1.0, 0.0, 0.0, 0.0])
        assert math.isclose(score_pair(COS, v, v), 1 / (1 + math.exp(-1)), rel_tol=1e-9)

    def test_orthogonal_vectors(self):
        a = np.array([1.0, 0.0, 0.0, 0.0])
        b = np.array([0.0, 2.0, 0.0, 0.0])
        assert score_pair(COS, a, b) == 0.5

    def test_symmetry_both_variants(self):
        rng = np.random.default_rng(0)
        had = LinkClassifier("hadamard_mlp", 4, rng)
        for _ in range(10):
            a, b = rng.standard_normal(4), rng.standard_normal(4)
            assert score_pair(COS, a, b) == score_pair(COS, b, a)
            assert score_pair(had, a, b) == score_pair(had, b, a)

    def test_zero_vector_has_no_direction(self):
        with pytest.raises(ZeroRowError):
            score_pair(COS, np.zeros(4), np.ones(4))

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            score_pair(COS, np.ones(3), np.ones(4))

    def test_hadamard_is_two_class_softmax(self):
        rng = np.random.default_rng(1)
        clf = LinkClassifier("hadamard_mlp", 4, rng)
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        z = (a * b) @ clf.weight.value.array + clf.bias.value.array[0]
        softmax = np.exp(z - z.max())
        softmax /= softmax.sum()
        assert math.isclose(score_pair(clf, a, b), softmax[1], rel_tol=1e-12)


class TestAuc:
    def test_perfect_separation(self):
        assert compute_auc([(0.9, 1), (0.8, 1), (0.1, 0)]) == 1.0

    def test_tie_convention(self):
        assert compute_auc([(0.6, 1), (0.6, 0)]) == 0.5

    def test_anti_separation(self):
        assert compute_auc([(0.1, 1), (0.9, 0), (0.8, 0)]) == 0.0

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            compute_auc([(0.3, 1), (0.4, 1)])
        with pytest.raises(UndefinedMetricError):
            compute_auc([])

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n = int(rng.integers(2, 60))
            values = rng.integers(0, 8, size=n) / 7.0  # coarse grid forces ties
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = list(zip(values.tolist(), labels.tolist()))
            pos = [s for s, l in scores if l]
            neg = [s for s, l in scores if not l]
            brute = sum(1.0 if p > q else 0.5 if p == q else 0.0
                        for p in pos for q in neg) / (len(pos) * len(neg))
            assert math.isclose(compute_auc(scores), brute, rel_tol=1e-12)


def unit(*xs):
    v = np.asarray(xs, dtype=float)
    return v / np.linalg.norm(v)


class TestAssociate:
    def test_no_existing_components(self):
        h = history_nodes([(0, 0, {0: [1, 0, 0, 0]}), (1, 0, {0: [0, 1, 0, 0]})])
        emb = {0: unit(1, 0, 0, 0), 1: unit(0, 1, 0, 0)}
        decisions, merges = associate(h, emb, [0, 1], 0.5, COS)
        assert decisions == [] and merges == []
        assert h.global_id(0) == 0 and h.global_id(1) == 1

    def test_simple_accept(self):
        h = history_nodes([
            (0, 0, {0: [1, 0, 0, 0]}),          # existing, camera 0
            (1, 1, {1: [1, 0, 0, 0]}),          # new, camera 1
        ])
        emb = {0: unit(1, 0, 0, 0), 1: unit(1, 0, 0, 0)}
        decisions, merges = associate(h, emb, [1], 0.5, COS)
        assert len(decisions) == 1 and decisions[0].accepted
        assert decisions[0].candidate_global_id == 0
        assert h.global_id(1) == 0
        assert merges[0].merged

    def test_below_threshold_rejected(self):
        h = history_nodes([
            (0, 0, {0: [1, 0, 0, 0]}),
            (1, 1, {1: [0, 1, 0, 0]}),
        ])
        emb = {0: unit(1, 0, 0, 0), 1: unit(0, 1, 0, 0)}  # score 0.5
        decisions, merges = associate(h, emb, [1], 0.6, COS)
        assert len(decisions) == 1 and not decisions[0].accepted
        assert h.global_id(1) == 1 and merges == []

    def test_covisible_conflict_resolved_by_score(self):
        h = history_nodes([
            (0, 0, {0: [1, 0, 0, 0]}),                      # component, camera 0
            (1, 1, {1: [1, 0, 0, 0]}),                      # new A, camera 1
            (1, 1, {1: [0.9, np.sqrt(1 - 0.81), 0, 0]}),    # new B, camera 1, co-visible with A
        ])
        emb = {
            0: unit(1, 0, 0, 0),
            1: unit(1, 0, 0, 0),                      # cos 1.0 -> 0.731
            2: unit(0.9, math.sqrt(1 - 0.81), 0, 0),  # cos 0.9 -> 0.711
        }
        decisions, merges = associate(h, emb, [1, 2], 0.6, COS)
        by_node = {d.new_node: d for d in decisions}
        assert by_node[1].accepted
        assert not by_node[2].accepted  # loser keeps its fresh id
        assert h.global_id(1) == 0 and h.global_id(2) == 2
        assert len(merges) == 1

    def test_covisible_component_excluded_upfront(self):
        # candidate component has a camera-1 member overlapping the new node's span
        h = history_nodes([
            (1, 0, {0: [1, 0, 0, 0], 1: [1, 0, 0, 0]}),
            (1, 1, {1: [1, 0, 0, 0]}),
        ])
        emb = {0: unit(1, 0, 0, 0), 1: unit(1, 0, 0, 0)}
        decisions, merges = associate(h, emb, [1], 0.5, COS)
        assert decisions == [] and merges == []
        assert h.global_id(1) == 1

    def test_tie_breaks_to_smaller_global_id(self):
        h = history_nodes([
            (0, 0, {0: [1, 0, 0, 0]}),
            (1, 0, {0: [1, 0, 0, 0]}),
            (2, 1, {1: [1, 0, 0, 0]}),
        ])
        emb = {i: unit(1, 0, 0, 0) for i in range(3)}
        decisions, _ = associate(h, emb, [2], 0.5, COS)
        assert decisions[0].accepted and decisions[0].candidate_global_id == 0

    def test_missing_embedding_is_error(self):
        h = history_nodes([(0, 0, {0: [1, 0, 0, 0]}), (1, 1, {1: [1, 0, 0, 0]})])
        with pytest.raises(ValueError):
            associate(h, {0: unit(1, 0, 0, 0)}, [1], 0.5, COS)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(3)
        for trial in range(10):
            accepted = []
            for tau in (0.2, 0.5, 0.7, 0.9):
                specs = [(int(rng.integers(3)), 0,
                          {0: rng.standard_normal(4).tolist()}) for _ in range(4)]
                specs += [(int(rng.integers(3)), 1,
                           {1: rng.standard_normal(4).tolist()}) for _ in range(3)]
                rng2 = np.random.default_rng(trial)
                h = history_nodes(specs)
                emb = {v: unit(*rng2.standard_normal(4)) for v in range(7)}
                decisions, _ = associate(h, emb, [4, 5, 6], tau, COS)
                accepted.append(sum(d.accepted for d in decisions))
            assert accepted == sorted(accepted, reverse=True)


class TestMergeFragments:
    def test_reunites_similar_components(self):
        h = history_nodes([
            (0, 0, {0: [1, 0, 0, 0]}),
            (0, 2, {2: [1, 0, 0, 0]}),   # same camera but disjoint time span
        ])
        emb = {0: unit(1, 0, 0, 0), 1: unit(1, 0, 0, 0)}
        merges = merge_fragments(h, emb, 0.7, COS)
        assert len(merges) == 1 and merges[0].surviving_global_id == 0
        assert h.global_id(1) == 0

    def test_distinct_components_left_alone(self):
        h = history_nodes([
            (0, 0, {0: [1, 0, 0, 0]}),
            (1, 0, {0: [0, 1, 0, 0]}),
        ])
        emb = {0: unit(1, 0, 0, 0), 1: unit(0, 1, 0, 0)}  # score 0.5 < 0.7
        assert merge_fragments(h, emb, 0.7, COS) == []

    def test_covisible_components_never_merge(self):
        h = history_nodes([
            (0, 0, {0: [1, 0, 0, 0]}),
            (0, 0, {0: [1, 0, 0, 0]}),   # same camera, same time
        ])
        emb = {0: unit(1, 0, 0, 0), 1: unit(1, 0, 0, 0)}
        assert merge_fragments(h, emb, 0.5, COS) == []
        assert h.global_id(0) != h.global_id(1)

    def test_empty_graph_noop(self):
        h = GraphHistory()
        assert merge_fragments(h, {}, 0.5, COS) == []
