import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import camlink.numerics as nm


def mat(rows):
    return nm.Matrix.from_array(np.array(rows, dtype=np.float64))


class TestMatrix:
    def test_shape_and_data(self):
        m = nm.Matrix(2, 3, [1, 2, 3, 4, 5, 6])
        assert (m.rows, m.cols) == (2, 3)
        assert m.tolist() == [1, 2, 3, 4, 5, 6]
        assert m.array[1, 0] == 4  # row-major

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            nm.Matrix(1, 2, [1.0, float("nan")])
        with pytest.raises(ValueError):
            nm.Matrix(1, 1, [float("inf")])

    def test_rejects_bad_dims(self):
        with pytest.raises(nm.ShapeError):
            nm.Matrix(0, 3)


class TestMatmul:
    def test_identity(self):
        a = mat([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        eye = mat(np.eye(3))
        assert np.array_equal(nm.matmul(eye, a).array, a.array)

    def test_hand_example(self):
        out = nm.matmul(mat([[1, 2], [3, 4]]), mat([[0], [1]]))
        assert out.tolist() == [2.0, 4.0]

    def test_zero(self):
        a = mat([[1.5, -2.0], [0.25, 3.0]])
        z = nm.Matrix(2, 2)
        assert np.array_equal(nm.matmul(z, a).array, np.zeros((2, 2)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(nm.ShapeError, match="2x3.*4x2"):
            nm.matmul(nm.Matrix(2, 3), nm.Matrix(4, 2))

    def test_associativity_within_tolerance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            dims = rng.integers(1, 33, size=4)
            a = rng.uniform(-1, 1, (dims[0], dims[1]))
            b = rng.uniform(-1, 1, (dims[1], dims[2]))
            c = rng.uniform(-1, 1, (dims[2], dims[3]))
            left = nm.matmul(nm.matmul(mat(a), mat(b)), mat(c)).array
            right = nm.matmul(mat(a), nm.matmul(mat(b), mat(c))).array
            assert np.abs(left - right).max() < 1e-9


class TestSoftmaxRows:
    def test_symmetric_row(self):
        out = nm.softmax_rows(mat([[0.0, 0.0]]))
        assert out.tolist() == [0.5, 0.5]

    def test_single_unmasked_entry(self):
        mask = nm.attention_mask([[0.0, nm.NEG_INF]])
        out = nm.softmax_rows(mat([[3.7, -1.2]]), mask)
        assert out.tolist() == [1.0, 0.0]

    def test_hand_computed_values(self):
        out = nm.softmax_rows(mat([[1.0, 2.0, 3.0]]))
        assert np.allclose(out.array, [[0.0900, 0.2447, 0.6652]], atol=1e-4)

    def test_fully_masked_row_is_error(self):
        mask = nm.attention_mask([[nm.NEG_INF, nm.NEG_INF]])
        with pytest.raises(nm.DegenerateRowError):
            nm.softmax_rows(mat([[1.0, 2.0]]), mask)

    def test_mask_values_validated(self):
        with pytest.raises(ValueError, match="0 or -inf"):
            nm.softmax_rows(mat([[1.0, 2.0]]), np.array([[0.0, -1.0]]))

    def test_large_values_stable(self):
        out = nm.softmax_rows(mat([[1000.0, 1000.0, -1000.0]]))
        assert np.isfinite(out.array).all()
        assert abs(out.array.sum() - 1.0) < 1e-12

    @given(st.lists(st.lists(st.floats(-50, 50), min_size=2, max_size=6),
                    min_size=1, max_size=5).filter(lambda rs: len({len(r) for r in rs}) == 1))
    def test_rows_sum_to_one(self, rows):
        out = nm.softmax_rows(mat(rows))
        assert np.all(out.array >= 0.0) and np.all(out.array <= 1.0)
        assert np.abs(out.array.sum(axis=1) - 1.0).max() < 1e-12


class TestLeakyRelu:
    def test_values(self):
        out = nm.leaky_relu(mat([[0.0, -1.0, 5.0]]), 0.2)
        assert out.tolist() == [0.0, -0.2, 5.0]

    def test_slope_validated(self):
        for slope in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValueError):
                nm.leaky_relu(mat([[1.0]]), slope)


class TestBackward:
    def test_linear_grad_is_broadcast_of_input(self):
        w = nm.Param("w", np.zeros((2, 2)))
        x = mat([[3.0], [5.0]])
        with nm.Tape() as tape:
            loss = nm.total_sum(nm.matmul(w, x))
        nm.backward(tape, loss)
        assert np.array_equal(w.grad.array, np.array([[3.0, 5.0], [3.0, 5.0]]))

    def test_unreachable_param_gets_zero_grad(self):
        w = nm.Param("w", np.ones((2, 2)))
        p = nm.Param("p", np.ones((2, 2)))
        with nm.Tape() as tape:
            loss = nm.total_sum(nm.mul(w, w))
        nm.backward(tape, loss)
        assert np.array_equal(p.grad.array, np.zeros((2, 2)))

    def test_quadratic_grad(self):
        w = nm.Param("w", np.array([[1.0, -2.0, 0.5]]))
        with nm.Tape() as tape:
            loss = nm.total_sum(nm.mul(w, w))
        nm.backward(tape, loss)
        assert np.allclose(w.grad.array, 2 * w.value.array)

    def test_grads_accumulate_additively(self):
        w = nm.Param("w", np.array([[2.0]]))
        for _ in range(2):
            with nm.Tape() as tape:
                loss = nm.total_sum(nm.mul(w, w))
            nm.backward(tape, loss)
        assert np.allclose(w.grad.array, 2 * 2 * w.value.array)

    def test_non_scalar_loss_rejected(self):
        w = nm.Param("w", np.ones((2, 2)))
        with nm.Tape() as tape:
            out = nm.mul(w, w)
        with pytest.raises(nm.ShapeError):
            nm.backward(tape, out)

    def test_loss_not_on_tape_rejected(self):
        w = nm.Param("w", np.ones((1, 1)))
        with nm.Tape() as tape:
            nm.mul(w, w)
        stray = nm.Matrix(1, 1)
        with pytest.raises(ValueError):
            nm.backward(tape, stray)

    def test_forward_only_records_nothing(self):
        w = nm.Param("w", np.ones((3, 3)))
        nm.matmul(w, w)  # no active tape
        with nm.Tape() as tape:
            nm.matmul(mat(np.ones((2, 2))), mat(np.ones((2, 2))))  # constants only
        assert len(tape) == 0


class TestTapeDeterminism:
    def test_replay_bit_identical(self):
        rng = np.random.default_rng(3)
        w = nm.Param("w", rng.standard_normal((4, 4)))
        x = mat(rng.standard_normal((4, 4)))

        def forward():
            h = nm.leaky_relu(nm.matmul(w, x), 0.2)
            return nm.total_sum(nm.softmax_rows(h))

        assert float(forward()) == float(forward())


def _compose_everything(rng):
    """A forward touching every differentiable primitive once."""
    w1 = nm.Param("w1", rng.standard_normal((3, 4)) * 0.5)
    w2 = nm.Param("w2", rng.standard_normal((4, 4)) * 0.5)
    bias = nm.Param("bias", rng.standard_normal((1, 4)) * 0.1)
    col = nm.Param("col", rng.standard_normal((6, 1)) * 0.5)
    x = nm.Matrix.from_array(rng.standard_normal((5, 3)))
    idx = np.array([0, 2, 4, 1, 1, 3])
    seg = np.array([0, 0, 1, 1, 2, 2])
    mask = np.zeros((6, 2))
    mask[0, 1] = nm.NEG_INF

    def forward():
        h = nm.matmul(x, w1)                       # 5x4
        h = nm.add_bias(h, bias)
        g = nm.gather_rows(h, idx)                 # 6x4
        g = nm.add(g, nm.matmul(g, w2))
        g = nm.scale_rows(g, nm.sigmoid(col))
        s = nm.segment_softmax(nm.row_sum(g), seg, 3)
        agg = nm.segment_sum(nm.scale_rows(g, s), seg, 3)   # 3x4
        agg = nm.concat_cols(agg, nm.leaky_relu(agg, 0.2))  # 3x8
        sc = nm.scatter_rows(agg, np.array([2, 0, 4]), 6)   # 6x8
        q = nm.matmul(sc, nm.concat_rows([w2, w2]))         # 6x4
        att = nm.softmax_rows(nm.block_qk(q, q, 2, 0.5), nm.attention_mask(np.tile(mask[:2], (3, 1))))
        z = nm.block_weighted_sum(att, q, 2)
        z = nm.unit_rows(nm.add(z, nm.Matrix.from_array(np.ones((6, 4)))))
        return nm.total_sum(nm.softplus(z))

    return forward, [w1, w2, bias, col]


class TestGradCheck:
    def test_quadratic_bowl(self):
        w = nm.Param("w", np.array([[0.3, -1.2], [0.7, 2.0]]))
        target = mat([[1.0, 1.0], [1.0, 1.0]])

        def forward():
            d = nm.add(w, nm.scale(target, -1.0))
            return nm.total_sum(nm.mul(d, d))

        report = nm.grad_check(forward, [w])
        assert max(report.values()) < 1e-7

    def test_constant_loss_grads_zero(self):
        w = nm.Param("w", np.ones((2, 2)))

        def forward():
            return nm.total_sum(mat([[4.0]]))

        report = nm.grad_check(forward, [w])
        assert report["w"] == 0.0
        assert np.array_equal(w.grad.array, np.zeros((2, 2)))

    def test_every_primitive_composed(self):
        forward, params = _compose_everything(np.random.default_rng(11))
        report = nm.grad_check(forward, params)
        assert max(report.values()) < 1e-4

    def test_nondeterministic_forward_detected(self):
        rng = np.random.default_rng(0)
        w = nm.Param("w", np.ones((1, 1)))

        def forward():
            return nm.total_sum(nm.scale(w, float(rng.random())))

        with pytest.raises(nm.DeterminismError):
            nm.grad_check(forward, [w])


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = nm.Param("p", np.array([[1.0, 2.0]]))
        state = nm.AdamState([p])
        before = p.value.array.copy()
        nm.adam_step([p], state, lr=0.1)
        assert np.array_equal(p.value.array, before)
        assert state.step == 1

    def test_first_step_is_signed_lr(self):
        p = nm.Param("p", np.array([[1.0, -1.0, 5.0]]))
        p.grad.array[:] = [[0.5, -2.0, 1e-3]]
        state = nm.AdamState([p])
        before = p.value.array.copy()
        nm.adam_step([p], state, lr=0.01)
        delta = p.value.array - before
        assert np.allclose(delta, -0.01 * np.sign(p.grad.array), atol=1e-4)

    def test_descends_convex_quadratic(self):
        p = nm.Param("p", np.array([[4.0, -3.0]]))

        def loss_value():
            return float((p.value.array ** 2).sum())

        state = nm.AdamState([p])
        first = loss_value()
        for _ in range(2):
            p.zero_grad()
            with nm.Tape() as tape:
                loss = nm.total_sum(nm.mul(p, p))
            nm.backward(tape, loss)
            nm.adam_step([p], state, lr=0.05)
        assert loss_value() < first

    def test_state_shape_mismatch(self):
        p = nm.Param("p", np.ones((2, 2)))
        state = nm.AdamState([p])
        state.m["p"] = np.zeros((3, 3))
        with pytest.raises(nm.ShapeError):
            nm.adam_step([p], state, lr=0.1)


class TestOtherPrimitives:
    def test_unit_rows_zero_row_rejected(self):
        with pytest.raises(nm.ZeroRowError):
            nm.unit_rows(mat([[0.0, 0.0]]))

    def test_sigmoid_softplus_consistency(self):
        x = mat([[0.0, 3.0, -40.0, 40.0]])
        s = nm.sigmoid(x)
        assert np.allclose(s.array[0, 0], 0.5)
        # -log(sigmoid(x)) == softplus(-x), checked at a safe point
        assert math.isclose(-math.log(s.array[0, 1]),
                            float(nm.softplus(mat([[-3.0]]))), rel_tol=1e-12)
        assert np.isfinite(nm.softplus(x).array).all()

    def test_segment_softmax_matches_dense(self):
        rng = np.random.default_rng(5)
        scores = rng.standard_normal((6, 1))
        seg = np.array([0, 0, 0, 1, 1, 2])
        out = nm.segment_softmax(mat(scores), seg, 3).array[:, 0]
        for s in range(3):
            rows = np.flatnonzero(seg == s)
            dense = np.exp(scores[rows, 0] - scores[rows, 0].max())
            assert np.allclose(out[rows], dense / dense.sum(), atol=1e-12)

    def test_scatter_rows_rejects_duplicates(self):
        with pytest.raises(nm.ShapeError):
            nm.scatter_rows(mat([[1.0], [2.0]]), np.array([1, 1]), 3)

    def test_block_qk_matches_loop(self):
        rng = np.random.default_rng(9)
        q = rng.standard_normal((6, 3))
        k = rng.standard_normal((6, 3))
        out = nm.block_qk(mat(q), mat(k), 2, 0.7).array
        for b in range(3):
            expect = 0.7 * q[2 * b:2 * b + 2] @ k[2 * b:2 * b + 2].T
            assert np.allclose(out[2 * b:2 * b + 2], expect)
