"""Dense matrix math with reverse-mode gradient accumulation.

Every learnable computation in this package (attention layers, the link
classifier, the training objective) is composed from the primitives
below, so analytic gradients can be verified in one place against
central finite differences (:func:`grad_check`).

Values are 64-bit row-major matrices.  Recording happens on an explicit
:class:`Tape` used as a context manager; outside a tape every primitive
is a plain forward computation with no bookkeeping, which is the path
used for inference.  Gradients accumulate additively into
:class:`Param` buffers -- callers zero them at the start of each
optimization step.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

NEG_INF = float("-inf")


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class DegenerateRowError(ValueError):
    """A softmax row had every entry masked."""


class ZeroRowError(ValueError):
    """A zero-norm row has no direction to normalize."""


class DeterminismError(RuntimeError):
    """Two evaluations of a supposedly deterministic forward differed."""


class Matrix:
    """A rows x cols array of float64, optionally recorded on a tape.

    ``array`` is the row-major backing store.  ``_rg`` marks values that
    depend on a :class:`Param`; ``_g`` holds the transient gradient
    buffer during a backward sweep.
    """

    __slots__ = ("array", "_rg", "_g")

    def __init__(self, rows: int, cols: int, data=None):
        if rows <= 0 or cols <= 0:
            raise ShapeError(f"matrix dims must be positive, got {rows}x{cols}")
        if data is None:
            arr = np.zeros((rows, cols))
        else:
            arr = np.asarray(data, dtype=np.float64).reshape(rows, cols)
        if not np.isfinite(arr).all():
            raise ValueError("matrix entries must be finite")
        self.array = np.ascontiguousarray(arr)
        self._rg = False
        self._g = None

    @classmethod
    def from_array(cls, arr) -> "Matrix":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim == 1:
            a = a.reshape(1, -1)
        if a.ndim != 2:
            raise ShapeError(f"expected a 2-D array, got ndim={a.ndim}")
        return cls(a.shape[0], a.shape[1], a)

    @property
    def rows(self) -> int:
        return self.array.shape[0]

    @property
    def cols(self) -> int:
        return self.array.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.array.shape

    def tolist(self) -> list[float]:
        """Entries as a flat row-major list."""
        return self.array.ravel().tolist()

    def copy(self) -> "Matrix":
        return _wrap(self.array.copy(), False)

    def __float__(self) -> float:
        if self.array.size != 1:
            raise ShapeError(f"only a 1x1 matrix converts to float, got {self.rows}x{self.cols}")
        return float(self.array[0, 0])

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def _wrap(arr: np.ndarray, rg: bool) -> Matrix:
    m = Matrix.__new__(Matrix)
    m.array = arr
    m._rg = rg
    m._g = None
    return m


def attention_mask(values) -> Matrix:
    """Additive softmax mask; the only matrix allowed to hold -inf."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got ndim={arr.ndim}")
    if not np.all((arr == 0.0) | np.isneginf(arr)):
        raise ValueError("mask entries must be 0 or -inf")
    return _wrap(np.ascontiguousarray(arr), False)


class Param:
    """A named learnable matrix paired with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        self.name = name
        self.value = value if isinstance(value, Matrix) else Matrix.from_array(value)
        self.value._rg = True
        self.grad = Matrix(self.value.rows, self.value.cols)

    def zero_grad(self) -> None:
        self.grad.array[:] = 0.0

    def __repr__(self) -> str:
        return f"Param({self.name!r}, {self.value.rows}x{self.value.cols})"


def zero_grads(params: Sequence[Param]) -> None:
    for p in params:
        p.zero_grad()


_tape_stack: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations for one backward sweep.

    Entering the context makes the tape active; primitives executed
    while it is active append a backward closure in recording order.
    Backward traverses them in exact reverse.
    """

    __slots__ = ("_ops", "_params", "_param_ids")

    def __init__(self):
        self._ops: list[tuple[Matrix, Callable[[np.ndarray], None]]] = []
        self._params: list[Param] = []
        self._param_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._ops)

    def _touch(self, p: Param) -> None:
        if id(p) not in self._param_ids:
            self._param_ids.add(id(p))
            self._params.append(p)

    def _record(self, out: Matrix, bwd: Callable[[np.ndarray], None]) -> None:
        self._ops.append((out, bwd))


def _active() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def _as_value(x) -> Matrix:
    """Coerce an operand to a Matrix, watching Params on the active tape."""
    if isinstance(x, Matrix):
        return x
    if isinstance(x, Param):
        t = _active()
        if t is not None:
            t._touch(x)
        return x.value
    return Matrix.from_array(x)


def _accum(m: Matrix, g: np.ndarray) -> None:
    if not m._rg:
        return
    if m._g is None:
        m._g = g.copy()
    else:
        m._g += g


def backward(tape: Tape, loss) -> None:
    """Accumulate d(loss)/d(param) into every Param reachable from loss.

    ``loss`` must be a 1x1 matrix produced on this tape.
    """
    lm = _as_value(loss)
    if lm.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar 1x1 loss, got {lm.rows}x{lm.cols}")
    if not any(out is lm for out, _ in tape._ops):
        raise ValueError("loss was not produced on this tape")
    lm._g = np.ones((1, 1))
    for out, bwd in reversed(tape._ops):
        g = out._g
        if g is None:
            continue
        bwd(g)
        out._g = None
    for p in tape._params:
        if p.value._g is not None:
            p.grad.array += p.value._g
            p.value._g = None


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Matrix:
    """Standard matrix product; recorded when either operand is differentiable."""
    am, bm = _as_value(a), _as_value(b)
    if am.cols != bm.rows:
        raise ShapeError(f"matmul shapes {am.rows}x{am.cols} and {bm.rows}x{bm.cols} do not align")
    out = _wrap(am.array @ bm.array, am._rg or bm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, am=am, bm=bm):
            if am._rg:
                _accum(am, g @ bm.array.T)
            if bm._rg:
                _accum(bm, am.array.T @ g)
        t._record(out, bwd)
    return out


def add(a, b) -> Matrix:
    am, bm = _as_value(a), _as_value(b)
    if am.shape != bm.shape:
        raise ShapeError(f"add shapes differ: {am.shape} vs {bm.shape}")
    out = _wrap(am.array + bm.array, am._rg or bm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, am=am, bm=bm):
            _accum(am, g)
            _accum(bm, g)
        t._record(out, bwd)
    return out


def add_bias(x, bias) -> Matrix:
    """Add a 1 x cols bias row to every row of x."""
    xm, bm = _as_value(x), _as_value(bias)
    if bm.rows != 1 or bm.cols != xm.cols:
        raise ShapeError(f"bias must be 1x{xm.cols}, got {bm.rows}x{bm.cols}")
    out = _wrap(xm.array + bm.array, xm._rg or bm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, bm=bm):
            _accum(xm, g)
            if bm._rg:
                _accum(bm, g.sum(axis=0, keepdims=True))
        t._record(out, bwd)
    return out


def mul(a, b) -> Matrix:
    """Elementwise (Hadamard) product of same-shape matrices."""
    am, bm = _as_value(a), _as_value(b)
    if am.shape != bm.shape:
        raise ShapeError(f"mul shapes differ: {am.shape} vs {bm.shape}")
    out = _wrap(am.array * bm.array, am._rg or bm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, am=am, bm=bm):
            if am._rg:
                _accum(am, g * bm.array)
            if bm._rg:
                _accum(bm, g * am.array)
        t._record(out, bwd)
    return out


def scale(x, c: float) -> Matrix:
    xm = _as_value(x)
    out = _wrap(xm.array * c, xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, c=c):
            _accum(xm, g * c)
        t._record(out, bwd)
    return out


def scale_rows(x, s) -> Matrix:
    """Scale row i of x by s[i]; s is an N x 1 column."""
    xm, sm = _as_value(x), _as_value(s)
    if sm.cols != 1 or sm.rows != xm.rows:
        raise ShapeError(f"row scales must be {xm.rows}x1, got {sm.rows}x{sm.cols}")
    out = _wrap(xm.array * sm.array, xm._rg or sm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, sm=sm):
            if xm._rg:
                _accum(xm, g * sm.array)
            if sm._rg:
                _accum(sm, (g * xm.array).sum(axis=1, keepdims=True))
        t._record(out, bwd)
    return out


def concat_cols(a, b) -> Matrix:
    am, bm = _as_value(a), _as_value(b)
    if am.rows != bm.rows:
        raise ShapeError(f"concat_cols row counts differ: {am.rows} vs {bm.rows}")
    out = _wrap(np.hstack([am.array, bm.array]), am._rg or bm._rg)
    t = _active()
    if t is not None and out._rg:
        k = am.cols
        def bwd(g, am=am, bm=bm, k=k):
            _accum(am, g[:, :k])
            _accum(bm, g[:, k:])
        t._record(out, bwd)
    return out


def concat_rows(mats: Sequence) -> Matrix:
    ms = [_as_value(m) for m in mats]
    if not ms:
        raise ShapeError("concat_rows needs at least one matrix")
    cols = ms[0].cols
    if any(m.cols != cols for m in ms):
        raise ShapeError("concat_rows column counts differ")
    out = _wrap(np.vstack([m.array for m in ms]), any(m._rg for m in ms))
    t = _active()
    if t is not None and out._rg:
        splits = np.cumsum([m.rows for m in ms])[:-1]
        def bwd(g, ms=ms, splits=splits):
            for m, part in zip(ms, np.split(g, splits, axis=0)):
                _accum(m, part)
        t._record(out, bwd)
    return out


def gather_rows(x, idx) -> Matrix:
    """Select rows out[e] = x[idx[e]]; indices may repeat."""
    xm = _as_value(x)
    ia = np.asarray(idx, dtype=np.intp)
    if ia.ndim != 1:
        raise ShapeError("gather_rows index must be 1-D")
    if ia.size and (ia.min() < 0 or ia.max() >= xm.rows):
        raise ShapeError(f"gather_rows index out of range for {xm.rows} rows")
    out = _wrap(xm.array[ia], xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, ia=ia):
            acc = np.zeros_like(xm.array)
            np.add.at(acc, ia, g)
            _accum(xm, acc)
        t._record(out, bwd)
    return out


def scatter_rows(x, idx, total_rows: int) -> Matrix:
    """Place row e of x at position idx[e] of a zero matrix; idx must be unique."""
    xm = _as_value(x)
    ia = np.asarray(idx, dtype=np.intp)
    if ia.ndim != 1 or ia.size != xm.rows:
        raise ShapeError("scatter_rows needs one index per input row")
    if ia.size:
        if ia.min() < 0 or ia.max() >= total_rows:
            raise ShapeError(f"scatter_rows index out of range for {total_rows} rows")
        if np.unique(ia).size != ia.size:
            raise ShapeError("scatter_rows indices must be unique")
    arr = np.zeros((total_rows, xm.cols))
    arr[ia] = xm.array
    out = _wrap(arr, xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, ia=ia):
            _accum(xm, g[ia])
        t._record(out, bwd)
    return out


def segment_sum(x, seg, num_segments: int) -> Matrix:
    """Sum rows of x into num_segments buckets given by seg."""
    xm = _as_value(x)
    sa = np.asarray(seg, dtype=np.intp)
    if sa.ndim != 1 or sa.size != xm.rows:
        raise ShapeError("segment_sum needs one segment id per row")
    arr = np.zeros((num_segments, xm.cols))
    np.add.at(arr, sa, xm.array)
    out = _wrap(arr, xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, sa=sa):
            _accum(xm, g[sa])
        t._record(out, bwd)
    return out


def segment_softmax(s, seg, num_segments: int) -> Matrix:
    """Softmax within each segment of an E x 1 score column.

    Stabilized by per-segment max subtraction.  Rows belonging to the
    same segment id normalize to sum 1.
    """
    sm = _as_value(s)
    if sm.cols != 1:
        raise ShapeError(f"segment_softmax expects an Ex1 column, got {sm.rows}x{sm.cols}")
    sa = np.asarray(seg, dtype=np.intp)
    if sa.ndim != 1 or sa.size != sm.rows:
        raise ShapeError("segment_softmax needs one segment id per row")
    v = sm.array[:, 0]
    mx = np.full(num_segments, NEG_INF)
    np.maximum.at(mx, sa, v)
    e = np.exp(v - mx[sa])
    denom = np.bincount(sa, weights=e, minlength=num_segments)
    y = e / denom[sa]
    out = _wrap(y.reshape(-1, 1), sm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, sm=sm, sa=sa, y=y, num_segments=num_segments):
            gy = g[:, 0] * y
            tot = np.bincount(sa, weights=gy, minlength=num_segments)
            _accum(sm, (gy - y * tot[sa]).reshape(-1, 1))
        t._record(out, bwd)
    return out


def softmax_rows(x, mask=None) -> Matrix:
    """Row softmax with an optional additive {0, -inf} mask.

    Rows sum to 1 over unmasked entries; a fully masked row raises
    :class:`DegenerateRowError`.  Stabilized by row-max subtraction.
    """
    xm = _as_value(x)
    arr = xm.array
    if mask is not None:
        mm = mask.array if isinstance(mask, Matrix) else np.asarray(mask, dtype=np.float64)
        if mm.shape != arr.shape:
            raise ShapeError(f"mask shape {mm.shape} differs from input {arr.shape}")
        if not np.all((mm == 0.0) | np.isneginf(mm)):
            raise ValueError("mask entries must be 0 or -inf")
        arr = arr + mm
    mx = arr.max(axis=1, keepdims=True)
    dead = np.isneginf(mx)
    if dead.any():
        raise DegenerateRowError(f"row {int(np.argmax(dead))} has every entry masked")
    with np.errstate(invalid="ignore"):
        e = np.exp(arr - mx)
    y = e / e.sum(axis=1, keepdims=True)
    out = _wrap(y, xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, y=y):
            dot = (g * y).sum(axis=1, keepdims=True)
            _accum(xm, y * (g - dot))
        t._record(out, bwd)
    return out


def leaky_relu(x, slope: float = 0.2) -> Matrix:
    """Elementwise x if x >= 0 else slope * x, slope in (0, 1)."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    xm = _as_value(x)
    pos = xm.array >= 0
    out = _wrap(np.where(pos, xm.array, slope * xm.array), xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, pos=pos, slope=slope):
            _accum(xm, g * np.where(pos, 1.0, slope))
        t._record(out, bwd)
    return out


def sigmoid(x) -> Matrix:
    xm = _as_value(x)
    y = expit(xm.array)
    out = _wrap(y, xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, y=y):
            _accum(xm, g * y * (1.0 - y))
        t._record(out, bwd)
    return out


def softplus(x) -> Matrix:
    """log(1 + exp(x)) computed without overflow; -log(sigmoid(x)) = softplus(-x)."""
    xm = _as_value(x)
    a = xm.array
    y = np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0.0)
    out = _wrap(y, xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, a=a):
            _accum(xm, g * expit(a))
        t._record(out, bwd)
    return out


def unit_rows(x) -> Matrix:
    """Rows rescaled to unit Euclidean norm; a zero row raises ZeroRowError."""
    xm = _as_value(x)
    n = np.linalg.norm(xm.array, axis=1, keepdims=True)
    if (n == 0.0).any():
        raise ZeroRowError(f"row {int(np.argmin(n))} has zero norm")
    y = xm.array / n
    out = _wrap(y, xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm, y=y, n=n):
            dot = (g * y).sum(axis=1, keepdims=True)
            _accum(xm, (g - y * dot) / n)
        t._record(out, bwd)
    return out


def row_sum(x) -> Matrix:
    xm = _as_value(x)
    out = _wrap(xm.array.sum(axis=1, keepdims=True), xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm):
            _accum(xm, np.broadcast_to(g, xm.shape).copy())
        t._record(out, bwd)
    return out


def total_sum(x) -> Matrix:
    """Sum of all entries as a 1x1 matrix."""
    xm = _as_value(x)
    out = _wrap(np.array([[xm.array.sum()]]), xm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, xm=xm):
            _accum(xm, np.full(xm.shape, g[0, 0]))
        t._record(out, bwd)
    return out


def block_qk(q, k, block: int, scaling: float) -> Matrix:
    """Per-block query/key scores for stacked windows.

    q and k are (B*block) x d; rows [b*block:(b+1)*block] form block b.
    Output is (B*block) x block with out[b*block+i, j] =
    scaling * <q_row(b,i), k_row(b,j)>.
    """
    qm, km = _as_value(q), _as_value(k)
    if qm.shape != km.shape:
        raise ShapeError(f"block_qk shapes differ: {qm.shape} vs {km.shape}")
    if block <= 0 or qm.rows % block:
        raise ShapeError(f"row count {qm.rows} is not a multiple of block {block}")
    nb, d = qm.rows // block, qm.cols
    q3 = qm.array.reshape(nb, block, d)
    k3 = km.array.reshape(nb, block, d)
    s3 = np.matmul(q3, k3.transpose(0, 2, 1)) * scaling
    out = _wrap(s3.reshape(nb * block, block), qm._rg or km._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, qm=qm, km=km, q3=q3, k3=k3, nb=nb, block=block, scaling=scaling):
            g3 = g.reshape(nb, block, block) * scaling
            if qm._rg:
                _accum(qm, np.matmul(g3, k3).reshape(qm.shape))
            if km._rg:
                _accum(km, np.matmul(g3.transpose(0, 2, 1), q3).reshape(km.shape))
        t._record(out, bwd)
    return out


def block_weighted_sum(attn, v, block: int) -> Matrix:
    """Apply per-block attention weights to stacked values.

    attn is (B*block) x block, v is (B*block) x d; output row (b, i) is
    sum_j attn[b*block+i, j] * v_row(b, j).
    """
    am, vm = _as_value(attn), _as_value(v)
    if block <= 0 or am.rows % block or vm.rows != am.rows or am.cols != block:
        raise ShapeError(f"block_weighted_sum got attn {am.shape}, values {vm.shape}, block {block}")
    nb, d = vm.rows // block, vm.cols
    a3 = am.array.reshape(nb, block, block)
    v3 = vm.array.reshape(nb, block, d)
    out = _wrap(np.matmul(a3, v3).reshape(nb * block, d), am._rg or vm._rg)
    t = _active()
    if t is not None and out._rg:
        def bwd(g, am=am, vm=vm, a3=a3, v3=v3, nb=nb, block=block, d=d):
            g3 = g.reshape(nb, block, d)
            if am._rg:
                _accum(am, np.matmul(g3, v3.transpose(0, 2, 1)).reshape(am.shape))
            if vm._rg:
                _accum(vm, np.matmul(a3.transpose(0, 2, 1), g3).reshape(vm.shape))
        t._record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# verification and optimization


def grad_check(forward: Callable[[], Matrix], params: Sequence[Param],
               eps: float = 1e-5) -> dict[str, float]:
    """Compare tape gradients against central finite differences.

    ``forward`` must rebuild the scalar loss from scratch on each call
    and be deterministic.  Returns the max relative error per param,
    with relative error |a - n| / max(|a|, |n|, 1e-8).  Existing grads
    are zeroed as a side effect.

    Keep the loss at magnitude O(0.01-1), scaling it down if necessary:
    entries whose true derivative is exactly zero (e.g. an attention
    score shift that cancels inside a softmax) measure pure float noise
    of order ulp(loss)/(2*eps), which must stay below the 1e-8 floor.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    l1 = float(forward())
    l2 = float(forward())
    if l1 != l2:
        raise DeterminismError(f"forward returned {l1!r} then {l2!r}")

    zero_grads(params)
    with Tape() as tape:
        loss = forward()
    if loss._rg:  # a loss independent of every param records nothing
        backward(tape, loss)
    analytic = {p.name: p.grad.array.copy() for p in params}

    report: dict[str, float] = {}
    for p in params:
        a = analytic[p.name]
        worst = 0.0
        flat = p.value.array.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(forward())
            flat[i] = orig - eps
            down = float(forward())
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            ana = a.ravel()[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
        report[p.name] = worst
    return report


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: Sequence[Param]):
        self.step = 0
        self.m = {p.name: np.zeros_like(p.value.array) for p in params}
        self.v = {p.name: np.zeros_like(p.value.array) for p in params}


def adam_step(params: Sequence[Param], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update from the grads stored in params."""
    state.step += 1
    t = state.step
    for p in params:
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None or m.shape != p.value.shape:
            have = "missing" if m is None else f"{m.shape}"
            raise ShapeError(f"adam state for {p.name!r} is {have}, param is {p.value.shape}")
        g = p.grad.array
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p.value.array -= lr * mhat / (np.sqrt(vhat) + eps)
        if not np.isfinite(p.value.array).all():
            raise FloatingPointError(f"param {p.name!r} became non-finite during adam_step")


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Glorot-uniform init used for all projection matrices."""
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))
