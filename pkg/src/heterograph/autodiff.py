"""Minimal dense-matrix autodiff engine.

Everything is a 2-D float64 matrix.  Operations record themselves on the
active :class:`GradTape` whenever an input carries ``requires_grad``;
:func:`backward` replays the tape in reverse and accumulates gradients with
sum semantics.  There is no broadcasting beyond row-vector bias addition, so
every gradient rule below is a direct transcription of the corresponding
matrix-calculus identity.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "softmax_rows",
    "concat_cols",
    "sum_all",
    "gather_rows",
    "scatter_sum_rows",
    "segment_softmax",
    "ones",
    "zeros",
]


class Tensor:
    """A 2-D float64 matrix, immutable once created.

    Parameters
    ----------
    values : array-like
        Coerced to a read-only float64 matrix.  1-D input becomes a single
        row.
    requires_grad : bool, default=False
        Whether :func:`backward` should accumulate a gradient for this
        tensor.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, values, requires_grad=False):
        arr = np.array(values, dtype=np.float64, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D matrices, got ndim={arr.ndim}")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def item(self):
        if self.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


class GradTape:
    """Records operations for one backward pass.

    A tape is single-writer: open one per training step with a ``with``
    block and never share it across concurrent steps.  Records are kept in
    execution order, which is already a topological order of the compute
    graph, so :func:`backward` simply walks the list in reverse.
    """

    def __init__(self):
        self._records = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def _record(self, out, parents, vjp):
        self._records.append((out, parents, vjp))

    def __len__(self):
        return len(self._records)


_TAPE_STACK: list[GradTape] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(out_data, parents, vjp):
    """Wrap an op result, recording it if gradients are being traced."""
    tape = _active_tape()
    tracked = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=tracked)
    if tracked:
        tape._record(out, parents, vjp)
    return out


def backward(loss, tape):
    """Accumulate gradients of a scalar loss over a recorded tape.

    Parameters
    ----------
    loss : Tensor
        A 1x1 tensor produced under ``tape``.
    tape : GradTape
        The tape covering the computation of ``loss``.

    Returns
    -------
    dict
        Maps each reachable ``requires_grad`` tensor (by identity) to its
        gradient as an ndarray of the tensor's own shape.  Running the same
        tape twice yields bitwise-identical gradients.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    grads = {loss: np.ones((1, 1))}
    for out, parents, vjp in reversed(tape._records):
        gout = grads.get(out)
        if gout is None:
            continue
        for parent, gpar in zip(parents, vjp(gout)):
            if gpar is None or not parent.requires_grad:
                continue
            acc = grads.get(parent)
            grads[parent] = gpar if acc is None else acc + gpar
    return grads


def ones(rows, cols, requires_grad=False):
    return Tensor(np.ones((rows, cols)), requires_grad=requires_grad)


def zeros(rows, cols, requires_grad=False):
    return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


def matmul(a, b):
    """Matrix product ``a @ b`` with the standard transpose gradient rules."""
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _emit(out, (a, b), vjp)


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def add(a, b):
    """Elementwise sum; ``b`` may also be a 1-row bias broadcast over rows."""
    bias_row = b.shape == (1, a.cols) and a.rows != 1
    if not bias_row:
        _check_same_shape("add", a, b)
    out = a.data + b.data

    def vjp(g):
        gb = g.sum(axis=0, keepdims=True) if bias_row else g
        return g, gb

    return _emit(out, (a, b), vjp)


def sub(a, b):
    _check_same_shape("sub", a, b)
    out = a.data - b.data

    def vjp(g):
        return g, -g

    return _emit(out, (a, b), vjp)


def mul(a, b):
    """Hadamard (elementwise) product."""
    _check_same_shape("mul", a, b)
    out = a.data * b.data

    def vjp(g):
        return g * b.data, g * a.data

    return _emit(out, (a, b), vjp)


def scale(a, factor):
    factor = float(factor)
    out = a.data * factor

    def vjp(g):
        return (g * factor,)

    return _emit(out, (a,), vjp)


def relu(a):
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _emit(out, (a,), vjp)


def softmax_rows(a):
    """Row-wise softmax, stabilised by subtracting each row's max."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _emit(out, (a,), vjp)


def concat_cols(*tensors):
    """Concatenate matrices with equal row counts along columns."""
    if not tensors:
        raise ShapeError("concat_cols needs at least one operand")
    rows = tensors[0].rows
    for t in tensors[1:]:
        if t.rows != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {tensors[0].shape} vs {t.shape}"
            )
    out = np.concatenate([t.data for t in tensors], axis=1)
    widths = [t.cols for t in tensors]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(
            g[:, offsets[i]:offsets[i + 1]] if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return _emit(out, tensors, vjp)


def sum_all(a):
    """Sum of all entries, as a 1x1 tensor."""
    out = np.array([[a.data.sum()]])

    def vjp(g):
        return (np.full(a.shape, g[0, 0]),)

    return _emit(out, (a,), vjp)


def gather_rows(a, indices):
    """Select rows ``a[indices]``; the adjoint scatter-adds back."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ContractError("gather_rows: indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise ContractError(f"gather_rows: index out of range for {a.rows} rows")
    out = a.data[idx]

    def vjp(g):
        ga = np.zeros(a.shape)
        np.add.at(ga, idx, g)
        return (ga,)

    return _emit(out, (a,), vjp)


def scatter_sum_rows(a, indices, num_rows):
    """Sum rows of ``a`` into ``num_rows`` buckets given by ``indices``."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != (a.rows,):
        raise ShapeError(
            f"scatter_sum_rows: need one index per row, {idx.shape} vs {a.rows} rows"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise ContractError(f"scatter_sum_rows: index out of range for {num_rows} rows")
    out = np.zeros((num_rows, a.cols))
    np.add.at(out, idx, a.data)

    def vjp(g):
        return (g[idx],)

    return _emit(out, (a,), vjp)


def segment_softmax(scores, segment_ids, num_segments):
    """Softmax of a column vector within segments.

    ``scores`` is (n, 1); entries sharing a segment id are normalised
    together.  Each segment's max is subtracted before exponentiation, which
    leaves the softmax value (and its gradient) unchanged.
    """
    if scores.cols != 1:
        raise ShapeError(f"segment_softmax: scores must be a column, got {scores.shape}")
    seg = np.asarray(segment_ids, dtype=np.intp)
    if seg.shape != (scores.rows,):
        raise ShapeError(
            f"segment_softmax: need one segment id per score, {seg.shape} vs {scores.rows}"
        )
    col = scores.data[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, col)
    e = np.exp(col - seg_max[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    out = (e / denom[seg]).reshape(-1, 1)

    def vjp(g):
        gs = g[:, 0] * out[:, 0]
        seg_dot = np.zeros(num_segments)
        np.add.at(seg_dot, seg, gs)
        return ((gs - out[:, 0] * seg_dot[seg]).reshape(-1, 1),)

    return _emit(out, (scores,), vjp)
