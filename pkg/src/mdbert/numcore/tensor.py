"""Tape-based reverse-mode autodiff over a fixed set of dense ops.

Each op computes its forward value with numpy or a kernel from
:mod:`mdbert.kernels` and, when any input requires a gradient, records a
closure mapping the output gradient to one gradient per parent. ``backward``
replays the recorded closures in reverse topological order. Leaf tensors
accumulate into ``.grad``; intermediate gradients live only for the duration
of the pass.
"""

import os

import numpy as np

from .. import kernels
from ..errors import EmptyGroupError, NumericError, ShapeError

CHECK_FINITE = os.environ.get("MDB_CHECK_FINITE", "0") == "1"

# Additive logit for masked positions; exp() of it underflows to exactly 0.
MASK_LOGIT = -1e30


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    def assert_finite(self):
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in output of {self.op!r} with shape {self.shape}")
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise NumericError(f"non-finite gradient on tensor from {self.op!r}")

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents, backward, op):
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    if CHECK_FINITE:
        out.assert_finite()
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _coerce(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _coerce(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def gelu(x):
    def backward(g):
        return (kernels.gelu_backward(x.data, g),)

    return _result(kernels.gelu(x.data), (x,), backward, "gelu")


def sigmoid(x):
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward, "sigmoid")


def log(x):
    def backward(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), backward, "log")


def clamp(x, lo, hi):
    """Clip to ``[lo, hi]``; the gradient is zero where clipping was active."""
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (np.where(inside, g, 0.0).astype(g.dtype),)

    return _result(np.clip(x.data, lo, hi), (x,), backward, "clamp")


def dropout(x, rate, rng):
    """Inverted dropout. ``rng=None`` or ``rate=0`` is the exact identity."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)

    def backward(g):
        return (g * keep,)

    return _result(x.data * keep, (x,), backward, "dropout")


# ---------------------------------------------------------------------------
# shape
# ---------------------------------------------------------------------------


def reshape(x, shape):
    def backward(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x, axes):
    inv = np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), backward, "transpose")


def take_rows(x, index):
    """Gather ``x[index]`` along axis 0."""
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), backward, "take_rows")


def scatter_rows(x, index, n_rows):
    """Place row ``r`` of ``x`` at ``out[index[r]]`` in a zero array of ``n_rows`` rows."""
    index = np.asarray(index, dtype=np.intp)
    if len(np.unique(index)) != len(index):
        raise ShapeError("scatter_rows: duplicate target rows")
    out = np.zeros((n_rows,) + x.shape[1:], dtype=x.dtype)
    out[index] = x.data

    def backward(g):
        return (g[index],)

    return _result(out, (x,), backward, "scatter_rows")


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range [0, {table.shape[0]})")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    return _result(table.data[ids], (table,), backward, "embedding")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).astype(x.dtype),)

    return _result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def masked_mean(x, mask):
    """Average ``x`` (b, s, e) over positions where ``mask`` (b, s) is nonzero.

    Masked positions never enter the arithmetic, so their content (even
    non-finite values) cannot change the result.
    """
    mask = np.asarray(mask)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise ShapeError(f"masked_mean: x {x.shape} and mask {mask.shape} disagree")
    count = (mask != 0).sum(axis=1)
    if np.any(count == 0):
        rows = np.nonzero(count == 0)[0].tolist()
        raise EmptyGroupError(f"masked_mean: rows {rows} have no unmasked position")
    out = kernels.masked_mean(x.data, mask)

    def backward(g):
        w = (mask != 0).astype(x.dtype) / count[:, None].astype(x.dtype)
        return (w[:, :, None] * g[:, None, :],)

    return _result(out, (x,), backward, "masked_mean")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def _mm(a, b):
    return kernels.matmul3(a, b)


def matmul(a, b):
    """Matrix product in fixed accumulation order.

    Supports ``(..., m, k) @ (k, n)`` (shared right operand) and
    ``(..., m, k) @ (..., k, n)`` with identical leading dimensions.
    """
    a, b = _coerce(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    k = a.shape[-1]
    if b.ndim == 2:
        n = b.shape[1]
        a2 = a.data.reshape(1, -1, k)
        out = _mm(a2, b.data.reshape(1, k, n)).reshape(a.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(1, -1, n)
            ga = _mm(g2, b.data.T.reshape(1, n, k)).reshape(a.shape) if a.requires_grad else None
            gb = _mm(np.ascontiguousarray(a2[0].T)[None], g2)[0] if b.requires_grad else None
            return ga, gb

        return _result(out, (a, b), backward, "matmul")

    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} vs {b.shape}")
    lead = a.shape[:-2]
    m, n = a.shape[-2], b.shape[-1]
    a3 = a.data.reshape(-1, m, k)
    b3 = b.data.reshape(-1, k, n)
    out = _mm(a3, b3).reshape(lead + (m, n))

    def backward(g):
        g3 = g.reshape(-1, m, n)
        ga = _mm(g3, np.ascontiguousarray(b3.transpose(0, 2, 1))).reshape(a.shape) if a.requires_grad else None
        gb = _mm(np.ascontiguousarray(a3.transpose(0, 2, 1)), g3).reshape(b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def softmax(x, axis=-1, mask_bias=None):
    """Numerically stable softmax along ``axis``.

    ``mask_bias`` is a constant array broadcastable to ``x`` holding 0 for
    visible positions and a large negative value for hidden ones.
    """
    axis = axis % x.ndim
    z = x.data if mask_bias is None else x.data + np.asarray(mask_bias, dtype=x.dtype)
    moved = np.moveaxis(z, axis, -1)
    shape = moved.shape
    y = kernels.softmax_rows(np.ascontiguousarray(moved).reshape(-1, shape[-1])).reshape(shape)
    y_moved = y
    y = np.moveaxis(y, -1, axis)

    def backward(g):
        gm = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(-1, shape[-1])
        dx = kernels.softmax_rows_backward(np.ascontiguousarray(y_moved).reshape(-1, shape[-1]), gm)
        return (np.moveaxis(dx.reshape(shape), -1, axis),)

    return _result(np.ascontiguousarray(y), (x,), backward, "softmax")


def layer_norm(x, gain, bias, eps=1e-12):
    """Normalize over the last axis to zero mean and unit variance, then scale and shift."""
    e = x.shape[-1]
    if gain.shape != (e,) or bias.shape != (e,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last dim {e}")
    rows = x.data.reshape(-1, e)
    y, xhat, rstd = kernels.layer_norm_rows(rows, gain.data, bias.data, eps)

    def backward(g):
        dx, dgain, dbias = kernels.layer_norm_rows_backward(g.reshape(-1, e), xhat, rstd, gain.data)
        return dx.reshape(x.shape), dgain, dbias

    return _result(y.reshape(x.shape), (x, gain, bias), backward, "layer_norm")
