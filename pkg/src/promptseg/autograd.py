"""Dense-tensor reverse-mode automatic differentiation.

Define-by-run: each operation records its parents and a backward closure on
the output tensor; ``Tensor.backward`` walks that implicit graph once in
reverse topological order. Buffers are row-major numpy arrays, 32-bit floats
by default (a 64-bit mode exists for gradient verification). Tensors are
treated as immutable after construction except for their ``grad`` buffers;
parameter updates during training go through the optimizer.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf, expit

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.float32

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype new tensors are created with."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy buffer plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        if arr.ndim > 4:
            raise ValueError(f"rank {arr.ndim} > 4 unsupported")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._bwd = None

    # -- construction ------------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], bwd) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._bwd = bwd
        else:
            out.requires_grad = False
            out._parents = ()
            out._bwd = None
        return out

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._bwd = None
        return out

    # -- introspection -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autograd ----------------------------------------------------------

    def _accumulate(self, g: np.ndarray, own: bool = False):
        if self.grad is None:
            # freshly allocated gradients can be adopted without a copy
            self.grad = g if own else np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Populate ``grad`` on every reachable tensor that requires it.

        Repeated calls without clearing grads accumulate, matching the
        sum-of-losses semantics used by the training loop.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        order = _topo_order(self)
        for node in order:
            if node._bwd is not None:  # leaf grads persist, intermediates reset
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_(self, p)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_over(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_over(self, axis, keepdims)

    def max(self, axis, keepdims=False):
        return max_over(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root: Tensor) -> list:
    """Iterative post-order over the op DAG; each node appears exactly once."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._from_op(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor._from_op(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape), own=True)

    return Tensor._from_op(out_data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape), own=True)

    return Tensor._from_op(out_data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out_data = a.data * np.asarray(s, dtype=a.data.dtype)

    def bwd(g):
        a._accumulate(g * np.asarray(s, dtype=g.dtype), own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul supports 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T, own=True)
        if b.requires_grad:
            b._accumulate(a.data.T @ g, own=True)

    return Tensor._from_op(out_data, (a, b), bwd)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over matching leading batch axes (rank-3 operands)."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ValueError("bmm supports 3-D operands")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ValueError(f"bmm shape mismatch {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.transpose(0, 2, 1), own=True)
        if b.requires_grad:
            b._accumulate(a.data.transpose(0, 2, 1) @ g, own=True)

    return Tensor._from_op(out_data, (a, b), bwd)


def pow_(a: Tensor, p: float) -> Tensor:
    p = float(p)
    if p == 0.0:
        out_data = np.ones_like(a.data)

        def bwd0(g):
            a._accumulate(np.zeros_like(a.data))

        return Tensor._from_op(out_data, (a,), bwd0)
    out_data = a.data ** p

    def bwd(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return Tensor._from_op(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        a._accumulate(g * out_data, own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def bwd(g):
        a._accumulate(g / a.data, own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bwd(g):
        a._accumulate(g * 0.5 / out_data, own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out_data = expit(a.data)

    def bwd(g):
        a._accumulate(g * out_data * (1.0 - out_data), own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(np.asarray(0.0, dtype=a.data.dtype), a.data)

    def bwd(g):
        a._accumulate(g * expit(a.data), own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        a._accumulate(g * (a.data > 0), own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = (x * cdf).astype(x.dtype)

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        a._accumulate(g * (cdf + x * pdf).astype(x.dtype), own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to one."""
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot), own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out_data = xhat * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            dxhat = g * gain.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * term, own=True)

    return Tensor._from_op(out_data, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_over(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    out_data = np.asarray(out_data, dtype=a.data.dtype)

    def bwd(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape))

    return Tensor._from_op(out_data, (a,), bwd)


def mean_over(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_over(a, axis, keepdims), 1.0 / n)


def max_over(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; gradient routes to the first (lowest-index) argmax."""
    arg = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), gg, axis=axis)
        a._accumulate(full, own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def bwd(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor._from_op(out_data, (a,), bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    out_data = a.data.transpose(axes) if axes is not None else a.data.T

    def bwd(g):
        if axes is None:
            a._accumulate(g.T)
        else:
            a._accumulate(g.transpose(np.argsort(axes)))

    return Tensor._from_op(out_data, (a,), bwd)


def broadcast_to(a: Tensor, shape) -> Tensor:
    out_data = np.broadcast_to(a.data, shape)

    def bwd(g):
        a._accumulate(_unbroadcast(g, a.data.shape))

    return Tensor._from_op(out_data, (a,), bwd)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    out_data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def bwd(g):
        start = 0
        for t, s in zip(ts, sizes):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + s)
                t._accumulate(g[tuple(sl)])
            start += s

    return Tensor._from_op(out_data, tuple(ts), bwd)


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [reshape(t, t.data.shape[:axis] + (1,) + t.data.shape[axis:]) for t in tensors]
    return concat(ts, axis=axis)


def slice_(a: Tensor, key) -> Tensor:
    out_data = a.data[key]
    if out_data.base is not None:
        out_data = out_data.copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] += g
        a._accumulate(full, own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds (indices may repeat)."""
    idx = np.asarray(idx)
    out_data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full, own=True)

    return Tensor._from_op(out_data, (a,), bwd)


def weighted_gather(features: Tensor, idx: np.ndarray, weights: np.ndarray) -> Tensor:
    """Fixed sparse mix: out[n] = sum_j weights[n, j] * features[idx[n, j]].

    ``idx``/``weights`` are constants (N, J); gradients flow to ``features``.
    """
    idx = np.asarray(idx)
    w = np.asarray(weights, dtype=features.data.dtype)
    n_mix = idx.shape[1]
    out_data = w[:, 0, None] * features.data[idx[:, 0]]
    for j in range(1, n_mix):
        out_data += w[:, j, None] * features.data[idx[:, j]]

    def bwd(g):
        full = np.zeros_like(features.data)
        for j in range(n_mix):
            np.add.at(full, idx[:, j], w[:, j, None] * g)
        features._accumulate(full, own=True)

    return Tensor._from_op(out_data, (features,), bwd)
