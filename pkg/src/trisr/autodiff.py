"""Minimal reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray and records its parents plus a backward closure;
`backward()` walks the tape in reverse topological order. Only the ops the
upscaling model needs are implemented. Working precision follows the input
dtype: float32 for training, float64 for finite-difference checks.
"""

import contextlib
import math

import numpy as np
from scipy.special import erf

from . import kernels

_GRAD_ENABLED = True

# plain python floats so float32 graphs are not promoted to float64
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / metrics)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Accumulate gradients of self (scalar unless seed given) into leaves."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = _toposort(self)
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # interior activations: free the tape as we go
                node._backward = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])


def _toposort(root):
    """Reverse topological order (root first), iterative."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def tensor(data, requires_grad=False, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _track(*parents):
    return _GRAD_ENABLED and any(p.requires_grad for p in parents)


def _accum(t, g):
    # Adopts g without copying. Backward closures keep this sound by never
    # handing the same buffer (or views of it) to more than one parent.
    if t.grad is None:
        t.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum g down to `shape` (undo numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _result(data, parents, backward):
    if _track(*parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data + b.data

    def bwd(g):
        handed_off = False
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            handed_off = ga is g
            _accum(a, ga)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            if gb is g and handed_off:
                gb = g.copy()
            _accum(b, gb)

    return _result(out, (a, b), bwd)


def add_const(a, c):
    """Add a constant ndarray (no gradient on c, no unbroadcast cost)."""
    out = a.data + c

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))

    return _result(out, (a,), bwd)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out, (a, b), bwd)


def scale(a, c):
    c = float(c)
    out = a.data * c

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * c)

    return _result(out, (a,), bwd)


def matmul(a, b):
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _result(out, (a, b), bwd)


def reshape(a, shape):
    out = a.data.reshape(shape)
    old = a.data.shape

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.reshape(old))

    return _result(out, (a,), bwd)


def transpose(a, axes):
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.transpose(inv))

    return _result(out, (a,), bwd)


def take_tokens(a, idx, inv=None, n_source=None):
    """Gather along axis 1: out[:, k] = a[:, idx[k]].

    `inv` marks a bijection (backward is the inverse gather). Otherwise the
    backward scatter-adds into `n_source` rows (defaults to a.shape[1]).
    """
    idx = np.asarray(idx)
    out = np.take(a.data, idx, axis=1)
    if n_source is None:
        n_source = a.data.shape[1]

    def bwd(g):
        if not a.requires_grad:
            return
        if inv is not None:
            _accum(a, np.take(g, inv, axis=1))
            return
        B = g.shape[0]
        C = g.shape[-1]
        gsrc = np.moveaxis(g.reshape(B, -1, C), 1, 0).reshape(len(idx), B * C)
        dst = np.zeros((n_source, B * C), dtype=g.dtype)
        kernels.scatter_add_rows(dst, idx, gsrc)
        _accum(a, np.moveaxis(dst.reshape(n_source, B, C), 0, 1))

    return _result(out, (a,), bwd)


def softmax_last(a, mask=None):
    """Stable softmax over the last axis; optional additive constant mask."""
    z = a.data if mask is None else a.data + mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * s).sum(axis=-1, keepdims=True)
            _accum(a, s * (g - dot))

    return _result(s, (a,), bwd)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, x.shape[-1]).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(a, inv * (gx - m1 - xhat * m2))

    return _result(out, (a, gamma, beta), bwd)


def gelu(a):
    """Exact GELU: x * Phi(x) with the Gaussian CDF."""
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi

    def bwd(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            _accum(a, g * (phi + x * pdf))

    return _result(out, (a,), bwd)


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * s * (1.0 - s))

    return _result(s, (a,), bwd)


def mean_axes(a, axes, keepdims=False):
    axes = tuple(axes)
    out = a.data.mean(axis=axes, keepdims=keepdims)
    n = 1
    for ax in axes:
        n *= a.data.shape[ax]

    def bwd(g):
        if a.requires_grad:
            gg = g if keepdims else np.expand_dims(g, axes)
            _accum(a, np.broadcast_to(gg / n, a.data.shape).copy())

    return _result(out, (a,), bwd)


def mean_all(a):
    out = np.asarray(a.data.mean())
    n = a.data.size

    def bwd(g):
        if a.requires_grad:
            _accum(a, np.full(a.data.shape, float(g) / n, dtype=a.data.dtype))

    return _result(out, (a,), bwd)


def absolute(a):
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * sign)

    return _result(out, (a,), bwd)


def conv2d(a, w, b, pad_mode="zeros"):
    """Same-size conv, stride 1, odd kernel. a (B,H,W,Ci), w (k,k,Ci,Co)."""
    out = kernels.conv2d_forward(a.data, w.data, b.data if b is not None else None, pad_mode)

    def bwd(g):
        gx, gw, gb = kernels.conv2d_backward(a.data, w.data, g, pad_mode,
                                             need_gx=a.requires_grad)
        if a.requires_grad:
            _accum(a, gx)
        if w.requires_grad:
            _accum(w, gw)
        if b is not None and b.requires_grad:
            _accum(b, gb)

    parents = (a, w) if b is None else (a, w, b)
    return _result(out, parents, bwd)


def depthwise_conv(a, w, b, pad_mode="zeros"):
    """Depthwise conv: one k x k filter per channel. w (k,k,C)."""
    out = kernels.dwconv_forward(a.data, w.data, b.data if b is not None else None, pad_mode)

    def bwd(g):
        gx, gw, gb = kernels.dwconv_backward(a.data, w.data, g, pad_mode)
        if a.requires_grad:
            _accum(a, gx)
        if w.requires_grad:
            _accum(w, gw)
        if b is not None and b.requires_grad:
            _accum(b, gb)

    parents = (a, w) if b is None else (a, w, b)
    return _result(out, parents, bwd)


def pad2d_zero(a, p):
    """Zero-pad the two spatial axes of (B,H,W,C) by p each side."""
    out = np.pad(a.data, ((0, 0), (p, p), (p, p), (0, 0)))

    def bwd(g):
        if a.requires_grad:
            _accum(a, g[:, p : g.shape[1] - p, p : g.shape[2] - p, :])

    return _result(out, (a,), bwd)


def crop2d(a, h, w):
    """Keep the top-left h x w spatial region of (B,H,W,C)."""
    out = a.data[:, :h, :w, :]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, :h, :w, :] = g
            _accum(a, full)

    return _result(out, (a,), bwd)
