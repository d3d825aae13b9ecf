"""Minimal reverse-mode autodiff over dense numpy arrays.

Each Tensor records its parents and a pullback closure; calling
:func:`backward` on a scalar walks the recorded graph in reverse
topological order, accumulating gradients (shared subexpressions sum).
A tape is therefore implicit in the tensors it produced and is single
threaded; independent graphs can run concurrently.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError

_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """float64 (default, used by all tests) or float32 for faster training."""
    global _DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be numpy float32 or float64")
    _DTYPE = dtype


def default_dtype():
    return _DTYPE


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_pullback")

    def __init__(self, data, _parents=(), _pullback=None):
        if isinstance(data, np.ndarray) and data.dtype == _DTYPE:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self._parents = _parents
        self._pullback = _pullback

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def tensor(data) -> Tensor:
    return Tensor(data)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_DTYPE))


def _shape_check(name, a, b):
    if a.data.shape != b.data.shape and not _broadcastable(a.data.shape, b.data.shape):
        raise ValueError(f"{name}: incompatible shapes {a.data.shape} and {b.data.shape}")


def _broadcastable(sa, sb):
    for x, y in zip(reversed(sa), reversed(sb)):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast to reach g's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _shape_check("add", a, b)
    out = Tensor(a.data + b.data, (a, b))

    def pullback(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    out._pullback = pullback
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _shape_check("mul", a, b)
    out = Tensor(a.data * b.data, (a, b))

    def pullback(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._pullback = pullback
    return out


def sub(a, b) -> Tensor:
    return add(a, mul(b, Tensor(-1.0)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ValueError("matmul: operands must be at least 1-d")
    if ad.shape[-1] != bd.shape[0] and not (ad.ndim == 1 and bd.ndim == 1):
        raise ValueError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    out = Tensor(ad @ bd, (a, b))

    def pullback(g):
        if ad.ndim == 1 and bd.ndim == 1:  # dot -> scalar
            a._accumulate(g * bd)
            b._accumulate(g * ad)
        elif ad.ndim == 2 and bd.ndim == 1:  # (n,m)@(m,) -> (n,)
            a._accumulate(np.outer(g, bd))
            b._accumulate(ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:  # (n,)@(n,m) -> (m,)
            a._accumulate(bd @ g)
            b._accumulate(np.outer(ad, g))
        else:  # (n,m)@(m,k)
            a._accumulate(g @ bd.T)
            b._accumulate(ad.T @ g)

    out._pullback = pullback
    return out


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-d tensor, got shape {a.data.shape}")
    out = Tensor(a.data.T, (a,))

    def pullback(g):
        a._accumulate(g.T)

    out._pullback = pullback
    return out


def concat(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.data.shape[0] for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts]), tuple(parts))

    def pullback(g):
        offset = 0
        for p, size in zip(parts, sizes):
            p._accumulate(g[offset : offset + size])
            offset += size

    out._pullback = pullback
    return out


def stack(rows) -> Tensor:
    rows = [_as_tensor(r) for r in rows]
    out = Tensor(np.stack([r.data for r in rows]), tuple(rows))

    def pullback(g):
        for i, r in enumerate(rows):
            r._accumulate(g[i])

    out._pullback = pullback
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # stable two-branch form; saturates to exactly 0.0 / 1.0 for huge |x|
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s, (a,))

    def pullback(g):
        a._accumulate(g * s * (1.0 - s))

    out._pullback = pullback
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t, (a,))

    def pullback(g):
        a._accumulate(g * (1.0 - t * t))

    out._pullback = pullback
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh-form approximation 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t), (a,))

    def pullback(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        a._accumulate(g * local)

    out._pullback = pullback
    return out


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, (a,))

    def pullback(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        a._accumulate(y * (g - dot))

    out._pullback = pullback
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    out = Tensor(np.log(a.data), (a,))

    def pullback(g):
        a._accumulate(g / a.data)

    out._pullback = pullback
    return out


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    out = Tensor(a.data.mean(), (a,))

    def pullback(g):
        a._accumulate(np.full_like(a.data, g / n))

    out._pullback = pullback
    return out


def vsum(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(), (a,))

    def pullback(g):
        a._accumulate(np.full_like(a.data, g))

    out._pullback = pullback
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through only inside the interval."""
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    out = Tensor(np.clip(a.data, lo, hi), (a,))

    def pullback(g):
        a._accumulate(g * inside)

    out._pullback = pullback
    return out


def embedding_row(table: Tensor, idx: int) -> Tensor:
    """Row lookup into an embedding matrix; gradient scatters into the row."""
    out = Tensor(table.data[idx], (table,))

    def pullback(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        table.grad[idx] += g

    out._pullback = pullback
    return out


def pick(a: Tensor, idx: int) -> Tensor:
    """Scalar element a[idx] of a vector, with gradient into that slot."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise ValueError(f"pick expects a 1-d tensor, got shape {a.data.shape}")
    out = Tensor(a.data[idx], (a,))

    def pullback(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += g

    out._pullback = pullback
    return out


def scatter_add(src: Tensor, index, size: int) -> Tensor:
    """out[index[i]] += src[i] into a fresh zero vector of length ``size``."""
    index = np.asarray(index, dtype=np.intp)
    if index.shape != src.data.shape:
        raise ValueError(f"scatter_add: index shape {index.shape} != src shape {src.data.shape}")
    data = np.zeros(size, dtype=src.data.dtype)
    np.add.at(data, index, src.data)
    out = Tensor(data, (src,))

    def pullback(g):
        src._accumulate(g[index])

    out._pullback = pullback
    return out


def backward(t: Tensor) -> None:
    """Reverse-topological gradient accumulation from scalar ``t``."""
    if t.data.size != 1:
        raise ValueError("backward expects a scalar tensor")
    if not np.isfinite(t.data):
        raise NumericError("backward on a non-finite value")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(t, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    t.grad = np.ones_like(t.data)
    for node in reversed(topo):
        if node._pullback is not None:
            node._pullback(node.grad)


def zero_grads(params) -> None:
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


def grad_check(f, params: dict, eps: float = 1e-5, rng=None, samples_per_param: int = 4):
    """Max relative error between reverse-mode and central-difference
    gradients of scalar ``f()`` over sampled coordinates of ``params``.

    The denominator is floored at 1.0 so coordinates whose true gradient
    sits below finite-difference resolution do not dominate the report.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    if rng is None:
        rng = np.random.default_rng(0)
    zero_grads(params)
    loss = f()
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    backward(loss)
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        count = min(samples_per_param, n)
        coords = rng.choice(n, size=count, replace=False)
        for c in coords:
            saved = flat[c]
            flat[c] = saved + eps
            up = float(f().data)
            flat[c] = saved - eps
            down = float(f().data)
            flat[c] = saved
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while probing {name}")
            numeric = (up - down) / (2.0 * eps)
            exact = float(analytic[name].reshape(-1)[c])
            rel = abs(exact - numeric) / max(abs(exact), abs(numeric), 1.0)
            worst = max(worst, rel)
    return worst
