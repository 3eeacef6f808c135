"""Minimal reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients into every reachable leaf.
Recording can be switched off globally (``no_grad``) so that evaluation
paths pay only the numpy cost.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation / probing)."""
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
    """An ndarray node in the computation graph.

    ``grad`` stays ``None`` until ``backward`` reaches the node. The
    ``_backward`` closure receives the output gradient and pushes
    contributions into the parents' ``grad`` fields.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents if _GRAD_ENABLED else ()
        self._backward = backward if _GRAD_ENABLED else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def detach(self) -> "Tensor":
        """A new leaf sharing this node's values; gradients stop here."""
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # materialize our own buffer: g may be a view or broadcast
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse accumulation from a scalar node."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar; all routing goes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple, backward: Callable | None) -> Tensor:
    if _GRAD_ENABLED:
        return Tensor(data, parents, backward)
    return Tensor(data)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accumulate(_unbroadcast(ga, a.data.shape))
        b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(out_data, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return _make(out_data, (a,), backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))   # python float: never promotes f32 arrays
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """Smooth gaussian-error linear unit (tanh form)."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * _GELU_A * x2)
        a._accumulate(g * local)

    return _make(out_data, (a,), backward)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inv = [0] * len(axes)
    for i, ax in enumerate(axes):
        inv[ax] = i

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return _make(out_data, (a,), backward)


def split_heads(a, num_heads: int) -> Tensor:
    """(B, L, D) -> (B, H, L, D/H) in one node."""
    a = as_tensor(a)
    b, length, d = a.data.shape
    dh = d // num_heads
    out_data = a.data.reshape(b, length, num_heads, dh).transpose(0, 2, 1, 3)

    def backward(g):
        a._accumulate(g.transpose(0, 2, 1, 3).reshape(b, length, d))

    return _make(out_data, (a,), backward)


def merge_heads(a) -> Tensor:
    """(B, H, L, D/H) -> (B, L, D) in one node."""
    a = as_tensor(a)
    b, h, length, dh = a.data.shape
    out_data = a.data.transpose(0, 2, 1, 3).reshape(b, length, h * dh)

    def backward(g):
        a._accumulate(g.reshape(b, length, h, dh).transpose(0, 2, 1, 3))

    return _make(out_data, (a,), backward)


def take_label(logp, ids: np.ndarray) -> Tensor:
    """Pick one entry per row of the trailing axis: out[..., j] = logp[..., ids[j]]."""
    logp = as_tensor(logp)
    expanded = ids[..., None]
    out_data = np.take_along_axis(logp.data, expanded, axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(logp.data)
        np.put_along_axis(gx, expanded, g[..., None], axis=-1)
        logp._accumulate(gx)

    return _make(out_data, (logp,), backward)


def embedding(weight: Tensor, ids: np.ndarray, scale: float = 1.0,
              positions: np.ndarray | None = None) -> Tensor:
    """Row lookup ``weight[ids]`` (optionally scaled, plus a constant
    position table) with scatter-add backward."""
    out_data = weight.data[ids]
    if scale != 1.0:
        out_data = out_data * scale
    if positions is not None:
        out_data = out_data + positions

    def backward(g):
        if weight.grad is None:
            weight.grad = np.zeros_like(weight.data)
        if scale != 1.0:
            g = g * scale
        flat_ids = ids.reshape(-1)
        rows = g.reshape(-1, weight.data.shape[1])
        # one-hot matmul scatter: much faster than np.add.at for our sizes
        onehot = np.zeros((weight.data.shape[0], flat_ids.size), dtype=g.dtype)
        onehot[flat_ids, np.arange(flat_ids.size)] = 1.0
        weight.grad += onehot @ rows

    return _make(out_data, (weight,), backward)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight + bias`` fused into one node."""
    x, weight = as_tensor(x), as_tensor(weight)
    out_data = x.data @ weight.data
    if bias is not None:
        out_data = out_data + bias.data

    def backward(g):
        x._accumulate(g @ weight.data.T)
        gw = x.data.reshape(-1, x.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        weight._accumulate(gw)
        if bias is not None:
            bias._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out_data, parents, backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x = as_tensor(x)
    n = x.data.shape[-1]
    scale = 1.0 / n
    mu = np.add.reduce(x.data, axis=-1, keepdims=True) * scale
    xc = x.data - mu
    var = np.add.reduce(xc * xc, axis=-1, keepdims=True) * scale
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        gain._accumulate(_unbroadcast(g * xhat, gain.data.shape))
        bias._accumulate(_unbroadcast(g, bias.data.shape))
        gx_hat = g * gain.data
        # d/dx of (x - mu(x)) * inv(x): standard layer-norm backward
        gx = inv * (gx_hat
                    - np.add.reduce(gx_hat, axis=-1, keepdims=True) * scale
                    - xhat * (np.add.reduce(gx_hat * xhat, axis=-1,
                                            keepdims=True) * scale))
        x._accumulate(gx)

    return _make(out_data, (x, gain, bias), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(g):
        soft = np.exp(out_data)
        x._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - dot))

    return _make(out_data, (x,), backward)


def max_pool(x, mask: np.ndarray, axis: int = 1) -> Tensor:
    """Elementwise max over ``axis`` restricted to positions where ``mask``.

    Gradient flows to the first maximal position (deterministic ties).
    """
    x = as_tensor(x)
    neg = np.finfo(x.data.dtype).min
    mask_exp = np.expand_dims(mask, -1)
    masked = np.where(mask_exp, x.data, neg)
    idx = masked.argmax(axis=axis)
    out_data = np.take_along_axis(masked, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        x._accumulate(gx)

    return _make(out_data, (x,), backward)


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return as_tensor(x)
    x = as_tensor(x)
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out_data = x.data * keep

    def backward(g):
        x._accumulate(g * keep)

    return _make(out_data, (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p._accumulate(g[tuple(sl)])

    return _make(out_data, tuple(parts), backward)
