"""Dense tensors on numpy buffers with reverse-mode automatic differentiation.

Every differentiable computation in the package runs through the `Tensor`
class below: an operation records its parents and a backward closure, and
`backward()` walks the tape in reverse topological order. Kernels are plain
numpy; f32 is the working dtype, f64 is used by the gradient-check harness.

Arrays passed to a Tensor are owned by it afterwards; ops never mutate
their inputs (the optimizer mutates parameter buffers in place, but only
between training steps, when no live graph references them).
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.special import erf as _erf

from .errors import ConfigError, ContractError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAMES = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(DTYPES[dtype] if isinstance(dtype, str) else dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    """N-dimensional row-major array with an optional gradient tape entry."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bw")

    def __init__(self, data, dtype: str | None = None, requires_grad: bool = False):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], tuple] | None = None

    # ---- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self.data.dtype]

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # ---- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


@dataclass
class Parameter:
    """Named model weight; frozen parameters are skipped by the optimizer."""

    value: Tensor
    name: str
    trainable: bool = True

    def __post_init__(self):
        self.value.requires_grad = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size


# ---- tape plumbing ------------------------------------------------------


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _record(data: np.ndarray, parents: tuple[Tensor, ...], bw) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from `loss`.

    Repeated calls accumulate into existing .grad buffers; call zero_grad
    (or clear grads via the optimizer) between steps.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._bw is None:
            continue
        for parent, pg in zip(node._parents, node._bw(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---- elementwise ops -----------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    return _record(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    return _record(a.data / b.data, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    return _record(a.data ** exponent, (a,),
                   lambda g: (g * exponent * a.data ** (exponent - 1.0),))


def texp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _record(out_data, (a,), lambda g: (g * out_data,))


def tsqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return _record(out_data, (a,), lambda g: (g * 0.5 / out_data,))


def terf(a: Tensor) -> Tensor:
    two_over_sqrt_pi = 2.0 / np.sqrt(np.pi)
    return _record(_erf(a.data), (a,),
                   lambda g: (g * (two_over_sqrt_pi * np.exp(-a.data * a.data)).astype(a.data.dtype),))


def gelu(a: Tensor) -> Tensor:
    """Exact gaussian error linear unit: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    return mul(mul(a, add(terf(mul(a, inv_sqrt2)), 1.0)), 0.5)


# ---- shape ops -----------------------------------------------------------


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def take(a: Tensor, key) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _record(a.data[key], (a,), bw)


# ---- reductions ----------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_keep = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_keep, a.shape).copy(),)

    return _record(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def bw(g):
        scale = np.asarray(1.0 / count, dtype=a.data.dtype)
        if axis is None:
            return (np.broadcast_to(g * scale, a.shape).copy(),)
        g_keep = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_keep * scale, a.shape).copy(),)

    return _record(a.data.mean(axis=axis, keepdims=keepdims, dtype=a.data.dtype), (a,), bw)


# ---- linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(b, Tensor):
        b = _coerce(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2D+ operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _record(np.matmul(a.data, b.data), (a, b), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`; each slice sums to one."""
    if not (-a.ndim <= axis < a.ndim):
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    expd = np.exp(shifted)
    out_data = expd / expd.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _record(out_data, (a,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift: gamma * x_hat + beta."""
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    x_hat = div(centered, tsqrt(add(var, eps)))
    return add(mul(x_hat, gamma), beta)


def rotate_pairs(a: Tensor) -> Tensor:
    """Rotate (even, odd) pairs of the last axis by 90 degrees: (x, y) -> (-y, x)."""
    if a.shape[-1] % 2 != 0:
        raise ShapeError(f"rotate_pairs needs an even last extent, got {a.shape}")

    def rot(arr):
        out = np.empty_like(arr)
        out[..., 0::2] = -arr[..., 1::2]
        out[..., 1::2] = arr[..., 0::2]
        return out

    return _record(rot(a.data), (a,), lambda g: (-rot(g),))


# ---- plain-array numerics (no tape) ---------------------------------------


def population_stats(x, axes=None, keepdims: bool = False):
    """Mean and population (divide-by-N) standard deviation over `axes`."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    mean = arr.mean(axis=axes, keepdims=keepdims)
    std = arr.std(axis=axes, keepdims=keepdims)
    return mean, std


def avg_pool_3d(x, kernel: Sequence[int]) -> np.ndarray:
    """Same-shape moving average over a (T, H, W) volume, replicate-padded.

    Replicate padding keeps border averages unbiased, which matters when the
    pooled volume is a mask whose edges must not darken.
    """
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim != 3:
        raise ShapeError(f"avg_pool_3d expects a 3D volume, got shape {arr.shape}")
    kernel = tuple(int(k) for k in kernel)
    if len(kernel) != 3:
        raise ConfigError(f"avg_pool_3d kernel must have 3 extents, got {kernel}")
    if any(k < 1 or k % 2 == 0 for k in kernel):
        raise ConfigError(f"avg_pool_3d kernel extents must be odd and positive, got {kernel}")
    pooled = uniform_filter(arr.astype(np.float64), size=kernel, mode="nearest")
    return pooled.astype(arr.dtype)


# ---- gradient checking -----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    checked: int
    worst_index: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def finite_diff_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5,
                      tol: float = 1e-3) -> GradCheckReport:
    """Compare the tape gradient of scalar f(x) against central differences.

    Runs in f64 regardless of the input dtype. The numeric side never touches
    the tape, so it stays independent of the code path it checks.
    """
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64).copy()
    probe = Tensor(base.copy(), requires_grad=True)
    loss = f(probe)
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("finite_diff_check expects f to return a scalar Tensor")
    backward(loss)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(Tensor(base.copy())).data)
        flat[i] = orig - h
        lo = float(f(Tensor(base.copy())).data)
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_rel_error=float(rel.reshape(-1)[worst]),
        tol=tol,
        checked=int(rel.size),
        worst_index=tuple(np.unravel_index(worst, rel.shape)),
    )


def make_rng(seed: int | None) -> np.random.Generator:
    """Seeded PCG64 stream; the single PRNG used across the package."""
    return np.random.Generator(np.random.PCG64(seed))


def global_norm(arrays: Iterable[np.ndarray]) -> float:
    total = 0.0
    for arr in arrays:
        total += float(np.dot(arr.reshape(-1), arr.reshape(-1)))
    return float(np.sqrt(total))
