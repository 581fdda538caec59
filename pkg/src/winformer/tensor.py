"""Minimal dense-tensor autodiff core.

Row-major numpy storage, channels-last layouts throughout, reverse-mode
differentiation over an explicit per-output compute graph. float64 is the
dtype for verification paths (finite differences are unreliable at
float32); float32 is the dtype for training paths.

Broadcasting is deliberately restricted: elementwise ops take equal shapes
or a python scalar, matmul broadcasts leading batch extents only where one
side has extent 1, and anything else goes through an explicit
``broadcast_to`` whose backward is a plain sum. This keeps every backward
rule auditable.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ComputeGraph",
    "ShapeError",
    "NumericsError",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "reshape",
    "transpose",
    "broadcast_to",
    "slice_axis",
    "roll2d",
    "gather_rows",
    "exp",
    "log",
    "gelu",
    "softmax",
    "layer_norm",
    "linear",
    "dwconv2d",
    "reduce_sum",
    "reduce_mean",
    "backward",
    "grad_check",
]

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operand shapes or dtypes are incompatible for the requested op."""


class NumericsError(ArithmeticError):
    """A forward pass produced non-finite values."""


class Node:
    """One executed op: its input tensors plus the rule mapping the output
    cotangent to per-input cotangents (None for non-differentiable slots)."""

    __slots__ = ("inputs", "backward_fn", "name")

    def __init__(self, inputs: tuple["Tensor", ...], backward_fn: Callable, name: str):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name


class Tensor:
    """Dense n-d array with an optional gradient slot.

    ``data`` is immutable by convention once consumed by an op; ``grad``
    accumulates cotangents additively during ``backward``.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, seed=None) -> None:
        backward(self, seed)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(scale(self, -1.0), -other) if np.isscalar(other) else sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_dtype(a: Tensor, b: Tensor, op: str) -> None:
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, name: str) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(tuple(inputs), backward_fn, name)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _reduce_to(arr: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``arr`` down to ``shape`` (inverse of numpy-style broadcasting)."""
    while arr.ndim > len(shape):
        arr = arr.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and arr.shape[axis] != 1:
            arr = arr.sum(axis=axis, keepdims=True)
    return arr


class ComputeGraph:
    """Topologically ordered record of the ops behind one output tensor."""

    def __init__(self, nodes: list[Tensor], output: Tensor):
        self.nodes = nodes
        self.output = output

    @classmethod
    def trace(cls, output: Tensor) -> "ComputeGraph":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, emit = stack.pop()
            if emit:
                order.append(t)
                continue
            if id(t) in visited or t.node is None:
                continue
            visited.add(id(t))
            stack.append((t, True))
            for inp in t.node.inputs:
                stack.append((inp, False))
        return cls(order, output)


def backward(target: Tensor | ComputeGraph, seed=None) -> None:
    """Accumulate gradients of ``target``'s output into every reachable
    tensor with ``requires_grad``. Accumulation is additive: a tensor
    consumed by n ops receives the sum of n cotangents. Tensors the output
    does not depend on are left untouched."""
    graph = target if isinstance(target, ComputeGraph) else ComputeGraph.trace(target)
    out = graph.output
    if seed is None:
        seed_arr = np.ones_like(out.data)
    else:
        seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=out.data.dtype)
        if seed_arr.shape != out.data.shape:
            raise ShapeError(f"backward: seed shape {seed_arr.shape} != output shape {out.data.shape}")
    if out.requires_grad:
        _accumulate(out, seed_arr)
    for t in reversed(graph.nodes):
        if t.grad is None:
            continue
        cotangents = t.node.backward_fn(t.grad)
        for inp, ct in zip(t.node.inputs, cotangents):
            if ct is not None and inp.requires_grad:
                _accumulate(inp, ct)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if np.isscalar(b):
        return _make(a.data + a.dtype.type(b), (a,), lambda g: (g,), "add_scalar")
    b = _as_tensor(b)
    _check_same_shape(a, b, "add")
    _check_same_dtype(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if np.isscalar(b):
        return _make(a.data - a.dtype.type(b), (a,), lambda g: (g,), "sub_scalar")
    b = _as_tensor(b)
    _check_same_shape(a, b, "sub")
    _check_same_dtype(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if np.isscalar(b):
        return scale(a, b)
    b = _as_tensor(b)
    _check_same_shape(a, b, "mul")
    _check_same_dtype(a, b, "mul")
    a_data, b_data = a.data, b.data
    return _make(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    s = a.dtype.type(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product. Leading batch extents must match or be 1."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_dtype(a, b, "matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must have rank >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    for da, db in zip(a.shape[-3::-1], b.shape[-3::-1]):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"matmul: batch extents incompatible, {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        da = _reduce_to(g @ np.swapaxes(b_data, -1, -2), a_data.shape)
        db = _reduce_to(np.swapaxes(a_data, -1, -2) @ g, b_data.shape)
        return da, db

    return _make(a_data @ b_data, (a, b), backward_fn, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b with b broadcast over all leading axes."""
    y = matmul(x, w)
    if b is not None:
        if b.ndim != 1 or b.shape[0] != y.shape[-1]:
            raise ShapeError(f"linear: bias shape {b.shape} does not match output extent {y.shape[-1]}")
        bias = broadcast_to(reshape(b, (1,) * (y.ndim - 1) + (y.shape[-1],)), y.shape)
        y = add(y, bias)
    return y


# ---------------------------------------------------------------------------
# shape movement
# ---------------------------------------------------------------------------


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    t = _as_tensor(t)
    shape = tuple(shape)
    old = t.shape
    return _make(t.data.reshape(shape), (t,), lambda g: (g.reshape(old),), "reshape")


def transpose(t: Tensor, axes: Sequence[int]) -> Tensor:
    t = _as_tensor(t)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(t.data, axes), (t,), lambda g: (np.transpose(g, inverse),), "transpose")


def broadcast_to(t: Tensor, shape: Sequence[int]) -> Tensor:
    t = _as_tensor(t)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(t.data, shape)
    except ValueError as e:
        raise ShapeError(f"broadcast_to: cannot broadcast {t.shape} to {shape}") from e
    old = t.shape
    return _make(data, (t,), lambda g: (_reduce_to(g, old),), "broadcast_to")


def slice_axis(t: Tensor, axis: int, start: int, size: int) -> Tensor:
    t = _as_tensor(t)
    if not (0 <= start and start + size <= t.shape[axis]):
        raise ShapeError(f"slice_axis: [{start}:{start + size}) out of range for axis {axis} of {t.shape}")
    index = [slice(None)] * t.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)
    full_shape = t.shape

    def backward_fn(g):
        buf = np.zeros(full_shape, dtype=g.dtype)
        buf[index] = g
        return (buf,)

    return _make(t.data[index], (t,), backward_fn, "slice_axis")


def roll2d(t: Tensor, shift_rows: int, shift_cols: int) -> Tensor:
    """Cyclic roll over the spatial axes (1, 2) of a (B, H, W, C) map."""
    t = _as_tensor(t)
    if t.ndim != 4:
        raise ShapeError(f"roll2d: expected a rank-4 feature map, got {t.shape}")
    data = np.roll(t.data, (shift_rows, shift_cols), axis=(1, 2))
    return _make(data, (t,), lambda g: (np.roll(g, (-shift_rows, -shift_cols), axis=(1, 2)),), "roll2d")


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """table[index] along axis 0; backward scatter-adds into the table."""
    table = _as_tensor(table)
    index = np.asarray(index)
    if index.min() < 0 or index.max() >= table.shape[0]:
        raise ShapeError(f"gather_rows: index range [{index.min()}, {index.max()}] outside table rows {table.shape[0]}")
    rows, width = table.shape

    def backward_fn(g):
        buf = np.zeros((rows, width), dtype=g.dtype)
        np.add.at(buf, index.reshape(-1), g.reshape(-1, width))
        return (buf,)

    return _make(table.data[index], (table,), backward_fn, "gather_rows")


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------


def exp(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    y = np.exp(t.data)
    return _make(y, (t,), lambda g: (g * y,), "exp")


def log(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    x = t.data
    return _make(np.log(x), (t,), lambda g: (g / x,), "log")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(t: Tensor) -> Tensor:
    """Exact Gaussian-CDF gelu, x * Phi(x) (no tanh approximation)."""
    t = _as_tensor(t)
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward_fn(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _make(x * cdf, (t,), backward_fn, "gelu")


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; slices sum to 1."""
    t = _as_tensor(t)
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (t,), backward_fn, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then
    scale and shift per channel."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: gamma/beta shapes {gamma.shape}/{beta.shape} do not match channels {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gamma.data + beta.data
    lead_axes = tuple(range(x.ndim - 1))
    gamma_data = gamma.data

    def backward_fn(g):
        dbeta = g.sum(axis=lead_axes)
        dgamma = (g * xhat).sum(axis=lead_axes)
        dxhat = g * gamma_data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _make(y, (x, gamma, beta), backward_fn, "layer_norm")


# ---------------------------------------------------------------------------
# depthwise convolution
# ---------------------------------------------------------------------------


def dwconv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel k x k convolution of a (B, H, W, C) map, stride 1,
    zero padding (k-1)/2; no cross-channel mixing. k must be odd."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 4:
        raise ShapeError(f"dwconv2d: expected a rank-4 feature map, got {x.shape}")
    if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"dwconv2d: kernel must be (k, k, C), got {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise ShapeError(f"dwconv2d: kernel size must be odd, got {k}")
    b_, h, w, c = x.shape
    if kernel.shape[2] != c:
        raise ShapeError(f"dwconv2d: kernel channels {kernel.shape[2]} != input channels {c}")
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"dwconv2d: bias shape {bias.shape} != ({c},)")
    pad = (k - 1) // 2
    xp = np.zeros((b_, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad : pad + h, pad : pad + w, :] = x.data
    kd = kernel.data
    out = np.zeros((b_, h, w, c), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            out += xp[:, dy : dy + h, dx : dx + w, :] * kd[dy, dx]
    if bias is not None:
        out = out + bias.data

    def backward_fn(g):
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(kd)
        for dy in range(k):
            for dx in range(k):
                dxp[:, dy : dy + h, dx : dx + w, :] += g * kd[dy, dx]
                dk[dy, dx] = (xp[:, dy : dy + h, dx : dx + w, :] * g).sum(axis=(0, 1, 2))
        dx_ = dxp[:, pad : pad + h, pad : pad + w, :]
        if bias is None:
            return dx_, dk
        return dx_, dk, g.sum(axis=(0, 1, 2))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, inputs, backward_fn, "dwconv2d")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    axes = _normalize_axes(axis, t.ndim)
    data = t.data.sum(axis=axes, keepdims=keepdims)
    shape = t.shape

    def backward_fn(g):
        if not keepdims:
            expanded = list(g.shape)
            for a in sorted(axes):
                expanded.insert(a, 1)
            g = g.reshape(expanded)
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=False),)

    return _make(data, (t,), backward_fn, "reduce_sum")


def reduce_mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    axes = _normalize_axes(axis, t.ndim)
    count = 1
    for a in axes:
        count *= t.shape[a]
    return scale(reduce_sum(t, axis=axes, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# verification oracle
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Central-difference check of reverse-mode gradients wrt ``x``.

    ``f`` is sum-reduced to a scalar if it is not one already. Returns the
    max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """

    def scalar_of(t: Tensor) -> float:
        return float(t.data.sum())

    x.requires_grad = True
    x.grad = None
    out = f(x)
    seed = np.ones_like(out.data)
    backward(out, seed)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = scalar_of(f(x))
        flat[i] = orig - eps
        fm = scalar_of(f(x))
        flat[i] = orig
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
