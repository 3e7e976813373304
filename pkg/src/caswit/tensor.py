"""Minimal n-dimensional tensor with reverse-mode automatic differentiation.

Tensors wrap a numpy array. Every differentiable op records a :class:`Node`
holding its parents and a backward rule; :meth:`Tensor.backward` walks the
graph in reverse topological order. Layout is channels-last and row-major
everywhere, so spatial maps are ``(..., H, W, C)``.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "DimensionError",
    "ParameterError",
    "UsageError",
    "tensor",
    "zeros",
    "ones",
    "precision",
    "get_default_dtype",
    "no_grad",
    "is_grad_enabled",
    "finite_diff_grad",
    "matmul",
    "linear",
    "add",
    "mul",
    "scale",
    "tanh",
    "gelu",
    "abs_",
    "softmax_lastdim",
    "log_softmax_lastdim",
    "layer_norm",
    "reshape",
    "transpose",
    "permute",
    "concat",
    "sum_",
    "mean",
    "avg_pool2d",
    "upsample_nearest",
    "resize_bilinear",
    "conv1x1",
    "unfold3x3",
    "conv3x3",
    "pixel_shuffle",
    "pixel_unshuffle",
    "roll",
    "take",
    "where",
]


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an op."""


class ParameterError(ValueError):
    """Raised for invalid scalar op parameters."""


class UsageError(RuntimeError):
    """Raised when an API is called outside its contract."""


_state = {"dtype": np.dtype(np.float32), "grad": True}


def get_default_dtype() -> np.dtype:
    return _state["dtype"]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default scalar type (e.g. ``np.float64`` for gradient checks)."""
    prev = _state["dtype"]
    _state["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def is_grad_enabled() -> bool:
    return _state["grad"]


@dataclass
class Node:
    """One recorded op: its kind, its input tensors and the backward rule.

    ``backward`` maps the output gradient to a tuple of input gradients
    (``None`` where an input needs none). Saved values live in its closure.
    """

    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]
    saved: dict = field(default_factory=dict)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        if arr.dtype.kind != "f":
            arr = arr.astype(_state["dtype"])
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None

    # -- basic properties ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        op = f", op={self.node.op}" if self.node else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return NotImplemented

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, a: int, b: int):
        return transpose(self, a, b)

    def permute(self, *axes):
        return permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Populate ``.grad`` on every ancestor that requires it.

        Only scalar roots are accepted unless an explicit seed gradient is
        given. Gradients accumulate additively into existing ``.grad``.
        """
        if not self.requires_grad:
            raise UsageError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.ndim != 0:
                raise UsageError(f"backward() needs a scalar root, got shape {self.shape}")
            seed = np.ones((), dtype=self.data.dtype)
        else:
            seed = np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): seed}
        for t in order:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            t.grad = g if t.grad is None else t.grad + g
            if t.node is None:
                continue
            in_grads = t.node.backward(g)
            for parent, pg in zip(t.node.inputs, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list:
    """Reverse topological order, iterative so deep graphs do not hit recursion limits."""
    order: list = []
    visited: set = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.inputs:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
    order.reverse()
    return order


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_state["dtype"]), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_state["dtype"]), requires_grad=requires_grad)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _result(data: np.ndarray, inputs: tuple, backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node = None
    out.requires_grad = False
    if _state["grad"] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), backward, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = x.data.dtype.type(c)
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    dt = xd.dtype.type
    x2 = xd * xd
    t = np.tanh(dt(_GELU_C) * xd * (dt(1.0) + dt(0.044715) * x2))
    y = dt(0.5) * xd * (dt(1.0) + t)

    def backward(g):
        dinner = dt(_GELU_C) * (dt(1.0) + dt(3 * 0.044715) * x2)
        return (g * (dt(0.5) * (dt(1.0) + t) + dt(0.5) * xd * (dt(1.0) - t * t) * dinner),)

    return _result(y, (x,), backward, "gelu")


def abs_(x: Tensor) -> Tensor:
    sgn = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def where(mask, a, b) -> Tensor:
    """Select ``a`` where ``mask`` is true, else ``b`` (broadcasting, mask is constant)."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, a.data, b.data)
    zero = out.dtype.type(0)

    def backward(g):
        return (
            _unbroadcast(np.where(m, g, zero), a.shape) if a.requires_grad else None,
            _unbroadcast(np.where(m, zero, g), b.shape) if b.requires_grad else None,
        )

    return _result(out, (a, b), backward, "where")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting rules)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` is ``(in, out)``."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, w.shape[0])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(*lead, w.shape[1])
    wd = w.data

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    inputs = (x, w) if b is None else (x, w, b)
    return _result(out, inputs, backward, "linear")


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1x1 convolution of a channels-last map: a matmul over the channel axis."""
    return linear(x, w, b)


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------


def softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax needs a non-empty last dimension, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def log_softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"log_softmax needs a non-empty last dimension, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last dim {c}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, c).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, c).sum(axis=0)
        if x.requires_grad:
            gh = g * gamma.data
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _result(out, (x, gamma, beta), backward, "layer_norm")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    src = x.shape
    return _result(out, (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "permute")


def transpose(x: Tensor, a: int, b: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return permute(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from exc
    ax = axis % out.ndim
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result(out, tensors, lambda g: tuple(np.split(g, splits, axis=ax)), "concat")


def _getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=x.dtype)
    src_shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _result(out, (x,), backward, "getitem")


def roll(x: Tensor, shifts, axes) -> Tensor:
    """Cyclic shift (used for shifted windows)."""
    out = np.roll(x.data, shifts, axes)
    back = tuple(-s for s in shifts) if isinstance(shifts, (tuple, list)) else -shifts
    return _result(out, (x,), lambda g: (np.roll(g, back, axes),), "roll")


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``table`` along axis 0 by an integer index array."""
    index = np.asarray(index)
    out = table.data[index]
    shape, dtype = table.shape, table.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _result(out, (table,), backward, "take")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims))
    shape = x.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum_(x, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# spatial ops on (..., H, W, C)
# ---------------------------------------------------------------------------


def avg_pool2d(x: Tensor, k=2) -> Tensor:
    """Non-overlapping average pooling with window = stride = ``k`` (int or ``(kh, kw)``)."""
    kh, kw = (k, k) if isinstance(k, int) else k
    *lead, h, w, c = x.shape
    if h % kh or w % kw:
        raise DimensionError(f"avg_pool2d: spatial {h}x{w} not divisible by {kh}x{kw}")
    out = x.data.reshape(*lead, h // kh, kh, w // kw, kw, c).mean(axis=(-4, -2))
    inv = x.dtype.type(1.0 / (kh * kw))

    def backward(g):
        g = np.repeat(np.repeat(g, kh, axis=-3), kw, axis=-2)
        return (g * inv,)

    return _result(out, (x,), backward, "avg_pool2d")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    *lead, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=-3), factor, axis=-2)

    def backward(g):
        return (g.reshape(*lead, h, factor, w, factor, c).sum(axis=(-4, -2)),)

    return _result(out, (x,), backward, "upsample_nearest")


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Interpolation matrix ``(n_out, n_in)`` for half-pixel-centre bilinear resizing."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale_ = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale_ - 0.5, 0.0)
        lo = min(int(math.floor(src)), n_in - 1)
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def resize_bilinear(x: Tensor, size) -> Tensor:
    """Bilinear resize of the two spatial axes to ``size = (H_out, W_out)``."""
    *lead, h, w, c = x.shape
    ho, wo = size
    if (ho, wo) == (h, w):
        return x
    mh = bilinear_matrix(h, ho, x.dtype)
    mw = bilinear_matrix(w, wo, x.dtype)
    out = np.einsum("ih,...hwc->...iwc", mh, x.data, optimize=True)
    out = np.einsum("jw,...iwc->...ijc", mw, out, optimize=True)

    def backward(g):
        g = np.einsum("jw,...ijc->...iwc", mw, g, optimize=True)
        return (np.einsum("ih,...iwc->...hwc", mh, g, optimize=True),)

    return _result(np.ascontiguousarray(out), (x,), backward, "resize_bilinear")


def unfold3x3(x: Tensor) -> Tensor:
    """Zero-padded 3x3 neighbourhoods: ``(..., H, W, C) -> (..., H, W, 9C)``.

    Tap order is row-major over the (dy, dx) offsets, channels innermost.
    """
    *lead, h, w, c = x.shape
    nl = len(lead)
    pad = [(0, 0)] * nl + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(x.data, pad)
    cols = [xp[..., dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)]
    out = np.concatenate(cols, axis=-1)

    def backward(g):
        gp = np.zeros(xp.shape, dtype=g.dtype)
        for t, (dy, dx) in enumerate((dy, dx) for dy in range(3) for dx in range(3)):
            gp[..., dy:dy + h, dx:dx + w, :] += g[..., t * c:(t + 1) * c]
        return (gp[..., 1:h + 1, 1:w + 1, :],)

    return _result(out, (x,), backward, "unfold3x3")


def conv3x3(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1, zero-padded 3x3 convolution; ``w`` is ``(9*C_in, C_out)``."""
    return linear(unfold3x3(x), w, b)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Depth-to-space: channel block ``i*s + j`` of cell (p, q) lands at pixel (p*s+i, q*s+j)."""
    *lead, h, w, cs = x.shape
    if cs % (s * s):
        raise DimensionError(f"pixel_shuffle: {cs} channels not divisible by {s}^2")
    c = cs // (s * s)
    nl = len(lead)
    y = x.reshape(*lead, h, w, s, s, c)
    y = permute(y, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    return y.reshape(*lead, h * s, w * s, c)


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Space-to-depth, the exact inverse of :func:`pixel_shuffle`."""
    *lead, hs, ws, c = x.shape
    if hs % s or ws % s:
        raise DimensionError(f"pixel_unshuffle: {hs}x{ws} not divisible by {s}")
    nl = len(lead)
    y = x.reshape(*lead, hs // s, s, ws // s, s, c)
    y = permute(y, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    return y.reshape(*lead, hs // s, ws // s, s * s * c)


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ParameterError(f"step h must be > 0, got {h}")
    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    base = x.data
    grad = np.zeros(base.shape, dtype=np.float64)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(_scalar(f(x)))
            flat[i] = orig - h
            fm = float(_scalar(f(x)))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def _scalar(v):
    return v.data if isinstance(v, Tensor) else v
