"""Dense tensors with a reverse-mode gradient tape.

Only the operations the stereo pipeline needs are provided. Broadcasting is
limited to scalar-vs-tensor and identical shapes; constant numpy operands of
``mul``/``add`` may broadcast because they never receive gradients.

Every op records one node on the active :class:`GradTape` when at least one
input requires gradients. :func:`backward` replays the tape in reverse
creation order, which is a valid reverse topological order because a node's
inputs always exist before the node itself.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "GradTape",
    "GradCheckReport",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "custom_op",
    "backward",
    "check_gradients",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "neg",
    "sigmoid",
    "relu",
    "abs",
    "exp",
    "smooth_l1",
    "sum",
    "mean",
    "softmax",
    "concat",
    "slice_axis",
    "reshape",
    "conv2d",
    "conv3d",
    "resample",
    "avgpool_axis",
    "gather_horizontal",
    "linear_sample",
]


class Tensor:
    """N-D float array that may participate in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not (isinstance(data, (np.ndarray, np.floating)) and arr.dtype in (np.float32, np.float64)):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self.name = name

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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def tensor(data, requires_grad: bool = False, dtype=np.float32, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


# ---------------------------------------------------------------------------
# tape


@dataclass(eq=False)
class _Node:
    id: int
    generation: int
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class GradTape:
    """Ordered record of differentiable operations."""

    nodes: list[_Node] = field(default_factory=list)
    next_id: int = 0
    generation: int = 0

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn, op: str) -> None:
        node = _Node(self.next_id, self.generation, inputs, backward_fn, op)
        self.next_id += 1
        self.nodes.append(node)
        out._node = node

    def clear(self) -> None:
        self.nodes = []
        self.generation += 1

    def __len__(self) -> int:
        return len(self.nodes)


class _State(threading.local):
    def __init__(self):
        self.tape = GradTape()
        self.grad_enabled = True


_state = _State()


def current_tape() -> GradTape:
    return _state.tape


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def custom_op(data: np.ndarray, inputs: Sequence[Tensor], backward_fn, op: str = "custom") -> Tensor:
    """Wrap ``data`` as an op output.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    inputs = tuple(inputs)
    track = _state.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track)
    if track:
        _state.tape.record(out, inputs, backward_fn, op)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from ``loss``; grads accumulate."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    node = loss._node
    if node is None or node.generation != tape.generation:
        raise ContractError("loss is not on the active gradient tape")
    grads: dict[int, np.ndarray] = {node.id: np.ones_like(loss.data)}
    for n in reversed(tape.nodes):
        if n.id > node.id:
            continue
        g = grads.pop(n.id, None)
        if g is None:
            continue
        for t, gi in zip(n.inputs, n.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                gi = gi.reshape(t.shape)
            if t._node is None:
                t.grad = gi.astype(t.dtype, copy=True) if t.grad is None else t.grad + gi
            else:
                key = t._node.id
                grads[key] = grads[key] + gi if key in grads else gi
    tape.clear()


# ---------------------------------------------------------------------------
# elementwise


def _as_operand(x, like: Tensor):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 and a.ndim == 0 or b.size == 1 and b.ndim == 0:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(t.shape)


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, np.ndarray):
        return custom_op(a.data + b.astype(a.dtype, copy=False), (a,), lambda g: (g,), "add_const")
    b = _as_operand(b, a)
    _check_binary(a, b, "add")
    return custom_op(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)), "add")


def sub(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _check_binary(a, b, "sub")
    return custom_op(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)), "sub")


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, np.ndarray):
        c = b.astype(a.dtype, copy=False)
        out = a.data * c
        if out.shape != a.shape:
            raise DimensionError(f"mul: constant of shape {b.shape} changes shape {a.shape}")
        return custom_op(out, (a,), lambda g: (g * c,), "mul_const")
    b = _as_operand(b, a)
    _check_binary(a, b, "mul")

    def bw(g):
        ga = _reduce_to(g * b.data, a) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b) if b.requires_grad else None
        return ga, gb

    return custom_op(a.data * b.data, (a, b), bw, "mul")


def div(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _check_binary(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = _reduce_to(g / b.data, a) if a.requires_grad else None
        gb = _reduce_to(-g * out / b.data, b) if b.requires_grad else None
        return ga, gb

    return custom_op(out, (a, b), bw, "div")


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return custom_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def neg(x: Tensor) -> Tensor:
    return custom_op(-x.data, (x,), lambda g: (-g,), "neg")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    with np.errstate(over="ignore"):
        e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return custom_op(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return custom_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors the op name
    sgn = np.sign(x.data)
    return custom_op(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return custom_op(out, (x,), lambda g: (g * out,), "exp")


def smooth_l1(x: Tensor, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style penalty: 0.5 x^2 / beta below beta, |x| - beta/2 above."""
    a = np.abs(x.data)
    small = a < beta
    out = np.where(small, 0.5 * x.data * x.data / beta, a - 0.5 * beta).astype(x.dtype)
    slope = np.where(small, x.data / beta, np.sign(x.data)).astype(x.dtype)
    return custom_op(out, (x,), lambda g: (g * slope,), "smooth_l1")


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return custom_op(out, (x,), bw, "sum")


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x: Tensor, axis: int) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return custom_op(p, (x,), bw, "softmax")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = tuple(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return custom_op(out, tensors, bw, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return custom_op(x.data[index], (x,), bw, "slice")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return custom_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, k: tuple[int, ...], stride: int, out_sp: tuple[int, ...]) -> np.ndarray:
    """xp: (C, N, *padded spatial) -> (prod(k), C, N, *out_sp)."""
    cols = np.empty((int(np.prod(k)),) + xp.shape[:2] + out_sp, dtype=xp.dtype)
    for idx, offs in enumerate(np.ndindex(*k)):
        sl = tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offs, out_sp))
        cols[idx] = xp[(slice(None), slice(None)) + sl]
    return cols


def _col2im(dcols: np.ndarray, padded_shape, k, stride, out_sp) -> np.ndarray:
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    for idx, offs in enumerate(np.ndindex(*k)):
        sl = tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offs, out_sp))
        dxp[(slice(None), slice(None)) + sl] += dcols[idx]
    return dxp


def _convnd(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int, padding: int, nsp: int) -> Tensor:
    if x.ndim != nsp + 2:
        raise DimensionError(f"conv{nsp}d: input must have {nsp + 2} axes, got shape {x.shape}")
    if weight.ndim != nsp + 2:
        raise DimensionError(f"conv{nsp}d: weight must have {nsp + 2} axes, got shape {weight.shape}")
    n, c = x.shape[:2]
    o, cw = weight.shape[:2]
    if c != cw:
        raise DimensionError(f"conv{nsp}d: channel axis mismatch, input has {c}, weight expects {cw}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv{nsp}d: bias axis 0 has {bias.shape}, expected ({o},)")
    k = weight.shape[2:]
    sp = x.shape[2:]
    out_sp = tuple((s + 2 * padding - kk) // stride + 1 for s, kk in zip(sp, k))
    for ax, (s, kk, os_) in enumerate(zip(sp, k, out_sp)):
        if os_ < 1:
            raise DimensionError(f"conv{nsp}d: spatial axis {ax + 2} of size {s} too small for kernel {kk}")
    dt = x.dtype
    xt = np.moveaxis(x.data, 1, 0)
    if padding:
        xp = np.zeros((c, n) + tuple(s + 2 * padding for s in sp), dtype=dt)
        xp[(slice(None), slice(None)) + tuple(slice(padding, padding + s) for s in sp)] = xt
    else:
        xp = xt
    kvol = int(np.prod(k))
    pointwise = kvol == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = np.ascontiguousarray(xp).reshape(c, -1)
        wmat = weight.data.reshape(o, c)
    else:
        cols = _im2col(xp, k, stride, out_sp).reshape(kvol * c, -1)
        # weight laid out as (O, k..., C) to match the column ordering
        wmat = np.moveaxis(weight.data, 1, -1).reshape(o, kvol * c)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.moveaxis(out.reshape((o, n) + out_sp), 0, 1)

    def bw(g):
        gm = np.moveaxis(g, 1, 0).reshape(o, -1)
        gx = gw = gb = None
        if weight.requires_grad:
            gwm = gm @ cols.T
            if pointwise:
                gw = gwm.reshape(weight.shape)
            else:
                gw = np.moveaxis(gwm.reshape((o,) + k + (c,)), -1, 1)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=1)
        if x.requires_grad:
            dcols = wmat.T @ gm
            if pointwise:
                gx = np.moveaxis(dcols.reshape((c, n) + out_sp), 0, 1)
            else:
                dxp = _col2im(dcols.reshape((kvol, c, n) + out_sp), xp.shape, k, stride, out_sp)
                if padding:
                    dxp = dxp[(slice(None), slice(None)) + tuple(slice(padding, padding + s) for s in sp)]
                gx = np.moveaxis(dxp, 0, 1)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return custom_op(out, inputs, bw, f"conv{nsp}d")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over [N, C, H, W] with weight [O, C, kh, kw]."""
    return _convnd(x, weight, bias, stride, padding, 2)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over [N, C, D, H, W] with weight [O, C, kd, kh, kw]."""
    return _convnd(x, weight, bias, stride, padding, 3)


# ---------------------------------------------------------------------------
# resampling


def _interp_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    # align_corners=False: source = (dst + 0.5) / factor - 0.5, clamped at 0
    n_out = n_in * factor
    src = np.maximum((np.arange(n_out) + 0.5) / factor - 0.5, 0.0)
    i0 = np.floor(src).astype(int)
    lam = src - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1 - lam)
    np.add.at(m, (np.arange(n_out), i1), lam)
    return m.astype(dtype)


def resample(x: Tensor, mode: str) -> Tensor:
    """Bilinear x2 / x4 upsampling or 2x2 mean pooling of an [N, C, H, W] tensor."""
    if x.ndim != 4:
        raise DimensionError(f"resample: expected [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    if mode == "avgpool_down2":
        if h % 2 or w % 2:
            bad = 2 if h % 2 else 3
            raise DimensionError(f"resample: axis {bad} has odd size {x.shape[bad]}, cannot pool by 2")
        out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

        def bw(g):
            return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * x.dtype.type(0.25),)

        return custom_op(out.astype(x.dtype), (x,), bw, "avgpool_down2")
    factors = {"bilinear_up2": 2, "bilinear_up4": 4}
    if mode not in factors:
        raise ValueError(f"unknown resample mode {mode!r}")
    f = factors[mode]
    ah = _interp_matrix(h, f, x.dtype)
    aw = _interp_matrix(w, f, x.dtype)
    out = ah @ (x.data @ aw.T)

    def bw(g):
        return (ah.T @ (g @ aw),)

    return custom_op(out, (x,), bw, mode)


def avgpool_axis(x: Tensor, axis: int = 1) -> Tensor:
    """Mean of adjacent pairs along ``axis`` (stride 2)."""
    m = x.shape[axis]
    if m % 2:
        raise DimensionError(f"avgpool_axis: axis {axis} has odd size {m}")
    shape = x.shape[:axis] + (m // 2, 2) + x.shape[axis + 1:]
    out = x.data.reshape(shape).mean(axis=axis + 1).astype(x.dtype)

    def bw(g):
        return (np.repeat(g, 2, axis=axis) * x.dtype.type(0.5),)

    return custom_op(out, (x,), bw, "avgpool_axis")


# ---------------------------------------------------------------------------
# fractional sampling


def _split_positions(pos: np.ndarray, size: int):
    base = np.floor(pos)
    frac = (pos - base).astype(pos.dtype)
    i0 = base.astype(np.int64)
    i1 = i0 + 1
    v0 = (i0 >= 0) & (i0 < size)
    v1 = (i1 >= 0) & (i1 < size)
    return np.clip(i0, 0, size - 1), np.clip(i1, 0, size - 1), frac, v0, v1


def gather_horizontal(x: Tensor, coords: Tensor) -> Tensor:
    """Sample ``x`` [N, C, H, W] at fractional columns ``coords`` [N, H, W].

    Linear interpolation along width; samples outside [0, W-1] read zero.
    """
    if x.ndim != 4:
        raise DimensionError(f"gather_horizontal: expected [N, C, H, W], got {x.shape}")
    n, c, h, w = x.shape
    if coords.shape != (n, h, w):
        raise DimensionError(f"gather_horizontal: coords shape {coords.shape} != {(n, h, w)}")
    i0, i1, frac, v0, v1 = _split_positions(coords.data, w)
    b0 = np.broadcast_to(i0[:, None], x.shape)
    b1 = np.broadcast_to(i1[:, None], x.shape)
    a = np.take_along_axis(x.data, b0, axis=3) * v0[:, None]
    b = np.take_along_axis(x.data, b1, axis=3) * v1[:, None]
    f = frac[:, None]
    out = (1 - f) * a + f * b

    def bw(g):
        gx = gc = None
        if x.requires_grad:
            rows = (np.arange(n * c * h) * w).reshape(n, c, h, 1)
            w0 = (g * (1 - f) * v0[:, None]).ravel()
            w1 = (g * f * v1[:, None]).ravel()
            idx = np.concatenate([(rows + b0).ravel(), (rows + b1).ravel()])
            gx = np.bincount(idx, np.concatenate([w0, w1]), minlength=x.size).astype(x.dtype).reshape(x.shape)
        if coords.requires_grad:
            gc = (g * (b - a)).sum(axis=1)
        return gx, gc

    return custom_op(out.astype(x.dtype), (x, coords), bw, "gather_horizontal")


def linear_sample(volume: Tensor, center: Tensor, offsets: Sequence[float]) -> Tensor:
    """Sample ``volume`` [N, D, H, W] along axis 1 at ``center + offset``.

    ``center`` is [N, 1, H, W]; the result is [N, len(offsets), H, W]. Linear
    interpolation, zero outside [0, D-1], differentiable w.r.t. both inputs.
    """
    if volume.ndim != 4:
        raise DimensionError(f"linear_sample: expected [N, D, H, W], got {volume.shape}")
    n, d, h, w = volume.shape
    if center.shape != (n, 1, h, w):
        raise DimensionError(f"linear_sample: center shape {center.shape} != {(n, 1, h, w)}")
    offs = np.asarray(offsets, dtype=volume.dtype).reshape(1, -1, 1, 1)
    pos = center.data + offs
    i0, i1, frac, v0, v1 = _split_positions(pos, d)
    a = np.take_along_axis(volume.data, i0, axis=1) * v0
    b = np.take_along_axis(volume.data, i1, axis=1) * v1
    out = (1 - frac) * a + frac * b

    def bw(g):
        gv = gc = None
        if volume.requires_grad:
            k = pos.shape[1]
            nn_ = np.arange(n).reshape(n, 1, 1, 1)
            hw = (np.arange(h).reshape(1, 1, h, 1) * w + np.arange(w).reshape(1, 1, 1, w))
            base = nn_ * (d * h * w) + hw
            idx0 = np.broadcast_to(base + i0 * (h * w), (n, k, h, w))
            idx1 = np.broadcast_to(base + i1 * (h * w), (n, k, h, w))
            wts = np.concatenate([(g * (1 - frac) * v0).ravel(), (g * frac * v1).ravel()])
            gv = np.bincount(np.concatenate([idx0.ravel(), idx1.ravel()]), wts, minlength=volume.size)
            gv = gv.astype(volume.dtype).reshape(volume.shape)
        if center.requires_grad:
            gc = (g * (b - a)).sum(axis=1, keepdims=True)
        return gv, gc

    return custom_op(out.astype(volume.dtype), (volume, center), bw, "linear_sample")


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float]
    checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def check_gradients(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    epsilon: float = 1e-3,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    The error for one input is ``max|analytic - numeric| / max(|analytic|, |numeric|)``
    taken over the checked entries (max-norm relative error). ``max_entries``
    limits the number of randomly chosen entries probed per input.
    """
    inputs = list(inputs)
    for t in inputs:
        t.data = np.array(t.data, order="C", copy=True)
        t.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise ContractError(f"check_gradients: f must return a scalar, got shape {out.shape}")
    if out._node is None:
        analytic = [np.zeros(t.shape, dtype=t.dtype) for t in inputs]
    else:
        backward(out)
        analytic = [t.grad if t.grad is not None else np.zeros(t.shape, dtype=t.dtype) for t in inputs]
    rng = rng if rng is not None else np.random.default_rng(0)
    errors = []
    checked = 0
    with no_grad():
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            num = np.empty(len(idx))
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = float(f(*inputs).data)
                flat[i] = orig - epsilon
                fm = float(f(*inputs).data)
                flat[i] = orig
                num[j] = (fp - fm) / (2 * epsilon)
            ana = a.reshape(-1)[idx].astype(np.float64)
            denom = max(np.max(np.abs(ana), initial=0.0), np.max(np.abs(num), initial=0.0))
            err = 0.0 if denom == 0 else float(np.max(np.abs(ana - num)) / denom)
            errors.append(err)
            checked += len(idx)
    for t in inputs:
        t.grad = None
    return GradCheckReport(max(errors, default=0.0), errors, checked)
