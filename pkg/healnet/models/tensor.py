"""Dense float32 tensors with a reverse-mode gradient tape.

Ops are plain functions that take and return :class:`Tensor`. When a
:class:`GradTape` is active and any input requires a gradient, the op
appends a node holding its local backward closure. Reductions and matrix
products accumulate in float64 and store float32.
"""
from __future__ import annotations

import contextvars
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from healnet.utils.errors import ContractError, DimensionError

DTYPE = np.float32
ACC = np.float64

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805

_active_tape: contextvars.ContextVar[GradTape | None] = contextvars.ContextVar(
    "healnet_active_tape", default=None
)


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "tape", "name")

    def __init__(self, data, requires_grad=False, name=""):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.node = None
        self.tape = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return np.array(self.data)

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f"{self.name!r}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}{flag})"


class Parameter(Tensor):
    """A trainable leaf. Lives outside any tape."""

    __slots__ = ()

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True, name=name)

    def assign(self, values):
        values = np.asarray(values, dtype=DTYPE)
        if values.shape != self.shape:
            raise DimensionError(
                f"cannot assign shape {values.shape} to parameter '{self.name}' of shape {self.shape}"
            )
        self.data = np.ascontiguousarray(values)


@dataclass
class TapeNode:
    output: Tensor
    parents: tuple
    backward: Callable[[np.ndarray], tuple]


class GradTape:
    """Append-only record of one forward pass.

    Nodes are appended as ops run, so their order is a topological order
    of the computation. Use as a context manager; a tape is per-forward and
    must not be shared between concurrent passes.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def record(self, output, parents, backward):
        output.node = len(self.nodes)
        output.tape = self
        self.nodes.append(TapeNode(output, tuple(parents), backward))

    def gradient(self, loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, Tensor]:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=DTYPE)}
        for node in reversed(self.nodes):
            upstream = grads.get(id(node.output))
            if upstream is None:
                continue
            local = node.backward(upstream)
            for parent, grad in zip(node.parents, local):
                if grad is None or not parent.requires_grad:
                    continue
                grad = np.asarray(grad, dtype=DTYPE)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad

        return {
            name: Tensor(grads.get(id(p), np.zeros(p.shape, dtype=DTYPE)))
            for name, p in params.items()
        }


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """Gradients of a scalar ``loss`` for every entry of ``params``.

    Entries the loss does not depend on get zero gradients.
    """
    if loss.tape is None:
        raise ContractError("loss was not produced under an active GradTape")
    return loss.tape.gradient(loss, params)


def is_recording():
    return _active_tape.get() is not None


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=DTYPE))


def make_op(data, parents, backward_fn):
    """Wrap ``data`` as an op output; record ``backward_fn`` if a tape is listening.

    ``backward_fn`` maps the upstream gradient to one gradient per parent.
    """
    out = Tensor(data)
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, backward_fn)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0, dtype=ACC)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True, dtype=ACC)
    return grad.astype(DTYPE)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _check_axis(x, axis, op):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_op(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_op(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_op(a.data * b.data, (a, b), back)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = DTYPE(factor)

    def back(g):
        return (g * factor,)

    return make_op(x.data * factor, (x,), back)


def log(x: Tensor) -> Tensor:
    def back(g):
        return (g / x.data,)

    return make_op(np.log(x.data.astype(ACC)), (x,), back)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data.astype(ACC)).astype(DTYPE)

    def back(g):
        return (g * out,)

    return make_op(out, (x,), back)


def absolute(x: Tensor) -> Tensor:
    def back(g):
        return (g * np.sign(x.data),)

    return make_op(np.abs(x.data), (x,), back)


def square(x: Tensor) -> Tensor:
    def back(g):
        return (g * 2.0 * x.data,)

    return make_op(x.data * x.data, (x,), back)


def clip(x: Tensor, low=None, high=None) -> Tensor:
    """Clamp values; gradient passes only where the input is inside the range."""
    lo = -np.inf if low is None else low
    hi = np.inf if high is None else high
    inside = (x.data >= lo) & (x.data <= hi)

    def back(g):
        return (g * inside,)

    return make_op(np.clip(x.data, lo, hi), (x,), back)


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``mask`` is true, ``b`` elsewhere. Selection is exact."""
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(mask.shape, a.shape, b.shape)
    except ValueError:
        raise DimensionError(
            f"where: incompatible shapes mask {mask.shape}, {a.shape}, {b.shape}"
        ) from None

    def back(g):
        return _unbroadcast(np.where(mask, g, 0), a.shape), _unbroadcast(np.where(mask, 0, g), b.shape)

    return make_op(np.where(mask, a.data, b.data), (a, b), back)


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)

    def back(g):
        return (np.where(mask, 0, g),)

    return make_op(np.where(mask, DTYPE(value), x.data), (x,), back)


# activations


def sigmoid(x: Tensor) -> Tensor:
    z = x.data.astype(ACC)
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez)).astype(DTYPE)

    def back(g):
        return (g * out * (1.0 - out),)

    return make_op(out, (x,), back)


def selu(x: Tensor) -> Tensor:
    z = x.data.astype(ACC)
    negative = SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(z, 0.0))
    out = np.where(z > 0, SELU_LAMBDA * z, negative).astype(DTYPE)
    slope = np.where(z > 0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(z, 0.0))).astype(DTYPE)

    def back(g):
        return (g * slope,)

    return make_op(out, (x,), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(x, axis, "softmax")
    z = x.data.astype(ACC)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = (e / e.sum(axis=axis, keepdims=True)).astype(DTYPE)

    def back(g):
        inner = (g.astype(ACC) * out).sum(axis=axis, keepdims=True)
        return ((out * (g - inner)).astype(DTYPE),)

    return make_op(out, (x,), back)


# reductions


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is not None:
        axis = _check_axis(x, axis, "sum")
    out = x.data.sum(axis=axis, keepdims=keepdims, dtype=ACC).astype(DTYPE)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(DTYPE),)

    return make_op(out, (x,), back)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    count = x.size if axis is None else x.shape[_check_axis(x, axis, "mean")]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions of {a.shape} and {b.shape} differ") from None
    a64 = a.data.astype(ACC)
    b64 = b.data.astype(ACC)

    def back(g):
        g64 = g.astype(ACC)
        ga = g64 @ np.swapaxes(b64, -1, -2)
        gb = np.swapaxes(a64, -1, -2) @ g64
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op((a64 @ b64).astype(DTYPE), (a, b), back)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if -1 in shape:
        known = math.prod(s for s in shape if s != -1)
        if known == 0 or x.size % known:
            raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
        shape = tuple(x.size // known if s == -1 else s for s in shape)
    if math.prod(shape) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")

    def back(g):
        return (g.reshape(x.shape),)

    return make_op(x.data.reshape(shape), (x,), back)


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation for shape {x.shape}")
    inverse = np.argsort([a % x.ndim for a in axes])

    def back(g):
        return (np.transpose(g, inverse),)

    return make_op(np.transpose(x.data, axes), (x,), back)


def concat_last_axis(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise DimensionError("concat_last_axis: nothing to concatenate")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(
                f"concat_last_axis: leading shapes differ, {tensors[0].shape} vs {t.shape}"
            )
    widths = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(widths)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=-1))

    return make_op(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), back)


def gather_last(x: Tensor, index) -> Tensor:
    """``out[i] = x[i, index[i]]`` for a 2D ``x``."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise DimensionError(f"gather_last: index of shape {index.shape} does not fit {x.shape}")
    rows = np.arange(x.shape[0])

    def back(g):
        full = np.zeros(x.shape, dtype=DTYPE)
        full[rows, index] = g
        return (full,)

    return make_op(x.data[rows, index], (x,), back)


def cumprod_last(x: Tensor) -> Tensor:
    """Running product along the last axis, with a division-free backward."""
    x64 = x.data.astype(ACC)
    out = np.cumprod(x64, axis=-1).astype(DTYPE)
    k = x.shape[-1]

    def back(g):
        g64 = g.astype(ACC)
        grad = np.zeros_like(x64)
        for i in range(k):
            # d out_j / d x_i = prod_{l <= j, l != i} x_l for j >= i
            others = x64.copy()
            others[..., i] = 1.0
            partial = np.cumprod(others, axis=-1)
            grad[..., i] = (g64[..., i:] * partial[..., i:]).sum(axis=-1)
        return (grad.astype(DTYPE),)

    return make_op(out, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps=1e-5) -> Tensor:
    """Normalize over the last axis. A constant row normalizes to zeros."""
    x64 = x.data.astype(ACC)
    mu = x64.mean(axis=-1, keepdims=True)
    centered = x64 - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    constant = x64.max(axis=-1, keepdims=True) == x64.min(axis=-1, keepdims=True)
    xhat = np.where(constant, 0.0, centered * inv_std)

    out = xhat
    if gamma is not None:
        if gamma.shape != x.shape[-1:]:
            raise DimensionError(f"layer_norm: gamma {gamma.shape} does not match {x.shape}")
        out = out * gamma.data
    if beta is not None:
        if beta.shape != x.shape[-1:]:
            raise DimensionError(f"layer_norm: beta {beta.shape} does not match {x.shape}")
        out = out + beta.data

    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def back(g):
        g64 = g.astype(ACC)
        dxhat = g64 * gamma.data if gamma is not None else g64
        dx = inv_std * (
            dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grads = [dx.astype(DTYPE)]
        if gamma is not None:
            grads.append(_unbroadcast(g64 * xhat, gamma.shape))
        if beta is not None:
            grads.append(_unbroadcast(g64, beta.shape))
        return tuple(grads)

    return make_op(out.astype(DTYPE), parents, back)


def dropout(x: Tensor, p: float, training: bool, generator: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Returns ``x`` itself when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    if generator is None:
        raise ContractError("dropout in training mode needs a seeded generator")
    keep = (generator.random(x.shape) >= p).astype(DTYPE) / DTYPE(1.0 - p)

    def back(g):
        return (g * keep,)

    return make_op(x.data * keep, (x,), back)
