"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside a ``with Tape() as tape:`` block append nodes in
execution order (a valid topological order); ``tape.backward(loss)`` replays
the nodes in reverse exactly once and accumulates gradients into the
``grad`` field of every tensor that requires them.  Outside a tape, the same
operations run forward-only, which keeps rollouts cheap.

All arrays are float64: the gradient checks in the test suite rely on
double-precision central differences.
"""

from __future__ import annotations

from typing import Callable, ClassVar, Optional, Sequence

import numpy as np

Array = np.ndarray
_NEG_INF = -1e9  # additive attention-mask constant; exp() underflows to 0 exactly


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[Array] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the functions below do the work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)


class Tape:
    """Computation record for one forward pass; consumable exactly once."""

    _active: ClassVar[list["Tape"]] = []

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[Array], None]]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.pop()

    @classmethod
    def current(cls) -> Optional["Tape"]:
        return cls._active[-1] if cls._active else None

    def record(self, out: Tensor, backward: Callable[[Array], None]) -> None:
        self._nodes.append((out, backward))

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and walk the tape backwards once."""
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward call")
        self._consumed = True
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        loss.accumulate(np.ones_like(loss.data))
        for out, backward in reversed(self._nodes):
            if out.grad is not None:
                backward(out.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x, requires_grad=False)


def _recording(*parents: Tensor) -> bool:
    return Tape.current() is not None and any(p.requires_grad for p in parents)


def _emit(out_data: Array, parents: Sequence[Tensor], backward: Callable[[Array], None]) -> Tensor:
    tape = Tape.current()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(out_data, requires_grad=True)
        tape.record(out, backward)
        return out
    return Tensor(out_data)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _emit(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _emit(out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(-g)

    return _emit(-a.data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def backward(g: Array) -> None:
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
            a.accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else np.outer(a.data, g)
            b.accumulate(_unbroadcast(gb, b.shape))

    return _emit(out, (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g * out)

    return _emit(out, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g / a.data)

    return _emit(np.log(a.data), (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g * (1.0 - out * out))

    return _emit(out, (a,), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """Smooth tanh-form gelu; smoothness keeps finite-difference checks clean."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g: Array) -> None:
        if a.requires_grad:
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
            a.accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

    return _emit(out, (a,), backward)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> None:
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape).copy())

    return _emit(out, (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g.reshape(a.shape))

    return _emit(out, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g.transpose(inverse))

    return _emit(out, (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: Array) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.accumulate(g[tuple(index)])

    return _emit(out, tensors, backward)


def embedding(table: Tensor, ids: Array) -> Tensor:
    """Row gather: out[...] = table[ids[...]]."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g: Array) -> None:
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
            table.accumulate(gt)

    return _emit(out, (table,), backward)


def select(a, axis: int, index: int) -> Tensor:
    """Slice one index along ``axis`` (used for the classifier position)."""
    a = as_tensor(a)
    out = np.take(a.data, index, axis=axis)

    def backward(g: Array) -> None:
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            sl[axis] = index
            ga[tuple(sl)] = g
            a.accumulate(ga)

    return _emit(out, (a,), backward)


def gather_last(a, ids: Array) -> Tensor:
    """out[...] = a[..., ids[...]] where ids indexes the trailing axis."""
    a = as_tensor(a)
    ids = np.asarray(ids, dtype=np.int64)
    out = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]

    def backward(g: Array) -> None:
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.put_along_axis(ga, ids[..., None], g[..., None], axis=-1)
            a.accumulate(ga)

    return _emit(out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: Array) -> None:
        if a.requires_grad:
            dot = (g * out).sum(axis=axis, keepdims=True)
            a.accumulate(out * (g - dot))

    return _emit(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _emit(out, (a,), backward)


def layer_norm(a, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis, then scale and shift."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data

    def backward(g: Array) -> None:
        if gain.requires_grad:
            gain.accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias.accumulate(_unbroadcast(g, bias.shape))
        if a.requires_grad:
            gx = g * gain.data
            a.accumulate(
                inv
                * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                )
            )

    return _emit(out, (a, gain, bias), backward)


def minimum(a, b) -> Tensor:
    """Elementwise min; gradient routes to the first argument on ties."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _emit(out, (a, b), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through the closed interval."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.accumulate(g * inside)

    return _emit(out, (a,), backward)


def attention_mask_pad(lengths: Sequence[int], width: int) -> Array:
    """Additive key-padding mask of shape (N, 1, 1, width)."""
    mask = np.zeros((len(lengths), 1, 1, width))
    for i, n in enumerate(lengths):
        mask[i, 0, 0, n:] = _NEG_INF
    return mask


def attention_mask_causal(width: int) -> Array:
    """Additive causal mask of shape (1, 1, width, width)."""
    mask = np.full((width, width), _NEG_INF)
    return np.triu(mask, k=1)[None, None, :, :]
