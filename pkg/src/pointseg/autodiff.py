"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every primitive computes its forward value eagerly and, when any input
needs a gradient, appends a node to the owning :class:`Tape` holding a
vector-Jacobian product closure. :func:`backward` walks the tape once in
reverse order.

Only scalar-tensor broadcasting is supported; any other shape mismatch
raises :class:`~pointseg.errors.ShapeError`.

>>> tape = Tape()
>>> x = tape.parameter(np.array([1.0, 2.0, 3.0]), name="x")
>>> grads = backward(tape, mean(square(x)))
>>> np.round(grads["x"], 4).tolist()
[0.6667, 1.3333, 2.0]
"""
from __future__ import annotations

from numbers import Number
from typing import Callable

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor", "Tape", "backward", "finite_diff_grad",
    "add", "sub", "mul", "scale", "matmul", "conv2d", "relu", "softmax", "log_softmax",
    "log", "sum", "mean", "square", "gather", "sort_desc", "reshape",
]


class Tensor:
    __slots__ = ("value", "tape", "requires_grad", "name", "id")

    def __init__(self, value, tape: "Tape", requires_grad: bool, name: str | None, id: int):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name
        self.id = id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.value.reshape(()))

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Number):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications.

    Node ids increase monotonically, so the recorded list is already in
    topological order.
    """

    def __init__(self):
        self.nodes: list[tuple[int, tuple[Tensor, ...], Callable]] = []
        self.parameters: dict[str, Tensor] = {}
        self._next_id = 0

    def _new(self, value, requires_grad: bool, name: str | None = None) -> Tensor:
        t = Tensor(value, self, requires_grad, name, self._next_id)
        self._next_id += 1
        return t

    def parameter(self, value, name: str) -> Tensor:
        if name in self.parameters:
            raise ContractError(f"parameter {name!r} already registered on this tape")
        t = self._new(np.array(value, dtype=np.float64), True, name)
        self.parameters[name] = t
        return t

    def constant(self, value) -> Tensor:
        return self._new(np.asarray(value, dtype=np.float64), False)

    def record(self, value: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
        needs = any(t.requires_grad for t in inputs)
        out = self._new(value, needs)
        if needs:
            self.nodes.append((out.id, inputs, vjp))
        return out


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to every parameter on ``tape``.

    Parameters the loss does not depend on get an all-zero gradient.
    """
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for out_id, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            if t.id in grads:
                grads[t.id] = grads[t.id] + gi
            else:
                grads[t.id] = gi
    return {name: grads.get(p.id, np.zeros_like(p.value)) for name, p in tape.parameters.items()}


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


# -- helpers ---------------------------------------------------------------

def _tape_of(*xs) -> Tape:
    tapes = {id(x.tape): x.tape for x in xs if isinstance(x, Tensor)}
    if len(tapes) != 1:
        raise ContractError("operands must live on exactly one tape")
    return next(iter(tapes.values()))


def _lift(x, tape: Tape) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ContractError("operands live on different tapes")
        return x
    return tape.constant(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- primitives ------------------------------------------------------------

def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    if isinstance(b, Number) or isinstance(a, Number):
        t, s = (a, float(b)) if isinstance(b, Number) else (b, float(a))
        return tape.record(t.value + s, (t,), lambda g: (g,))
    a, b = _lift(a, tape), _lift(b, tape)
    _same_shape(a, b, "add")
    return tape.record(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if isinstance(b, Number):
        return add(a, -float(b))
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _same_shape(a, b, "sub")
    return tape.record(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return tape.record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return a.tape.record(a.value * s, (a,), lambda g: (g * s,))


def matmul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return tape.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def _im2col(x: np.ndarray, kh: int) -> np.ndarray:
    n, h, w, c = x.shape
    if kh == 1:
        return x.reshape(n * h * w, c)
    p = kh // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.empty((n, h, w, kh, kh, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kh):
            cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(n * h * w, kh * kh * c)


def _col2im(dcols: np.ndarray, shape: tuple[int, ...], kh: int) -> np.ndarray:
    n, h, w, c = shape
    if kh == 1:
        return dcols.reshape(shape)
    p = kh // 2
    dcols = dcols.reshape(n, h, w, kh, kh, c)
    dxp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kh):
            dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
    return dxp[:, p:p + h, p:p + w, :]


def conv2d(x, w: Tensor, b: Tensor) -> Tensor:
    """Stride-1 'same' convolution with bias.

    ``x`` is ``(H, W, Cin)`` or ``(B, H, W, Cin)``; ``w`` is
    ``(kh, kh, Cin, Cout)`` with odd ``kh`` (zero padding ``kh // 2``).
    """
    tape = _tape_of(x, w, b)
    x, w, b = _lift(x, tape), _lift(w, tape), _lift(b, tape)
    xv = x.value
    squeeze = xv.ndim == 3
    if squeeze:
        xv = xv[None]
    if xv.ndim != 4 or w.value.ndim != 4:
        raise ShapeError(f"conv2d: expected (B,H,W,C) input and 4-d kernel, got {x.shape}, {w.shape}")
    kh, kw, cin, cout = w.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if xv.shape[-1] != cin:
        raise ShapeError(f"conv2d: input has {xv.shape[-1]} channels, kernel expects {cin}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {cout} output channels")
    cols = _im2col(xv, kh)
    w2 = w.value.reshape(-1, cout)
    out = (cols @ w2 + b.value).reshape(xv.shape[:3] + (cout,))
    in_shape = xv.shape
    if squeeze:
        out = out[0]

    def vjp(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        gb = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            gx = _col2im(g2 @ w2.T, in_shape, kh)
            if squeeze:
                gx = gx[0]
        return gx, gw, gb

    return tape.record(out, (x, w, b), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return a.tape.record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last (channel) axis."""
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return a.tape.record(y, (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    """Log of the channel softmax, computed without forming the softmax first."""
    z = a.value - a.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    sm = np.exp(y)

    def vjp(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return a.tape.record(y, (a,), vjp)


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; values below ``floor`` are clamped (zero gradient there)."""
    v = a.value
    if floor is not None:
        keep = v >= floor
        safe = np.where(keep, v, floor)
        return a.tape.record(np.log(safe), (a,), lambda g: (np.where(keep, g / safe, 0.0),))
    return a.tape.record(np.log(v), (a,), lambda g: (g / v,))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return a.tape.record(np.array(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.value.size
    if n == 0:
        raise ContractError("mean of an empty tensor")
    return a.tape.record(np.array(a.value.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def square(a: Tensor) -> Tensor:
    v = a.value
    return a.tape.record(v * v, (a,), lambda g: (2.0 * v * g,))


def gather(a: Tensor, index) -> Tensor:
    """Pick entries of ``a`` by flat (row-major) index; output has ``index``'s shape."""
    idx = np.asarray(index, dtype=np.intp)
    shape, n = a.shape, a.value.size
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather: index out of range for {n} elements")

    def vjp(g):
        dx = np.zeros(n)
        np.add.at(dx, idx.ravel(), g.ravel())
        return (dx.reshape(shape),)

    return a.tape.record(a.value.reshape(-1)[idx], (a,), vjp)


def sort_desc(a: Tensor) -> tuple[Tensor, np.ndarray]:
    """Sort a 1-d tensor in descending order.

    Returns the sorted tensor and the permutation; the gradient is scattered
    back through the permutation, which is held fixed.
    """
    if a.value.ndim != 1:
        raise ShapeError(f"sort_desc expects a 1-d tensor, got shape {a.shape}")
    perm = np.argsort(-a.value, kind="stable")
    n = a.value.size

    def vjp(g):
        dx = np.empty(n)
        dx[perm] = g
        return (dx,)

    return a.tape.record(a.value[perm], (a,), vjp), perm


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return a.tape.record(out, (a,), lambda g: (g.reshape(old),))
