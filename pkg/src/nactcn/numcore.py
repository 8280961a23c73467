"""Minimal reverse-mode differentiable arrays on top of numpy.

A :class:`Tensor` wraps a contiguous ``numpy.ndarray``.  Operations executed
while a :class:`Tape` is active are appended to that tape together with a
backward rule; ``Tape.backward`` replays them in reverse registration order.
Outside of a tape, operations are plain numpy computations with no
bookkeeping, which is what inference and finite-difference probing use.

The active tape is thread-local, so a tape is confined to the thread that
opened it.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

DEFAULT_DTYPE = np.float64

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of executed operations (the computation record).

    Use as a context manager; every operation whose inputs require gradients
    is registered while the tape is active::

        with Tape() as tape:
            loss = model_loss(...)
        tape.backward(loss)
    """

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse of nested tapes
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf tensor.

        Tensors in ``params`` that the loss does not reach get a zero gradient.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        seen: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                seen[key] = inp
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, g in grads.items():
            leaf = seen[key]
            if not leaf.requires_grad:
                continue
            if g.shape != leaf.shape:  # pragma: no cover - guards op rules
                raise DimensionError(f"gradient shape {g.shape} != tensor shape {leaf.shape}")
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor] = ()) -> None:
    """Functional spelling of :meth:`Tape.backward`."""
    tape.backward(loss, params)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], rule, op: str) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.nodes.append(_Node(out, inputs, rule, op))
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from None


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    b = as_tensor(b)
    return as_tensor(a, dtype=b.dtype), b


# binary elementwise ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                   "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def rule(g):
        return (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), rule, "div")


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


# unary elementwise -------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), (x,),
                   lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), evaluated stably."""
    z = x.data
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    e = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out.astype(x.dtype, copy=False), (x,), lambda g: (g * sig,), "softplus")


def square(x: Tensor) -> Tensor:
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


_ELEMENTWISE = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "add": add,
    "mul": mul,
    "scale": scale,
}


def elementwise(name: str, *args) -> Tensor:
    """Dispatch ``relu | tanh | sigmoid | add | mul | scale`` by name."""
    try:
        fn = _ELEMENTWISE[name]
    except KeyError:
        raise ContractError(f"unknown elementwise op {name!r}") from None
    return fn(*args)


# reductions and layout ---------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), rule, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                   lambda g: (g.transpose(inverse),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out, copy=True), (x,), rule, "getitem")


def shift_stack(x: Tensor, offsets: Sequence[int]) -> Tensor:
    """Stack shifted copies of ``x`` along a new trailing axis.

    ``out[..., t, j] = x[..., t + offsets[j]]`` and 0 where that index falls
    outside ``[0, n)``.  This is zero padding on both ends followed by one
    contiguous slice per tap, the windowing primitive behind the dilated
    convolutions and neighborhood attention.
    """
    offsets = [int(o) for o in offsets]
    n = x.shape[-1]
    left = max(0, -min(offsets))
    right = max(0, max(offsets))
    pad = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    xp = np.pad(x.data, pad)
    out = np.stack([xp[..., left + o: left + o + n] for o in offsets], axis=-1)

    def rule(g):
        gp = np.zeros(xp.shape, dtype=g.dtype)
        for j, o in enumerate(offsets):
            gp[..., left + o: left + o + n] += g[..., j]
        return (gp[..., left: left + n],)

    return _result(out, (x,), rule, "shift_stack")


# products ----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with rules ``da = g bᵀ`` and ``db = aᵀ g``."""
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def einsum(subscripts: str, *operands) -> Tensor:
    """Explicit-output einsum (``'ij,jk->ik'``) with a reverse rule.

    Each operand's indices must appear in the output or in another operand,
    and no index may repeat within one operand.
    """
    ops = tuple(as_tensor(o) for o in operands)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(ops):
        raise ContractError(f"einsum expects {len(in_subs)} operands, got {len(ops)}")
    for i, sub_i in enumerate(in_subs):
        if len(set(sub_i)) != len(sub_i):
            raise ContractError(f"repeated index in einsum operand {sub_i!r}")
        others = out_sub + "".join(s for j, s in enumerate(in_subs) if j != i)
        if not set(sub_i) <= set(others):
            raise ContractError(f"einsum operand {sub_i!r} has indices summed only locally")
        if len(sub_i) != ops[i].ndim:
            raise DimensionError(f"einsum operand {sub_i!r} vs shape {ops[i].shape}")
    try:
        out = np.einsum(subscripts, *(o.data for o in ops), optimize=True)
    except ValueError as exc:
        raise DimensionError(f"einsum {subscripts!r}: {exc}") from None

    def rule(g):
        grads = []
        for i, sub_i in enumerate(in_subs):
            if not ops[i].requires_grad:
                grads.append(None)
                continue
            rest = [s for j, s in enumerate(in_subs) if j != i]
            rest_data = [o.data for j, o in enumerate(ops) if j != i]
            expr = ",".join([out_sub] + rest) + "->" + sub_i
            grads.append(np.einsum(expr, g, *rest_data, optimize=True))
        return grads

    return _result(np.asarray(out), ops, rule, "einsum")


# softmax family ----------------------------------------------------------

def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the slice maximum."""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ContractError("softmax_last needs a non-empty last axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), rule, "softmax")


def log_softmax_last(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return _result(out, (x,), lambda g: (g - soft * g.sum(axis=-1, keepdims=True),), "log_softmax")


# randomness --------------------------------------------------------------

class Rng:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    PCG64 (O'Neill's permuted congruential generator, 128-bit state, XSL-RR
    output) has a fixed, documented output sequence for a given seed, so
    draws are bit-identical across runs and platforms.  ``child(key)``
    derives an independent stream through ``SeedSequence([seed, key])``.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"

    def child(self, key: int) -> "Rng":
        ss = np.random.SeedSequence([self.seed, int(key) & 0xFFFF_FFFF_FFFF_FFFF])
        rng = Rng.__new__(Rng)
        rng.seed = int(ss.generate_state(1, np.uint64)[0])
        rng._gen = np.random.Generator(np.random.PCG64(ss))
        return rng

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, a, size=None, replace: bool = True):
        return self._gen.choice(a, size=size, replace=replace)


# verification ------------------------------------------------------------

def _scalar(t: Tensor) -> float:
    value = float(np.asarray(t.data).reshape(-1)[0])
    if not math.isfinite(value):
        raise NumericError(f"objective returned a non-finite value: {value}")
    return value


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``f`` is a zero-argument closure that reads ``params`` and returns a
    scalar tensor; it must be deterministic.  The relative error of an entry
    is ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    params = list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    _scalar(loss)
    tape.backward(loss, params)
    analytic = [p.grad.reshape(-1).copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = _scalar(f())
            flat[i] = orig - eps
            minus = _scalar(f())
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * eps)
            a = float(grad[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst


__all__ = [
    "Tensor", "Tape", "Rng", "active_tape", "as_tensor", "backward",
    "add", "sub", "mul", "div", "scale", "relu", "tanh", "sigmoid", "softplus", "square",
    "elementwise", "sum_", "mean", "reshape", "transpose", "getitem", "shift_stack",
    "matmul", "einsum", "softmax_last", "log_softmax_last", "finite_diff_check",
]
