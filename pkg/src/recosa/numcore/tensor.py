"""Dense f64 tensors and the recording tape used for reverse-mode differentiation.

Ops defined in :mod:`recosa.numcore.ops` append one :class:`OpRecord` to the
innermost active :class:`Tape` whenever any input requires a gradient. Records
are appended in execution order, so the tape is already topologically sorted
and backward is a single reversed sweep.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, NamedTuple, Sequence

import numpy as np

_ids = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        desc = " vs ".join(str(list(s)) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class NonFiniteError(FloatingPointError):
    """A forward value or gradient became NaN or infinite."""


class DegenerateAttentionError(ValueError):
    """Every logit in a softmax row was masked out."""


class Tensor:
    """An n-dimensional float64 array that can take part in a tape."""

    __slots__ = ("data", "requires_grad", "node_id", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {name or ''} initialised with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # fast path for op outputs: no copy, finiteness checked by the caller
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.node_id = next(_ids)
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; the real work lives in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, as_tensor(other, like=self))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, as_tensor(other, like=self))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None and np.ndim(x) == 0:
        return Tensor(np.full(like.shape, float(x)))
    return Tensor(x)


class OpRecord(NamedTuple):
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    # maps the output gradient to one gradient (or None) per input
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered log of differentiable ops, active inside a ``with`` block."""

    def __init__(self):
        self.records: list[OpRecord] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None):
        return backward(self, loss, params)


def _stack() -> list[Tape]:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


def active_tape() -> Tape | None:
    st = _stack()
    return st[-1] if st else None


def record(kind: str, inputs: tuple[Tensor, ...], out: np.ndarray, backward_fn) -> Tensor:
    """Wrap an op result, check it is finite and log it on the active tape."""
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{kind}: produced non-finite values")
    needs = any(t.requires_grad for t in inputs)
    tape = active_tape()
    result = Tensor._wrap(out, needs and tape is not None)
    if result.requires_grad:
        tape.records.append(OpRecord(kind, inputs, result, backward_fn))
    return result


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to leaf tensors.

    With ``params`` given, the result has exactly those keys; ones the loss
    does not reach get zero arrays. Otherwise every leaf with
    ``requires_grad`` that the sweep touched is returned. The tape is not
    consumed, repeated calls give identical results.
    """
    if loss.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    produced = set()
    for rec in reversed(tape.records):
        produced.add(rec.output.node_id)
        g = grads.pop(rec.output.node_id, None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for inp, gi in zip(rec.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(inp.node_id)
            grads[inp.node_id] = gi if prev is None else prev + gi
    if params is None:
        leaves = {}
        for rec in tape.records:
            for inp in rec.inputs:
                if inp.requires_grad and inp.node_id not in produced:
                    leaves[inp.node_id] = inp
        params = list(leaves.values())
    out = {}
    for p in params:
        g = grads.get(p.node_id)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {p.name or p}")
        out[p] = g
    return out
