"""Differentiable ops over :class:`Tensor`.

Shapes must match exactly except for :func:`add_bias`, which adds a vector
over the last axis. Anything else needs an explicit :func:`reshape`.
Masks, index arrays and dropout keep-masks are plain numpy constants.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import DegenerateAttentionError, ShapeError, Tensor, record


def _same(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same("add", a, b)
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same("sub", a, b)
    return record("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same("mul", a, b)
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return record("scale", (a,), a.data * c, lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x[..., j] + b[j]``: the one broadcast the engine allows."""
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError("add_bias", x.shape, b.shape)
    lead = tuple(range(x.ndim - 1))
    return record("add_bias", (x, b), x.data + b.data, lambda g: (g, g.sum(axis=lead)))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return record("relu", (a,), np.where(keep, a.data, 0.0), lambda g: (g * keep,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return record("log", (a,), out, lambda g: (g / x,))


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along the last axis; leading dims must agree."""
    tensors = tuple(tensors)
    if axis not in (-1, tensors[0].ndim - 1):
        raise ValueError("concat only supports the last axis")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[-1] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=-1)

    def bwd(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return record("concat", tensors, out, bwd)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]``."""
    n = a.shape[-1]
    if not 0 <= start < stop <= n:
        raise ValueError(f"slice_last: bad range [{start}, {stop}) for size {n}")
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return record("slice_last", (a,), a.data[..., start:stop], bwd)


def select(a: Tensor, axis: int, index: int) -> Tensor:
    """Pick one index along ``axis``, dropping that axis."""
    shape = a.shape
    out = np.take(a.data, index, axis=axis)

    def bwd(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return record("select", (a,), out, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``[m,k]@[k,n]``, or batched ``[B,m,k]@[B,k,n]`` with equal batch size."""
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        ad, bd = a.data, b.data
        return record("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))
    if a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError("matmul", a.shape, b.shape)
        ad, bd = a.data, b.data
        return record("bmm", (a, b), ad @ bd,
                      lambda g: (g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g))
    raise ShapeError("matmul", a.shape, b.shape)


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    out = a.data.reshape(shape)
    return record("reshape", (a,), out, lambda g: (g.reshape(old),))


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` with shape ``ids.shape + [d]``."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("take_rows", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"take_rows: id out of range for table of {table.shape[0]} rows")
    rows = table.shape

    def bwd(g):
        full = np.zeros(rows)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, rows[1]))
        return (full,)

    return record("take_rows", (table,), table.data[ids], bwd)


def pick_last(a: Tensor, idx) -> Tensor:
    """``out[...] = a[..., idx[...]]`` (gather one entry per row)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise ShapeError("pick_last", a.shape, idx.shape)
    shape = a.shape
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        return (full,)

    return record("pick_last", (a,), out, bwd)


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``a`` where the constant boolean mask holds, else ``b``."""
    _same("where", a, b)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError("where", mask.shape, a.shape)
    return record("where", (a, b), np.where(mask, a.data, b.data),
                  lambda g: (g * mask, g * ~mask))


def mul_const(a: Tensor, c) -> Tensor:
    """Multiply by a constant array of identical shape (masks, dropout)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise ShapeError("mul_const", a.shape, c.shape)
    return record("mul_const", (a,), a.data * c, lambda g: (g * c,))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return record("sum", (a,), np.array(a.data.sum()), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    return scale(sum(a), 1.0 / a.size)


def softmax(a: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Stable softmax; ``mask`` is an additive array of 0 / -inf entries.

    Masked entries come out as exactly 0. A row whose logits are all masked
    raises :class:`DegenerateAttentionError`.
    """
    x = a.data
    if x.shape[axis] == 0:
        raise ShapeError("softmax (empty axis)", x.shape)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != x.shape:
            raise ShapeError("softmax mask", x.shape, mask.shape)
        x = x + mask
    m = x.max(axis=axis, keepdims=True)
    if not np.isfinite(m).all():
        raise DegenerateAttentionError("degenerate attention row: every logit is masked")
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", (a,), out, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then ``gain * xhat + bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", (x, gain, bias), xhat * gd + bias.data, bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or no generator is given."""
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul_const(a, keep)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis for inputs of any rank."""
    lead = x.shape[:-1]
    flat = x if x.ndim == 2 else reshape(x, (int(math.prod(lead)), x.shape[-1]))
    y = matmul(flat, w)
    if b is not None:
        y = add_bias(y, b)
    return y if x.ndim == 2 else reshape(y, lead + (w.shape[1],))
