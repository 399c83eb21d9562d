"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numeric_grad(f: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to every entry of ``param``."""
    flat = param.data.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(param.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """``||a - n|| / max(||a|| + ||n||, floor)``.

    The floor keeps finite-difference noise (~1e-11 at h=1e-5) from reading as
    a 100% error when the true gradient is zero.
    """
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
    return float(num / den)


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor] | Mapping[str, Tensor],
                    h: float = 1e-5) -> dict[str, float]:
    """Relative error per parameter.

    Keys are the mapping keys when ``params`` is a mapping, else ``Tensor.name``
    or the position (suffixed with the position when names repeat).
    """
    if isinstance(params, Mapping):
        items = list(params.items())
    else:
        items = [(p.name or str(i), p) for i, p in enumerate(params)]
        counts = {}
        for k, _ in items:
            counts[k] = counts.get(k, 0) + 1
        items = [(k if counts[k] == 1 else f"{k}#{i}", p) for i, (k, p) in enumerate(items)]
    tensors = [p for _, p in items]
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss, tensors)
    return {k: rel_error(grads[p], numeric_grad(f, p, h)) for k, p in items}
