"""Adam with bias correction, operating in place on named parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState, hyper: AdamHyper = AdamHyper()) -> AdamState:
    """One Adam update. Parameters and ``state`` are mutated; ``state`` is returned.

    All gradients are validated before anything is touched, so a non-finite
    gradient leaves parameters and moments exactly as they were.
    """
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"adam_step[{k}]", p.shape, g.shape)
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        if state.m[k].shape != p.shape:
            raise ShapeError(f"adam_state[{k}]", p.shape, state.m[k].shape)
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for parameter {k}")

    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v = state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        p.data = p.data - hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
    return state
