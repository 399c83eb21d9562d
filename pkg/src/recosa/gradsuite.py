"""Finite-difference gradient checks over every parameterized layer and the full model.

Each case builds a small random instance, contracts its output with a fixed
random tensor to get a scalar, and compares tape gradients with central
differences. Weights are drawn larger than at init so that no gate saturates
to a trivially zero gradient.
"""

from __future__ import annotations

import numpy as np

from .corpus import EncodedSession, make_batch
from .layers import (Affine, FFNParams, LayerNormParams, LSTMParams, MultiHeadParams, PositionTable,
                     add_context_positions, causal_mask, feed_forward, key_padding_mask, lstm_encode, multi_head)
from .model import ModelConfig, ReCoSa
from .numcore import Tensor, check_gradients, ops

TOY_DIMS = dict(V=11, d=8, H=2, N=3, M=4, T=4)


def _randomize(tensors, rng, scale=0.5):
    for t in tensors:
        t.data = rng.uniform(-scale, scale, t.shape)


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _lstm(rng):
    p = LSTMParams.init(3, 4, rng)
    _randomize(p.named().values(), rng)
    x = _leaf(rng, 3, 4, 3)
    w = rng.normal(size=(3, 4))
    return (lambda: ops.sum(ops.mul(lstm_encode(x, p, lengths=[4, 2, 3]), Tensor(w)))), \
        list(p.named().values()) + [x]


def _positions(rng):
    table, proj = PositionTable.init(4, 3, rng), Affine.init(6, 4, rng)
    _randomize([proj.b], rng)
    h = _leaf(rng, 2, 3, 3)
    w = rng.normal(size=(2, 3, 4))
    return (lambda: ops.sum(ops.mul(add_context_positions(h, table, proj), Tensor(w)))), \
        [table.table, proj.w, proj.b, h]


def _attention(rng, causal=False):
    p = MultiHeadParams.init(4, 2, rng)
    q, k = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 4)
    if causal:
        mask = np.broadcast_to(causal_mask(3), (2, 3, 3))
        k = q
    else:
        mask = key_padding_mask(np.array([[True, True, False], [True, False, False]]), 3)
    w = rng.normal(size=(2, 3, 4))
    return (lambda: ops.sum(ops.mul(multi_head(q, k, k, mask, p)[0], Tensor(w)))), \
        list(p.named().values()) + ([q] if causal else [q, k])


def _ffn(rng):
    p = FFNParams.init(4, 8, rng)
    _randomize([p.b1, p.b2], rng)
    x = _leaf(rng, 2, 3, 4)
    w = rng.normal(size=(2, 3, 4))
    return (lambda: ops.sum(ops.mul(feed_forward(x, p), Tensor(w)))), list(p.named().values()) + [x]


def _layernorm(rng):
    ln = LayerNormParams.init(4)
    _randomize(ln.named().values(), rng, 1.5)
    x = _leaf(rng, 2, 3, 4)
    w = rng.normal(size=(2, 3, 4))
    return (lambda: ops.sum(ops.mul(ln(x), Tensor(w)))), list(ln.named().values()) + [x]


def toy_model_and_batch(seed: int = 0):
    """Model and two-session batch at the toy dimensions used by the full-model check."""
    dims = TOY_DIMS
    cfg = ModelConfig(vocab_size=dims["V"], d=dims["d"], heads=dims["H"], max_turns=dims["N"],
                      max_sent_len=dims["T"], seed=seed)
    model = ReCoSa(cfg)
    rng = np.random.default_rng(seed + 1)
    named = model.named_parameters()
    # widen the near-zero inits so the signal reaches every parameter
    _randomize([t for k, t in named.items() if k.startswith(("lstm.w", "lstm.b", "out"))], rng, 0.5)
    _randomize([t for k, t in named.items() if k.endswith((".b", ".b1", ".b2", ".bias"))], rng, 0.2)
    V, N, M, T = dims["V"], dims["N"], dims["M"], dims["T"]
    full = EncodedSession([list(rng.integers(4, V, M)) for _ in range(N)],
                          [2] + list(rng.integers(4, V, T - 1)), list(rng.integers(4, V, T - 1)) + [3])
    short = EncodedSession([list(rng.integers(4, V, 2)), list(rng.integers(4, V, M))],
                           [2, 5], [5, 3])
    return model, make_batch([full, short])


def _full_model(rng):
    model, batch = toy_model_and_batch(int(rng.integers(1 << 16)))
    return (lambda: model.loss(batch)), model.named_parameters()


CASES = {
    "lstm": _lstm,
    "context_positions": _positions,
    "cross_attention": _attention,
    "causal_self_attention": lambda rng: _attention(rng, causal=True),
    "feed_forward": _ffn,
    "layer_norm": _layernorm,
    "full_model": _full_model,
}


def run_case(name: str, seed: int = 0) -> dict[str, float]:
    """Relative error per parameter tensor for one case."""
    f, params = CASES[name](np.random.default_rng(seed))
    return check_gradients(f, params)


def run_suite(seed: int = 0) -> dict[str, float]:
    """Worst relative error for every case."""
    return {name: max(run_case(name, seed).values()) for name in CASES}
