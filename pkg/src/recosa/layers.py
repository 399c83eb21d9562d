"""Neural building blocks: LSTM sentence encoder, position tables, attention, FFN."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .numcore import Tensor, ops


def _param(arr, name) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


class ParamGroup:
    """Mixin for dataclasses whose fields are Tensors or nested groups."""

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            key = f"{prefix}{f.name}"
            if isinstance(val, Tensor):
                out[key] = val
            elif isinstance(val, ParamGroup):
                out.update(val.named(key + "."))
        return out


@dataclass
class LSTMParams(ParamGroup):
    """Gate weights act on ``[h_{k-1}, w_k]`` (hidden state first)."""

    w_i: Tensor
    w_f: Tensor
    w_o: Tensor
    w_l: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_l: Tensor

    @property
    def d_h(self) -> int:
        return self.w_i.shape[1]

    @classmethod
    def init(cls, d_w: int, d_h: int, rng: np.random.Generator, scale: float = 0.08):
        ws = {g: _param(rng.uniform(-scale, scale, (d_h + d_w, d_h)), f"w_{g}") for g in "ifol"}
        bs = {g: _param(np.zeros(d_h), f"b_{g}") for g in "ifol"}
        return cls(ws["i"], ws["f"], ws["o"], ws["l"], bs["i"], bs["f"], bs["o"], bs["l"])


@dataclass
class PositionTable(ParamGroup):
    table: Tensor  # [max_positions, d_p]

    @classmethod
    def init(cls, n: int, d: int, rng: np.random.Generator, scale: float = 0.1):
        return cls(_param(rng.normal(0.0, scale, (n, d)), "table"))


@dataclass
class Affine(ParamGroup):
    w: Tensor
    b: Tensor

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator):
        lim = 1.0 / math.sqrt(d_in)
        return cls(_param(rng.uniform(-lim, lim, (d_in, d_out)), "w"), _param(np.zeros(d_out), "b"))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)


@dataclass
class MultiHeadParams(ParamGroup):
    """Per-head projections stored side by side: columns ``[i*d/H:(i+1)*d/H]`` of
    ``wq``/``wk``/``wv`` are head i's maps. ``wo`` mixes the concatenated heads."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    def __post_init__(self):
        d = self.wq.shape[1]
        if d % self.heads:
            raise ValueError(f"model dim {d} is not divisible by {self.heads} heads")

    @property
    def d(self) -> int:
        return self.wq.shape[1]

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator, d_in: int | None = None):
        if d % heads:
            raise ValueError(f"model dim {d} is not divisible by {heads} heads")
        d_in = d if d_in is None else d_in
        lim_in, lim = 1.0 / math.sqrt(d_in), 1.0 / math.sqrt(d)
        return cls(
            _param(rng.uniform(-lim_in, lim_in, (d_in, d)), "wq"),
            _param(rng.uniform(-lim_in, lim_in, (d_in, d)), "wk"),
            _param(rng.uniform(-lim_in, lim_in, (d_in, d)), "wv"),
            _param(rng.uniform(-lim, lim, (d, d)), "wo"),
            heads,
        )


@dataclass
class FFNParams(ParamGroup):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, d: int, d_ff: int, rng: np.random.Generator):
        l1, l2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(d_ff)
        return cls(_param(rng.uniform(-l1, l1, (d, d_ff)), "w1"), _param(np.zeros(d_ff), "b1"),
                   _param(rng.uniform(-l2, l2, (d_ff, d)), "w2"), _param(np.zeros(d), "b2"))


@dataclass
class LayerNormParams(ParamGroup):
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int):
        return cls(_param(np.ones(d), "gain"), _param(np.zeros(d), "bias"))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)


def lstm_encode(word_embeddings: Tensor, params: LSTMParams, lengths=None) -> Tensor:
    """Run the LSTM over ``[M, d_w]`` (or a stack ``[S, M, d_w]``) and return h_M.

    ``h_0 = c_0 = 0``. With ``lengths``, steps at or past a sentence's length
    leave its state untouched, so padding never leaks into h_M; a length of 0
    yields the zero vector.
    """
    single = word_embeddings.ndim == 2
    x = ops.reshape(word_embeddings, (1,) + word_embeddings.shape) if single else word_embeddings
    s, m, _ = x.shape
    if m == 0:
        raise ValueError("lstm_encode needs at least one word")
    if lengths is None:
        lengths = np.full(s, m)
    lengths = np.asarray(lengths).reshape(s)
    d_h = params.d_h
    w = ops.concat([params.w_i, params.w_f, params.w_o, params.w_l])
    b = ops.concat([params.b_i, params.b_f, params.b_o, params.b_l])
    h = Tensor(np.zeros((s, d_h)))
    c = Tensor(np.zeros((s, d_h)))
    for k in range(m):
        live = k < lengths
        if not live.any():
            break
        z = ops.add_bias(ops.matmul(ops.concat([h, ops.select(x, 1, k)]), w), b)
        i = ops.sigmoid(ops.slice_last(z, 0, d_h))
        f = ops.sigmoid(ops.slice_last(z, d_h, 2 * d_h))
        o = ops.sigmoid(ops.slice_last(z, 2 * d_h, 3 * d_h))
        l = ops.tanh(ops.slice_last(z, 3 * d_h, 4 * d_h))
        c_new = ops.add(ops.mul(f, c), ops.mul(i, l))
        h_new = ops.mul(o, ops.tanh(c_new))
        if live.all():
            c, h = c_new, h_new
        else:
            keep = np.repeat(live[:, None], d_h, axis=1)
            c = ops.where(keep, c_new, c)
            h = ops.where(keep, h_new, h)
    return ops.reshape(h, (d_h,)) if single else h


def causal_mask(T: int) -> np.ndarray:
    """Additive ``[T, T]`` mask: 0 where key position <= query position, else -inf."""
    if T < 1:
        raise ValueError("causal_mask needs T >= 1")
    m = np.zeros((T, T))
    m[np.triu_indices(T, k=1)] = -np.inf
    return m


def key_padding_mask(valid: np.ndarray, n_q: int) -> np.ndarray:
    """``[B, n_q, n_k]`` additive mask from a ``[B, n_k]`` bool validity array."""
    add = np.where(valid, 0.0, -np.inf)
    return np.repeat(add[:, None, :], n_q, axis=1)


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, mask=None):
    """``softmax(Q K^T / sqrt(d_k) + mask) V``; returns (output, weights).

    Inputs are ``[n, d]`` or batched ``[B, n, d]``. Weights come back as a
    numpy array so callers can inspect them without touching the tape.
    """
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError(f"query/key dims differ: {Q.shape} vs {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise ValueError(f"key/value counts differ: {K.shape} vs {V.shape}")
    single = Q.ndim == 2
    if single:
        Q, K, V = (ops.reshape(t, (1,) + t.shape) for t in (Q, K, V))
        if mask is not None:
            mask = np.asarray(mask)[None]
    scores = ops.scale(ops.matmul(Q, ops.transpose(K, (0, 2, 1))), 1.0 / math.sqrt(Q.shape[-1]))
    w = ops.softmax(scores, axis=-1, mask=mask)
    out = ops.matmul(w, V)
    if single:
        return ops.reshape(out, out.shape[1:]), w.data[0]
    return out, w.data


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    x = ops.transpose(ops.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))
    return ops.reshape(x, (b * heads, n, d // heads))


def multi_head(Q: Tensor, K: Tensor, V: Tensor, mask, params: MultiHeadParams):
    """Multi-head attention; returns (output ``[.., n_q, d]``, weights ``[.., H, n_q, n_k]``).

    Each head attends in its own d/H subspace, the heads are concatenated and
    mixed by ``wo``. ``mask`` is ``[n_q, n_k]`` or ``[B, n_q, n_k]`` (shared
    across heads).
    """
    single = Q.ndim == 2
    if single:
        Q, K, V = (ops.reshape(t, (1,) + t.shape) for t in (Q, K, V))
        if mask is not None:
            mask = np.asarray(mask)[None]
    b, n_q, _ = Q.shape
    n_k = K.shape[1]
    H, d = params.heads, params.d
    q = _split_heads(ops.linear(Q, params.wq), H)
    k = _split_heads(ops.linear(K, params.wk), H)
    v = _split_heads(ops.linear(V, params.wv), H)
    if mask is not None:
        mask = np.repeat(np.asarray(mask, dtype=np.float64), H, axis=0)
    heads_out, w = scaled_dot_attention(q, k, v, mask)
    merged = ops.transpose(ops.reshape(heads_out, (b, H, n_q, d // H)), (0, 2, 1, 3))
    out = ops.linear(ops.reshape(merged, (b, n_q, d)), params.wo)
    w = w.reshape(b, H, n_q, n_k)
    if single:
        return ops.reshape(out, (n_q, d)), w[0]
    return out, w


def concat_positions(sentence_vecs: Tensor, table: PositionTable) -> Tensor:
    """Row i becomes ``[h^{s_i}, P_i]``; positions run 1..N left to right (table row i-1)."""
    single = sentence_vecs.ndim == 2
    n = sentence_vecs.shape[-2]
    if n > table.table.shape[0]:
        raise ValueError(f"{n} contexts exceed the position table ({table.table.shape[0]})")
    pos = ops.take_rows(table.table, np.arange(n) if single
                        else np.tile(np.arange(n), (sentence_vecs.shape[0], 1)))
    return ops.concat([sentence_vecs, pos])


def add_context_positions(sentence_vecs: Tensor, table: PositionTable, proj: Affine | None = None) -> Tensor:
    """Concatenate position embeddings, then project to the model dim if ``proj`` is given."""
    x = concat_positions(sentence_vecs, table)
    return x if proj is None else proj(x)


def feed_forward(x: Tensor, params: FFNParams, residual: bool = True) -> Tensor:
    """Rowwise ``W2 relu(W1 x + b1) + b2``, plus ``x`` when ``residual``."""
    y = ops.linear(ops.relu(ops.linear(x, params.w1, params.b1)), params.w2, params.b2)
    return ops.add(x, y) if residual else y
