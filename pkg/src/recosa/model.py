"""The relevant-context self-attention dialogue model.

Three stacks share one word embedding table:

* context encoder: LSTM per sentence, concatenated position embeddings,
  projection to the model dim, self-attention over sentence slots, FFN;
* response encoder: word plus position embeddings under causal self-attention;
* decoder: response states query the context states, FFN, softmax over words.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .corpus import Batch
from .layers import (
    Affine,
    FFNParams,
    LayerNormParams,
    LSTMParams,
    MultiHeadParams,
    ParamGroup,
    PositionTable,
    _param,
    causal_mask,
    feed_forward,
    key_padding_mask,
    lstm_encode,
    multi_head,
    add_context_positions,
)
from .numcore import Tensor, ops

# reference-scale sizes; 512 % 6 != 0, so they cannot form a valid config together
REFERENCE_HIDDEN = 512
REFERENCE_HEADS = 6


@dataclass
class ModelConfig:
    vocab_size: int
    d: int = 64
    heads: int = 4
    d_w: int | None = None
    d_h: int | None = None
    d_ff: int | None = None
    max_turns: int = 15
    max_sent_len: int = 50
    n_blocks: int = 1
    residual: bool = True
    layernorm: bool = True
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.d_w = self.d if self.d_w is None else self.d_w
        self.d_h = self.d if self.d_h is None else self.d_h
        self.d_ff = 2 * self.d if self.d_ff is None else self.d_ff
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        for name in ("vocab_size", "d", "heads", "d_w", "d_h", "d_ff", "max_turns", "max_sent_len", "n_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ContextBlock(ParamGroup):
    attn: MultiHeadParams
    ffn: FFNParams
    attn_ln: LayerNormParams | None = None
    ffn_ln: LayerNormParams | None = None


@dataclass
class ResponseBlock(ParamGroup):
    attn: MultiHeadParams
    attn_ln: LayerNormParams | None = None


@dataclass
class DecoderBlock(ParamGroup):
    attn: MultiHeadParams
    ffn: FFNParams
    attn_ln: LayerNormParams | None = None
    ffn_ln: LayerNormParams | None = None


@dataclass
class ReCoSaParams:
    embed: Tensor
    lstm: LSTMParams
    ctx_pos: PositionTable
    ctx_proj: Affine
    resp_pos: PositionTable
    ctx_blocks: list[ContextBlock]
    resp_blocks: list[ResponseBlock]
    dec_blocks: list[DecoderBlock]
    out: Tensor  # softmax projection [d, V]; distinct from the LSTM output gate
    resp_proj: Affine | None = None

    def named(self) -> dict[str, Tensor]:
        out = {"embed": self.embed}
        out.update(self.lstm.named("lstm."))
        out.update(self.ctx_pos.named("ctx_pos."))
        out.update(self.ctx_proj.named("ctx_proj."))
        out.update(self.resp_pos.named("resp_pos."))
        if self.resp_proj is not None:
            out.update(self.resp_proj.named("resp_proj."))
        for tag in ("ctx_blocks", "resp_blocks", "dec_blocks"):
            for i, blk in enumerate(getattr(self, tag)):
                out.update(blk.named(f"{tag}.{i}."))
        out["out"] = self.out
        return out

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator | None = None) -> "ReCoSaParams":
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        d, H = cfg.d, cfg.heads
        ln = (lambda: LayerNormParams.init(d)) if cfg.layernorm else (lambda: None)
        embed = _param(rng.normal(0.0, 0.1, (cfg.vocab_size, cfg.d_w)), "embed")
        lstm = LSTMParams.init(cfg.d_w, cfg.d_h, rng)
        ctx_pos = PositionTable.init(cfg.max_turns, cfg.d_h, rng)
        ctx_proj = Affine.init(2 * cfg.d_h, d, rng)
        resp_pos = PositionTable.init(cfg.max_sent_len, d, rng)
        resp_proj = Affine.init(cfg.d_w, d, rng) if cfg.d_w != d else None
        ctx_blocks = [ContextBlock(MultiHeadParams.init(d, H, rng), FFNParams.init(d, cfg.d_ff, rng), ln(), ln())
                      for _ in range(cfg.n_blocks)]
        resp_blocks = [ResponseBlock(MultiHeadParams.init(d, H, rng), ln()) for _ in range(cfg.n_blocks)]
        dec_blocks = [DecoderBlock(MultiHeadParams.init(d, H, rng), FFNParams.init(d, cfg.d_ff, rng), ln(), ln())
                      for _ in range(cfg.n_blocks)]
        lim = 0.1 / math.sqrt(d)
        out = _param(rng.uniform(-lim, lim, (d, cfg.vocab_size)), "out")
        return cls(embed, lstm, ctx_pos, ctx_proj, resp_pos, ctx_blocks, resp_blocks, dec_blocks, out, resp_proj)


class ReCoSa:
    def __init__(self, config: ModelConfig, params: ReCoSaParams | None = None):
        self.config = config
        self.params = ReCoSaParams.init(config) if params is None else params

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params.named()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.named_parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        named = self.named_parameters()
        if set(named) != set(arrays):
            missing, extra = set(named) - set(arrays), set(arrays) - set(named)
            raise ValueError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in named.items():
            if t.shape != arrays[k].shape:
                raise ValueError(f"parameter {k}: shape {arrays[k].shape} != {t.shape}")
            t.data = np.array(arrays[k], dtype=np.float64)

    # -- sublayers -------------------------------------------------------

    def _residual(self, x: Tensor, sub: Tensor, ln: LayerNormParams | None, rng) -> Tensor:
        sub = ops.dropout(sub, self.config.dropout, rng)
        y = ops.add(x, sub) if self.config.residual else sub
        return ln(y) if ln is not None else y

    def _ffn(self, x: Tensor, ffn: FFNParams, ln: LayerNormParams | None) -> Tensor:
        y = feed_forward(x, ffn, residual=self.config.residual)
        return ln(y) if ln is not None else y

    # -- the three components --------------------------------------------

    def encode_contexts(self, batch: Batch, rng=None):
        """Context attention representation ``[B, N, d]`` and the ``[B, N]`` slot mask."""
        p = self.params
        B, N, M = batch.ctx_tokens.shape
        if N > self.config.max_turns:
            raise ValueError(f"{N} contexts exceed max_turns={self.config.max_turns}")
        emb = ops.take_rows(p.embed, batch.ctx_tokens.reshape(B * N, M))
        h = lstm_encode(emb, p.lstm, lengths=batch.ctx_len.reshape(-1))
        x = add_context_positions(ops.reshape(h, (B, N, self.config.d_h)), p.ctx_pos, p.ctx_proj)
        valid = batch.ctx_mask
        mask = key_padding_mask(valid, N)
        for blk in p.ctx_blocks:
            a, _ = multi_head(x, x, x, mask, blk.attn)
            x = self._residual(x, a, blk.attn_ln, rng)
            x = self._ffn(x, blk.ffn, blk.ffn_ln)
        return x, valid

    def encode_response(self, resp_in: np.ndarray, rng=None) -> Tensor:
        """Causally masked response representation ``[B, T, d]``."""
        p = self.params
        resp_in = np.asarray(resp_in)
        B, T = resp_in.shape
        if T > p.resp_pos.table.shape[0]:
            raise ValueError(f"response length {T} exceeds max_sent_len={p.resp_pos.table.shape[0]}")
        emb = ops.take_rows(p.embed, resp_in)
        if p.resp_proj is not None:
            emb = p.resp_proj(emb)
        x = ops.add(emb, ops.take_rows(p.resp_pos.table, np.tile(np.arange(T), (B, 1))))
        mask = np.broadcast_to(causal_mask(T), (B, T, T))
        for blk in p.resp_blocks:
            a, _ = multi_head(x, x, x, mask, blk.attn)
            x = self._residual(x, a, blk.attn_ln, rng)
        return x

    def cross_attend(self, ctx_repr: Tensor, ctx_valid: np.ndarray, resp_repr: Tensor, rng=None):
        """Decoder states ``[B, T, d]`` and last-block cross weights ``[B, H, T, N]``."""
        T = resp_repr.shape[1]
        mask = key_padding_mask(ctx_valid, T)
        x, w = resp_repr, None
        for blk in self.params.dec_blocks:
            a, w = multi_head(x, ctx_repr, ctx_repr, mask, blk.attn)
            x = self._residual(x, a, blk.attn_ln, rng)
            x = self._ffn(x, blk.ffn, blk.ffn_ln)
        return x, w

    def word_distribution(self, dec_repr: Tensor) -> Tensor:
        """Per-step softmax over the vocabulary, ``[B, T, V]``."""
        return ops.softmax(ops.linear(dec_repr, self.params.out), axis=-1)

    def forward(self, batch: Batch, rng=None):
        ctx, valid = self.encode_contexts(batch, rng)
        resp = self.encode_response(batch.resp_in, rng)
        dec, attn = self.cross_attend(ctx, valid, resp, rng)
        return self.word_distribution(dec), attn

    def loss(self, batch: Batch, rng=None) -> Tensor:
        probs, _ = self.forward(batch, rng)
        return sequence_nll(probs, batch.resp_out, batch.resp_mask)

    def nll(self, batch: Batch) -> tuple[float, int]:
        """Summed token NLL and the token count, computed without a tape."""
        probs, _ = self.forward(batch)
        p = np.take_along_axis(probs.data, batch.resp_out[..., None], axis=-1)[..., 0]
        m = batch.resp_mask > 0
        return float(-np.log(p[m]).sum()), int(m.sum())


def sequence_nll(probs: Tensor, resp_out: np.ndarray, resp_mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood per unmasked target token."""
    resp_mask = np.asarray(resp_mask, dtype=np.float64)
    count = float(resp_mask.sum())
    if count == 0:
        raise ValueError("sequence_nll: no unmasked target tokens")
    picked = ops.pick_last(probs, resp_out)
    keep = resp_mask > 0
    # masked slots read log(1) so their targets cannot matter at all
    safe = ops.where(keep, picked, Tensor(np.ones(picked.shape)))
    logp = ops.mul_const(ops.log(safe), resp_mask)
    return ops.scale(ops.sum(logp), -1.0 / count)
