"""Greedy decoding and cross-attention extraction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EOS, SOS, EncodedSession, make_batch
from .util import atomic_write_text

CSV_HEADER = ["head", "step", "ctx_index", "weight"]


@dataclass
class AttentionRecord:
    """Cross-attention weights ``[H, T, N]`` for one session (step t predicts token t)."""

    weights: np.ndarray
    n_contexts: int
    tokens: list[int] = field(default_factory=list)

    @property
    def heads(self) -> int:
        return self.weights.shape[0]

    @property
    def steps(self) -> int:
        return self.weights.shape[1]

    def context_scores(self, how: str = "mean") -> np.ndarray:
        """Per-head score of each context, aggregated over decoding steps: ``[H, N]``."""
        agg = {"mean": np.mean, "sum": np.sum, "max": np.max}[how]
        return agg(self.weights, axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        H, T, N = self.weights.shape
        for h in range(H):
            for t in range(T):
                for i in range(N):
                    w.writerow([h, t, i, repr(float(self.weights[h, t, i]))])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, path) -> "AttentionRecord":
        return parse_attention_csv(Path(path).read_text(encoding="utf-8"), str(path))


class AttentionFormatError(ValueError):
    pass


def parse_attention_csv(text: str, source: str = "<string>") -> AttentionRecord:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != CSV_HEADER:
        raise AttentionFormatError(f"{source}: row 1: expected header {','.join(CSV_HEADER)}")
    cells = {}
    for rowno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        try:
            if len(row) != 4:
                raise ValueError
            h, t, i, wt = int(row[0]), int(row[1]), int(row[2]), float(row[3])
            if min(h, t, i) < 0 or not np.isfinite(wt) or wt < 0:
                raise ValueError
        except ValueError:
            raise AttentionFormatError(f"{source}: row {rowno}: malformed entry {','.join(row)!r}") from None
        cells[(h, t, i)] = wt
    if not cells:
        raise AttentionFormatError(f"{source}: no attention rows")
    H = 1 + max(k[0] for k in cells)
    T = 1 + max(k[1] for k in cells)
    N = 1 + max(k[2] for k in cells)
    if len(cells) != H * T * N:
        raise AttentionFormatError(f"{source}: grid is incomplete ({len(cells)} of {H * T * N} cells)")
    w = np.zeros((H, T, N))
    for (h, t, i), v in cells.items():
        w[h, t, i] = v
    return AttentionRecord(w, N)


def _context_batch(contexts: Sequence[Sequence[int]], resp_in: Sequence[int]):
    enc = EncodedSession([list(c) for c in contexts], list(resp_in), list(resp_in[1:]) + [EOS])
    return make_batch([enc])


def generate_greedy(model, contexts: Sequence[Sequence[int]], max_len: int = 20):
    """Decode from SOS by argmax (ties go to the lowest id) until EOS or ``max_len``.

    Each step re-encodes the whole generated prefix. The returned tokens
    exclude EOS; the record has one row per emitted step, EOS step included.
    """
    if not 1 <= len(contexts) <= model.config.max_turns:
        raise ValueError(f"need 1..{model.config.max_turns} contexts, got {len(contexts)}")
    max_len = min(max_len, model.config.max_sent_len - 1)
    batch = _context_batch(contexts, [SOS])
    ctx, valid = model.encode_contexts(batch)
    prefix = [SOS]
    rows = []
    for _ in range(max_len + 1):
        resp = model.encode_response(np.array([prefix]))
        dec, attn = model.cross_attend(ctx, valid, resp)
        probs = model.word_distribution(dec).data[0, -1]
        rows.append(attn[0, :, -1, :])
        tok = int(np.argmax(probs))
        if tok == EOS:
            break
        prefix.append(tok)
        if len(prefix) > max_len:
            break
    weights = np.stack(rows, axis=1)
    return prefix[1:], AttentionRecord(weights, len(contexts), prefix[1:])


def step_distributions(model, contexts: Sequence[Sequence[int]], response: Sequence[int]) -> np.ndarray:
    """Teacher-forced word distributions ``[T+1, V]`` for ``[SOS] + response``."""
    probs, _ = model.forward(_context_batch(contexts, [SOS] + list(response)))
    return probs.data[0]


def extract_attention(model, contexts: Sequence[Sequence[int]], response: Sequence[int]) -> AttentionRecord:
    """Teacher-forced cross-attention ``[H, T, N]``, ``T = len(response) + 1``."""
    if not response:
        raise ValueError("extract_attention needs a non-empty response")
    _, attn = model.forward(_context_batch(contexts, [SOS] + list(response)))
    return AttentionRecord(attn[0].copy(), len(contexts), list(response))
