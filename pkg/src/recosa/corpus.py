"""Dialogue corpora: parsing, vocabularies, truncation and padded batches.

Corpus files are UTF-8 with one session per line. Utterances are separated
by TABs, the last field is the response and the ones before it are the
contexts in chronological order (the post last). Tokens are space separated.
Relevance labels live in an optional sidecar with the same line order and
one space-separated 0/1 flag per context.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, SOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<sos>", "<eos>")


class CorpusFormatError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {msg}")


@dataclass
class Session:
    contexts: list[str]
    response: str
    relevance_labels: list[int] | None = None

    def __post_init__(self):
        if not self.contexts:
            raise ValueError("a session needs at least one context")
        if not self.response.split():
            raise ValueError("empty response")
        if self.relevance_labels is not None and len(self.relevance_labels) != len(self.contexts):
            raise ValueError(f"{len(self.relevance_labels)} labels for {len(self.contexts)} contexts")


class Vocab:
    """Token/id bijection with the four reserved ids fixed at 0..3."""

    def __init__(self, tokens: Sequence[str] = (), cap: int | None = None):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        self.cap = cap
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token in self.stoi:
            return self.stoi[token]
        if self.cap is not None and len(self.itos) >= self.cap:
            raise ValueError(f"vocabulary is full (cap={self.cap})")
        self.stoi[token] = len(self.itos)
        self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, SOS):
                continue
            out.append(self.itos[i])
        return out

    def to_text(self) -> str:
        return "".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        from .util import atomic_write_text
        atomic_write_text(path, self.to_text())

    @classmethod
    def load(cls, path) -> "Vocab":
        v = cls()
        v.itos, v.stoi = [], {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) != len(v.itos):
                raise CorpusFormatError(path, lineno, "expected 'token<TAB>id' with consecutive ids")
            v.stoi[parts[0]] = len(v.itos)
            v.itos.append(parts[0])
        if tuple(v.itos[:4]) != RESERVED:
            raise CorpusFormatError(path, 1, "reserved tokens missing or reordered")
        return v


def load_corpus(path, format: str = "tsv", labels_path=None) -> list[Session]:
    """Parse a session file (and optional label sidecar) into sessions."""
    if format != "tsv":
        raise ValueError(f"unknown corpus format {format!r}")
    sessions = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.rstrip("\r").split("\t")
        if len(fields) < 2:
            raise CorpusFormatError(path, lineno, f"need at least 2 TAB-separated fields, got {len(fields)}")
        if not fields[-1].split():
            raise CorpusFormatError(path, lineno, "empty response")
        sessions.append(Session(fields[:-1], fields[-1]))
    if labels_path is not None:
        labels = load_labels(labels_path)
        if len(labels) != len(sessions):
            raise CorpusFormatError(labels_path, len(labels), f"{len(labels)} label rows for {len(sessions)} sessions")
        for lineno, (s, lab) in enumerate(zip(sessions, labels), 1):
            if len(lab) != len(s.contexts):
                raise CorpusFormatError(labels_path, lineno, f"{len(lab)} labels for {len(s.contexts)} contexts")
            s.relevance_labels = lab
    return sessions


def load_labels(path) -> list[list[int]]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        toks = line.split()
        if not toks or any(t not in ("0", "1") for t in toks):
            raise CorpusFormatError(path, lineno, "labels must be space-separated 0/1")
        rows.append([int(t) for t in toks])
    return rows


def build_vocab(sessions: Iterable[Session], cap: int) -> Vocab:
    """Most frequent tokens first, ties broken lexicographically."""
    if cap < 5:
        raise ValueError("vocabulary cap must be at least 5")
    counts: Counter[str] = Counter()
    for s in sessions:
        for utt in (*s.contexts, s.response):
            counts.update(utt.split())
    for r in RESERVED:
        counts.pop(r, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([t for t, _ in ranked[: cap - len(RESERVED)]], cap=cap)


@dataclass
class EncodedSession:
    ctx_ids: list[list[int]]
    resp_in: list[int]
    resp_out: list[int]
    labels: list[int] | None = None


def encode_session(s: Session, v: Vocab, max_turns: int = 15, max_sent_len: int = 50) -> EncodedSession:
    """Keep the most recent ``max_turns`` contexts, clip sentences, add SOS/EOS."""
    ctxs = s.contexts[-max_turns:]
    ctx_ids = [v.encode(c.split()[:max_sent_len]) for c in ctxs]
    resp = v.encode(s.response.split()[: max_sent_len - 1])
    if not resp:
        raise ValueError("response is empty after truncation")
    labels = None if s.relevance_labels is None else list(s.relevance_labels[-max_turns:])
    return EncodedSession(ctx_ids, [SOS] + resp, resp + [EOS], labels)


@dataclass
class Batch:
    ctx_tokens: np.ndarray  # [B, N_max, M_max]
    ctx_len: np.ndarray     # [B, N_max]
    ctx_count: np.ndarray   # [B]
    resp_in: np.ndarray     # [B, T_max]
    resp_out: np.ndarray    # [B, T_max]
    resp_mask: np.ndarray   # [B, T_max], 1.0 on real targets incl. EOS
    labels: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.ctx_tokens.shape[0]

    @property
    def ctx_mask(self) -> np.ndarray:
        """``[B, N_max]`` bool, True on real context slots."""
        n = self.ctx_tokens.shape[1]
        return np.arange(n)[None, :] < self.ctx_count[:, None]


def make_batch(encoded: Sequence[EncodedSession], B: int | None = None) -> Batch:
    """Right-pad a list of sessions to the largest N, M and T among them."""
    if not encoded or (B is not None and len(encoded) > B):
        raise ValueError(f"batch needs 1..{B} sessions, got {len(encoded)}")
    b = len(encoded)
    n_max = max(len(e.ctx_ids) for e in encoded)
    m_max = max(1, max(len(c) for e in encoded for c in e.ctx_ids))
    t_max = max(len(e.resp_in) for e in encoded)
    ctx = np.full((b, n_max, m_max), PAD, dtype=np.int64)
    ctx_len = np.zeros((b, n_max), dtype=np.int64)
    resp_in = np.full((b, t_max), PAD, dtype=np.int64)
    resp_out = np.full((b, t_max), PAD, dtype=np.int64)
    mask = np.zeros((b, t_max))
    for i, e in enumerate(encoded):
        for j, c in enumerate(e.ctx_ids):
            ctx[i, j, : len(c)] = c
            ctx_len[i, j] = len(c)
        t = len(e.resp_in)
        resp_in[i, :t] = e.resp_in
        resp_out[i, :t] = e.resp_out
        mask[i, :t] = 1.0
    count = np.array([len(e.ctx_ids) for e in encoded], dtype=np.int64)
    return Batch(ctx, ctx_len, count, resp_in, resp_out, mask, [e.labels for e in encoded])
