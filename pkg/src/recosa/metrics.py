"""Evaluation: perplexity, BLEU, distinct-n, relevance ranking and dis2resp."""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .corpus import EncodedSession, make_batch

BLEU_NOTE = ("corpus BLEU, n=1..4, uniform weights, brevity penalty; "
             "a zero match count for n>=2 is smoothed to (0+1)/(total+1); x100")


def perplexity(model, data: Sequence[EncodedSession], batch_size: int = 32) -> float:
    """``exp`` of the mean per-token NLL over ``data``."""
    if not data:
        raise ValueError("perplexity of an empty dataset")
    total, count = 0.0, 0
    for i in range(0, len(data), batch_size):
        s, c = model.nll(make_batch(data[i:i + batch_size]))
        total += s
        count += c
    return math.exp(total / count)


def ngrams(tokens: Sequence[str], n: int) -> list[tuple]:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def bleu(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 100] with a single reference per hypothesis.

    Clipped n-gram matches and totals are summed over the corpus. Unigram
    precision is never smoothed, so zero unigram overlap scores 0.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    if not hypotheses:
        raise ValueError("BLEU of an empty corpus")
    match = [0] * (max_n + 1)
    total = [0] * (max_n + 1)
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = Counter(ngrams(hyp, n)), Counter(ngrams(ref, n))
            match[n] += sum(min(c, r[g]) for g, c in h.items())
            total[n] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0 or match[1] == 0:
        return 0.0
    log_p = math.log(match[1] / total[1])
    for n in range(2, max_n + 1):
        m = match[n] if match[n] > 0 else 1
        t = total[n] if match[n] > 0 else total[n] + 1
        log_p += math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def distinct_n(hypotheses: Iterable[Sequence[str]], n: int) -> float:
    """Distinct n-grams over total n-grams across all hypotheses (a ratio in (0, 1])."""
    if n not in (1, 2):
        raise ValueError("distinct-n is defined here for n in {1, 2}")
    grams = [g for h in hypotheses for g in ngrams(list(h), n)]
    if not grams:
        raise ValueError(f"no hypothesis has at least {n} tokens")
    return len(set(grams)) / len(grams)


def rank_contexts(scores: Sequence[float]) -> list[int]:
    """Indices by descending score; equal scores keep the earlier context first."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def _prf_at_k(scores, labels, k):
    order = rank_contexts(scores)
    kk = min(k, len(scores))
    hits = sum(labels[i] for i in order[:kk])
    pos = sum(labels)
    p, r = hits / kk, hits / pos
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def relevance_ranking(ctx_scores: Sequence[Sequence[float]], labels: Sequence[Sequence[int]],
                      ks: Sequence[int] = (1, 3, 5, 10), exclude_post: bool = False) -> dict:
    """Macro-averaged P@k, R@k and F1@k of context rankings against binary labels.

    ``ctx_scores[e]`` has one score per context of example e, the post last.
    With ``exclude_post`` the post's score is dropped; its labels may then be
    given either with the post (dropped too) or already without it.
    Examples lacking any positive label are skipped and counted.
    """
    if len(ctx_scores) != len(labels):
        raise ValueError("scores and labels differ in example count")
    sums = {k: np.zeros(3) for k in ks}
    used = skipped = 0
    for sc, lab in zip(ctx_scores, labels):
        sc, lab = list(sc), list(lab)
        if exclude_post:
            sc = sc[:-1]
            if len(lab) == len(sc) + 1:
                lab = lab[:-1]
        if len(sc) != len(lab):
            raise ValueError(f"{len(sc)} scores vs {len(lab)} labels")
        if not sc or sum(lab) == 0:
            skipped += 1
            continue
        used += 1
        for k in ks:
            sums[k] += _prf_at_k(sc, lab, k)
    out = {"examples": used, "skipped": skipped}
    for k in ks:
        p, r, f = sums[k] / used if used else (math.nan,) * 3
        out[f"P@{k}"], out[f"R@{k}"], out[f"F1@{k}"] = float(p), float(r), float(f)
    return out


def dis2resp(weights: Sequence[float]) -> float:
    """Attention-weighted distance to the response: ``sum_i (N-i+1)/(N+1) w_i``, i = 1..N.

    The post (i = N) sits at distance 1/(N+1), the first context at N/(N+1).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0 or (w < 0).any():
        raise ValueError("weights must be a non-empty vector of non-negative values")
    s = w.sum()
    if abs(s - 1.0) > 1e-6:
        raise ValueError(f"weights sum to {s}, not 1")
    w = w / s
    N = w.size
    dist = (N - np.arange(1, N + 1) + 1) / (N + 1)
    return float(dist @ w)


def all_relevant_error_rate(labels: Sequence[Sequence[int]]) -> float:
    """Fraction of examples where not every context is labelled relevant."""
    if not labels:
        return 0.0
    return sum(0 if all(l == 1 for l in lab) else 1 for lab in labels) / len(labels)
