"""Synthetic corpora for the desk-scale experiments.

``toy_corpus`` is a small templated customer-service corpus meant to be
memorised. ``copy_task`` builds sessions whose response repeats exactly one
context, marked by a sentinel token, so the relevant context is known.
"""

from __future__ import annotations

import itertools
from importlib import resources
from pathlib import Path

import numpy as np

from .corpus import Session
from .util import atomic_write_text

SENTINEL = "@"

_ITEMS = ["order", "parcel", "invoice", "password", "coupon", "account", "refund", "phone"]
_PROBLEMS = [
    ("is broken", "replace"),
    ("never arrived", "resend"),
    ("was charged twice", "refund"),
    ("shows the wrong name", "correct"),
]
_GREETINGS = ["hello there", "hi", "good morning", "hey service"]


def toy_corpus() -> tuple[list[Session], list[Session]]:
    """32 training sessions (every item x problem pair) and 8 validation sessions.

    Labels mark the contexts that name the item or the problem, which are the
    two facts the response depends on.
    """
    train, valid = [], []
    for n, (item, (problem, action)) in enumerate(itertools.product(_ITEMS, _PROBLEMS)):
        greet = _GREETINGS[n % len(_GREETINGS)]
        ctx = [f"{greet} i need help with my {item}",
               f"sure , what happened to the {item} ?",
               f"it {problem}"]
        resp = f"sorry , i will {action} the {item} for you today"
        train.append(Session(ctx, resp, [1, 0, 1]))
    for k, item in enumerate(_ITEMS):
        problem, action = _PROBLEMS[(k + 1) % len(_PROBLEMS)]
        ctx = [f"{_GREETINGS[(k + 2) % 4]}",
               f"my {item} {problem}",
               "can you do something ?"]
        resp = f"sorry , i will {action} the {item} for you today"
        valid.append(Session(ctx, resp, [0, 1, 0]))
    return train, valid


def copy_task(n_sessions: int = 2000, n_contexts: int = 5, sent_len: int = 4, n_words: int = 20,
              seed: int = 0) -> list[Session]:
    """Random-token contexts; one, chosen uniformly, is prefixed by the sentinel
    and the response copies its words."""
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(n_words)]
    out = []
    for _ in range(n_sessions):
        ctx_words = [[words[j] for j in rng.integers(n_words, size=sent_len)] for _ in range(n_contexts)]
        target = int(rng.integers(n_contexts))
        ctxs = [" ".join(([SENTINEL] if i == target else []) + ws) for i, ws in enumerate(ctx_words)]
        labels = [int(i == target) for i in range(n_contexts)]
        out.append(Session(ctxs, " ".join(ctx_words[target]), labels))
    return out


def write_corpus(sessions, path, labels_path=None) -> None:
    atomic_write_text(path, "".join("\t".join([*s.contexts, s.response]) + "\n" for s in sessions))
    if labels_path is not None:
        atomic_write_text(labels_path, "".join(" ".join(map(str, s.relevance_labels)) + "\n" for s in sessions))


def bundled(name: str) -> Path:
    """Path of a file shipped in ``recosa/data`` (toy corpus, labels, config)."""
    return Path(str(resources.files("recosa") / "data" / name))


def memorization_run(steps: int = 2000, lr: float = 1e-3, d: int = 32, heads: int = 2, seed: int = 0) -> dict:
    """Train on the toy corpus and report training PPL, exact greedy matches and wall time."""
    import time

    from .corpus import build_vocab, encode_session
    from .inference import generate_greedy
    from .metrics import perplexity
    from .model import ModelConfig, ReCoSa
    from .trainer import TrainConfig, train

    tr, va = toy_corpus()
    vocab = build_vocab(tr + va, 1000)
    enc = [encode_session(s, vocab) for s in tr]
    model = ReCoSa(ModelConfig(vocab_size=len(vocab), d=d, heads=heads, seed=seed))
    t0 = time.perf_counter()
    result = train(model, enc, None, TrainConfig(lr=lr, max_steps=steps, eval_interval=steps, seed=seed))
    seconds = time.perf_counter() - t0
    exact = sum(generate_greedy(model, e.ctx_ids, 30)[0] == e.resp_out[:-1] for e in enc)
    return {"model": model, "vocab": vocab, "result": result, "seconds": seconds,
            "train_ppl": perplexity(model, enc), "exact": exact, "sessions": len(enc)}


def synthetic_relevance_run(steps: int = 5000, lr: float = 3e-3, d: int = 32, heads: int = 2,
                            n_train: int = 2000, n_test: int = 200, n_contexts: int = 5, seed: int = 0) -> dict:
    """Train on the copy task and measure, on held-out sessions, how each head ranks contexts.

    Per-context scores are step means of the teacher-forced cross-attention.
    Returned per head: P@1 against the sentinel label, mean dis2resp, and the
    correlation between the most attended index and the true index.
    """
    from .corpus import build_vocab, encode_session
    from .inference import extract_attention
    from .metrics import dis2resp, perplexity, relevance_ranking
    from .model import ModelConfig, ReCoSa
    from .trainer import TrainConfig, train

    tr = copy_task(n_train, n_contexts, seed=seed)
    te = copy_task(n_test, n_contexts, seed=seed + 1)
    vocab = build_vocab(tr, 100)
    enc = [encode_session(s, vocab) for s in tr]
    tenc = [encode_session(s, vocab) for s in te]
    model = ReCoSa(ModelConfig(vocab_size=len(vocab), d=d, heads=heads, seed=seed))
    result = train(model, enc, tenc, TrainConfig(lr=lr, max_steps=steps, eval_interval=max(steps // 10, 1),
                                                 seed=seed))
    records = [extract_attention(model, e.ctx_ids, e.resp_out[:-1]) for e in tenc]
    labels = [s.relevance_labels for s in te]
    truth = np.array([lab.index(1) for lab in labels])
    heads_out = []
    for h in range(heads):
        scores = [r.context_scores("mean")[h] for r in records]
        attended = np.array([int(np.argmax(s)) for s in scores])
        corr = float(np.corrcoef(attended, truth)[0, 1]) if attended.std() > 0 else 0.0
        heads_out.append({
            "P@1": relevance_ranking(scores, labels, ks=(1,))["P@1"],
            "dis2resp": float(np.mean([dis2resp(s) for s in scores])),
            "corr": corr,
        })
    return {"model": model, "vocab": vocab, "result": result, "records": records, "labels": labels,
            "heads": heads_out, "valid_ppl": perplexity(model, tenc)}
