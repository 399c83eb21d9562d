"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import contextlib
import dataclasses
import math
import re
import subprocess
import sys
import time

import numpy as np
import pytest

import recosa.model as model_mod
from conftest import ACCEPTANCE_LINES, random_sessions, toy_model
from recosa.corpus import make_batch
from recosa.experiments import bundled, synthetic_relevance_run
from recosa.gradsuite import CASES, run_case
from recosa.heatmap import svg
from recosa.inference import generate_greedy
from recosa.metrics import bleu, dis2resp, distinct_n, relevance_ranking
from recosa.trainer import TrainConfig, checkpoint_bytes, train
from test_metrics import bleu_oracle, distinct_oracle, rand_corpus, ranking_oracle

pytestmark = pytest.mark.acceptance


@contextlib.contextmanager
def criterion(n, title):
    detail = {}
    try:
        yield detail
    except BaseException:
        line = f"[FAIL] {n}. {title} {_fmt(detail)}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"[PASS] {n}. {title} {_fmt(detail)}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _fmt(detail):
    return "(" + ", ".join(f"{k}={v}" for k, v in detail.items()) + ")" if detail else ""


def test_1_gradient_suite():
    with criterion(1, "gradient suite rel err < 1e-4 in < 60 s") as info:
        t0 = time.perf_counter()
        worst = {name: max(run_case(name).values()) for name in CASES}
        info["seconds"] = round(time.perf_counter() - t0, 1)
        info["worst"] = f"{max(worst.values()):.1e}"
        assert all(v < 1e-4 for v in worst.values()), worst
        assert info["seconds"] < 60


def test_2_attention_invariants(monkeypatch):
    calls = []
    real = model_mod.multi_head

    def spy(Q, K, V, mask, params):
        out, w = real(Q, K, V, mask, params)
        calls.append((w, mask))
        return out, w

    monkeypatch.setattr(model_mod, "multi_head", spy)
    with criterion(2, "attention rows sum to 1 +- 1e-9, padded slots exactly 0, >= 1000 instances") as info:
        r = np.random.default_rng(2024)
        models = [toy_model(s, out_scale=1.0 + s, max_turns=6) for s in range(5)]
        instances = rows = 0
        for i in range(1000):
            m = models[i % 5]
            b = make_batch(random_sessions(r, int(r.integers(1, 5)), 11, n_ctx=(1, 6), m=(1, 5), t=(1, 5)))
            calls.clear()
            probs, cross = m.forward(b)
            assert len(calls) == 3
            for w, mask in calls:
                mask = np.broadcast_to(mask, w.shape[:1] + w.shape[2:]) if mask.ndim == 3 else mask
                blocked = np.isneginf(np.broadcast_to(mask[:, None], w.shape))
                assert np.all(np.abs(w.sum(axis=-1) - 1.0) <= 1e-9)
                assert np.all(w[blocked] == 0.0)
                rows += w[..., 0].size
            pad = np.broadcast_to(~b.ctx_mask[:, None, None, :], cross.shape)
            assert np.all(cross[pad] == 0.0)
            assert np.all(np.abs(probs.data.sum(axis=-1) - 1.0) <= 1e-9)
            instances += 1
        info["instances"] = instances
        info["rows"] = rows


def test_3_causality():
    with criterion(3, "perturbing resp_in after t moves P(y_t) by < 1e-12, 100 cases") as info:
        r = np.random.default_rng(3)
        worst = 0.0
        for case in range(100):
            m = toy_model(case, out_scale=2.0)
            T = int(r.integers(2, 6))
            b = make_batch(random_sessions(r, int(r.integers(1, 4)), 11, t=(T - 1, T - 1)))
            t = int(r.integers(0, T - 1))
            base = m.forward(b)[0].data
            b.resp_in[:, t + 1:] = r.integers(0, 11, size=b.resp_in[:, t + 1:].shape)
            out = m.forward(b)[0].data
            worst = max(worst, float(np.max(np.abs(out[:, : t + 1] - base[:, : t + 1]))))
        info["max_diff"] = f"{worst:.1e}"
        assert worst < 1e-12


def test_4_position_ablation():
    with criterion(4, "zeroed context positions: permutation-equivariant; random table breaks it") as info:
        r = np.random.default_rng(4)
        eq_worst, broken_min = 0.0, math.inf
        for case in range(20):
            m = toy_model(case, max_turns=6)
            N = int(r.integers(2, 6))
            b = make_batch(random_sessions(r, 2, 11, n_ctx=(N, N), m=(2, 4)))
            perm = r.permutation(N)
            while np.array_equal(perm, np.arange(N)):
                perm = r.permutation(N)
            pb = dataclasses.replace(b, ctx_tokens=b.ctx_tokens[:, perm], ctx_len=b.ctx_len[:, perm])
            m.params.ctx_pos.table.data = r.normal(size=m.params.ctx_pos.table.shape)
            diff = np.abs(m.encode_contexts(b)[0].data[:, perm] - m.encode_contexts(pb)[0].data).max()
            broken_min = min(broken_min, float(diff))
            m.params.ctx_pos.table.data[:] = 0.0
            diff = np.abs(m.encode_contexts(b)[0].data[:, perm] - m.encode_contexts(pb)[0].data).max()
            eq_worst = max(eq_worst, float(diff))
        info["zeroed_max"] = f"{eq_worst:.1e}"
        info["random_min"] = f"{broken_min:.1e}"
        assert eq_worst < 1e-9
        assert broken_min > 1e-3


def test_5_memorization(memorized, toy_data):
    with criterion(5, "toy corpus: train PPL <= 1.1 in 2000 steps, <= 300 s, >= 90% exact") as info:
        model, res, seconds = memorized
        vocab, tr, _ = toy_data
        ppl = [v for _, _, metric, v in res.log if metric == "final_ppl"][-1]
        exact = sum(generate_greedy(model, e.ctx_ids, 30)[0] == e.resp_out[:-1] for e in tr)
        info.update(ppl=round(ppl, 4), seconds=round(seconds, 1), exact=f"{exact}/{len(tr)}")
        assert res.checkpoint.step == 2000
        assert ppl <= 1.1
        assert seconds <= 300
        assert exact >= 0.9 * len(tr)


@pytest.fixture(scope="module")
def copy_run():
    return synthetic_relevance_run(steps=5000, lr=3e-3)


def test_6_synthetic_relevance(copy_run):
    with criterion(6, "copy task: best-head P@1 >= 0.8, dis2resp in (1/6, 5/6), corr > 0.7") as info:
        heads = copy_run["heads"]
        best = max(range(len(heads)), key=lambda h: heads[h]["P@1"])
        hb = heads[best]
        info.update(best_head=best + 1, p1=round(hb["P@1"], 3), dis2resp=round(hb["dis2resp"], 3),
                    corr=round(hb["corr"], 3))
        assert hb["P@1"] >= 0.8
        assert 1 / 6 < hb["dis2resp"] < 5 / 6
        assert hb["corr"] > 0.7
        # the SVG's brightest column for that head is the sentinel-marked context
        hits = 0
        for rec, lab in zip(copy_run["records"], copy_run["labels"]):
            text = svg(rec)
            cells = re.findall(r'data-head="(\d+)" data-step="\d+" data-ctx="(\d+)"[^>]*fill="#([0-9a-f]{2})', text)
            col = np.zeros(rec.n_contexts)
            for h, i, g in cells:
                if int(h) == best:
                    col[int(i)] += int(g, 16)
            hits += int(np.argmax(col)) == lab.index(1)
        info["svg_hits"] = f"{hits}/{len(copy_run['records'])}"
        assert hits >= 0.8 * len(copy_run["records"])


def test_7_metric_oracles():
    with criterion(7, "metrics match analytic and brute-force oracles to 1e-9") as info:
        for N in range(1, 16):
            assert dis2resp(np.full(N, 1.0 / N)) == pytest.approx(0.5, abs=1e-12)
            post = np.zeros(N)
            post[-1] = 1.0
            assert abs(dis2resp(post) - 1 / (N + 1)) < 1e-15
        r = np.random.default_rng(7)
        counts = {"bleu": 0, "distinct": 0, "ranking": 0}
        while min(counts.values()) < 25:
            n = int(r.integers(1, 4))
            hyps, refs = rand_corpus(r, n, "abc"), rand_corpus(r, n, "abc")
            assert abs(bleu(hyps, refs) - bleu_oracle(hyps, refs)) < 1e-9
            counts["bleu"] += 1
            for k in (1, 2):
                if any(len(h) >= k for h in hyps):
                    assert abs(distinct_n(hyps, k) - distinct_oracle(hyps, k)) < 1e-9
            counts["distinct"] += 1
            N = int(r.integers(1, 8))
            scores = list(r.integers(0, 4, N) / 4)
            labels = list(r.integers(0, 2, N))
            if sum(labels):
                out = relevance_ranking([scores], [labels], ks=(1, 3, 5, 10))
                for k in (1, 3, 5, 10):
                    p, rr, f = ranking_oracle(scores, labels, k)
                    assert max(abs(out[f"P@{k}"] - p), abs(out[f"R@{k}"] - rr), abs(out[f"F1@{k}"] - f)) < 1e-9
                counts["ranking"] += 1
        info.update(counts)


def test_8_determinism_and_resume(toy_data):
    with criterion(8, "same seed gives identical checkpoint bytes; resume equals uninterrupted") as info:
        vocab, tr, va = toy_data
        cfg = dict(batch_size=8, lr=1e-3, eval_interval=10, seed=3)

        def fresh():
            return model_mod.ReCoSa(model_mod.ModelConfig(vocab_size=len(vocab), d=16, heads=2, seed=1))

        a = train(fresh(), tr, va, TrainConfig(max_steps=30, **cfg), vocab_hash=vocab.hash())
        b = train(fresh(), tr, va, TrainConfig(max_steps=30, **cfg), vocab_hash=vocab.hash())
        assert checkpoint_bytes(a.checkpoint) == checkpoint_bytes(b.checkpoint)
        assert a.log == b.log
        half = train(fresh(), tr, va, TrainConfig(max_steps=13, **cfg), vocab_hash=vocab.hash())
        rest = train(fresh(), tr, va, TrainConfig(max_steps=30, **cfg), vocab_hash=vocab.hash(),
                     resume=half.checkpoint)
        assert checkpoint_bytes(rest.checkpoint) == checkpoint_bytes(a.checkpoint)
        info["steps"] = 30
        info["resume_at"] = 13


def _cli(*args, cwd):
    proc = subprocess.run([sys.executable, "-m", "recosa.cli", *args], cwd=cwd, capture_output=True, text=True)
    assert proc.returncode == 0, (args, proc.stderr)
    return proc.stdout


def test_9_cli_end_to_end(tmp_path):
    with criterion(9, "CLI prep -> train -> eval -> generate -> analyze on the toy corpus, < 10 min") as info:
        t0 = time.perf_counter()
        cfg = str(bundled("toy.cfg"))
        run = tmp_path / "run"
        _cli("prep", "--config", cfg, "--out", str(tmp_path / "prep"), cwd=tmp_path)
        out = _cli("train", "--config", cfg, "--out", str(run), cwd=tmp_path)
        train_ppl = float(re.search(r"^train_ppl,,(.+)$", out, re.M).group(1))
        valid = str(bundled("toy_valid.txt"))
        _cli("eval", "--ckpt", str(run / "best.ckpt"), "--data", valid, "--out", str(run / "eval.csv"),
             cwd=tmp_path)
        _cli("generate", "--ckpt", str(run / "last.ckpt"), "--data", valid, "--attn-dir", str(run / "attn"),
             "--out", str(run / "generated.txt"), cwd=tmp_path)
        _cli("analyze", "--attn", str(run / "attn"), "--labels", str(bundled("toy_valid_labels.txt")),
             "--out", str(run / "analysis"), cwd=tmp_path)
        seconds = time.perf_counter() - t0
        expected = [tmp_path / "prep" / f for f in ("vocab.tsv", "encoded.tsv", "effective.cfg")]
        expected += [run / f for f in ("vocab.tsv", "effective.cfg", "last.ckpt", "best.ckpt", "metrics.csv",
                                       "eval.csv", "generated.txt", "analysis/report.csv")]
        expected += [run / "attn" / f"attn_{i:05d}.csv" for i in range(8)]
        expected += [run / "analysis" / "heatmaps" / f"attn_{i:05d}.{ext}" for i in range(8)
                     for ext in ("svg", "grid.csv")]
        missing = [str(p.relative_to(tmp_path)) for p in expected if not p.is_file()]
        info.update(seconds=round(seconds, 1), train_ppl=round(train_ppl, 4), artifacts=len(expected))
        assert not missing, missing
        assert (run / "eval.csv").read_text().splitlines()[1] == "metric,k,value"
        assert train_ppl <= 1.1
        assert seconds < 600
