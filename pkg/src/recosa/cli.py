"""Command line: ``recosa {prep,train,eval,generate,chat,analyze,heatmap}``.

Exit codes: 0 success, 1 usage, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import ConfigError, RunConfig, load_run_config
from .corpus import CorpusFormatError, Vocab, build_vocab, encode_session, load_corpus, load_labels
from .heatmap import export_heatmap
from .inference import AttentionFormatError, AttentionRecord, generate_greedy
from .model import ReCoSa
from .trainer import CheckpointError, TrainingError, load_checkpoint, train
from .util import atomic_write_text

log = logging.getLogger("recosa")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _run_config(args) -> RunConfig:
    return load_run_config(getattr(args, "config", None), getattr(args, "set", None) or ())


def _echo_config(cfg: RunConfig, out_dir) -> None:
    atomic_write_text(Path(out_dir) / "effective.cfg", cfg.to_text())


def _need(value, what):
    if not value:
        raise UsageError(f"{what} is required (flag or config key)")
    return value


def _load_model(ckpt_path, vocab_path=None):
    ckpt_path = Path(ckpt_path)
    vocab = Vocab.load(vocab_path or ckpt_path.parent / "vocab.tsv")
    ckpt = load_checkpoint(ckpt_path, expect_vocab_hash=vocab.hash())
    model = ReCoSa(ckpt.model_config)
    model.load_arrays(ckpt.params)
    return model, vocab


def cmd_prep(args) -> int:
    cfg = _run_config(args)
    data = _need(args.data or cfg.train_data, "--data")
    out = Path(args.out or cfg.out_dir)
    sessions = load_corpus(data)
    vocab = build_vocab(sessions, cfg.vocab_cap)
    enc = [encode_session(s, vocab, cfg.max_turns, cfg.max_sent_len) for s in sessions]
    lines = ["\t".join(" ".join(map(str, ids)) for ids in (*e.ctx_ids, e.resp_out)) for e in enc]
    vocab.save(out / "vocab.tsv")
    atomic_write_text(out / "encoded.tsv", "".join(l + "\n" for l in lines))
    _echo_config(cfg, out)
    print(f"sessions,{len(sessions)}\nvocab_size,{len(vocab)}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = list(args.set or [])
    if args.out:
        overrides.append(f"out_dir={args.out}")
    cfg = load_run_config(args.config, overrides)
    out = Path(cfg.out_dir)
    train_path = _need(args.data or cfg.train_data, "train_data")
    sessions = load_corpus(train_path)
    vocab_path = Path(args.vocab) if args.vocab else out / "vocab.tsv"
    if vocab_path.exists():
        vocab = Vocab.load(vocab_path)
    else:
        vocab = build_vocab(sessions, cfg.vocab_cap)
        vocab.save(out / "vocab.tsv")
    if vocab_path != out / "vocab.tsv":
        vocab.save(out / "vocab.tsv")
    enc = [encode_session(s, vocab, cfg.max_turns, cfg.max_sent_len) for s in sessions]
    valid = None
    if cfg.valid_data:
        valid = [encode_session(s, vocab, cfg.max_turns, cfg.max_sent_len) for s in load_corpus(cfg.valid_data)]
    _echo_config(cfg, out)
    resume = load_checkpoint(args.resume, expect_vocab_hash=vocab.hash()) if args.resume else None
    model = ReCoSa(cfg.model_config(len(vocab)))
    result = train(model, enc, valid, cfg.train_config(), vocab_hash=vocab.hash(), resume=resume)
    final_ppl = [r[3] for r in result.log if r[2] == "final_ppl"][-1]
    print("metric,k,value")
    print(f"train_ppl,,{final_ppl!r}")
    if result.best_valid_ppl is not None:
        print(f"best_valid_ppl,,{result.best_valid_ppl!r}")
    return EXIT_OK


def _encode_all(sessions, vocab, model):
    c = model.config
    return [encode_session(s, vocab, c.max_turns, c.max_sent_len) for s in sessions]


def cmd_eval(args) -> int:
    model, vocab = _load_model(args.ckpt, args.vocab)
    sessions = load_corpus(args.data)
    enc = _encode_all(sessions, vocab, model)
    ppl = metrics.perplexity(model, enc, args.batch_size)
    hyps = [vocab.decode(generate_greedy(model, e.ctx_ids, args.max_len)[0], strip=False) for e in enc]
    refs = [vocab.decode(e.resp_out) for e in enc]
    rows = [("ppl", "", ppl), ("bleu", "", metrics.bleu(hyps, refs))]
    for n in (1, 2):
        try:
            rows.append(("distinct", str(n), 100.0 * metrics.distinct_n(hyps, n)))
        except ValueError:
            rows.append(("distinct", str(n), float("nan")))
    text = f"# {metrics.BLEU_NOTE}; distinct-n x100\nmetric,k,value\n" + "".join(
        f"{m},{k},{v!r}\n" for m, k, v in rows)
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_generate(args) -> int:
    model, vocab = _load_model(args.ckpt, args.vocab)
    enc = _encode_all(load_corpus(args.data), vocab, model)
    lines, records = [], []
    for e in enc:
        toks, rec = generate_greedy(model, e.ctx_ids, args.max_len)
        lines.append(" ".join(vocab.decode(toks, strip=False)))
        records.append(rec)
    if args.attn_dir:
        for i, rec in enumerate(records):
            rec.save_csv(Path(args.attn_dir) / f"attn_{i:05d}.csv")
    text = "".join(l + "\n" for l in lines)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


class ChatSession:
    """Rolling context window: user turns and model replies both become contexts."""

    def __init__(self, model, vocab, max_len: int = 30):
        self.model = model
        self.vocab = vocab
        self.max_len = max_len
        self.window: list[str] = []

    def respond(self, text: str) -> str:
        self.window.append(text)
        self.window = self.window[-self.model.config.max_turns:]
        L = self.model.config.max_sent_len
        ctx = [self.vocab.encode(u.split()[:L]) for u in self.window]
        toks, _ = generate_greedy(self.model, ctx, self.max_len)
        reply = " ".join(self.vocab.decode(toks, strip=False))
        self.window.append(reply)
        self.window = self.window[-self.model.config.max_turns:]
        return reply


def cmd_chat(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    model, vocab = _load_model(args.ckpt, args.vocab)
    chat = ChatSession(model, vocab, args.max_len)
    for line in stdin:
        line = line.strip()
        if line in ("/quit", "/exit"):
            break
        if not line:
            continue
        stdout.write(f"bot> {chat.respond(line)}\n")
        stdout.flush()
    return EXIT_OK


def _attention_files(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.csv"))
        if not files:
            raise FileNotFoundError(f"no attention CSV files in {p}")
        return files
    return [p]


def analyze(records: list[AttentionRecord], labels: list[list[int]], exclude_post: bool = False,
            ks=(1, 3, 5, 10)) -> list[tuple[str, str, float]]:
    """Metric rows ``(metric, k, value)``: per-head ranking scores and dis2resp."""
    if len(records) != len(labels):
        raise ValueError(f"{len(records)} attention records but {len(labels)} label rows")
    rows = [("all_relevant_error_rate", "", metrics.all_relevant_error_rate(labels))]
    H = records[0].heads
    for h in range(H):
        scores = [r.context_scores("mean")[h] for r in records]
        res = metrics.relevance_ranking(scores, labels, ks, exclude_post=exclude_post)
        for k in ks:
            for m in ("P", "R", "F1"):
                rows.append((f"head{h + 1}_{m}", str(k), res[f"{m}@{k}"]))
        rows.append((f"head{h + 1}_dis2resp", "", float(np.mean([metrics.dis2resp(s) for s in scores]))))
    rows.append(("skipped_no_positive", "", float(res["skipped"])))
    return rows


def cmd_analyze(args) -> int:
    files = _attention_files(args.attn)
    records = [AttentionRecord.from_csv(f) for f in files]
    labels = load_labels(args.labels)
    rows = analyze(records, labels, args.exclude_post)
    out = Path(args.out)
    text = "metric,k,value\n" + "".join(f"{m},{k},{v!r}\n" for m, k, v in rows)
    atomic_write_text(out / "report.csv", text)
    for f in files:
        for fmt in args.formats.split(","):
            ext = "svg" if fmt == "svg" else "grid.csv"
            export_heatmap(f, out / "heatmaps" / f"{f.stem}.{ext}", fmt)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_heatmap(args) -> int:
    export_heatmap(args.attn, args.out, args.format)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="recosa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common_model(sp):
        sp.add_argument("--ckpt", required=True)
        sp.add_argument("--vocab", help="defaults to vocab.tsv next to the checkpoint")
        sp.add_argument("--max-len", type=int, default=30)

    sp = sub.add_parser("prep", help="build the vocabulary and encode a corpus")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_prep)

    sp = sub.add_parser("train", help="train a model")
    sp.add_argument("--config")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--data")
    sp.add_argument("--vocab")
    sp.add_argument("--out")
    sp.add_argument("--resume")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="PPL, BLEU and distinct-n")
    common_model(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("generate", help="greedy responses, optionally with attention CSVs")
    common_model(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.add_argument("--attn-dir")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("chat", help="interactive multi-turn REPL")
    common_model(sp)
    sp.set_defaults(func=cmd_chat)

    sp = sub.add_parser("analyze", help="relevance metrics and heatmaps from attention CSVs")
    sp.add_argument("--attn", required=True, help="attention CSV file or directory of them")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--exclude-post", action="store_true")
    sp.add_argument("--formats", default="svg,csv-grid")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("heatmap", help="render one attention CSV")
    sp.add_argument("--attn", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--format", choices=("svg", "csv-grid"), default="svg")
    sp.set_defaults(func=cmd_heatmap)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"recosa: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusFormatError, AttentionFormatError, CheckpointError, OSError, ValueError) as e:
        print(f"recosa: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ArithmeticError, RuntimeError) as e:
        print(f"recosa: runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
