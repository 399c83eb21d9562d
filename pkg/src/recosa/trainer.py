"""Training loop, checkpoint files and the CSV metric log.

Checkpoint layout (all text lines are UTF-8, terminated by ``\\n``)::

    RECOSA-CKPT
    version <int>
    header <nbytes>
    <JSON header: model config, step, vocab hash, Adam hyperparameters, ...>
    tensor <name> <dim>x<dim>... <nbytes>
    <raw little-endian float64 payload>
    ...
    end <sha256 hex of every byte before this line>
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EncodedSession, make_batch
from .model import ModelConfig, ReCoSa
from .numcore import AdamHyper, AdamState, NonFiniteError, Tape, adam_step, backward
from .util import atomic_write_bytes, atomic_write_text

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"RECOSA-CKPT\n"


class CheckpointError(ValueError):
    pass


class VocabMismatchError(CheckpointError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, step: int, msg: str, last_good: str | None = None):
        self.step = step
        self.last_good = last_good
        keep = f"; last good checkpoint: {last_good}" if last_good else ""
        super().__init__(f"step {step}: {msg}{keep}")


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 1000
    epochs: int | None = None
    eval_interval: int = 100
    checkpoint_dir: str | None = None
    log_path: str | None = None
    seed: int = 0
    clip_norm: float = 5.0
    eval_train: bool = False

    def __post_init__(self):
        for name in ("batch_size", "max_steps", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.clip_norm <= 0:
            raise ValueError("lr must be >= 0 and clip_norm > 0")

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState
    step: int
    vocab_hash: str = ""
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def same_as(self, other: "Checkpoint") -> bool:
        """Bit-exact equality of every field."""
        def arrays_eq(a, b):
            return a.keys() == b.keys() and all(
                a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)
        return (self.version == other.version and self.step == other.step
                and self.vocab_hash == other.vocab_hash and self.meta == other.meta
                and self.model_config == other.model_config
                and arrays_eq(self.params, other.params)
                and self.adam.t == other.adam.t
                and arrays_eq(self.adam.m, other.adam.m) and arrays_eq(self.adam.v, other.adam.v))


def _tensor_block(name: str, arr: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    dims = "x".join(str(s) for s in arr.shape) or "scalar"
    return f"tensor {name} {dims} {len(payload)}\n".encode() + payload + b"\n"


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "step": ckpt.step,
        "adam_t": ckpt.adam.t,
        "vocab_hash": ckpt.vocab_hash,
        "meta": ckpt.meta,
        "params": list(ckpt.params),
    }
    hb = json.dumps(header, sort_keys=True, indent=1).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(f"version {ckpt.version}\n".encode())
    buf.write(f"header {len(hb)}\n".encode() + hb + b"\n")
    for k, a in ckpt.params.items():
        buf.write(_tensor_block(f"param/{k}", a))
    for k in ckpt.params:
        buf.write(_tensor_block(f"adam_m/{k}", ckpt.adam.m[k]))
        buf.write(_tensor_block(f"adam_v/{k}", ckpt.adam.v[k]))
    body = buf.getvalue()
    return body + f"end {hashlib.sha256(body).hexdigest()}\n".encode()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def load_checkpoint(path, expect_vocab_hash: str | None = None) -> Checkpoint:
    """Parse a checkpoint file; any structural problem raises :class:`CheckpointError`."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read ({e.strerror})") from None
    ckpt = _parse(raw, path)
    if expect_vocab_hash is not None and ckpt.vocab_hash != expect_vocab_hash:
        raise VocabMismatchError(f"{path}: vocabulary hash {ckpt.vocab_hash[:12]} does not match "
                                 f"{expect_vocab_hash[:12]}")
    return ckpt


def _parse(raw: bytes, path) -> Checkpoint:
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    tail = raw.rstrip(b"\n").rsplit(b"\n", 1)
    if len(tail) != 2 or not tail[1].startswith(b"end "):
        raise CheckpointError(f"{path}: truncated checkpoint (no trailer)")
    body = raw[: len(tail[0]) + 1]
    if hashlib.sha256(body).hexdigest() != tail[1][4:].decode(errors="replace"):
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    pos = len(MAGIC)

    def line():
        nonlocal pos
        end = body.index(b"\n", pos)
        out = body[pos:end].decode()
        pos = end + 1
        return out

    try:
        ver = line().split()
        if ver[0] != "version" or int(ver[1]) != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {ver[1:]} (expected {FORMAT_VERSION})")
        kind, n = line().split()
        header = json.loads(body[pos: pos + int(n)])
        pos += int(n) + 1
        tensors = {}
        while pos < len(body):
            _, name, dims, nbytes = line().split()
            nbytes = int(nbytes)
            shape = () if dims == "scalar" else tuple(int(s) for s in dims.split("x"))
            arr = np.frombuffer(body[pos: pos + nbytes], dtype="<f8").astype(np.float64)
            tensors[name] = arr.reshape(shape)
            pos += nbytes + 1
        names = header["params"]
        params = {k: tensors[f"param/{k}"] for k in names}
        adam = AdamState({k: tensors[f"adam_m/{k}"] for k in names},
                         {k: tensors[f"adam_v/{k}"] for k in names}, header["adam_t"])
        cfg = ModelConfig.from_dict(header["model_config"])
    except CheckpointError:
        raise
    except (ValueError, KeyError, IndexError, TypeError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint ({e})") from None
    return Checkpoint(cfg, params, adam, header["step"], header["vocab_hash"], header["meta"])


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[tuple[int, str, str, float]]
    best_valid_ppl: float | None = None


def write_metric_log(rows, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "split", "metric", "value"])
    for step, split, metric, value in rows:
        w.writerow([step, split, metric, repr(float(value))])
    atomic_write_text(path, buf.getvalue())


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_indices(step: int, n: int, batch_size: int, seed: int) -> np.ndarray:
    """Session indices for a 0-based global step; depends only on its arguments."""
    per_epoch = math.ceil(n / batch_size)
    epoch, j = divmod(step, per_epoch)
    return epoch_order(seed, epoch, n)[j * batch_size:(j + 1) * batch_size]


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def train(model: ReCoSa, train_data: Sequence[EncodedSession], valid_data: Sequence[EncodedSession] | None,
          cfg: TrainConfig, vocab_hash: str = "", resume: Checkpoint | None = None) -> TrainResult:
    """Optimise the per-token NLL with Adam; returns the final checkpoint and metric log.

    Batch order and dropout noise are pure functions of (seed, step), so a run
    resumed from a checkpoint continues exactly like an uninterrupted one.
    """
    from .metrics import perplexity

    if not train_data:
        raise ValueError("no training data")
    V = model.config.vocab_size
    top = max(max(max(c, default=0) for c in e.ctx_ids + [e.resp_in, e.resp_out]) for e in train_data)
    if top >= V:
        raise ValueError(f"training data uses token id {top} but the model vocabulary has {V}")
    params = model.named_parameters()
    state = AdamState.zeros_like(params)
    step = 0
    meta: dict = {}
    if resume is not None:
        if vocab_hash and resume.vocab_hash != vocab_hash:
            raise VocabMismatchError("resume checkpoint was trained with a different vocabulary")
        if resume.model_config != model.config:
            raise CheckpointError("resume checkpoint has a different model config")
        model.load_arrays(resume.params)
        state = AdamState({k: v.copy() for k, v in resume.adam.m.items()},
                          {k: v.copy() for k, v in resume.adam.v.items()}, resume.adam.t)
        step = resume.step
        meta = dict(resume.meta)

    n = len(train_data)
    max_steps = cfg.max_steps if cfg.epochs is None else cfg.epochs * math.ceil(n / cfg.batch_size)
    ckdir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    last_good = None
    rows: list[tuple[int, str, str, float]] = []
    best = meta.get("best_valid_ppl")
    hyper = cfg.hyper

    def snapshot():
        return Checkpoint(model.config, {k: t.data.copy() for k, t in params.items()},
                          AdamState({k: v.copy() for k, v in state.m.items()},
                                    {k: v.copy() for k, v in state.v.items()}, state.t),
                          step, vocab_hash, dict(meta))

    def evaluate():
        nonlocal best, last_good
        if cfg.eval_train:
            rows.append((step, "train", "ppl", perplexity(model, train_data, cfg.batch_size)))
        if valid_data:
            ppl = perplexity(model, valid_data, cfg.batch_size)
            rows.append((step, "valid", "ppl", ppl))
            log.info("step %d valid ppl %.4f", step, ppl)
            if best is None or ppl < best:
                best = ppl
                meta["best_valid_ppl"] = ppl
                meta["best_step"] = step
                if ckdir:
                    save_checkpoint(snapshot(), ckdir / "best.ckpt")
        if ckdir:
            save_checkpoint(snapshot(), ckdir / "last.ckpt")
            last_good = str(ckdir / "last.ckpt")
            if cfg.log_path:
                write_metric_log(rows, cfg.log_path)

    while step < max_steps:
        idx = batch_indices(step, n, cfg.batch_size, cfg.seed)
        batch = make_batch([train_data[i] for i in idx])
        rng = (np.random.default_rng([cfg.seed, step, 1_000_003])
               if model.config.dropout > 0 else None)
        try:
            with Tape() as tape:
                loss = model.loss(batch, rng)
            g = backward(tape, loss, list(params.values()))
            grads = {k: g[p] for k, p in params.items()}
            clip_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, state, hyper)
        except NonFiniteError as e:
            raise TrainingError(step, f"non-finite value ({e})", last_good) from None
        step += 1
        rows.append((step, "train", "loss", loss.item()))
        if step % cfg.eval_interval == 0 or step == max_steps:
            evaluate()

    rows.append((step, "train", "final_ppl", perplexity(model, train_data, cfg.batch_size)))
    final = snapshot()
    if ckdir:
        save_checkpoint(final, ckdir / "last.ckpt")
    if cfg.log_path:
        write_metric_log(rows, cfg.log_path)
    return TrainResult(final, rows, best)
