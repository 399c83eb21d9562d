"""Plain-text ``key = value`` run configs with command-line overrides.

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none") else int(s)


@dataclass
class RunConfig:
    # data
    train_data: str | None = None
    valid_data: str | None = None
    labels: str | None = None
    out_dir: str = "run"
    vocab_cap: int = 15000
    # model
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
    # training
    seed: int = 0
    batch_size: int = 32
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 1000
    epochs: int | None = None
    eval_interval: int = 100
    clip_norm: float = 5.0
    # decoding
    max_gen_len: int = 30

    PATH_KEYS = ("train_data", "valid_data", "labels", "out_dir")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, d=self.d, heads=self.heads, d_w=self.d_w, d_h=self.d_h,
                           d_ff=self.d_ff, max_turns=self.max_turns, max_sent_len=self.max_sent_len,
                           n_blocks=self.n_blocks, residual=self.residual, layernorm=self.layernorm,
                           dropout=self.dropout, seed=self.seed)

    def train_config(self) -> TrainConfig:
        out = Path(self.out_dir)
        return TrainConfig(batch_size=self.batch_size, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                           eps=self.eps, max_steps=self.max_steps, epochs=self.epochs,
                           eval_interval=self.eval_interval, checkpoint_dir=str(out),
                           log_path=str(out / "metrics.csv"), seed=self.seed, clip_norm=self.clip_norm)

    def to_text(self) -> str:
        lines = ["# effective configuration"]
        for f in fields(self):
            val = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if val is None else val}")
        return "\n".join(lines) + "\n"


_TYPES = {}
for _f in fields(RunConfig):
    t = str(_f.type)
    if "bool" in t:
        _TYPES[_f.name] = _bool
    elif t == "int":
        _TYPES[_f.name] = int
    elif "int" in t:
        _TYPES[_f.name] = _opt_int
    elif t == "float":
        _TYPES[_f.name] = float
    else:
        _TYPES[_f.name] = lambda s: None if s.strip().lower() in ("", "none") else s


def parse_pairs(lines, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {k!r}")
        out[k] = v
    return out


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Config file (optional) then ``key=value`` overrides, every key validated."""
    values: dict[str, str] = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"{path}: cannot read config ({e.strerror})") from None
        values.update(parse_pairs(text.splitlines(), str(path)))
        base = p.resolve().parent
    file_keys = set(values)
    over = parse_pairs(overrides, "--set")
    values.update(over)
    kwargs = {}
    for k, v in values.items():
        try:
            kwargs[k] = _TYPES[k](v)
        except ValueError as e:
            raise ConfigError(f"bad value for {k}: {e}") from None
    for k in RunConfig.PATH_KEYS:
        # paths from the file are relative to the file; overrides to the cwd
        if kwargs.get(k) and k in file_keys and k not in over:
            kwargs[k] = str((base / kwargs[k]))
    try:
        cfg = RunConfig(**kwargs)
        cfg.model_config(vocab_size=5)
        cfg.train_config()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg
