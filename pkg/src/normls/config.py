"""Run configuration and its ``key = value`` text format.

One setting per line, ``#`` starts a comment, blank lines are ignored. Unknown
keys are errors. :func:`dump_config` writes every field in declaration order,
so parsing the echo of a run yields the identical config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError
from .losses import LOSS_KINDS
from .nn import PADDING_MODES

DATASETS = ("synthetic", "cifar10")


@dataclass(frozen=True)
class RunConfig:
    loss: str = "nlsce"
    padding: str = "zero"
    epsilon: float = 0.1
    dataset: str = "synthetic"
    dataset_path: str = ""
    synthetic_counts: tuple[int, ...] = (500, 250, 108)
    image_size: int = 32
    data_seed: int = 0
    subset: int = 0  # 0 keeps the whole source set
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.02
    momentum: float = 0.9
    val_fraction: float = 0.25
    seed: int = 7
    output_dir: str = "runs/latest"
    convergence_patience: int = 10
    min_delta: float = 1e-4
    ece_bins: int = 15
    embed: bool = True
    tsne_perplexity: float = 30.0
    tsne_iters: int = 1000
    embed_budget: int = 5000

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def validate(cfg: RunConfig) -> None:
    if cfg.loss not in LOSS_KINDS:
        raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {cfg.loss!r}")
    if cfg.padding not in PADDING_MODES:
        raise ConfigError(f"padding must be one of {PADDING_MODES}, got {cfg.padding!r}")
    if cfg.dataset not in DATASETS:
        raise ConfigError(f"dataset must be one of {DATASETS}, got {cfg.dataset!r}")
    if not 0.0 <= cfg.epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in [0, 1), got {cfg.epsilon}")
    if not 0.0 < cfg.val_fraction < 1.0:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {cfg.val_fraction}")
    for name in ("epochs", "batch_size", "image_size", "convergence_patience", "ece_bins",
                 "tsne_iters", "embed_budget"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}")
    for name in ("learning_rate", "momentum", "min_delta", "tsne_perplexity"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}")
    if cfg.momentum >= 1.0:
        raise ConfigError(f"momentum must be below 1, got {cfg.momentum}")
    if cfg.seed < 0 or cfg.data_seed < 0 or cfg.subset < 0:
        raise ConfigError("seeds and subset must be non-negative")
    if len(cfg.synthetic_counts) != 3 or min(cfg.synthetic_counts) < 1:
        raise ConfigError(f"synthetic_counts needs three positive entries, got {cfg.synthetic_counts}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("tuple"):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def load_config(path, **overrides) -> RunConfig:
    from pathlib import Path

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    values = parse_config_text(text, str(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def config_from_strings(pairs: dict[str, str]) -> dict:
    """Convert ``{key: raw string}`` overrides, rejecting unknown keys."""
    out = {}
    for key, raw in pairs.items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = _convert(key, raw)
    return out


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))
