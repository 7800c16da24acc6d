"""Flat key = value training configuration.

The on-disk format is one `key = value` per line, `#` starts a comment,
blank lines are ignored, and unknown keys are rejected. The same coercion
path serves config files and `--set key=value` CLI overrides, and
`serialize` writes the canonical form embedded verbatim in every run
directory.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields, replace

import numpy as np

from .curriculum import DEFAULT_FRACTIONS, _check_fractions
from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = 2.0              # label distribution spread
    lam: float = 1.0                # ordinal margin weight (config key: lambda)
    beta: float = 1.0               # variational margin weight
    m_max: float = 0.5              # margin cap in logit units
    mu_range: float = 2.0           # ordinal location offset bound, in classes
    sigma_min: float = 0.5          # ordinal spread floor, in classes
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    stage_epochs: int = 24          # per-stage epoch budget; patience usually fires first
    patience: int = 5
    min_delta: float = 1e-3
    curriculum_fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    seed: int = 0
    mode: str = "pml"               # pml | baseline
    decoder: str = "expectation"    # expectation | argmax
    hidden_size: int = 32           # backbone hidden width
    embed_dim: int = 16             # backbone output width
    margin_hidden_size: int = 16    # margin network hidden width
    reset_stats_each_epoch: bool = False
    distribution_samples: int = 12  # test rows dumped to distributions.csv
    data: str = ""
    out: str = ""

    def validate(self) -> None:
        def positive(name, value):
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")

        def nonnegative(name, value):
            if not np.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")

        positive("sigma", self.sigma)
        nonnegative("lambda", self.lam)
        nonnegative("beta", self.beta)
        positive("m_max", self.m_max)
        nonnegative("mu_range", self.mu_range)
        positive("sigma_min", self.sigma_min)
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got '{self.optimizer}'")
        positive("learning_rate", self.learning_rate)
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        nonnegative("weight_decay", self.weight_decay)
        nonnegative("min_delta", self.min_delta)
        for name in ("batch_size", "stage_epochs", "patience", "hidden_size",
                     "embed_dim", "margin_hidden_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.distribution_samples < 0:
            raise ConfigError("distribution_samples must be >= 0")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.mode not in ("pml", "baseline"):
            raise ConfigError(f"mode must be pml or baseline, got '{self.mode}'")
        if self.decoder not in ("expectation", "argmax"):
            raise ConfigError(f"decoder must be expectation or argmax, got '{self.decoder}'")
        _check_fractions(self.curriculum_fractions)


# config-file key -> dataclass attribute ("lambda" is a Python keyword)
_KEY_TO_ATTR = {
    **{f.name: f.name for f in dc_fields(TrainConfig)},
    "lambda": "lam",
}
del _KEY_TO_ATTR["lam"]
_ATTR_TO_KEY = {attr: key for key, attr in _KEY_TO_ATTR.items()}
_KEY_ORDER = [_ATTR_TO_KEY[f.name] for f in dc_fields(TrainConfig)]


def _coerce(key: str, attr: str, raw: str):
    kind = TrainConfig.__dataclass_fields__[attr].type
    raw = raw.strip()
    try:
        if attr == "curriculum_fractions":
            return tuple(float(part) for part in raw.split(",") if part.strip())
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"expected true/false, got '{raw}'")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for '{key}': {exc}") from exc


def parse_assignments(lines, source: str = "config") -> dict[str, object]:
    """Parse `key = value` lines into attribute/value pairs, rejecting unknown keys."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source} line {lineno}: expected 'key = value', got '{stripped}'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _KEY_TO_ATTR:
            raise ConfigError(f"{source} line {lineno}: unknown config key '{key}'")
        attr = _KEY_TO_ATTR[key]
        values[attr] = _coerce(key, attr, raw)
    return values


def parse_config(text: str, source: str = "config") -> TrainConfig:
    return TrainConfig(**parse_assignments(text.splitlines(), source))


def load_config(path) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config(text, source=str(path))


def apply_overrides(config: TrainConfig, assignments: list[str]) -> TrainConfig:
    """Apply `key=value` strings (CLI --set) on top of an existing config."""
    values: dict[str, object] = {}
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in _KEY_TO_ATTR:
            raise ConfigError(f"unknown config key '{key}'")
        attr = _KEY_TO_ATTR[key]
        values[attr] = _coerce(key, attr, raw)
    return replace(config, **values)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(config: TrainConfig) -> str:
    lines = []
    for key in _KEY_ORDER:
        attr = _KEY_TO_ATTR[key]
        lines.append(f"{key} = {_format_value(getattr(config, attr))}")
    return "\n".join(lines) + "\n"
