"""Experiment configuration files: JSON with defaults, strict keys and range checks."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .diffusion import PropagationConfig, random_hypergraph
from .experiments import DEFAULT_DELTAS, DEFAULT_RATES, VARIANTS, EXTRA_VARIANTS, ExperimentConfig
from .hypergraph import Hypergraph, load_hypergraph
from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class HypergraphSource:
    path: str | None = None
    n: int = 200
    m: int = 120
    size_min: int = 2
    size_max: int = 5
    seed: int = 1

    def load(self) -> Hypergraph:
        if self.path is not None:
            return load_hypergraph(self.path)
        return random_hypergraph(self.n, self.m, (self.size_min, self.size_max), self.seed)


@dataclass(frozen=True)
class SweepConfig:
    deltas: tuple[float, ...] = DEFAULT_DELTAS
    rates: tuple[float, ...] = DEFAULT_RATES
    variants: tuple[str, ...] = VARIANTS
    models: tuple[str, ...] = ("IC", "SI", "SIS", "SIR")


@dataclass(frozen=True)
class RunConfig:
    hypergraph: HypergraphSource = field(default_factory=HypergraphSource)
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    count: int = 100
    split: tuple[int, int] = (8, 2)
    val_fraction: float = 0.1
    seeds: tuple[int, ...] = (0,)
    variant: str = "full"
    lpsi_alpha: float = 0.5
    sweep: SweepConfig = field(default_factory=SweepConfig)
    out: str = "runs"

    @property
    def master_seed(self) -> int:
        return self.propagation.seed

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            propagation=self.propagation,
            train=self.train,
            model=self.model,
            count=self.count,
            split=self.split,
            val_fraction=self.val_fraction,
            seeds=self.seeds,
            lpsi_alpha=self.lpsi_alpha,
        )

    def to_json(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "hypergraph": HypergraphSource,
    "propagation": PropagationConfig,
    "train": TrainConfig,
    "model": ModelConfig,
    "sweep": SweepConfig,
}


def _coerce(section: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(section, "expected an object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown field")
        default = getattr(cls(), key)
        kwargs[key] = _typed(f"{section}.{key}", default, value)
    return cls(**kwargs)


def _typed(name: str, default: Any, value: Any):
    if value is None:
        if default is None:
            return None
        raise ConfigError(name, "must not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, "expected true/false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, "expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, "expected a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(name, "expected a list")
        proto = default[0] if default else value[0] if value else 0
        return tuple(_typed(f"{name}[{i}]", proto, v) for i, v in enumerate(value))
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(name, "expected a string")
        return value
    return value


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    base = RunConfig()
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _coerce(key, _SECTIONS[key], value)
        elif key in {f.name for f in fields(RunConfig)}:
            kwargs[key] = _typed(key, getattr(base, key), value)
        else:
            raise ConfigError(key, "unknown field")
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Range checks for every numeric field; raises :class:`ConfigError` naming the field."""
    for section, obj in (("propagation", cfg.propagation), ("train", cfg.train), ("model", cfg.model)):
        try:
            obj.validate()
        except ValueError as exc:
            raise ConfigError(section, str(exc)) from None
    hg = cfg.hypergraph
    if hg.path is not None and not Path(hg.path).is_file():
        raise ConfigError("hypergraph.path", f"file not found: {hg.path}")
    if hg.path is None:
        if hg.n < 4 or hg.m < 1:
            raise ConfigError("hypergraph", "random generator needs n >= 4 and m >= 1")
        if not 2 <= hg.size_min <= hg.size_max <= hg.n:
            raise ConfigError("hypergraph.size_max", "need 2 <= size_min <= size_max <= n")
    if cfg.count < 5:
        raise ConfigError("count", "must be >= 5")
    if len(cfg.split) != 2 or min(cfg.split) < 1:
        raise ConfigError("split", "expected two positive integers")
    if not 0 < cfg.val_fraction < 1:
        raise ConfigError("val_fraction", "must lie in (0, 1)")
    if not cfg.seeds:
        raise ConfigError("seeds", "at least one seed required")
    if cfg.variant not in VARIANTS + EXTRA_VARIANTS:
        raise ConfigError("variant", f"unknown variant {cfg.variant!r}")
    if not 0 < cfg.lpsi_alpha < 1:
        raise ConfigError("lpsi_alpha", "must lie in (0, 1)")
    for d in cfg.sweep.deltas:
        if not 0 < d <= 1:
            raise ConfigError("sweep.deltas", f"{d} outside (0, 1]")
    for r in cfg.sweep.rates:
        if not 0 <= r < 1:
            raise ConfigError("sweep.rates", f"{r} outside [0, 1)")
    for v in cfg.sweep.variants:
        if v not in VARIANTS + EXTRA_VARIANTS:
            raise ConfigError("sweep.variants", f"unknown variant {v!r}")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(raw)


def override(cfg: RunConfig, **changes) -> RunConfig:
    """Apply flag overrides given as ``section__field=value`` (``None`` values are ignored)."""
    sections: dict[str, dict] = {}
    top = {}
    for key, value in changes.items():
        if value is None:
            continue
        if "__" in key:
            sec, name = key.split("__", 1)
            sections.setdefault(sec, {})[name] = value
        else:
            top[key] = value
    updated = replace(cfg, **top)
    for sec, vals in sections.items():
        updated = replace(updated, **{sec: replace(getattr(updated, sec), **vals)})
    validate(updated)
    return updated
