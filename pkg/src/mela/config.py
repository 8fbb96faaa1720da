"""Run configuration: nested dataclasses loaded from JSON, overridable by flags."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError


@dataclass
class DataConfig:
    source: str = "synthetic"  # "synthetic" or "csv"
    path: Optional[str] = None
    test_path: Optional[str] = None
    C: int = 20
    C_test: int = 10
    d: int = 32
    k: int = 5
    n: int = 5
    m: int = 15
    T: int = 200
    test_tasks: int = 200
    noise_std: float = 1.0
    separation: Optional[float] = 6.0
    n_domains: Optional[int] = None
    grid: Optional[list] = None
    sampling: str = "replacement"  # or "gfsl"
    per_class: int = 400


@dataclass
class RepLearnConfig:
    steps: int = 2000
    lr: float = 0.01


@dataclass
class InferenceSection:
    V_init: int = 60
    q: float = 3.0
    max_sweeps: int = 50
    prune_mode: str = "matches"


@dataclass
class PretrainSection:
    steps: int = 2000
    lr: float = 0.5
    reg: float = 1e-4
    rotate_augment: bool = False


@dataclass
class FinetuneSection:
    steps: int = 500
    lr: float = 0.005
    hidden: Optional[int] = None


@dataclass
class EvalSection:
    draws: int = 1000
    normalize: bool = True
    builder: str = "logistic"
    logistic_C_pre: float = 1.0
    logistic_C_ft: float = 0.001


@dataclass
class RateSection:
    t_grid: list = field(default_factory=lambda: [10, 40, 160])
    seeds: int = 20
    C: int = 10
    d: int = 10
    k: int = 5
    n: int = 1
    m: int = 5
    separation: float = 3.0
    steps: int = 500
    lr: float = 0.1
    reg: float = 1e-3
    eval_draws: int = 200


@dataclass
class RunConfig:
    seed: int = 0
    p: Optional[int] = None
    ridge_lambda: float = 1e-3
    data: DataConfig = field(default_factory=DataConfig)
    replearn: RepLearnConfig = field(default_factory=RepLearnConfig)
    inference: InferenceSection = field(default_factory=InferenceSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    rate: RateSection = field(default_factory=RateSection)
    out: str = "out"
    jobs: int = 1

    @property
    def feature_dim(self) -> int:
        return self.data_dim if self.p is None else self.p

    @property
    def data_dim(self) -> int:
        if self.data.grid is not None:
            h, w = self.data.grid
            return h * w
        return self.data.d

    def validate(self) -> "RunConfig":
        d = self.data
        if d.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be synthetic or csv, got {d.source!r}")
        if d.source == "csv" and not d.path:
            raise ConfigError("data.path is required for csv input")
        if d.sampling not in ("replacement", "gfsl"):
            raise ConfigError("data.sampling must be replacement or gfsl")
        if not (d.C >= d.k >= 2) or d.n < 1 or d.m < 1 or d.T < 1:
            raise ConfigError("need C >= k >= 2, n >= 1, m >= 1, T >= 1")
        if self.ridge_lambda <= 0:
            raise ConfigError("ridge_lambda must be positive")
        if self.inference.V_init < d.k:
            raise ConfigError("inference.V_init must be >= k")
        if self.inference.q < 0:
            raise ConfigError("inference.q must be non-negative")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where + key!r}")
        ftype = known[key].default_factory if known[key].default_factory is not dataclasses.MISSING else None
        if ftype is not None and dataclasses.is_dataclass(ftype):
            kwargs[key] = _build(ftype, value, f"{where}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def from_dict(values: dict) -> RunConfig:
    return _build(RunConfig, values, "").validate()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            values = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return from_dict(values)
