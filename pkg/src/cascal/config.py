"""Run configuration: one dataclass, JSON override files, strict validation."""

import json
import os
from dataclasses import asdict, dataclass, fields, replace

from .core import ConfigError
from .metaset import (
    DEFAULT_GRID_KINDS,
    DEFAULT_GRID_SEVERITIES,
    DEFAULT_TEST_SHIFTS,
    N_SEVERITIES,
    SHIFT_KINDS,
)


@dataclass(frozen=True)
class RunConfig:
    # world
    n_classes: int = 10
    n_features: int = 16
    overconfidence: float = 2.5
    noise_scale: float = 1.0
    class_sep: float = 0.6
    # split sizes
    n_val: int = 5000
    n_test: int = 10000
    n_meta: int = 5000
    # shift layout
    grid_kinds: tuple = DEFAULT_GRID_KINDS
    grid_severities: tuple = DEFAULT_GRID_SEVERITIES
    test_shifts: tuple = DEFAULT_TEST_SHIFTS
    # cascade training
    lam: float = 0.4
    epochs: int = 300
    hidden: tuple = (128, 64)
    lr: float = 1e-3
    n_conf_bins: int = 10
    thresholds: tuple = (0.5, 0.8)
    t_min: float = 0.05
    t_max: float = 20.0
    # evaluation
    eval_bins: int = 15
    seed: int = 0

    def grid(self):
        return tuple((k, s) for k in self.grid_kinds for s in self.grid_severities)

    def validate(self) -> "RunConfig":
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        for name in ("n_features", "n_val", "n_test", "n_meta", "epochs", "eval_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("overconfidence", "noise_scale", "class_sep", "lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must be in [0, 1], got {self.lam}")
        if self.n_conf_bins < 2:
            raise ConfigError(f"n_conf_bins must be >= 2, got {self.n_conf_bins}")
        if not 0.0 < self.thresholds[0] < self.thresholds[1] < 1.0:
            raise ConfigError(f"thresholds must satisfy 0 < lo < hi < 1, got {self.thresholds}")
        if not 0.0 < self.t_min < self.t_max:
            raise ConfigError(f"need 0 < t_min < t_max, got {(self.t_min, self.t_max)}")
        for k in self.grid_kinds:
            if k not in SHIFT_KINDS:
                raise ConfigError(f"unknown grid kind {k!r}")
        for s in self.grid_severities:
            if not 1 <= s <= N_SEVERITIES:
                raise ConfigError(f"grid severity {s} out of range 1..{N_SEVERITIES}")
        for kind, sev in self.test_shifts:
            if kind not in SHIFT_KINDS or not 1 <= sev <= N_SEVERITIES:
                raise ConfigError(f"bad test shift {(kind, sev)!r}")
        overlap = sorted(set(self.grid()) & {tuple(t) for t in self.test_shifts})
        if overlap:
            raise ConfigError(f"meta-set grid overlaps held-out test shifts: {overlap}")
        return self


_TUPLE_FIELDS = {"grid_kinds", "grid_severities", "hidden", "thresholds"}


def config_from_dict(overrides: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    clean = {}
    for key, value in overrides.items():
        if key in _TUPLE_FIELDS:
            value = tuple(value)
        elif key == "test_shifts":
            value = tuple((str(k), int(s)) for k, s in value)
        clean[key] = value
    return replace(RunConfig(), **clean).validate()


def load_config(path) -> RunConfig:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["test_shifts"] = [list(t) for t in cfg.test_shifts]
    return d
