"""Experiment configuration: a flat ``key = value`` file plus overrides.

Grammar: one ``key = value`` per line, ``#`` or ``;`` starts a comment, lists
are comma-separated, booleans are ``true``/``false``. Keys match the
:class:`ExperimentConfig` field names; ``lambda`` is accepted for ``lam``
and ``k`` for the latent dimension.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError
from .ingest import PROFILES, BusinessHoursPolicy, WeekdayWeekendPolicy
from .recommender import METHODS

POLICIES = ("business-hours", "weekday-weekend")
SPLITS = ("test", "validation")
ALIASES = {"lambda": "lam", "profile": "dataset_profile", "dataset": "dataset_path", "path": "dataset_path",
           "lr": "learning_rate", "epochs": "max_epochs", "output": "out"}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str = ""
    dataset_profile: str = "custom"
    columns: tuple[str, ...] = ()
    delimiter: str = ""
    header: bool = False

    state_policy: str = "business-hours"
    work_start: int = 8
    work_end: int = 18
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    d: float = 15.0
    alpha: float = 0.02
    lam: float = 0.5

    k: int = 30
    sigma: float = 2.0
    rho: float = 1.0
    learning_rate: float = 1e-4
    max_epochs: int = 300
    tol: float = 1e-6
    floor: float = 1e-8

    bucket_km: float = 0.5
    methods: tuple[str, ...] = METHODS
    cutoffs: tuple[int, ...] = (10, 20)
    eval_split: str = "test"
    exclude_train_from_test: bool = True
    train_fraction: float = 1.0
    seed: int = 0
    workers: int = 1
    out: str = "results"

    def problems(self) -> list[str]:
        """Every invalid field, as ``name: reason``."""
        p = []
        if self.dataset_profile not in PROFILES:
            p.append(f"dataset_profile: unknown profile {self.dataset_profile!r} (choose {', '.join(PROFILES)})")
        if self.state_policy not in POLICIES:
            p.append(f"state_policy: must be one of {', '.join(POLICIES)}")
        if not 0 <= self.work_start < self.work_end <= 24:
            p.append("work_start/work_end: need 0 <= work_start < work_end <= 24")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or not math.isclose(sum(self.ratios), 1, abs_tol=1e-9):
            p.append(f"ratios: need three nonnegative numbers summing to 1, got {self.ratios}")
        if not self.d > 0:
            p.append(f"d: must be > 0, got {self.d}")
        if not 0 < self.alpha < 1:
            p.append(f"alpha: must lie in (0, 1), got {self.alpha}")
        if not 0 <= self.lam <= 1:
            p.append(f"lambda: must lie in [0, 1], got {self.lam}")
        if self.k < 1:
            p.append(f"k: must be >= 1, got {self.k}")
        if not self.rho > 0:
            p.append(f"rho: must be > 0, got {self.rho}")
        if not self.learning_rate > 0:
            p.append(f"learning_rate: must be > 0, got {self.learning_rate}")
        if self.max_epochs < 0:
            p.append(f"max_epochs: must be >= 0, got {self.max_epochs}")
        if self.tol < 0:
            p.append(f"tol: must be >= 0, got {self.tol}")
        if not self.floor > 0:
            p.append(f"floor: must be > 0, got {self.floor}")
        if not self.bucket_km > 0:
            p.append(f"bucket_km: must be > 0, got {self.bucket_km}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            p.append(f"methods: unknown {bad} (choose from {', '.join(METHODS)})" if bad else "methods: empty")
        if not self.cutoffs or any(n < 1 for n in self.cutoffs):
            p.append(f"cutoffs: need positive integers, got {self.cutoffs}")
        if self.eval_split not in SPLITS:
            p.append(f"eval_split: must be one of {', '.join(SPLITS)}")
        if not 0 < self.train_fraction <= 1:
            p.append(f"train_fraction: must lie in (0, 1], got {self.train_fraction}")
        if self.workers < 1:
            p.append(f"workers: must be >= 1, got {self.workers}")
        if self.seed < 0:
            p.append(f"seed: must be >= 0, got {self.seed}")
        return p

    def validate(self) -> "ExperimentConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
        return self

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return from_mapping(overrides, base=self)

    def policy(self):
        if self.state_policy == "weekday-weekend":
            return WeekdayWeekendPolicy()
        return BusinessHoursPolicy(self.work_start, self.work_end)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of every field that can change results (not ``out``/``workers``)."""
        d = self.as_dict()
        d.pop("out")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value: Any, default: Any):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(default, tuple):
        items = value if isinstance(value, (list, tuple)) else [x for x in str(value).split(",") if x.strip()]
        kind = type(default[0]) if default else str
        if name == "ratios":
            kind = float
        if name == "cutoffs":
            kind = int
        return tuple(kind(x.strip()) if isinstance(x, str) else kind(x) for x in items)
    if isinstance(default, int):
        f = float(value)
        if f != int(f):
            raise ValueError(f"expected an integer, got {value!r}")
        return int(f)
    if isinstance(default, float):
        return float(value)
    s = str(value)
    return s.strip() if name != "delimiter" else s.encode().decode("unicode_escape")


def from_mapping(values: Mapping[str, Any], base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from raw (string or typed) values, collecting every bad key."""
    base = base or ExperimentConfig()
    kwargs, problems = {}, []
    for key, value in values.items():
        name = ALIASES.get(key.strip().lower().replace("-", "_"), key.strip().lower().replace("-", "_"))
        if name not in _FIELDS:
            problems.append(f"{key}: unknown setting")
            continue
        try:
            kwargs[name] = _coerce(name, value, getattr(base, name))
        except (TypeError, ValueError) as exc:
            problems.append(f"{key}: {exc}")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return dataclasses.replace(base, **kwargs)


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[experiment]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = dict(parser["experiment"])
    cfg = from_mapping(values)
    if cfg.dataset_path and not Path(cfg.dataset_path).is_absolute():
        cfg = dataclasses.replace(cfg, dataset_path=str(path.parent / cfg.dataset_path))
    if overrides:
        cfg = from_mapping(overrides, base=cfg)
    return cfg


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named pipeline stage."""
    return np.random.default_rng(np.random.SeedSequence([seed, *name.encode()]))


def stream_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, *name.encode()]).generate_state(1, dtype=np.uint32)[0])
