"""End-to-end pipeline: ingest, split, fit, recommend, evaluate, sweep."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import factorization as fz
from .centers import CenterConfig, ContextConfig, allocate_centers, allocate_user_centers, center_records
from .config import ExperimentConfig, stream_seed, substream
from .errors import DataError, NumericError, StacpError
from .evaluation import METRICS, EvalReport, evaluate
from .geo import fit_power_law
from .ingest import (DatasetSplit, InteractionMatrix, build_matrix, build_state_matrices, chronological_split,
                     parse_checkins, resolve_format, write_split)
from .recommender import FusionInputs, recommend_top_n

logger = logging.getLogger(__name__)

FACTOR_METHODS = {"stacp", "no-ctx", "no-tc", "pfm", "pfmpd"}
TEMPORAL_METHODS = {"stacp", "no-ctx", "no-tc"}
SWEEP_AXES = ("training-fraction", "d", "alpha", "lambda")


class StageError(StacpError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3 if isinstance(cause, ArithmeticError) else 2)


# ---------------------------------------------------------------------------
# data

def load_split(cfg: ExperimentConfig) -> tuple[DatasetSplit, dict]:
    fmt = resolve_format(cfg.dataset_profile, cfg.columns or None, cfg.delimiter or None, cfg.header or None)
    parsed = parse_checkins(cfg.dataset_path, fmt)
    split = chronological_split(parsed.checkins, cfg.ratios)
    stats = {"checkins": len(parsed.checkins), "rejected": parsed.rejected,
             "reject_reasons": dict(sorted(parsed.reasons.items())),
             "users": len(split.users), "pois": len(split.pois), "flagged_users": len(split.flagged)}
    logger.info("parsed %d check-ins (%d rejected): %d users, %d POIs",
                stats["checkins"], stats["rejected"], stats["users"], stats["pois"])
    return split, stats


@dataclass
class TrainingData:
    split: DatasetSplit
    train: InteractionMatrix
    states: dict[str, InteractionMatrix]
    test_sets: dict[str, set]
    excluded: dict[str, str] = field(default_factory=dict)


def subsample_training(split: DatasetSplit, fraction: float, rng: np.random.Generator) -> dict:
    """Keep a random ``fraction`` of each user's distinct training POIs (and all their check-ins)."""
    if fraction >= 1:
        return split.train
    out = {}
    for user in split.users.ids:
        cs = split.train[user]
        pois = sorted({c.poi_id for c in cs}, key=split.pois.index.get)
        keep_n = int(math.floor(fraction * len(pois) + 0.5))
        keep = set(rng.choice(pois, keep_n, replace=False).tolist()) if keep_n else set()
        out[user] = [c for c in cs if c.poi_id in keep]
    return out


def prepare(split: DatasetSplit, cfg: ExperimentConfig) -> TrainingData:
    train_part = subsample_training(split, cfg.train_fraction, substream(cfg.seed, "subsample"))
    policy = cfg.policy()
    train = build_matrix(train_part, split.users, split.pois)
    states = build_state_matrices(train_part, split.users, split.pois, policy)
    full_train = build_matrix(split.train, split.users, split.pois) if cfg.train_fraction < 1 else train
    held_out = split.part(cfg.eval_split)
    test_sets, excluded = {}, {}
    for user in split.users.ids:
        u = split.users[user]
        pois = {split.pois[c.poi_id] for c in held_out[user]}
        if cfg.exclude_train_from_test:
            pois -= set(full_train.visited(u).tolist())
        test_sets[user] = pois
        if user in split.flagged:
            excluded[user] = "fewer than 3 check-ins"
        elif train.visited(u).size == 0:
            excluded[user] = "empty training set"
    return TrainingData(split, train, states, test_sets, excluded)


# ---------------------------------------------------------------------------
# models

def factor_hyper(cfg: ExperimentConfig, stream: str) -> fz.FactorHyper:
    return fz.FactorHyper(cfg.k, cfg.sigma, cfg.rho, cfg.learning_rate, cfg.max_epochs, cfg.tol, cfg.floor,
                          stream_seed(cfg.seed, stream))


def fit(data: TrainingData, cfg: ExperimentConfig, methods: Sequence[str] | None = None,
        cache: dict | None = None) -> FusionInputs:
    """Fit only what ``methods`` need. ``cache`` reuses factor models across
    calls whose factorization settings are identical."""
    methods = set(methods or cfg.methods)
    split = data.split
    states = tuple(data.states)
    inputs = FusionInputs(coords=split.coords, states=states, context=ContextConfig(cfg.lam))
    inputs.visited = [data.train.visited(u) for u in range(data.train.n_users)]
    cache = cache if cache is not None else {}
    if methods & FACTOR_METHODS:
        if "static" not in cache:
            logger.info("training static factor model")
            cache["static"] = fz.train(data.train, factor_hyper(cfg, "factor:static"))
        inputs.static = cache["static"]
    if methods & TEMPORAL_METHODS:
        if "temporal" not in cache:
            logger.info("training temporal factor models: %s", ", ".join(states))
            cache["temporal"] = fz.train_temporal(data.states, factor_hyper(cfg, "factor:temporal"), cfg.workers)
        inputs.temporal = cache["temporal"]
    center_cfg = CenterConfig(cfg.d, cfg.alpha)
    if "stacp" in methods:
        inputs.centers = allocate_user_centers(data.states, split.coords, center_cfg)
    if "no-tc" in methods:
        inputs.flat_centers = [allocate_centers(data.train.profile(u), split.coords, center_cfg)
                               for u in range(data.train.n_users)]
    if "toppopular" in methods:
        inputs.popularity = data.train.col_sums().astype(float)
    if "pfmpd" in methods:
        inputs.powerlaw = fit_power_law(data.train, split.coords, cfg.bucket_km)
        logger.info("power law: a=%.6g b=%.6g", inputs.powerlaw.a, inputs.powerlaw.b)
    return inputs


def recommend_all(inputs: FusionInputs, data: TrainingData, methods: Sequence[str], n: int,
                  users: Sequence[str] | None = None):
    """``{method: {user_id: Recommendation}}`` for the requested users."""
    users = users if users is not None else data.split.users.ids
    out = {}
    for method in methods:
        out[method] = {user: recommend_top_n(inputs, data.split.users[user], n, method) for user in users}
    return out


def evaluate_methods(data: TrainingData, inputs: FusionInputs, cfg: ExperimentConfig, recs=None) -> EvalReport:
    users = [u for u in data.split.users.ids if u not in data.excluded and data.test_sets[u]]
    if recs is None:
        recs = recommend_all(inputs, data, cfg.methods, max(cfg.cutoffs), users)
    ranked = {m: {u: r.pois for u, r in by_user.items()} for m, by_user in recs.items()}
    report = evaluate(ranked, {u: data.test_sets[u] for u in users}, cfg.cutoffs)
    report.excluded.update(data.excluded)
    for u in data.split.users.ids:
        if u not in data.excluded and not data.test_sets[u]:
            report.excluded[u] = "empty test set"
    report.excluded = dict(sorted(report.excluded.items()))
    primary = cfg.methods[0] if "stacp" not in cfg.methods else "stacp"
    report.compare(primary, [m for m in cfg.methods if m != primary])
    report.metadata = {"config_hash": cfg.digest(), "seed": cfg.seed, "eval_split": cfg.eval_split,
                       "train_fraction": cfg.train_fraction}
    if inputs.temporal is not None and inputs.temporal.empty_states:
        report.metadata["empty_states"] = list(inputs.temporal.empty_states)
    return report


def run_pipeline(cfg: ExperimentConfig, split: DatasetSplit | None = None, cache: dict | None = None):
    """Fit and evaluate in memory; returns ``(report, inputs, data)``."""
    cfg.validate()
    if split is None:
        split, _ = load_split(cfg)
    data = prepare(split, cfg)
    inputs = fit(data, cfg, cache=cache)
    return evaluate_methods(data, inputs, cfg), inputs, data


# ---------------------------------------------------------------------------
# artifacts

def write_recommendations(path: Path, recs, split: DatasetSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for user, rec in recs.items():
            for rank, (p, s) in enumerate(zip(rec.pois, rec.scores), start=1):
                fh.write(f"{user}\t{rank}\t{split.pois.ids[p]}\t{s!r}\n")


def write_centers(path: Path, inputs: FusionInputs, split: DatasetSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user\tstate\tlat\tlon\tfreq\tmembers\n")
        if inputs.centers is not None:
            for row in center_records(inputs.centers, split.users.ids):
                fh.write("\t".join(str(x) for x in row) + "\n")
        if inputs.flat_centers is not None:
            flat = [{"ALL": cs} for cs in inputs.flat_centers]
            for row in center_records(flat, split.users.ids):
                fh.write("\t".join(str(x) for x in row) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class _Stages:
    """Tracks the running stage so failures are reported by name."""

    def __init__(self, out: Path):
        self.out = out
        self.name = "config"
        self.done: list[str] = []

    def __call__(self, name: str):
        if self.name != "config":
            self.done.append(self.name)
        self.name = name
        logger.info("stage: %s", name)

    def fail(self, exc: BaseException) -> StageError:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "FAILED").write_text(f"stage: {self.name}\ncause: {exc!r}\n\n{traceback.format_exc()}",
                                         encoding="utf-8")
        return exc if isinstance(exc, StageError) else StageError(self.name, exc)


def run_experiment(cfg: ExperimentConfig, until: str = "evaluate", figures: bool = True) -> EvalReport | None:
    """Run stages up to ``until`` (ingest, split, train, recommend, evaluate),
    writing every artifact under ``cfg.out``."""
    cfg.validate()
    out = Path(cfg.out)
    stage = _Stages(out)
    order = ["ingest", "split", "train", "recommend", "evaluate"]
    if until not in order:
        raise ValueError(f"unknown stage {until!r}")
    last = order.index(until)
    manifest = {"config": cfg.as_dict(), "config_hash": cfg.digest(), "seed": cfg.seed, "stages": []}
    report = None
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "FAILED").unlink(missing_ok=True)
        stage("ingest")
        split, stats = load_split(cfg)
        manifest["ingest"] = stats
        if last >= 1:
            stage("split")
            write_split(split, out / "split")
        if last >= 2:
            stage("train")
            data = prepare(split, cfg)
            inputs = fit(data, cfg)
            models = out / "models"
            models.mkdir(exist_ok=True)
            if inputs.static is not None:
                fz.save_model(inputs.static, models / "static.pfm")
            if inputs.temporal is not None:
                for s, m in inputs.temporal.models.items():
                    fz.save_model(m, models / f"temporal_{s}.pfm")
                manifest["empty_states"] = list(inputs.temporal.empty_states)
            write_centers(out / "centers.tsv", inputs, split)
            if inputs.powerlaw is not None:
                manifest["powerlaw"] = {"a": inputs.powerlaw.a, "b": inputs.powerlaw.b}
        if last >= 3:
            stage("recommend")
            recs = recommend_all(inputs, data, cfg.methods, max(cfg.cutoffs))
            for method, by_user in recs.items():
                write_recommendations(out / f"recommendations_{method}.tsv", by_user, split)
            manifest["short_lists"] = {m: sorted(u for u, r in by_user.items() if r.short)
                                       for m, by_user in recs.items()}
        if last >= 4:
            stage("evaluate")
            eval_users = {u for u in split.users.ids if u not in data.excluded and data.test_sets[u]}
            report = evaluate_methods(data, inputs, cfg,
                                      {m: {u: r for u, r in by.items() if u in eval_users} for m, by in recs.items()})
            report.write(out)
            if figures:
                from .plotting import plot_report
                plot_report(report, out / "report.png")
        stage.done.append(stage.name)
        manifest["stages"] = stage.done
        _write_json(out / "manifest.json", manifest)
    except Exception as exc:
        manifest["stages"] = stage.done
        manifest["failed_stage"] = stage.name
        try:
            _write_json(out / "manifest.json", manifest)
        except OSError:
            pass
        raise stage.fail(exc) from exc
    return report


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepTable:
    axis: str
    rows: list[dict]

    def values(self, method: str, metric: str, n: int) -> list[tuple[float, float]]:
        return [(r["value"], r["mean"]) for r in self.rows
                if r["method"] == method and r["metric"] == metric and r["n"] == n]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, ["axis", "value", "method", "metric", "n", "mean", "users"],
                               lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({"axis": self.axis, **r, "mean": repr(r["mean"])})


_FIELD = {"training-fraction": "train_fraction", "d": "d", "alpha": "alpha", "lambda": "lam"}


def _sweep_point(args):
    cfg, split = args
    report, _, _ = run_pipeline(cfg, split)
    return report


def run_sweep(axis: str, grid: Sequence[float], cfg: ExperimentConfig, split: DatasetSplit | None = None,
              return_reports: bool = False):
    """Re-run the pipeline at each grid value of ``axis``.

    Factor models do not depend on d, alpha or lambda, so those sweeps
    train them once and reuse them; results equal independent reruns.
    """
    if axis not in _FIELD:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if not grid:
        raise ValueError("sweep grid is empty")
    cfgs = [dataclasses.replace(cfg, **{_FIELD[axis]: float(v)}).validate() for v in grid]
    if split is None:
        split, _ = load_split(cfg)
    reports = []
    if axis == "training-fraction" and cfg.workers > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(_sweep_point, [(c, split) for c in cfgs]))
    else:
        cache = None if axis == "training-fraction" else {}
        for c in cfgs:
            report, _, _ = run_pipeline(c, split, cache=cache)
            reports.append(report)
    rows = []
    for v, report in zip(grid, reports):
        for (method, metric, n), mean in report.aggregates().items():
            rows.append({"value": float(v), "method": method, "metric": metric, "n": n, "mean": mean,
                         "users": len(report.users)})
    table = SweepTable(axis, rows)
    return (table, reports) if return_reports else table
