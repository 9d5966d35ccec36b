"""Top-N metrics, paired significance tests and evaluation reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

METRICS = ("precision", "recall", "ndcg")


def _check(n: int, test) -> None:
    if n <= 0:
        raise ValueError(f"cutoff N must be positive, got {n}")
    if not test:
        raise ValueError("test set is empty")


def _hits(recs: Sequence[int], test: set, n: int) -> int:
    return sum(1 for p in recs[:n] if p in test)


def precision_at(recs: Sequence[int], test: Iterable[int], n: int) -> float:
    test = set(test)
    _check(n, test)
    return _hits(recs, test, n) / n


def recall_at(recs: Sequence[int], test: Iterable[int], n: int) -> float:
    test = set(test)
    _check(n, test)
    return _hits(recs, test, n) / len(test)


def ndcg_at(recs: Sequence[int], test: Iterable[int], n: int) -> float:
    """Binary-relevance nDCG with log2 discount; the ideal list has
    ``min(n, |test|)`` hits."""
    test = set(test)
    _check(n, test)
    dcg = sum(1 / math.log2(i + 2) for i, p in enumerate(recs[:n]) if p in test)
    idcg = sum(1 / math.log2(i + 2) for i in range(min(n, len(test))))
    return dcg / idcg


METRIC_FUNCS = {"precision": precision_at, "recall": recall_at, "ndcg": ndcg_at}


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    significant: bool
    degenerate: bool = False
    mean_diff: float = 0.0


def paired_ttest(a: Sequence[float], b: Sequence[float], level: float = 0.05) -> TTestResult:
    """Two-tailed paired t-test of ``a`` against ``b``.

    Identical samples are not significant. Constant nonzero differences
    have no variance; they are reported significant and flagged degenerate.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.ndim != 1 or len(a) != len(b):
        raise ValueError("paired samples must be 1-d and equally long")
    if d.size < 2:
        raise ValueError("paired t-test needs at least two pairs")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, False, False, 0.0)
        return TTestResult(math.copysign(math.inf, mean), 0.0, True, True, mean)
    t = mean / (sd / math.sqrt(d.size))
    p = float(2 * stats.t.sf(abs(t), df=d.size - 1))
    return TTestResult(t, p, p < level, False, mean)


@dataclass
class EvalReport:
    """Per-user metric vectors keyed by ``(method, metric, N)``.

    ``users`` lists the evaluated user ids in the order every vector
    follows; ``excluded`` lists users left out and why.
    """

    users: list[str]
    per_user: dict[tuple[str, str, int], np.ndarray]
    cutoffs: tuple[int, ...] = (10, 20)
    excluded: dict[str, str] = field(default_factory=dict)
    significance: dict[tuple[str, str, str, int], TTestResult] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.per_user))

    def mean(self, method: str, metric: str, n: int) -> float:
        v = self.per_user[(method, metric, n)]
        return float(v.mean()) if v.size else float("nan")

    def aggregates(self) -> dict[tuple[str, str, int], float]:
        return {k: self.mean(*k) for k in self.per_user}

    def compare(self, method: str, competitors: Sequence[str]) -> None:
        """Paired tests of ``method`` against each competitor on every metric."""
        for other in competitors:
            if other == method or (other, "recall", self.cutoffs[0]) not in self.per_user:
                continue
            for metric in METRICS:
                for n in self.cutoffs:
                    a, b = self.per_user[(method, metric, n)], self.per_user[(other, metric, n)]
                    if a.size >= 2:
                        self.significance[(method, other, metric, n)] = paired_ttest(a, b)

    # -- output -----------------------------------------------------------

    def format_table(self) -> str:
        cols = [(m, n) for m in METRICS for n in self.cutoffs]
        header = ["method"] + [f"{m[:4].capitalize()}@{n}" for m, n in cols]
        rows = []
        for method in self.methods:
            cells = [method]
            for metric, n in cols:
                tests = [r for (a, _, mt, nn), r in self.significance.items()
                         if a == method and mt == metric and nn == n]
                beats_all = bool(tests) and all(r.significant and r.mean_diff > 0 for r in tests)
                cells.append(f"{self.mean(method, metric, n):.4f}{'*' if beats_all else ''}")
            rows.append(cells)
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        lines.append(f"users evaluated: {len(self.users)}; excluded: {len(self.excluded)}")
        if self.significance:
            lines.append("* significantly better than every compared method (paired t-test, p < 0.05)")
            lines.append("")
            lines.append("significance (method vs competitor, metric@N: mean diff, t, p):")
            for (a, b, metric, n), r in self.significance.items():
                flag = "significant" if r.significant else "n.s."
                if r.degenerate:
                    flag += " (degenerate)"
                lines.append(f"  {a} vs {b} {metric}@{n}: {r.mean_diff:+.4f} t={r.t:.3f} p={r.p:.4g} {flag}")
        return "\n".join(lines) + "\n"

    def records_csv(self) -> str:
        """One row per (method, metric, N, user) plus one ``__mean__`` row per aggregate."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "metric", "n", "user", "value"])
        for (method, metric, n), vec in self.per_user.items():
            for user, v in zip(self.users, vec.tolist()):
                w.writerow([method, metric, n, user, repr(v)])
            w.writerow([method, metric, n, "__mean__", repr(self.mean(method, metric, n))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "metadata": self.metadata,
            "cutoffs": list(self.cutoffs),
            "n_users": len(self.users),
            "aggregates": [{"method": m, "metric": mt, "n": n, "value": v}
                           for (m, mt, n), v in self.aggregates().items()],
            "significance": [{"method": a, "competitor": b, "metric": mt, "n": n, "t": r.t, "p": r.p,
                              "significant": r.significant, "degenerate": r.degenerate, "mean_diff": r.mean_diff}
                             for (a, b, mt, n), r in self.significance.items()],
            "excluded": self.excluded,
        }

    def write(self, outdir: str | Path, stem: str = "report") -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = [outdir / f"{stem}.txt", outdir / f"{stem}.csv", outdir / f"{stem}.json"]
        paths[0].write_text(self.format_table(), encoding="utf-8")
        paths[1].write_text(self.records_csv(), encoding="utf-8")
        paths[2].write_text(json.dumps(self.summary(), indent=2, sort_keys=True, default=_jsonable) + "\n",
                            encoding="utf-8")
        return paths


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (set, frozenset, tuple)):
        return sorted(x) if isinstance(x, (set, frozenset)) else list(x)
    raise TypeError(f"not serializable: {type(x)}")


def evaluate(recommendations: Mapping[str, Mapping[str, Sequence[int]]], test_sets: Mapping[str, set],
             cutoffs: Sequence[int] = (10, 20), excluded: Mapping[str, str] | None = None) -> EvalReport:
    """Score ranked lists against held-out POIs.

    ``recommendations[method][user]`` is a ranked POI list at least
    ``max(cutoffs)`` long where possible; users with empty test sets are
    excluded and listed.
    """
    excluded = dict(excluded or {})
    users = [u for u in test_sets if u not in excluded]
    for u in list(users):
        if not test_sets[u]:
            excluded[u] = "empty test set"
    users = [u for u in users if u not in excluded]
    per_user = {}
    for method, recs in recommendations.items():
        for metric in METRICS:
            f = METRIC_FUNCS[metric]
            for n in cutoffs:
                per_user[(method, metric, n)] = np.array([f(list(recs[u]), test_sets[u], n) for u in users])
    return EvalReport(users, per_user, tuple(cutoffs), excluded)
