"""Report figures: method comparison bars and sweep curves."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (np.sqrt(5) - 1) / 2

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "svg.hashsalt": "stacp",
}

AXIS_LABELS = {"training-fraction": "fraction of training POIs", "d": "d (km)", "alpha": r"$\alpha$",
               "lambda": r"$\lambda$"}


def metric_label(metric):
    return "nDCG" if metric == "ndcg" else metric.capitalize()


def figsize(width=6.5, ratio=GOLDEN):
    return (width, width * ratio)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamp metadata so reruns produce identical files
    fig.savefig(path, dpi=150, metadata={"Software": None} if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def plot_report(report, path):
    """One panel per metric, grouped bars per cutoff for every method."""
    metrics = ("precision", "recall", "ndcg")
    methods = report.methods
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=figsize(7.5, 0.35))
        width = 0.8 / max(len(report.cutoffs), 1)
        x = np.arange(len(methods))
        for ax, metric in zip(axes, metrics):
            for i, n in enumerate(report.cutoffs):
                vals = [report.mean(m, metric, n) for m in methods]
                ax.bar(x + (i - (len(report.cutoffs) - 1) / 2) * width, vals, width, label=f"@{n}")
            ax.set_xticks(x)
            ax.set_xticklabels(methods, rotation=45, ha="right")
            ax.set_title(metric_label(metric))
        axes[-1].legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        fig.tight_layout()
        return _save(fig, path)


def plot_sweep(table, path, metric="ndcg", n=20):
    """Metric@n against the swept value, one line per method."""
    methods = list(dict.fromkeys(r["method"] for r in table.rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(5.0, 0.5))
        for method in methods:
            pts = table.values(method, metric, n)
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", label=method)
        ax.set_xlabel(AXIS_LABELS.get(table.axis, table.axis))
        ax.set_ylabel(f"{metric_label(metric)}@{n}")
        ax.legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        fig.tight_layout()
        return _save(fig, path)
