"""Score fusion, top-N ranking, ablations and baselines."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .centers import ActivityCenter, ContextConfig, center_scores, context_scores
from .factorization import FactorModel, TemporalModelSet
from .geo import PowerLawModel, powerlaw_user_scores

logger = logging.getLogger(__name__)

METHODS = ("stacp", "no-ctx", "no-tc", "toppopular", "pfm", "pfmpd")


@dataclass
class FusionInputs:
    """Everything fitted on one training split.

    ``centers[u]`` maps each temporal state to that user's centers and
    ``flat_centers[u]`` holds centers allocated without state filtering.
    Fields a given method does not need may be left as ``None``.
    """

    coords: np.ndarray
    states: tuple[str, str] = ("WORKING", "LEISURE")
    context: ContextConfig = field(default_factory=ContextConfig)
    static: FactorModel | None = None
    temporal: TemporalModelSet | None = None
    centers: list[dict[str, list[ActivityCenter]]] | None = None
    flat_centers: list[list[ActivityCenter]] | None = None
    popularity: np.ndarray | None = None
    powerlaw: PowerLawModel | None = None
    visited: list[np.ndarray] | None = None

    def context_vector(self, u: int) -> np.ndarray:
        by_state = self.centers[u]
        work, leisure = (by_state.get(s, []) for s in self.states)
        return context_scores(self.coords, work, leisure, self.context)

    def flat_context_vector(self, u: int) -> np.ndarray:
        cs = self.flat_centers[u]
        if not cs:
            return np.ones(len(self.coords))
        return center_scores(self.coords[:, 0], self.coords[:, 1], cs)


def score_vector(method: str, inputs: FusionInputs, u: int) -> np.ndarray:
    """Scores of every POI for user ``u`` under ``method``."""
    if method == "stacp":
        return inputs.static.user_scores(u) * inputs.context_vector(u) * inputs.temporal.user_scores(u)
    if method == "no-ctx":
        return inputs.static.user_scores(u) * inputs.temporal.user_scores(u)
    if method == "no-tc":
        return inputs.static.user_scores(u) * inputs.flat_context_vector(u) * inputs.temporal.user_scores(u)
    if method == "toppopular":
        return np.asarray(inputs.popularity, dtype=float)
    if method == "pfm":
        return inputs.static.user_scores(u)
    if method == "pfmpd":
        visited = inputs.visited[u]
        if visited.size == 0:
            logger.debug("user %d has no training visits; pfmpd falls back to pfm", u)
            return inputs.static.user_scores(u)
        return inputs.static.user_scores(u) * powerlaw_user_scores(inputs.powerlaw, inputs.coords, visited)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def stacp_score(inputs: FusionInputs, u: int, l: int) -> float:
    """Static preference x spatio-temporal context x temporal preference."""
    return float(score_vector("stacp", inputs, u)[l])


def ablation_score(variant: str, inputs: FusionInputs, u: int, l: int) -> float:
    variant = {"NoCTX": "no-ctx", "NoTC": "no-tc"}.get(variant, variant)
    if variant not in ("no-ctx", "no-tc"):
        raise ValueError(f"unknown ablation {variant!r}")
    return float(score_vector(variant, inputs, u)[l])


def baseline_score(method: str, inputs: FusionInputs, u: int, l: int) -> float:
    method = method.lower()
    if method not in ("toppopular", "pfm", "pfmpd"):
        raise ValueError(f"unknown baseline {method!r}")
    return float(score_vector(method, inputs, u)[l])


@dataclass(frozen=True)
class Recommendation:
    user: int
    pois: tuple[int, ...]
    scores: tuple[float, ...]
    short: bool = False


def top_n(scores: np.ndarray, n: int, exclude: Sequence[int] = (), user: int = -1) -> Recommendation:
    """Highest scores first, ties to the lower POI index; ``exclude`` never appears."""
    if n <= 0:
        raise ValueError("N must be positive")
    scores = np.asarray(scores, dtype=float)
    mask = np.ones(scores.size, dtype=bool)
    mask[np.asarray(exclude, dtype=np.int64)] = False
    cand = np.flatnonzero(mask)
    short = cand.size < n
    if short:
        logger.debug("user %d: only %d candidates for top-%d", user, cand.size, n)
    s = scores[cand]
    if cand.size > 4 * n:
        # prefilter with a threshold that keeps every tie at the cut
        kth = np.partition(-s, n - 1)[n - 1]
        keep = -s <= kth
        cand, s = cand[keep], s[keep]
    order = np.lexsort((cand, -s))[:n]
    return Recommendation(user, tuple(cand[order].tolist()), tuple(s[order].tolist()), short)


def recommend_top_n(inputs: FusionInputs, u: int, n: int, method: str = "stacp",
                    exclude: Sequence[int] | None = None) -> Recommendation:
    """Top ``n`` candidates for ``u``; candidates default to every POI not in u's training history."""
    if exclude is None:
        exclude = inputs.visited[u] if inputs.visited is not None else ()
    return top_n(score_vector(method, inputs, u), n, exclude, u)
