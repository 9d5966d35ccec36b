"""Per-user, per-state activity centers and the spatio-temporal context score."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geo import MIN_DISTANCE_KM, GeoPoint, haversine_array


@dataclass(frozen=True)
class CenterConfig:
    d: float = 15.0       # region radius, km
    alpha: float = 0.02   # minimum share of the user's check-ins for a region to count

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError(f"d must be > 0, got {self.d}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class ContextConfig:
    lam: float = 0.5      # weight of the first (working) state

    def __post_init__(self):
        if not 0 <= self.lam <= 1:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class ActivityCenter:
    lat: float
    lon: float
    freq: int
    members: frozenset
    anchor: int
    state: str | None = None

    @property
    def location(self) -> GeoPoint:
        return GeoPoint(self.lat, self.lon)


@dataclass(frozen=True)
class Region:
    center: ActivityCenter
    accepted: bool


def allocate_regions(profile: Mapping[int, int], coords: np.ndarray, cfg: CenterConfig,
                     state: str | None = None) -> list[Region]:
    """Greedy region growing over one user's (state-filtered) visit profile.

    The most visited unconsumed POI seeds a region that swallows every
    unconsumed POI within ``cfg.d`` km. Regions are accepted as centers when
    their check-in share exceeds ``cfg.alpha``; rejected regions still
    consume their POIs. Equal frequencies go to the lower POI index.
    """
    if not profile:
        return []
    pois = np.array(sorted(profile, key=lambda p: (-profile[p], p)), dtype=np.int64)
    freqs = np.array([profile[p] for p in pois], dtype=np.int64)
    total = freqs.sum()
    pts = np.asarray(coords, dtype=float)[pois]
    free = np.ones(len(pois), dtype=bool)
    regions = []
    for i in range(len(pois)):
        if not free[i]:
            continue
        dist = haversine_array(pts[i, 0], pts[i, 1], pts[:, 0], pts[:, 1])
        take = free & (dist <= cfg.d)
        take[i] = True
        free &= ~take
        freq = int(freqs[take].sum())
        center = ActivityCenter(float(pts[i, 0]), float(pts[i, 1]), freq,
                                frozenset(pois[take].tolist()), int(pois[i]), state)
        regions.append(Region(center, freq / total > cfg.alpha))
    return regions


def allocate_centers(profile: Mapping[int, int], coords: np.ndarray, cfg: CenterConfig,
                     state: str | None = None) -> list[ActivityCenter]:
    return [r.center for r in allocate_regions(profile, coords, cfg, state) if r.accepted]


def center_scores(lat, lon, centers: Sequence[ActivityCenter]) -> np.ndarray:
    """Distance-discounted, frequency-weighted center affinity for arrays of points."""
    lat = np.asarray(lat, dtype=float)
    if not centers:
        return np.zeros(lat.shape)
    c = np.array([(x.lat, x.lon, x.freq) for x in centers], dtype=float)
    share = c[:, 2] / c[:, 2].sum()
    dist = haversine_array(lat[..., None], np.asarray(lon, dtype=float)[..., None], c[:, 0], c[:, 1])
    return (share / np.maximum(dist, MIN_DISTANCE_KM)).sum(axis=-1)


def state_center_score(l: GeoPoint, centers: Sequence[ActivityCenter]) -> float:
    return float(center_scores(l.lat, l.lon, centers))


def interpolate_states(p_work, p_leisure, has_work: bool, has_leisure: bool, cfg: ContextConfig):
    """Blend two state scores; a state without centers hands its weight to the other,
    and with no centers at all the result is the neutral multiplier 1."""
    if has_work and has_leisure:
        return cfg.lam * p_work + (1 - cfg.lam) * p_leisure
    if has_work:
        return p_work
    if has_leisure:
        return p_leisure
    return np.ones_like(np.asarray(p_work, dtype=float))


def context_scores(coords: np.ndarray, working: Sequence[ActivityCenter], leisure: Sequence[ActivityCenter],
                   cfg: ContextConfig) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    p_work = center_scores(coords[:, 0], coords[:, 1], working)
    p_leisure = center_scores(coords[:, 0], coords[:, 1], leisure)
    return interpolate_states(p_work, p_leisure, bool(working), bool(leisure), cfg)


def context_score(l: GeoPoint, working: Sequence[ActivityCenter], leisure: Sequence[ActivityCenter],
                  cfg: ContextConfig) -> float:
    return float(context_scores(np.array([[l.lat, l.lon]]), working, leisure, cfg)[0])


def allocate_user_centers(matrices: Mapping[str, "InteractionMatrix"], coords: np.ndarray,
                          cfg: CenterConfig) -> list[dict[str, list[ActivityCenter]]]:
    """Centers for every user and every state matrix, indexed ``[u][state]``."""
    n_users = next(iter(matrices.values())).n_users
    return [{s: allocate_centers(m.profile(u), coords, cfg, s) for s, m in matrices.items()}
            for u in range(n_users)]


def center_records(centers: list[dict[str, list[ActivityCenter]]], user_ids: Sequence[str]):
    """Flat rows (user, state, lat, lon, freq, members) for map plotting."""
    for u, by_state in enumerate(centers):
        for state, cs in by_state.items():
            for c in cs:
                yield user_ids[u], state, c.lat, c.lon, c.freq, len(c.members)
