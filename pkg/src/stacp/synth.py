"""Synthetic check-ins with planted per-state activity centers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ingest import LEISURE, WORKING, CheckIn, write_checkins

# Monday 2012-04-02 00:00 UTC
_EPOCH_MONDAY = 1333324800
_KM_PER_DEG_LAT = 111.195


@dataclass(frozen=True)
class SynthSpec:
    """Layout of a generated dataset.

    POIs are grouped into hotspots of ``pois_per_hotspot`` venues; the first
    venue of each hotspot sits exactly on the hotspot location and the rest
    are scattered uniformly within ``radius_km``. Every user draws
    ``centers_per_state`` distinct hotspots for each state.
    """

    users: int = 50
    pois: int = 200
    centers_per_state: int = 2
    radius_km: float = 1.0
    visits_per_user: int = 100
    seed: int = 0
    pois_per_hotspot: int = 10
    area_km: float = 40.0
    working_share: float = 0.5
    days: int = 180
    origin: tuple[float, float] = (40.75, -73.98)

    def __post_init__(self):
        for name in ("users", "pois", "centers_per_state", "visits_per_user", "pois_per_hotspot", "days"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.radius_km < 0 or self.area_km <= 0:
            raise ValueError("radius_km must be >= 0 and area_km > 0")
        if not 0 <= self.working_share <= 1:
            raise ValueError("working_share must lie in [0, 1]")
        if self.n_hotspots < 2 * self.centers_per_state:
            raise ValueError("not enough hotspots for distinct working and leisure centers")

    @property
    def n_hotspots(self) -> int:
        return max(1, self.pois // self.pois_per_hotspot)


@dataclass
class SynthDataset:
    checkins: list[CheckIn]
    poi_coords: np.ndarray
    hotspot_coords: np.ndarray
    planted: dict[str, dict[str, list[int]]] = field(default_factory=dict)  # user -> state -> hotspot ids

    def planted_coords(self, user: str, state: str) -> np.ndarray:
        return self.hotspot_coords[self.planted[user][state]]


def _offset(origin, dx_km, dy_km):
    lat0, lon0 = origin
    lat = lat0 + dy_km / _KM_PER_DEG_LAT
    lon = lon0 + dx_km / (_KM_PER_DEG_LAT * math.cos(math.radians(lat0)))
    return lat, lon


def _working_time(rng, day: int) -> int:
    week = day // 7
    weekday = rng.integers(0, 5)
    hour = rng.integers(8, 18)
    return _EPOCH_MONDAY + ((week * 7 + weekday) * 24 + hour) * 3600 + int(rng.integers(0, 3600))


def _leisure_time(rng, day: int) -> int:
    week = day // 7
    if rng.random() < 0.5:
        weekday, hour = rng.integers(5, 7), rng.integers(0, 24)
    else:
        weekday, hour = rng.integers(0, 5), rng.integers(18, 24)
    return _EPOCH_MONDAY + ((week * 7 + weekday) * 24 + hour) * 3600 + int(rng.integers(0, 3600))


def generate(spec: SynthSpec) -> SynthDataset:
    rng = np.random.default_rng(spec.seed)
    n_hot = spec.n_hotspots
    half = spec.area_km / 2
    hot_xy = rng.uniform(-half, half, (n_hot, 2))
    hotspots = np.array([_offset(spec.origin, x, y) for x, y in hot_xy])

    poi_hotspot = np.arange(spec.pois) % n_hot
    coords = np.empty((spec.pois, 2))
    first = {}
    for p in range(spec.pois):
        h = poi_hotspot[p]
        if h not in first:
            first[h] = p
            coords[p] = hotspots[h]
            continue
        r = spec.radius_km * math.sqrt(rng.random())
        theta = rng.uniform(0, 2 * math.pi)
        coords[p] = _offset(tuple(hotspots[h]), r * math.cos(theta), r * math.sin(theta))
    members = [np.flatnonzero(poi_hotspot == h) for h in range(n_hot)]

    checkins, planted = [], {}
    c = spec.centers_per_state
    for u in range(spec.users):
        user = f"u{u:04d}"
        chosen = rng.choice(n_hot, 2 * c, replace=False)
        planted[user] = {WORKING: chosen[:c].tolist(), LEISURE: chosen[c:].tolist()}
        center_w = rng.dirichlet(np.full(c, 4.0), size=2)
        # per-user taste over the venues of each hotspot: Zipf over a random order
        taste = {}
        for h in chosen:
            order = rng.permutation(members[h])
            w = 1.0 / np.arange(1, order.size + 1)
            taste[h] = (order, w / w.sum())
        visits = []
        for _ in range(spec.visits_per_user):
            day = int(rng.integers(0, spec.days))
            if rng.random() < spec.working_share:
                state, ts = 0, _working_time(rng, day)
            else:
                state, ts = 1, _leisure_time(rng, day)
            h = chosen[state * c + rng.choice(c, p=center_w[state])]
            order, w = taste[h]
            p = int(order[rng.choice(order.size, p=w)])
            visits.append(CheckIn(user, f"p{p:05d}", int(ts), float(coords[p, 0]), float(coords[p, 1])))
        visits.sort(key=lambda ci: ci.timestamp)
        checkins.extend(visits)
    return SynthDataset(checkins, coords, hotspots, planted)


def generate_synthetic(spec: SynthSpec, path: str | Path) -> SynthDataset:
    """Generate ``spec`` and write it in the standard check-in layout."""
    data = generate(spec)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_checkins(path, data.checkins)
    return data
