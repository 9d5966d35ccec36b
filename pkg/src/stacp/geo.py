"""Great-circle distances and the power-law distance model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0
# clamp for any distance used in a denominator or a log
MIN_DISTANCE_KM = 0.01


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"coordinates out of range: ({self.lat}, {self.lon})")


def haversine_km(p: GeoPoint, q: GeoPoint) -> float:
    lat1, lat2 = math.radians(p.lat), math.radians(q.lat)
    dlat = lat2 - lat1
    dlon = math.radians(q.lon - p.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Broadcasting haversine over degree arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def pairwise_km(coords: np.ndarray) -> np.ndarray:
    """Distances between all rows of an (n, 2) lat/lon array."""
    coords = np.asarray(coords, dtype=float)
    return haversine_array(coords[:, None, 0], coords[:, None, 1], coords[None, :, 0], coords[None, :, 1])


@dataclass(frozen=True)
class PowerLawModel:
    """Visit-pair probability ``a * d**b`` for two POIs ``d`` km apart."""

    a: float
    b: float


def fit_power_law_distances(distances, bucket_km: float = 0.5) -> PowerLawModel:
    """Least-squares line through (log mean distance, log share) of distance buckets."""
    d = np.maximum(np.asarray(distances, dtype=float).ravel(), MIN_DISTANCE_KM)
    if d.size < 2 or np.ptp(d) == 0:
        raise ValueError("degenerate power-law fit: fewer than two distinct distances")
    bucket = np.floor(d / bucket_km).astype(np.int64)
    keys, inverse, counts = np.unique(bucket, return_inverse=True, return_counts=True)
    if keys.size < 2:
        raise ValueError(f"degenerate power-law fit: all distances fall in one {bucket_km} km bucket")
    mean_d = np.bincount(inverse, weights=d) / counts
    x = np.log(mean_d)
    y = np.log(counts / counts.sum())
    b, log_a = np.polyfit(x, y, 1)
    return PowerLawModel(float(np.exp(log_a)), float(b))


def fit_power_law(train, coords: np.ndarray, bucket_km: float = 0.5) -> PowerLawModel:
    """Fit on pairwise distances between the POIs each user visited.

    ``train`` is an :class:`~stacp.ingest.InteractionMatrix`; ``coords`` is
    the (n_pois, 2) lat/lon array.
    """
    chunks = []
    for u in range(train.n_users):
        visited = train.visited(u)
        if visited.size < 2:
            continue
        dist = pairwise_km(coords[visited])
        chunks.append(dist[np.triu_indices(visited.size, k=1)])
    if not chunks:
        raise ValueError("degenerate power-law fit: no user visited two POIs")
    return fit_power_law_distances(np.concatenate(chunks), bucket_km)


def powerlaw_log_scores(model: PowerLawModel, candidates: np.ndarray, visited: np.ndarray) -> np.ndarray:
    """Log of the product over visited POIs of ``a * d**b``, per candidate row."""
    candidates = np.atleast_2d(candidates)
    visited = np.atleast_2d(visited)
    if visited.shape[0] == 0 or visited.size == 0:
        raise ValueError("power-law score needs at least one visited POI")
    d = haversine_array(candidates[:, None, 0], candidates[:, None, 1], visited[None, :, 0], visited[None, :, 1])
    logd = np.log(np.maximum(d, MIN_DISTANCE_KM))
    return visited.shape[0] * math.log(model.a) + model.b * logd.sum(axis=1)


def powerlaw_score(model: PowerLawModel, candidate: GeoPoint, visited: Sequence[GeoPoint]) -> float:
    if not visited:
        raise ValueError("power-law score needs at least one visited POI")
    log_score = powerlaw_log_scores(model, np.array([[candidate.lat, candidate.lon]]),
                                    np.array([[p.lat, p.lon] for p in visited]))
    return float(np.exp(log_score[0]))


def powerlaw_user_scores(model: PowerLawModel, coords: np.ndarray, visited: np.ndarray) -> np.ndarray:
    """Scores for every POI, rescaled so the best candidate scores 1."""
    log_scores = powerlaw_log_scores(model, coords, coords[visited])
    return np.exp(log_scores - log_scores.max())
