"""Poisson factor model trained by projected gradient ascent.

The objective is the log-posterior of a Poisson likelihood on visit counts
with Gamma-form priors on both factor matrices::

    sum_ik (s_k - 1) ln(U_ik / r_k) - U_ik / r_k
  + sum_jk (s_k - 1) ln(L_jk / r_k) - L_jk / r_k
  + sum_ij R_ij ln (U^T L)_ij - (U^T L)_ij

Factor matrices are stored K x n_users and K x n_pois.
"""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import NumericError

logger = logging.getLogger(__name__)

_MAGIC = b"STACPFM1"
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class FactorHyper:
    k: int = 30
    sigma: float = 2.0
    rho: float = 1.0
    learning_rate: float = 1e-4
    max_epochs: int = 300
    tol: float = 1e-6
    floor: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not self.floor > 0:
            raise ValueError("floor must be > 0")


@dataclass
class FactorModel:
    U: np.ndarray          # K x m
    L: np.ndarray          # K x n
    sigma: np.ndarray      # (K,)
    rho: np.ndarray        # (K,)
    seed: int = 0
    epochs: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.U.shape[0]

    def user_scores(self, u: int) -> np.ndarray:
        return self.U[:, u] @ self.L


def _counts(R) -> sp.csr_matrix:
    return R.counts if hasattr(R, "counts") else sp.csr_matrix(R)


class _Observed:
    """Stored counts with their coordinates, converted once per matrix."""

    def __init__(self, R):
        self.csr = _counts(R).copy()
        self.csr.sum_duplicates()
        self.row = np.repeat(np.arange(self.csr.shape[0]), np.diff(self.csr.indptr))
        self.col = self.csr.indices
        self.data = self.csr.data.astype(float)
        self.shape = self.csr.shape
        self.nnz = self.csr.nnz
        self._weights = self.csr.astype(float)

    def predictions(self, U, L) -> np.ndarray:
        return np.einsum("kn,kn->n", U[:, self.row], L[:, self.col])

    def weighted(self, values) -> sp.csr_matrix:
        # same sparsity pattern every call, so only the values are swapped
        self._weights.data[:] = values
        return self._weights


def _observed(R) -> _Observed:
    return R if isinstance(R, _Observed) else _Observed(R)


def _check(model: FactorModel, obs: _Observed) -> None:
    U, L = model.U, model.L
    if (U <= 0).any() or (L <= 0).any():
        raise ValueError("factor entries must be positive")
    if obs.shape != (U.shape[1], L.shape[1]):
        raise ValueError(f"shape mismatch: R {obs.shape} vs factors {(U.shape[1], L.shape[1])}")


def _prior(X, sigma, rho) -> float:
    scaled = X / rho[:, None]
    return float(((sigma - 1)[:, None] * np.log(scaled) - scaled).sum())


def objective(model: FactorModel, R) -> float:
    """Log-posterior up to an additive constant.

    The Poisson term touches only stored counts plus the factor-sum
    identity ``sum_ij (U^T L)_ij = sum_k (sum_i U_ik)(sum_j L_jk)``.
    """
    obs = _observed(R)
    _check(model, obs)
    U, L = model.U, model.L
    poisson = float(obs.data @ np.log(obs.predictions(U, L))) - float(U.sum(axis=1) @ L.sum(axis=1))
    return _prior(U, model.sigma, model.rho) + _prior(L, model.sigma, model.rho) + poisson


def gradient(model: FactorModel, R) -> tuple[np.ndarray, np.ndarray]:
    """Analytic derivatives of :func:`objective` with respect to U and L."""
    obs = _observed(R)
    _check(model, obs)
    U, L = model.U, model.L
    W = obs.weighted(obs.data / obs.predictions(U, L))
    sigma, rho = model.sigma[:, None], model.rho[:, None]
    gU = (sigma - 1) / U - 1 / rho + (W @ L.T).T - L.sum(axis=1, keepdims=True)
    gL = (sigma - 1) / L - 1 / rho + (W.T @ U.T).T - U.sum(axis=1, keepdims=True)
    return gU, gL


def init_model(m: int, n: int, hyper: FactorHyper) -> FactorModel:
    rng = np.random.default_rng(hyper.seed)
    scale = 1 / math.sqrt(hyper.k)
    U = np.maximum(rng.uniform(0, 1, (hyper.k, m)) * scale, hyper.floor)
    L = np.maximum(rng.uniform(0, 1, (hyper.k, n)) * scale, hyper.floor)
    return FactorModel(U, L, np.full(hyper.k, float(hyper.sigma)), np.full(hyper.k, float(hyper.rho)), hyper.seed)


def train(R, hyper: FactorHyper = FactorHyper()) -> FactorModel:
    """Maximize the log-posterior with projected gradient steps.

    Each epoch takes one step along the gradient, projects onto
    ``[floor, inf)``, and halves the learning rate until the objective does
    not decrease. The search restarts from the configured rate every epoch. Training stops after ``max_epochs``, when the relative
    objective gain drops below ``tol``, or when no step size helps.
    """
    counts = _observed(R)
    m, n = counts.shape
    if m == 0 or n == 0:
        raise ValueError("empty interaction matrix")
    model = init_model(m, n, hyper)
    obj = objective(model, counts)
    if not math.isfinite(obj):
        raise NumericError("non-finite objective at initialization")
    model.history.append(obj)
    for epoch in range(1, hyper.max_epochs + 1):
        lr = hyper.learning_rate
        gU, gL = gradient(model, counts)
        if not (np.isfinite(gU).all() and np.isfinite(gL).all()):
            raise NumericError(f"non-finite gradient at epoch {epoch}")
        for _ in range(_MAX_HALVINGS):
            cand = replace(model, U=np.maximum(model.U + lr * gU, hyper.floor),
                           L=np.maximum(model.L + lr * gL, hyper.floor))
            new_obj = objective(cand, counts)
            if math.isfinite(new_obj) and new_obj >= obj:
                break
            lr /= 2
        else:
            logger.debug("no ascent step found at epoch %d; stopping", epoch)
            break
        gain = new_obj - obj
        model.U, model.L, model.epochs = cand.U, cand.L, epoch
        model.history.append(new_obj)
        obj = new_obj
        if gain <= hyper.tol * max(abs(obj), 1.0):
            break
    logger.debug("trained K=%d on %dx%d (nnz=%d): %d epochs, objective %.6g",
                 hyper.k, m, n, counts.nnz, model.epochs, obj)
    return model


def static_score(model: FactorModel, u: int, l: int) -> float:
    if not (0 <= u < model.U.shape[1] and 0 <= l < model.L.shape[1]):
        raise IndexError(f"index out of range: user {u}, poi {l}")
    return float(model.U[:, u] @ model.L[:, l])


# ---------------------------------------------------------------------------
# temporal models

@dataclass
class TemporalModelSet:
    models: dict[str, FactorModel]
    empty_states: tuple[str, ...] = ()

    def user_scores(self, u: int) -> np.ndarray:
        return sum(m.user_scores(u) for m in self.models.values())


def state_seed(seed: int, state: str) -> int:
    """Stable per-state seed derived from the base seed and the state name."""
    ss = np.random.SeedSequence([seed, *state.encode()])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def train_temporal(matrices: Mapping[str, object], hyper: FactorHyper = FactorHyper(),
                   workers: int = 1) -> TemporalModelSet:
    """One independently seeded model per temporal-state matrix."""
    shapes = {_counts(R).shape for R in matrices.values()}
    if len(shapes) != 1:
        raise ValueError(f"state matrices disagree on shape: {shapes}")
    states = list(matrices)
    empty = tuple(s for s in states if _counts(matrices[s]).nnz == 0)
    for s in empty:
        logger.warning("temporal state %s has no check-ins; its model fits zeros", s)

    def fit(state):
        return train(matrices[state], replace(hyper, seed=state_seed(hyper.seed, state)))

    if workers > 1 and len(states) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fitted = list(pool.map(fit, states))
    else:
        fitted = [fit(s) for s in states]
    return TemporalModelSet(dict(zip(states, fitted)), empty)


def temporal_score(models: TemporalModelSet, u: int, l: int) -> float:
    return sum(static_score(m, u, l) for m in models.models.values())


# ---------------------------------------------------------------------------
# checkpoints

_HEADER = struct.Struct("<8sqqqqq")


def save_model(model: FactorModel, path: str | Path) -> None:
    """Header (magic, K, m, n, seed, epochs), sigma, rho, then U and L
    row-major, all little-endian 64-bit."""
    k, m = model.U.shape
    n = model.L.shape[1]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, k, m, n, model.seed, model.epochs))
        for arr in (model.sigma, model.rho, model.U, model.L):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path: str | Path) -> FactorModel:
    raw = Path(path).read_bytes()
    magic, k, m, n, seed, epochs = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a factor-model checkpoint")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * k + k * m + k * n:
        raise ValueError(f"{path}: truncated checkpoint")
    sigma, rho = body[:k].copy(), body[k:2 * k].copy()
    U = body[2 * k:2 * k + k * m].reshape(k, m).astype(np.float64)
    L = body[2 * k + k * m:].reshape(k, n).astype(np.float64)
    return FactorModel(U, L, sigma, rho, seed, epochs)
