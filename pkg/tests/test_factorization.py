import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from stacp.errors import NumericError
from stacp.factorization import (FactorHyper, FactorModel, TemporalModelSet, gradient, load_model, objective,
                                 save_model, static_score, temporal_score, train, train_temporal)


def model(U, L, sigma=1.0, rho=1.0):
    U, L = np.atleast_2d(np.asarray(U, float)), np.atleast_2d(np.asarray(L, float))
    k = U.shape[0]
    return FactorModel(U, L, np.full(k, sigma), np.full(k, rho))


def dense_objective(m, R):
    """Every cell of the Poisson term evaluated directly."""
    R = np.asarray(R, float)
    P = m.U.T @ m.L
    prior = sum(((m.sigma - 1)[:, None] * np.log(X / m.rho[:, None]) - X / m.rho[:, None]).sum() for X in (m.U, m.L))
    return prior + (R * np.log(P) - P).sum()


def finite_difference(m, R, h=1e-6):
    grads = []
    for name in ("U", "L"):
        X = getattr(m, name)
        G = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            old = X[idx]
            X[idx] = old + h
            up = objective(m, R)
            X[idx] = old - h
            down = objective(m, R)
            X[idx] = old
            G[idx] = (up - down) / (2 * h)
        grads.append(G)
    return grads


def random_instance(rng, m, n, k):
    R = sp.csr_matrix(rng.poisson(1.0, (m, n)) * (rng.random((m, n)) < 0.4))
    mdl = model(rng.uniform(0.2, 1.5, (k, m)), rng.uniform(0.2, 1.5, (k, n)))
    mdl.sigma = rng.uniform(1.0, 3.0, k)
    mdl.rho = rng.uniform(0.5, 2.0, k)
    return mdl, R


def test_objective_hand_values():
    assert objective(model([[1.0]], [[1.0]]), sp.csr_matrix([[1]])) == pytest.approx(-3.0)
    assert objective(model([[1.0]], [[1.0]]), sp.csr_matrix([[0]])) == pytest.approx(-3.0)


def test_exponential_prior_reduces_to_sums(rng):
    mdl = model(rng.uniform(0.1, 2, (3, 4)), rng.uniform(0.1, 2, (3, 5)))
    R = sp.csr_matrix((4, 5))
    P = mdl.U.T @ mdl.L
    assert objective(mdl, R) == pytest.approx(-mdl.U.sum() - mdl.L.sum() - P.sum())


def test_objective_rejects_nonpositive_entries():
    with pytest.raises(ValueError):
        objective(model([[0.0]], [[1.0]]), sp.csr_matrix([[1]]))
    with pytest.raises(ValueError):
        gradient(model([[1.0]], [[-1.0]]), sp.csr_matrix([[1]]))


def test_sparse_objective_matches_dense(rng):
    for _ in range(10):
        mdl, R = random_instance(rng, 7, 9, 3)
        assert objective(mdl, R) == pytest.approx(dense_objective(mdl, R.toarray()), rel=1e-9)


def test_gradient_for_zero_matrix(rng):
    mdl = model(rng.uniform(0.1, 2, (2, 3)), rng.uniform(0.1, 2, (2, 4)))
    gU, gL = gradient(mdl, sp.csr_matrix((3, 4)))
    np.testing.assert_allclose(gU, -1 - np.repeat(mdl.L.sum(axis=1, keepdims=True), 3, axis=1))
    np.testing.assert_allclose(gL, -1 - np.repeat(mdl.U.sum(axis=1, keepdims=True), 4, axis=1))


def test_gradient_matches_finite_differences(rng):
    mdl, R = random_instance(rng, 5, 4, 3)
    gU, gL = gradient(mdl, R)
    fU, fL = finite_difference(mdl, R)
    for g, f in ((gU, fU), (gL, fL)):
        assert np.max(np.abs(g - f) / np.maximum(np.abs(f), 1.0)) < 1e-5


def test_trainer_is_monotone_and_positive(rng):
    R = sp.csr_matrix(rng.poisson(2.0, (10, 10)))
    m = train(R, FactorHyper(k=4, learning_rate=1e-2, max_epochs=200, seed=3))
    assert np.all(np.diff(m.history) >= -1e-12)
    assert (m.U >= 1e-8).all() and (m.L >= 1e-8).all()
    assert np.isfinite(m.history).all()


def test_trainer_is_deterministic(rng):
    R = sp.csr_matrix(rng.poisson(1.0, (8, 6)))
    hyper = FactorHyper(k=3, max_epochs=50, seed=11)
    a, b = train(R, hyper), train(R, hyper)
    assert a.U.tobytes() == b.U.tobytes() and a.L.tobytes() == b.L.tobytes()
    c = train(R, FactorHyper(k=3, max_epochs=50, seed=12))
    assert not np.array_equal(a.U, c.U)


def test_trainer_rejects_empty_matrix():
    with pytest.raises(ValueError):
        train(sp.csr_matrix((0, 3)))


def test_trainer_reports_non_finite_objective():
    R = sp.csr_matrix([[np.inf]])
    with pytest.raises(NumericError):
        train(R, FactorHyper(k=1, max_epochs=3))


def test_trainer_accepts_all_zero_matrix():
    m = train(sp.csr_matrix((3, 4)), FactorHyper(k=2, max_epochs=20))
    assert (m.U.T @ m.L < 0.5).all()


def test_diagonal_counts_reconstructed():
    # a nearly flat prior lets the Poisson term dominate; the best of a few
    # restarts avoids the occasional split-factor local optimum
    R = sp.csr_matrix(np.diag([3.0] * 5))
    fits = [train(R, FactorHyper(k=5, sigma=1.0, rho=1e6, learning_rate=1e-2, max_epochs=20000, tol=1e-10,
                                 seed=s)) for s in range(4)]
    best = max(fits, key=lambda f: f.history[-1])
    np.testing.assert_allclose(np.diag(best.U.T @ best.L), 3.0, atol=0.5)


def test_static_score_examples():
    m = model([[1.0], [2.0]], [[3.0], [1.0]])
    assert static_score(m, 0, 0) == 5.0
    floor = model(np.full((4, 2), 1e-8), np.full((4, 3), 1e-8))
    assert static_score(floor, 1, 2) >= 4 * 1e-16 * (1 - 1e-12)
    with pytest.raises(IndexError):
        static_score(m, 1, 0)


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_static_score_invariant_to_factor_permutation(k, seed):
    rng = np.random.default_rng(seed)
    U, L = rng.uniform(0.01, 2, (k, 3)), rng.uniform(0.01, 2, (k, 4))
    perm = rng.permutation(k)
    a, b = model(U, L), model(U[perm], L[perm])
    assert static_score(a, 2, 3) == pytest.approx(static_score(b, 2, 3), rel=1e-12)


def test_temporal_score_sums_states():
    s = TemporalModelSet({"WORKING": model([[0.4]], [[1.0]]), "LEISURE": model([[0.6]], [[1.0]])})
    assert temporal_score(s, 0, 0) == pytest.approx(1.0)
    np.testing.assert_allclose(s.user_scores(0), [1.0])


def test_empty_state_contributes_almost_nothing(rng):
    # with shape 1 the prior is exponential and an all-zero state decays to the floor
    R = sp.csr_matrix(rng.poisson(2.0, (6, 5)))
    hyper = FactorHyper(k=3, sigma=1.0, learning_rate=1e-2, max_epochs=300)
    s = train_temporal({"WORKING": R, "LEISURE": sp.csr_matrix((6, 5))}, hyper)
    assert s.empty_states == ("LEISURE",)
    work = s.models["WORKING"].user_scores(2)
    np.testing.assert_allclose(s.user_scores(2), work, rtol=1e-9)
    assert s.models["LEISURE"].user_scores(2).max() < 1e-12


def test_single_state_temporal_matches_static_ranking(rng):
    # two user groups, each with ten favourite POIs
    m, n = 30, 60
    taste = np.full((m, n), 0.3)
    taste[: m // 2, :10] = 6.0
    taste[m // 2:, 30:40] = 6.0
    R = sp.csr_matrix(rng.poisson(taste))
    hyper = FactorHyper(k=5, learning_rate=1e-3, max_epochs=2000)
    static = train(R, hyper)
    temporal = train_temporal({"ALL": R}, hyper)
    overlap = []
    for u in range(m):
        a = set(np.argsort(-static.user_scores(u), kind="stable")[:10])
        b = set(np.argsort(-temporal.user_scores(u), kind="stable")[:10])
        overlap.append(len(a & b) / 10)
    assert np.mean(overlap) > 0.9


def test_train_temporal_workers_match_serial(rng):
    mats = {"WORKING": sp.csr_matrix(rng.poisson(1.0, (5, 4))), "LEISURE": sp.csr_matrix(rng.poisson(1.0, (5, 4)))}
    hyper = FactorHyper(k=2, max_epochs=30)
    a, b = train_temporal(mats, hyper), train_temporal(mats, hyper, workers=2)
    for s in mats:
        assert a.models[s].U.tobytes() == b.models[s].U.tobytes()
    assert a.models["WORKING"].seed != a.models["LEISURE"].seed


def test_checkpoint_round_trip_is_bit_exact(tmp_path, rng):
    m = train(sp.csr_matrix(rng.poisson(1.0, (6, 7))), FactorHyper(k=3, max_epochs=20, seed=5))
    m.sigma = np.array([1.5, 2.0, 2.5])
    save_model(m, tmp_path / "m.pfm")
    back = load_model(tmp_path / "m.pfm")
    for name in ("U", "L", "sigma", "rho"):
        assert getattr(back, name).tobytes() == getattr(m, name).tobytes()
    assert (back.seed, back.epochs) == (m.seed, m.epochs)


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.pfm"
    p.write_bytes(b"\0" * 64)
    with pytest.raises(ValueError):
        load_model(p)
