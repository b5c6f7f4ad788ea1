import json

import numpy as np
import pytest
from scipy import stats

from conftest import random_state
from tensorstick import gibbs, sampling
from tensorstick.gibbs import ChainConfig, active_mask, run_chain
from tensorstick.model import Dataset, ModelConfig, NumericalError, ParamState, prior_generative_draw
from tensorstick.store import DrawStore


def small_data(rng, I=12, J=2, D=2, n=8):
    X = rng.normal(size=(I, D))
    nn = np.full((I, J), n)
    Y = rng.binomial(nn, 0.4)
    return Dataset.from_raw(Y, nn, X)


def test_active_mask_excludes_last_stick():
    C = np.array([[0, 2], [1, 1]])
    m = active_mask(C, 3)
    assert m[0, 0].tolist() == [True, False, False]
    assert m[0, 1].tolist() == [True, True, False]
    assert m[1, 0].tolist() == [True, True, False]


# --------------------------------------------------------------------------
# Conjugate pieces


def test_update_atoms_posterior_mean(rng):
    # one cell with Y=3 of n=10 in component 0 -> Beta(4, 8), mean 1/3
    data = Dataset(Y=np.array([[3]]), n=np.array([[10]]), X=np.zeros((1, 0)))
    st = ParamState(theta=np.full(2, 0.5), Z=np.zeros((1, 2)), alpha=0.0, C=np.zeros((1, 1), int),
                    Zstar=np.zeros((1, 1, 2)))
    draws = np.empty(100_000)
    for t in range(draws.size):
        draws[t] = gibbs.update_atoms(rng, st, data, (1.0, 1.0))[0]
    assert abs(draws.mean() - 1 / 3) < 0.005


def test_update_atoms_empty_component_is_prior(rng):
    data = Dataset(Y=np.array([[3]]), n=np.array([[10]]), X=np.zeros((1, 0)))
    st = ParamState(theta=np.full(3, 0.5), Z=np.zeros((1, 3)), alpha=0.0, C=np.zeros((1, 1), int),
                    Zstar=np.zeros((1, 1, 3)))
    draws = np.array([gibbs.update_atoms(rng, st, data, (2.0, 5.0))[2] for _ in range(20_000)])
    assert stats.kstest(draws, stats.beta(2, 5).cdf).pvalue > 1e-3


def test_update_scales_moments(rng):
    st = random_state(rng, I=7, Re=2)
    st.E1 = np.array([[0.5, 1.0]] * 7)
    a0, b0 = 2.0, 1.0
    shape = a0 + 3.5
    rate = b0 + 0.5 * np.sum(st.E1**2, axis=0)
    draws = np.array([gibbs.update_scales(rng, st, (a0, b0)).copy() for _ in range(40_000)])
    mean = rate / (shape - 1)
    var = rate**2 / ((shape - 1) ** 2 * (shape - 2))
    np.testing.assert_allclose(draws.mean(axis=0), mean, rtol=0.02)
    np.testing.assert_allclose(draws.var(axis=0), var, rtol=0.08)


def test_update_concentration_moments(rng):
    st = ParamState(theta=np.full(2, 0.5), Z=np.full((2, 2), 1.0), alpha=0.0, C=np.zeros((0, 2), int),
                    Zstar=np.zeros((0, 2, 2)))
    draws = np.array([gibbs.update_concentration(rng, st) for _ in range(40_000)])
    assert abs(draws.mean() - 4 / 5) < 0.01
    assert abs(draws.var() - 1 / 5) < 0.01


def test_intercept_conditional_matches_loop(rng):
    I, J, D, H = 6, 3, 2, 5
    st = random_state(rng, I, J, D, H, Re=1)
    X = rng.normal(size=(I, D))
    st.Zstar = rng.normal(size=(I, J, H))
    mean, var = gibbs.intercept_conditional(st, X)
    eta_wo_Z = st.linear_predictor(X) - st.Z[None]
    for j in range(J):
        for h in range(H):
            cells = [i for i in range(I) if h <= st.C[i, j] and h < H - 1]
            prec = len(cells) + 1.0
            s = sum(st.Zstar[i, j, h] - eta_wo_Z[i, j, h] for i in cells)
            assert mean[j, h] == pytest.approx((st.alpha + s) / prec, abs=1e-12)
            assert var[j, h] == pytest.approx(1 / prec, abs=1e-15)


def _dense_design_b1(X, B2, B3, C, H):
    rows, idx = [], []
    I, D = X.shape
    R = B2.shape[1]
    for i in range(I):
        for j in range(B2.shape[0]):
            for h in range(H):
                if h <= C[i, j] and h < H - 1:
                    w = np.zeros(D * R)
                    for d in range(D):
                        for r in range(R):
                            w[d * R + r] = X[i, d] * B2[j, r] * B3[h, r]
                    rows.append(w)
                    idx.append((i, j, h))
    return np.array(rows), idx


@pytest.mark.parametrize("R", [1, 2])
def test_first_mode_system_matches_dense_ridge(rng, R):
    I, J, D, H = 7, 3, 2, 4
    st = random_state(rng, I, J, D, H, R=R, Re=0)
    X = rng.normal(size=(I, D))
    st.Zstar = rng.normal(size=(I, J, H))
    M, Mz = gibbs.coefficient_residual(st)
    prec, rhs = gibbs.first_mode_system(X, st.B2, st.B3, M, Mz)
    W, idx = _dense_design_b1(X, st.B2, st.B3, st.C, H)
    z = np.array([st.Zstar[c] - st.Z[c[1], c[2]] for c in idx])
    ridge = sampling.gaussian_linear_update(W, z, np.eye(D * R))
    mean = np.linalg.solve(prec + np.eye(D * R), rhs)
    np.testing.assert_allclose(mean, ridge.mean, atol=1e-8)
    np.testing.assert_allclose(np.linalg.inv(prec + np.eye(D * R)), ridge.covariance, atol=1e-8)


def test_type_and_component_systems_match_dense(rng):
    I, J, D, H, R = 6, 3, 2, 5, 2
    st = random_state(rng, I, J, D, H, R=R, Re=0)
    X = rng.normal(size=(I, D))
    st.Zstar = rng.normal(size=(I, J, H))
    M, Mz = gibbs.coefficient_residual(st)
    U = X @ st.B1
    p2, r2 = gibbs.type_mode_system(U, st.B3, M, Mz)
    p3, r3 = gibbs.component_mode_system(U, st.B2, M, Mz)
    q2 = np.zeros((J, R, R)); s2 = np.zeros((J, R))
    q3 = np.zeros((H, R, R)); s3 = np.zeros((H, R))
    for i in range(I):
        for j in range(J):
            for h in range(H - 1):
                if h > st.C[i, j]:
                    continue
                res = st.Zstar[i, j, h] - st.Z[j, h]
                w2 = U[i] * st.B3[h]
                w3 = U[i] * st.B2[j]
                q2[j] += np.outer(w2, w2); s2[j] += w2 * res
                q3[h] += np.outer(w3, w3); s3[h] += w3 * res
    np.testing.assert_allclose(p2, q2, atol=1e-10)
    np.testing.assert_allclose(r2, s2, atol=1e-10)
    np.testing.assert_allclose(p3, q3, atol=1e-10)
    np.testing.assert_allclose(r3, s3, atol=1e-10)


def test_subject_effects_system_is_block_diagonal_loop(rng):
    I, J, H, Re = 5, 3, 4, 2
    st = random_state(rng, I, J, 1, H, coef="none", Re=Re)
    st.Zstar = rng.normal(size=(I, J, H))
    M, Mz = gibbs.effects_residual(st, np.zeros((I, 0)))
    G, rhs = gibbs.first_mode_system(None, st.E2, st.E3, M, Mz)
    for i in range(I):
        g = np.zeros((Re, Re)); s = np.zeros(Re)
        for j in range(J):
            for h in range(min(st.C[i, j], H - 2) + 1):
                w = st.E2[j] * st.E3[h]
                g += np.outer(w, w)
                s += w * (st.Zstar[i, j, h] - st.Z[j, h])
        np.testing.assert_allclose(G[i], g, atol=1e-12)
        np.testing.assert_allclose(rhs[i], s, atol=1e-12)


def test_no_active_cells_gives_prior_draw(rng):
    # C = 0 with H = 1 means no latents at all: coefficients are N(0, 1) prior draws
    I, J, D = 4, 2, 3
    st = ParamState(theta=np.full(1, 0.5), Z=np.zeros((J, 1)), alpha=0.0, C=np.zeros((I, J), int),
                    Zstar=np.zeros((I, J, 1)), B_full=np.zeros((D, J, 1)))
    X = rng.normal(size=(I, D))
    draws = np.array([gibbs.update_coefficients(rng, st, X) or st.B_full.copy() for _ in range(20_000)])
    assert abs(draws.mean()) < 0.02
    assert abs(draws.var() - 1.0) < 0.03


def test_b1_recovery_with_fixed_other_factors(rng):
    I, J, D, H = 400, 2, 2, 3
    X = rng.normal(size=(I, D))
    st = ParamState(theta=np.full(H, 0.5), Z=np.zeros((J, H)), alpha=0.0,
                    C=np.full((I, J), 1), Zstar=np.zeros((I, J, H)),
                    B1=np.zeros((D, 1)), B2=np.ones((J, 1)), B3=np.ones((H, 1)))
    true = np.array([[0.8], [-0.5]])
    st.Zstar = (X @ true)[:, :, None].repeat(J, 1).repeat(H, 2) + 0.1 * rng.normal(size=(I, J, H))
    draws = []
    for _ in range(200):
        gibbs.update_coefficients(rng, st, X, blocks=("B1",))
        draws.append(st.B1.copy())
    np.testing.assert_allclose(np.mean(draws, axis=0), true, atol=0.02)


def test_latent_probit_signs(rng):
    st = random_state(rng, I=30, J=3, D=2, H=5, Re=0)
    X = rng.normal(size=(30, 2))
    st.Zstar[:] = np.nan
    gibbs.update_latent_probits(rng, st, X)
    mask = active_mask(st.C, st.H)
    pos = (np.arange(st.H) == st.C[..., None]) & mask
    neg = mask & ~pos
    assert np.all(st.Zstar[pos] > 0)
    assert np.all(st.Zstar[neg] < 0)
    assert np.all(np.isnan(st.Zstar[~mask]))


def test_allocations_follow_enumerated_posterior(rng):
    # one cell, H=3: weights pi_h * Binom(y | n, theta_h)
    H = 3
    N = 50_000
    st = ParamState(theta=np.array([0.2, 0.5, 0.8]), Z=np.array([[0.3, -0.2, 0.0]]), alpha=0.0,
                    C=np.zeros((N, 1), int), Zstar=np.zeros((N, 1, H)))
    data = Dataset(Y=np.full((N, 1), 4), n=np.full((N, 1), 6), X=np.zeros((N, 0)))
    gibbs.update_allocations(rng, st, data)
    V = stats.norm.cdf(st.Z[0])
    V[-1] = 1.0
    pi = V * np.concatenate([[1.0], np.cumprod(1 - V[:-1])])
    w = pi * stats.binom.pmf(4, 6, st.theta)
    w /= w.sum()
    freq = np.bincount(st.C.ravel(), minlength=H) / N
    np.testing.assert_allclose(freq, w, atol=0.01)


# --------------------------------------------------------------------------
# Whole-sweep behaviour


@pytest.mark.parametrize("coef,Re", [("low_rank", 1), ("full", 2), ("shared_types", 0), ("none", 1)])
def test_masking_placeholders_never_read(rng, coef, Re):
    data = small_data(rng)
    cfg = ModelConfig(H=5, coef=coef, rank=2, error_rank=Re)
    st = gibbs.initial_state(rng, cfg, data)
    other = st.copy()
    inactive = ~active_mask(st.C, st.H)
    other.Zstar[inactive] = 1e6
    r1, r2 = sampling.make_rng(5), sampling.make_rng(5)
    gibbs.gibbs_sweep(r1, st, data, cfg)
    gibbs.gibbs_sweep(r2, other, data, cfg)
    for name in ("theta", "Z", "B1", "B2", "B3", "B_full", "B_shared", "E1", "E2", "E3", "sigma2", "C"):
        a, b = getattr(st, name), getattr(other, name)
        if a is not None:
            np.testing.assert_array_equal(a, b)
    assert st.alpha == other.alpha


def test_sweeps_keep_state_valid(rng):
    data = small_data(rng)
    cfg = ModelConfig(H=6, coef="low_rank", rank=2, error_rank=1)
    st = gibbs.initial_state(rng, cfg, data)
    for it in range(30):
        gibbs.gibbs_sweep(rng, st, data, cfg, it)
        st.check()


def test_run_chain_deterministic_and_shapes(rng):
    data = small_data(rng)
    cfg = ModelConfig(H=4, coef="low_rank", rank=1, error_rank=1)
    chain = ChainConfig(iterations=20, burn_in=10, thin=2, seed=3)
    a = run_chain(chain, cfg, data)
    b = run_chain(chain, cfg, data)
    assert len(a) == 5
    assert a["B1"].shape == (5, data.D, 1)
    assert a["C"].shape == (5, data.I, data.J)
    for k in a.blocks:
        np.testing.assert_array_equal(a[k], b[k])
    c = run_chain(ChainConfig(iterations=20, burn_in=10, thin=2, seed=4), cfg, data)
    assert not np.array_equal(a["theta"], c["theta"])


def test_run_chain_zero_retained(rng):
    data = small_data(rng)
    store = run_chain(ChainConfig(iterations=5, burn_in=5), ModelConfig(H=3, coef="none"), data)
    assert len(store) == 0
    assert store.meta["n_draws"] == 0


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(iterations=5, burn_in=6)
    with pytest.raises(ValueError):
        ChainConfig(thin=0)


def test_drawstore_roundtrip(rng, tmp_path):
    data = small_data(rng)
    store = run_chain(ChainConfig(iterations=8, burn_in=4, seed=1), ModelConfig(H=3, rank=1, error_rank=1), data)
    store.save(tmp_path / "d")
    back = DrawStore.load(tmp_path / "d")
    norm = json.loads(json.dumps(store.meta))
    assert {k: back.meta[k] for k in norm} == norm
    for k in store.blocks:
        np.testing.assert_array_equal(back[k], store[k])
    st = gibbs.state_from_store(back, 2)
    np.testing.assert_array_equal(st.theta, store["theta"][2])


def test_nan_aborts_with_step_name(rng):
    data = small_data(rng)
    cfg = ModelConfig(H=3, coef="low_rank", rank=1)
    st = gibbs.initial_state(rng, cfg, data)
    st.B2[:] = np.nan
    with pytest.raises(NumericalError, match="iteration 7"):
        gibbs.gibbs_sweep(rng, st, data, cfg, 7)


def test_prior_generative_then_sweep_runs(rng):
    X = rng.normal(size=(10, 1))
    cfg = ModelConfig(H=3, coef="low_rank", rank=1, error_rank=1, ig_hyper=(5.0, 4.0))
    st, data = prior_generative_draw(rng, cfg, X, np.full((10, 2), 5))
    gibbs.gibbs_sweep(rng, st, data, cfg)
    st.check()
