import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import geweke_z
from tensorstick import sampling
from tensorstick.baselines import (
    DivergenceError,
    LogisticConfig,
    LogisticSampler,
    fit_logistic,
    inv_logit,
    logistic_predictive_lppl,
    logistic_predictive_probs,
    logit,
)
from tensorstick.gibbs import ChainConfig
from tensorstick.model import Dataset


@given(st.floats(-30, 30))
def test_logit_roundtrip(x):
    # 1 - p carries absolute error ~eps, so the roundtrip error grows like eps * e^|x|
    tol = 8 * np.finfo(float).eps * (1 + np.exp(abs(x)))
    assert logit(inv_logit(x)) == pytest.approx(x, abs=tol)


def test_inv_logit_clamped():
    assert 0.0 < inv_logit(-1e4) < 1e-300
    assert inv_logit(1e4) < 1.0
    with pytest.raises(ValueError):
        logit(1.0)


def test_config_validation_and_dict():
    with pytest.raises(ValueError):
        LogisticConfig(variant="bogus")
    cfg = LogisticConfig(variant="shared_beta", ig_hyper=[1, 2])
    assert LogisticConfig.from_dict(cfg.to_dict()) == cfg


def test_null_data_recovers_prior(rng):
    # n = 0 everywhere: the posterior is the N(0, 100) prior
    I, J = 5, 2
    data = Dataset.from_raw(np.zeros((I, J), int), np.zeros((I, J), int), rng.normal(size=(I, 1)))
    store = fit_logistic(ChainConfig(iterations=12_000, burn_in=2_000, seed=4),
                         LogisticConfig(variant="no_error"), data)
    b = store["beta"].reshape(len(store), -1)
    np.testing.assert_allclose(b.var(axis=0), 100.0, rtol=0.1)
    assert np.all(np.abs(b.mean(axis=0)) < 1.5)


def test_synthetic_recovery(rng):
    I, J = 400, 2
    X = rng.normal(size=(I, 2))
    beta = np.array([[0.3, 1.0, -0.5], [-0.4, 0.5, 0.8]])
    Xa = np.hstack([np.ones((I, 1)), X])
    n = np.full((I, J), 20)
    Y = rng.binomial(n, inv_logit(Xa @ beta.T))
    data = Dataset(Y=Y, n=n, X=X)
    store = fit_logistic(ChainConfig(iterations=2000, burn_in=1000, seed=1), LogisticConfig(variant="no_error"), data)
    np.testing.assert_allclose(store["beta"].mean(axis=0), beta, atol=0.1)
    acc = store.meta["acceptance"]["beta"]
    assert 0.3 < acc < 0.6


@pytest.mark.parametrize("variant", ["separate", "shared_beta", "shared_beta_eps"])
def test_variants_shapes_and_predictive(rng, variant):
    I, J = 20, 3
    X = rng.normal(size=(I, 1))
    n = np.full((I, J), 5)
    data = Dataset(Y=rng.binomial(n, 0.3), n=n, X=X)
    store = fit_logistic(ChainConfig(iterations=120, burn_in=60, seed=2), LogisticConfig(variant=variant), data)
    Jb = 1 if variant != "separate" else J
    assert store["beta"].shape == (60, Jb, 2)
    eps_shape = (60, I) if variant == "shared_beta_eps" else (60, I, J)
    assert store["eps"].shape == eps_shape
    p = logistic_predictive_probs(rng, store, X[:4])
    assert p.shape == (60, 4, J)
    assert np.all((p > 0) & (p < 1))
    assert np.isfinite(logistic_predictive_lppl(rng, store, data))


def test_adaptation_frozen_after_burn_in(rng):
    I, J = 30, 2
    n = np.full((I, J), 10)
    data = Dataset(Y=rng.binomial(n, 0.5), n=n, X=rng.normal(size=(I, 1)))
    s = LogisticSampler(LogisticConfig(variant="separate", adapt_window=10), data, rng)
    for _ in range(50):
        s.sweep(rng, data)
    before = (s.beta_step.copy(), s.eps_step.copy())
    assert not np.allclose(before[0], 0.5)
    s.freeze()
    for _ in range(50):
        s.sweep(rng, data)
    np.testing.assert_array_equal(s.beta_step, before[0])
    np.testing.assert_array_equal(s.eps_step, before[1])


def test_divergence_raises(rng):
    I, J = 50, 1
    n = np.full((I, J), 50)
    data = Dataset(Y=rng.binomial(n, 0.5), n=n, X=rng.normal(size=(I, 1)))
    s = LogisticSampler(LogisticConfig(variant="no_error", adapt_window=5), data, rng)
    s.beta_step[:] = 1e8
    with pytest.raises(DivergenceError):
        for _ in range(5):
            s.sweep(rng, data)


def test_geweke_small(rng):
    # successive-conditional check of the whole sampler, shared beta and eps
    cfg = LogisticConfig(variant="shared_beta_eps", prior_var_beta=1.0, ig_hyper=(5.0, 4.0))
    I, J, N = 3, 2, 20_000
    X = rng.normal(size=(I, 1))
    Xa = np.hstack([np.ones((I, 1)), X])
    n = np.full((I, J), 4)

    def prior_draw():
        beta = rng.normal(size=2)
        s2 = float(sampling.sample_inverse_gamma(rng, 5.0, 4.0))
        eps = rng.normal(size=I) * np.sqrt(s2)
        return beta, eps, s2

    def stats(beta, eps, s2):
        v = np.array([beta[0], beta[1], s2, eps[0]])
        return np.concatenate([v, v**2])

    A = np.array([stats(*prior_draw()) for _ in range(N)])
    beta, eps, s2 = prior_draw()
    Y = rng.binomial(n, inv_logit((Xa @ beta + eps)[:, None] * np.ones(J)))
    data = Dataset(Y=Y, n=n, X=X)
    s = LogisticSampler(cfg, data, rng)
    s.beta[0], s.eps, s.sigma2 = beta, eps, s2
    for _ in range(500):
        s.sweep(rng, data)
    s.freeze()
    B = []
    for _ in range(N):
        s.sweep(rng, data)
        data.Y[:] = rng.binomial(n, inv_logit(s.eta()))
        B.append(stats(s.beta[0], s.eps, s.sigma2))
    z = geweke_z(A, np.array(B))
    assert np.all(np.abs(z) < 4), z
