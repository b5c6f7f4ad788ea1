"""Seeded random variate generation and conjugate Gaussian updates.

Every stochastic routine takes a :class:`numpy.random.Generator` as its first
argument.  Generators are built from a 64-bit seed through
:class:`numpy.random.SeedSequence`, and independent substreams are derived by
appending integer keys to the spawn key (see :func:`substream`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sp_linalg
from scipy import special

# Beyond this many standard deviations into the tail, inversion loses digits and
# truncated draws switch to exponential-proposal rejection.
TAIL_SWITCH = 5.0


class ParameterError(ValueError):
    """Raised for distribution parameters outside their domain."""


class DegenerateWeightsError(ValueError):
    """Raised when every categorical log-weight is -inf."""


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for ``seed`` (optionally a keyed substream of it)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent stream identified by ``(seed, *key)``; deterministic and order-free."""
    if not key:
        raise ValueError("substream needs at least one key")
    return make_rng(seed, *key)


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed derived from ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(key))
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0] >> np.uint64(1))


def std_normal_cdf(x):
    return special.ndtr(x)


def log_std_normal_cdf(x):
    return special.log_ndtr(x)


# --------------------------------------------------------------------------
# Truncated normal


def _positive_tail(rng, a):
    """Draw Z ~ N(0,1) conditioned on Z > a, elementwise over the 1-d array ``a``."""
    z = np.empty_like(a)
    tail = a > TAIL_SWITCH
    body = ~tail
    if body.any():
        ab = a[body]
        u = 1.0 - rng.random(ab.shape)  # (0, 1]
        z[body] = -special.ndtri(u * special.ndtr(-ab))
    if tail.any():
        if not np.all(np.isfinite(a)):
            raise ParameterError("truncation point must be finite")
        idx = np.flatnonzero(tail)
        at = a[idx]
        lam = 0.5 * (at + np.hypot(at, 2.0))
        while idx.size:
            prop = at + rng.exponential(size=idx.size) / lam
            accept = np.log(1.0 - rng.random(idx.size)) <= -0.5 * (prop - lam) ** 2
            z[idx[accept]] = prop[accept]
            keep = ~accept
            idx, at, lam = idx[keep], at[keep], lam[keep]
    return z


def trunc_normal_signed(rng: np.random.Generator, mean, positive) -> np.ndarray:
    """Unit-variance normal draws around ``mean`` restricted to x > 0 where
    ``positive`` is true and to x < 0 elsewhere."""
    mean = np.asarray(mean, float)
    positive = np.broadcast_to(np.asarray(positive, bool), mean.shape)
    sgn = np.where(positive, 1.0, -1.0)
    m = (sgn * mean).ravel()
    x = m + _positive_tail(rng, -m)
    # guard the measure-zero boundary hit from u == 1 in the inversion branch
    x = np.maximum(x, np.finfo(float).tiny)
    return sgn * x.reshape(mean.shape)


def sample_trunc_std_normal(rng: np.random.Generator, mean: float, side: str) -> float:
    """One draw from N(mean, 1) truncated to the positive or negative half line."""
    if side not in ("positive", "negative"):
        raise ParameterError(f"side must be 'positive' or 'negative', not {side!r}")
    if not np.isfinite(mean):
        raise ParameterError("mean must be finite")
    return float(trunc_normal_signed(rng, np.array([mean]), side == "positive")[0])


# --------------------------------------------------------------------------
# Standard families


def sample_beta(rng, a, b, size=None):
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ParameterError("beta parameters must be positive")
    return rng.beta(a, b, size)


def sample_inverse_gamma(rng, shape, rate, size=None):
    """Inverse-gamma with density proportional to x**(-shape-1) * exp(-rate/x)."""
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ParameterError("inverse-gamma shape and rate must be positive")
    return rate / rng.gamma(shape, 1.0, size)


def sample_binomial(rng, n, p, size=None):
    p = np.asarray(p, float)
    if np.any(np.asarray(n) < 0) or np.any((p < 0) | (p > 1)):
        raise ParameterError("binomial needs n >= 0 and p in [0, 1]")
    return rng.binomial(n, p, size)


def sample_normal(rng, mean, var, size=None):
    if np.any(np.asarray(var) < 0):
        raise ParameterError("variance must be nonnegative")
    return rng.normal(mean, np.sqrt(var), size)


# --------------------------------------------------------------------------
# Categorical


def categorical_from_log(rng: np.random.Generator, logw) -> np.ndarray:
    """Draw one index per row of ``logw`` (last axis) with probabilities
    proportional to ``exp(logw)``."""
    logw = np.asarray(logw, float)
    top = logw.max(axis=-1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise DegenerateWeightsError("all categorical log-weights are -inf in at least one row")
    cum = np.cumsum(np.exp(logw - top), axis=-1)
    target = (1.0 - rng.random(logw.shape[:-1]))[..., None] * cum[..., -1:]
    idx = (cum < target).sum(axis=-1)
    return np.minimum(idx, logw.shape[-1] - 1)


def sample_categorical_log(rng: np.random.Generator, logw) -> int:
    return int(categorical_from_log(rng, np.asarray(logw, float)[None, :])[0])


# --------------------------------------------------------------------------
# Bayesian linear model


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, float)
        if not np.allclose(cov, cov.T, atol=1e-10, rtol=0):
            raise ParameterError("covariance is not symmetric")
        self._chol = np.linalg.cholesky(cov)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self._chol @ rng.standard_normal(self.mean.shape[0])


def gaussian_linear_update(W, z, prior_prec) -> GaussianPosterior:
    """Posterior of ``b`` under ``z ~ N(W b, I)`` and ``b ~ N(0, P^-1)``.

    ``prior_prec`` is either the diagonal of ``P`` or the full SPD matrix.
    """
    prior_prec = np.asarray(prior_prec, float)
    if prior_prec.ndim == 1:
        if np.any(prior_prec <= 0):
            raise ParameterError("prior precisions must be positive")
        prior_prec = np.diag(prior_prec)
    q = prior_prec.shape[0]
    if prior_prec.shape != (q, q):
        raise ParameterError(f"prior precision must be square, got shape {prior_prec.shape}")
    W = np.asarray(W, float).reshape(-1, q)
    z = np.asarray(z, float).reshape(-1)
    prec = W.T @ W + prior_prec
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        raise ParameterError("prior precision is not positive definite") from None
    cov = sp_linalg.cho_solve((chol, True), np.eye(q))
    cov = 0.5 * (cov + cov.T)
    return GaussianPosterior(mean=cov @ (W.T @ z), covariance=cov)


def sample_gaussian_from_precision(rng: np.random.Generator, prec, rhs) -> np.ndarray:
    """Batched draw from N(P^-1 rhs, P^-1) for stacked SPD ``prec`` (..., q, q)."""
    prec = np.asarray(prec, float)
    rhs = np.asarray(rhs, float)
    chol = np.linalg.cholesky(prec)
    eps = rng.standard_normal(rhs.shape)
    y = np.linalg.solve(chol, rhs[..., None])[..., 0] + eps
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y[..., None])[..., 0]
