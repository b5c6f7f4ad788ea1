"""Augmented Gibbs sampler for the probit stick-breaking regression.

Each sweep updates, in order: allocations, atoms, latent probit variables,
coefficient factors (B1, B2, B3), subject-effect factors (E1, E2, E3), their
scales, the intercepts and the concentration.  Latent variables exist only for
sticks up to and including the allocated one (and never for the closed last
stick); every regression below uses only those "active" cells.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from tensorstick import sampling
from tensorstick.model import (
    Dataset,
    ModelConfig,
    NumericalError,
    ParamState,
    binomial_logpmf,
    draw_latents,
    log_sticks,
)
from tensorstick.store import DrawStore, stable_hash

log = logging.getLogger(__name__)

THETA_CLAMP = 1e-12


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 2000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    store_latents: bool = False

    def __post_init__(self):
        if self.burn_in < 0 or self.iterations < self.burn_in:
            raise ValueError("need 0 <= burn_in <= iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


def active_mask(C, H: int) -> np.ndarray:
    """Cells (i, j, h) that carry a latent probit variable: h <= C[i, j] and h < H - 1."""
    hh = np.arange(H)
    return (hh <= C[..., None]) & (hh < H - 1)


# --------------------------------------------------------------------------
# Conditional updates


def update_allocations(rng, state: ParamState, data: Dataset, eta=None) -> np.ndarray:
    if eta is None:
        eta = state.linear_predictor(data.X)
    theta = np.clip(state.theta, THETA_CLAMP, 1.0 - THETA_CLAMP)
    Y = data.Y[..., None]
    n = data.n[..., None]
    logw = log_sticks(eta) + Y * np.log(theta) + (n - Y) * np.log1p(-theta)
    state.C = sampling.categorical_from_log(rng, logw)
    return state.C


def update_atoms(rng, state: ParamState, data: Dataset, beta_base=(1.0, 1.0)) -> np.ndarray:
    a, b = beta_base
    H = state.H
    c = state.C.ravel()
    y_tot = np.bincount(c, weights=data.Y.ravel(), minlength=H)
    n_tot = np.bincount(c, weights=data.n.ravel(), minlength=H)
    state.theta = rng.beta(a + y_tot, b + n_tot - y_tot)
    return state.theta


def update_latent_probits(rng, state: ParamState, X, eta=None) -> np.ndarray:
    if eta is None:
        eta = state.linear_predictor(X)
    H = state.H
    mask = active_mask(state.C, H)
    positive = np.arange(H) == state.C[..., None]
    state.Zstar[mask] = sampling.trunc_normal_signed(rng, eta[mask], positive[mask])
    return state.Zstar


def _masked(state: ParamState, resid):
    M = active_mask(state.C, state.H).astype(float)
    return M, M * np.where(M > 0, resid, 0.0)


def first_mode_system(X, F2, F3, M, Mz):
    """Normal equations for the mode-1 factor of ``z[i,j,h] ~ sum_r (X F1)[i,r] F2[j,r] F3[h,r]``.

    The unknown is ``F1`` (D x R) flattened row-major; pass ``X = I`` for a
    subject-level factor, in which case the system is block diagonal and the
    per-subject R x R blocks are returned instead.  Prior terms are not added.
    """
    P = F2[:, None, :] * F3[None, :, :]
    G = np.einsum("ijh,jhr,jhs->irs", M, P, P, optimize=True)
    if X is None:
        return G, np.einsum("ijh,jhr->ir", Mz, P, optimize=True)
    D, R = X.shape[1], F2.shape[1]
    prec = np.einsum("id,ie,irs->dres", X, X, G, optimize=True).reshape(D * R, D * R)
    rhs = np.einsum("id,ijh,jhr->dr", X, Mz, P, optimize=True).reshape(D * R)
    return prec, rhs


def type_mode_system(U, F3, M, Mz):
    """Per-type normal equations for F2 given subject scores ``U`` (I x R) and F3."""
    w = U[:, None, :] * F3[None, :, :]
    prec = np.einsum("ijh,ihr,ihs->jrs", M, w, w, optimize=True)
    return prec, np.einsum("ijh,ihr->jr", Mz, w, optimize=True)


def component_mode_system(U, F2, M, Mz):
    """Per-component normal equations for F3 given subject scores ``U`` and F2."""
    w = U[:, None, :] * F2[None, :, :]
    prec = np.einsum("ijh,ijr,ijs->hrs", M, w, w, optimize=True)
    return prec, np.einsum("ijh,ijr->hr", Mz, w, optimize=True)


def coefficient_residual(state: ParamState, E=None):
    resid = state.Zstar - state.Z[None]
    if E is not None:
        resid = resid - E
    return _masked(state, resid)


def update_coefficients(rng, state: ParamState, X, E=None, blocks=("B1", "B2", "B3")) -> None:
    """Gaussian conditional draws for the coefficient representation in ``state``.

    ``blocks`` restricts which low-rank factors are refreshed.
    """
    X = np.asarray(X, float)
    D = X.shape[1]
    if E is None:
        E = state.error_term()
    M, Mz = coefficient_residual(state, E)

    if state.B1 is not None:
        R = state.B1.shape[1]
        if "B1" in blocks:
            prec, rhs = first_mode_system(X, state.B2, state.B3, M, Mz)
            state.B1 = sampling.sample_gaussian_from_precision(rng, prec + np.eye(D * R), rhs).reshape(D, R)
        U = X @ state.B1
        if "B2" in blocks:
            prec, rhs = type_mode_system(U, state.B3, M, Mz)
            state.B2 = sampling.sample_gaussian_from_precision(rng, prec + np.eye(R), rhs)
        if "B3" in blocks:
            prec, rhs = component_mode_system(U, state.B2, M, Mz)
            state.B3 = sampling.sample_gaussian_from_precision(rng, prec + np.eye(R), rhs)
    elif state.B_full is not None:
        prec = np.einsum("ijh,id,ie->jhde", M, X, X, optimize=True) + np.eye(D)
        rhs = np.einsum("ijh,id->jhd", Mz, X, optimize=True)
        draw = sampling.sample_gaussian_from_precision(rng, prec, rhs)
        state.B_full = np.moveaxis(draw, -1, 0)
    elif state.B_shared is not None:
        prec = np.einsum("ijh,id,ie->hde", M, X, X, optimize=True) + np.eye(D)
        rhs = np.einsum("ijh,id->hd", Mz, X, optimize=True)
        state.B_shared = sampling.sample_gaussian_from_precision(rng, prec, rhs).T


def effects_residual(state: ParamState, X, XB=None):
    if XB is None:
        XB = state.covariate_term(X)
    return _masked(state, state.Zstar - state.Z[None] - XB)


def update_individual_effects(rng, state: ParamState, X, XB=None) -> None:
    if state.E1 is None:
        return
    M, Mz = effects_residual(state, X, XB)
    Re = state.E1.shape[1]
    prec, rhs = first_mode_system(None, state.E2, state.E3, M, Mz)
    state.E1 = sampling.sample_gaussian_from_precision(rng, prec + np.diag(1.0 / state.sigma2), rhs)
    prec, rhs = type_mode_system(state.E1, state.E3, M, Mz)
    state.E2 = sampling.sample_gaussian_from_precision(rng, prec + np.eye(Re), rhs)
    prec, rhs = component_mode_system(state.E1, state.E2, M, Mz)
    state.E3 = sampling.sample_gaussian_from_precision(rng, prec + np.eye(Re), rhs)


def update_scales(rng, state: ParamState, ig_hyper=(0.1, 0.1)) -> np.ndarray:
    if state.E1 is None:
        return state.sigma2
    a0, b0 = ig_hyper
    I = state.E1.shape[0]
    shape = a0 + 0.5 * I
    rate = b0 + 0.5 * np.sum(state.E1**2, axis=0)
    state.sigma2 = sampling.sample_inverse_gamma(rng, shape, rate)
    return state.sigma2


def intercept_conditional(state: ParamState, X, XB=None, E=None):
    """Mean and variance of each Z[j, h] given everything else."""
    if XB is None:
        XB = state.covariate_term(X)
    if E is None:
        E = state.error_term()
    resid = state.Zstar - XB
    if E is not None:
        resid = resid - E
    M, Mz = _masked(state, resid)
    prec = M.sum(axis=0) + 1.0
    return (state.alpha + Mz.sum(axis=0)) / prec, 1.0 / prec


def update_intercepts(rng, state: ParamState, X, XB=None, E=None) -> np.ndarray:
    mean, var = intercept_conditional(state, X, XB, E)
    state.Z = mean + rng.standard_normal(mean.shape) * np.sqrt(var)
    return state.Z


def update_concentration(rng, state: ParamState) -> float:
    JH = state.Z.size
    prec = JH + 1.0
    state.alpha = float(state.Z.sum() / prec + rng.standard_normal() / np.sqrt(prec))
    return state.alpha


# --------------------------------------------------------------------------
# Chain driver


def initial_state(rng, config: ModelConfig, data: Dataset) -> ParamState:
    I, J, D, H = data.I, data.J, data.D, config.H
    a, b = config.beta_base
    theta = np.sort(rng.beta(a, b, size=H))[::-1].copy()
    theta = np.clip(theta, THETA_CLAMP, 1.0 - THETA_CLAMP)
    small = 0.1
    kw = {}
    if config.coef == "low_rank":
        R = config.rank
        kw.update(
            B1=small * rng.standard_normal((D, R)),
            B2=small * rng.standard_normal((J, R)),
            B3=small * rng.standard_normal((H, R)),
        )
    elif config.coef == "full":
        kw["B_full"] = small * rng.standard_normal((D, J, H))
    elif config.coef == "shared_types":
        kw["B_shared"] = small * rng.standard_normal((D, H))
    sigma2 = np.zeros(0)
    if config.has_error:
        Re = config.error_rank
        kw.update(
            E1=small * rng.standard_normal((I, Re)),
            E2=small * rng.standard_normal((J, Re)),
            E3=small * rng.standard_normal((H, Re)),
        )
        sigma2 = np.ones(Re)
    state = ParamState(
        theta=theta, Z=np.zeros((J, H)), alpha=0.0, C=np.zeros((I, J), dtype=np.int64),
        Zstar=np.zeros((I, J, H)), sigma2=sigma2, **kw,
    )
    eta = state.linear_predictor(data.X)
    score = log_sticks(eta) + binomial_logpmf(data.Y[..., None], data.n[..., None], theta)
    state.C = np.argmax(score, axis=-1)
    state.Zstar = draw_latents(rng, eta, state.C)
    return state


def _check_finite(name: str, it: int, *arrays) -> None:
    for arr in arrays:
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite value after step '{name}' at iteration {it}")


def gibbs_sweep(rng, state: ParamState, data: Dataset, config: ModelConfig, it: int = 0) -> ParamState:
    """One full pass over all conditional updates, modifying ``state`` in place."""
    X = data.X
    eta = state.linear_predictor(X)
    _check_finite("sticks", it, eta)
    update_allocations(rng, state, data, eta)
    update_atoms(rng, state, data, config.beta_base)
    _check_finite("atoms", it, state.theta)
    update_latent_probits(rng, state, X, eta)
    _check_finite("latent probits", it, state.Zstar)

    E = state.error_term()
    update_coefficients(rng, state, X, E)
    _check_finite("coefficients", it, state.B1, state.B2, state.B3, state.B_full, state.B_shared)
    XB = state.covariate_term(X)
    if state.E1 is not None:
        update_individual_effects(rng, state, X, XB)
        _check_finite("individual effects", it, state.E1, state.E2, state.E3)
        update_scales(rng, state, config.ig_hyper)
        _check_finite("scales", it, state.sigma2)
        E = state.error_term()
    update_intercepts(rng, state, X, XB, E)
    _check_finite("intercepts", it, state.Z)
    update_concentration(rng, state)
    _check_finite("concentration", it, np.array(state.alpha))
    return state


SNAPSHOT_BLOCKS = ("theta", "Z", "alpha", "B1", "B2", "B3", "B_full", "B_shared", "E1", "E2", "E3", "sigma2", "C")


def _snapshot(state: ParamState, store_latents: bool) -> dict:
    snap = {}
    for name in SNAPSHOT_BLOCKS:
        val = getattr(state, name)
        if val is None:
            continue
        if name == "sigma2" and state.E1 is None:
            continue
        snap[name] = np.array(val, copy=True)
    if store_latents:
        snap["Zstar"] = state.Zstar.copy()
    return snap


def run_chain(chain: ChainConfig, model: ModelConfig, data: Dataset, state: ParamState | None = None) -> DrawStore:
    rng = sampling.make_rng(chain.seed)
    if state is None:
        state = initial_state(rng, model, data)
    snaps = []
    lls = []
    for it in range(1, chain.iterations + 1):
        gibbs_sweep(rng, state, data, model, it)
        if it > chain.burn_in and (it - chain.burn_in) % chain.thin == 0:
            snaps.append(_snapshot(state, chain.store_latents))
            lls.append(float(np.sum(binomial_logpmf(data.Y, data.n, state.theta[state.C]))))
    blocks = {}
    if snaps:
        for name in snaps[0]:
            blocks[name] = np.stack([s[name] for s in snaps])
        blocks["loglik"] = np.array(lls)
    meta = {
        "family": "psb",
        "model": model.to_dict(),
        "chain": chain.to_dict(),
        "seed": chain.seed,
        "config_hash": stable_hash({"model": model.to_dict(), "chain": chain.to_dict()}),
        "data_hash": data.digest(),
        "n_draws": len(snaps),
        "I": data.I,
        "J": data.J,
        "D": data.D,
        "covariate_names": list(data.covariate_names),
        "type_names": list(data.type_names),
        "x_center": np.asarray(data.x_center).tolist(),
        "x_scale": np.asarray(data.x_scale).tolist(),
    }
    return DrawStore(blocks=blocks, meta=meta)


def state_from_store(store: DrawStore, t: int) -> ParamState:
    """Rebuild draw ``t`` as a :class:`ParamState` (latents zero unless stored)."""
    kw = {}
    for name in SNAPSHOT_BLOCKS:
        if name in store:
            kw[name] = store[name][t]
    kw["alpha"] = float(kw["alpha"])
    C = kw.pop("C", None)
    theta = kw.pop("theta")
    J, H = kw["Z"].shape
    if C is None:
        C = np.zeros((0, J), dtype=np.int64)
    Zstar = store["Zstar"][t] if "Zstar" in store else np.zeros(C.shape + (H,))
    return ParamState(theta=theta, C=C, Zstar=Zstar, **kw)
