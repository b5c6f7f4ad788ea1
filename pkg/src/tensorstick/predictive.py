"""Posterior predictive simulation, LPPL scoring and K-fold cross-validation."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from tensorstick import sampling
from tensorstick.model import Dataset, ModelConfig, ParamState, binomial_logpmf, breaks_from_eta, sticks_from_breaks
from tensorstick.store import DrawStore, dump_json, stable_hash

CHUNK = 128


@dataclass
class PredictiveSample:
    p_tilde: np.ndarray
    y_tilde: np.ndarray
    draw_index: int = 0


def predictive_draw(rng, snapshot: ParamState, x_tilde, n_tilde, draw_index: int = 0) -> PredictiveSample:
    """Simulate one new subject's outcomes from a single posterior draw."""
    x_tilde = np.asarray(x_tilde, float).reshape(1, -1)
    n_tilde = np.asarray(n_tilde, dtype=np.int64)
    J, H = snapshot.Z.shape
    if n_tilde.shape != (J,):
        raise ValueError(f"need {J} trial counts, got shape {n_tilde.shape}")
    D = x_tilde.shape[1]
    coef = snapshot.coef_array(D)
    if coef is not None and coef.shape[0] != D:
        raise ValueError(f"profile has {D} covariates, draw expects {coef.shape[0]}")
    if coef is None and D:
        raise ValueError("this draw has no covariate coefficients")
    eta = snapshot.Z.copy()
    if coef is not None:
        eta += np.tensordot(x_tilde[0], coef, axes=(0, 0))
    if snapshot.E1 is not None:
        e1 = rng.normal(size=snapshot.sigma2.shape) * np.sqrt(snapshot.sigma2)
        eta += np.einsum("r,jr,hr->jh", e1, snapshot.E2, snapshot.E3)
    pi = sticks_from_breaks(breaks_from_eta(eta))
    with np.errstate(divide="ignore"):
        comp = sampling.categorical_from_log(rng, np.log(pi))
    p = snapshot.theta[comp]
    y = rng.binomial(n_tilde, p)
    return PredictiveSample(p_tilde=p, y_tilde=y, draw_index=draw_index)


def _draw_blocks(store: DrawStore, lo: int, hi: int):
    g = {k: store[k][lo:hi] for k in store.blocks if k not in ("C", "Zstar", "E1", "loglik")}
    return g


def psb_predictive_weights(rng, store: DrawStore, X_new) -> np.ndarray:
    """Stick weights for new subjects at every retained draw, shape (T, m, J, H).

    Subject effects are drawn afresh from N(0, sigma2) for each draw and subject,
    so the law is marginal over the new subject's effects.
    """
    store.require_draws()
    X_new = np.asarray(X_new, float)
    m = X_new.shape[0]
    T = len(store)
    J, H = store["Z"].shape[1:]
    out = np.empty((T, m, J, H))
    for lo in range(0, T, CHUNK):
        hi = min(T, lo + CHUNK)
        g = _draw_blocks(store, lo, hi)
        eta = np.broadcast_to(g["Z"][:, None], (hi - lo, m, J, H)).copy()
        if "B1" in g:
            xb1 = np.einsum("id,tdr->tir", X_new, g["B1"])
            eta += np.einsum("tir,tjr,thr->tijh", xb1, g["B2"], g["B3"])
        elif "B_full" in g:
            eta += np.einsum("id,tdjh->tijh", X_new, g["B_full"])
        elif "B_shared" in g:
            eta += np.einsum("id,tdh->tih", X_new, g["B_shared"])[:, :, None, :]
        if "E2" in g:
            e1 = rng.standard_normal((hi - lo, m, g["sigma2"].shape[1])) * np.sqrt(g["sigma2"])[:, None, :]
            eta += np.einsum("tir,tjr,thr->tijh", e1, g["E2"], g["E3"])
        out[lo:hi] = sticks_from_breaks(breaks_from_eta(eta))
    return out


def psb_predictive_probs(rng, store: DrawStore, X_new) -> np.ndarray:
    """One latent probability per (draw, new subject, type): shape (T, m, J)."""
    pi = psb_predictive_weights(rng, store, X_new)
    with np.errstate(divide="ignore"):
        comp = sampling.categorical_from_log(rng, np.log(pi))
    theta = store["theta"]
    return np.take_along_axis(theta[:, None, None, :], comp[..., None], axis=-1)[..., 0]


def psb_predictive_mixture_logpmf(rng, store: DrawStore, X_new, Y, n) -> np.ndarray:
    """``log prod_j sum_h pi_jh Binom(Y_j; n_j, theta_h)`` per (draw, subject).

    The component draw is integrated out analytically, which gives the same
    expectation as :func:`psb_predictive_probs` with less Monte Carlo noise.
    """
    pi = psb_predictive_weights(rng, store, X_new)
    theta = store["theta"][:, None, None, :]
    lp = binomial_logpmf(np.asarray(Y)[None, :, :, None], np.asarray(n)[None, :, :, None], theta)
    with np.errstate(divide="ignore"):
        per_type = special.logsumexp(np.log(pi) + lp, axis=-1)
    return per_type.sum(axis=-1)


# --------------------------------------------------------------------------
# LPPL


def lppl_for_subject(p_draws, y, n) -> float:
    """``log( (1/T) sum_t prod_j Binom(y_j; n_j, p_tj) )`` for one subject."""
    p_draws = np.asarray(p_draws, float)
    if p_draws.ndim == 1:
        p_draws = p_draws[:, None]
    T = p_draws.shape[0]
    if T == 0:
        raise ValueError("need at least one predictive draw")
    ll = binomial_logpmf(np.asarray(y)[None, :], np.asarray(n)[None, :], p_draws).sum(axis=1)
    return float(special.logsumexp(ll) - np.log(T))


def subject_lppl(p_draws, Y, n) -> np.ndarray:
    """Vectorized :func:`lppl_for_subject` over subjects; ``p_draws`` is (T, m, J)."""
    p_draws = np.asarray(p_draws, float)
    ll = binomial_logpmf(np.asarray(Y)[None], np.asarray(n)[None], p_draws).sum(axis=-1)
    return special.logsumexp(ll, axis=0) - np.log(p_draws.shape[0])


def predictive_quantiles(rng, y_draws, Y, randomized: bool = False) -> np.ndarray:
    """Fraction of predictive draws strictly exceeding the observed count.

    With ``randomized`` a uniform share of the tie mass is added, which makes the
    quantile exactly uniform under a calibrated model despite discreteness.
    """
    y_draws = np.asarray(y_draws)
    Y = np.asarray(Y)
    above = (y_draws > Y[None]).mean(axis=0)
    if not randomized:
        return above
    ties = (y_draws == Y[None]).mean(axis=0)
    return above + rng.random(above.shape) * ties


@dataclass
class QuantileEcdf:
    grid: np.ndarray
    values: np.ndarray
    ks: float

    def __call__(self, x):
        """P(phi < x)."""
        return np.searchsorted(self.grid, np.asarray(x), side="left") / self.grid.size


def quantile_ecdf(quantiles) -> QuantileEcdf:
    """Empirical CDF ``P(phi < x)`` and its sup-distance from the uniform CDF on [0, 1]."""
    phi = np.sort(np.asarray(quantiles, float).ravel())
    m = phi.size
    if m == 0:
        raise ValueError("no quantiles")
    k = np.arange(1, m + 1)
    ks = max(np.max(k / m - phi), np.max(phi - (k - 1) / m), 0.0)
    return QuantileEcdf(grid=phi, values=k / m, ks=float(ks))


# --------------------------------------------------------------------------
# Cross-validation


@dataclass
class CvReport:
    folds: np.ndarray
    subject_lppl: np.ndarray
    phi: np.ndarray
    phi_randomized: np.ndarray
    subject_ids: list[str]
    type_names: list[str]
    meta: dict = field(default_factory=dict)
    y_draws_pooled: np.ndarray | None = None

    @property
    def lppl(self) -> float:
        return float(np.sum(self.subject_lppl))

    def ks(self, randomized: bool = True) -> float:
        return quantile_ecdf(self.phi_randomized if randomized else self.phi).ks

    def to_dict(self) -> dict:
        return {
            "lppl": self.lppl,
            "ks_uniform": self.ks(randomized=False),
            "ks_uniform_randomized": self.ks(randomized=True),
            "subjects": [
                {"subject": s, "fold": int(f), "log_predictive_density": float(v)}
                for s, f, v in zip(self.subject_ids, self.folds, self.subject_lppl)
            ],
            "type_names": list(self.type_names),
            "meta": self.meta,
        }

    def write(self, json_path, csv_path) -> None:
        dump_json(self.to_dict(), json_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", "type", "fold", "phi", "phi_randomized"])
            for i, s in enumerate(self.subject_ids):
                for j, t in enumerate(self.type_names):
                    w.writerow([s, t, int(self.folds[i]), repr(float(self.phi[i, j])),
                                repr(float(self.phi_randomized[i, j]))])


def assign_folds(seed: int, subject_ids, K: int) -> np.ndarray:
    """Near-equal folds from a seeded permutation of the sorted subject ids."""
    I = len(subject_ids)
    if K < 2 or K > I:
        raise ValueError(f"need 2 <= K <= number of subjects ({I}), got K={K}")
    order = sorted(range(I), key=lambda i: subject_ids[i])
    perm = sampling.substream(seed, 0xF01D).permutation(I)
    folds = np.empty(I, dtype=np.int64)
    folds[np.asarray(order)[perm]] = np.arange(I) % K
    return folds


def fit_model(model, chain, train: Dataset):
    """Fit either a PSB :class:`ModelConfig` or a logistic baseline config."""
    if isinstance(model, ModelConfig):
        from tensorstick.gibbs import run_chain

        return run_chain(chain, model, train)
    from tensorstick.baselines import fit_logistic

    return fit_logistic(chain, model, train)


def predictive_probs(rng, store: DrawStore, X_new) -> np.ndarray:
    store.require_draws()
    if store.meta.get("family") == "logistic":
        from tensorstick.baselines import logistic_predictive_probs

        return logistic_predictive_probs(rng, store, X_new)
    return psb_predictive_probs(rng, store, X_new)


def _run_fold(args):
    model, chain, data, folds, k, rao_blackwell = args
    from dataclasses import replace

    ids = data.subject_ids
    seed = chain.seed
    test = np.array(sorted(np.flatnonzero(folds == k), key=lambda i: ids[i]), dtype=np.int64)
    train_rows = np.array(sorted(np.flatnonzero(folds != k), key=lambda i: ids[i]), dtype=np.int64)
    if test.size == 0 or train_rows.size == 0:
        raise ValueError(f"fold {k} is empty")
    train, center, scale = data.subset(train_rows).restandardized()
    X_test = (data.X[test] - center) / scale
    store = fit_model(model, replace(chain, seed=sampling.derive_seed(seed, 1, k)), train)
    rng = sampling.substream(seed, 2, k)
    Y_test, n_test = data.Y[test], data.n[test]
    p = predictive_probs(rng, store, X_test)
    if rao_blackwell and store.meta.get("family") == "psb":
        ll = psb_predictive_mixture_logpmf(rng, store, X_test, Y_test, n_test)
        lppl = special.logsumexp(ll, axis=0) - np.log(ll.shape[0])
    else:
        lppl = subject_lppl(p, Y_test, n_test)
    y_draws = rng.binomial(n_test[None], p)
    phi = predictive_quantiles(rng, y_draws, Y_test)
    phi_rand = predictive_quantiles(rng, y_draws, Y_test, randomized=True)
    return test, lppl, phi, phi_rand, y_draws


def cross_validate(model, chain, data: Dataset, K: int = 10, *, rao_blackwell: bool = False,
                   keep_draws: bool = False, jobs: int = 1) -> CvReport:
    """K-fold predictive evaluation; ``K == data.I`` is leave-one-out.

    All randomness derives from ``chain.seed``: the fold permutation, each
    fold's chain seed and each fold's predictive stream, so results do not
    depend on ``jobs``.  Results also do not depend on the row order of
    ``data`` (subjects are processed in sorted-id order).
    """
    seed = chain.seed
    ids = list(data.subject_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique for cross-validation")
    folds = assign_folds(seed, ids, K)
    I, J = data.I, data.J
    sub_lppl = np.zeros(I)
    phi = np.zeros((I, J))
    phi_rand = np.zeros((I, J))
    args = [(model, chain, data, folds, k, rao_blackwell) for k in range(K)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_fold, args))
    else:
        results = [_run_fold(a) for a in args]
    for test, lppl, ph, phr, _ in results:
        sub_lppl[test] = lppl
        phi[test] = ph
        phi_rand[test] = phr
    meta = {
        "K": K,
        "seed": seed,
        "model": model.to_dict(),
        "chain": chain.to_dict(),
        "config_hash": stable_hash({"model": model.to_dict(), "chain": chain.to_dict(), "K": K}),
        "data_hash": data.digest(),
        "rao_blackwell": rao_blackwell,
    }
    report = CvReport(folds=folds, subject_lppl=sub_lppl, phi=phi, phi_randomized=phi_rand,
                      subject_ids=ids, type_names=list(data.type_names), meta=meta)
    if keep_draws:
        T = min(r[4].shape[0] for r in results)
        pooled = np.zeros((T, I, J), dtype=np.int64)
        for test, *_, yd in results:
            pooled[:, test] = yd[:T]
        report.y_draws_pooled = pooled
    return report


def predictive_summary(rng, store: DrawStore, x_profile, n_tilde, probs=(0.025, 0.5, 0.975)) -> list[dict]:
    """Per-type predictive histogram of counts and quantiles of the latent probability."""
    n_tilde = np.asarray(n_tilde, dtype=np.int64)
    p = predictive_probs(rng, store, np.asarray(x_profile, float).reshape(1, -1))[:, 0, :]
    y = rng.binomial(n_tilde[None, :], p)
    out = []
    for j in range(p.shape[1]):
        hist = np.bincount(y[:, j], minlength=n_tilde[j] + 1) / y.shape[0]
        out.append({
            "n": int(n_tilde[j]),
            "count_histogram": [float(v) for v in hist],
            "p_quantiles": {str(q): float(v) for q, v in zip(probs, np.quantile(p[:, j], probs))},
            "p_mean": float(p[:, j].mean()),
        })
    return out
