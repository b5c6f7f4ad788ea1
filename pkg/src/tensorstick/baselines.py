"""Bayesian logistic regression comparators fitted by adaptive Metropolis-within-Gibbs.

Variants differ in how coefficients and the extra-binomial error are shared
across types:

``no_error``         logit p_ij = x_i b_j
``separate``         logit p_ij = x_i b_j + e_ij
``shared_beta``      logit p_ij = x_i b   + e_ij
``shared_beta_eps``  logit p_ij = x_i b   + e_i

Coefficients get independent N(0, ``prior_var_beta``) priors, errors
N(0, sigma2) with sigma2 ~ IG(``ig_hyper``).  A leading intercept column is
included unless ``intercept=False``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import special

from tensorstick import sampling
from tensorstick.model import Dataset, NumericalError
from tensorstick.store import DrawStore, stable_hash

VARIANTS = ("no_error", "separate", "shared_beta", "shared_beta_eps")
_TINY = np.finfo(float).tiny


class DivergenceError(NumericalError):
    """Every proposal of a block was rejected over a whole window."""


def logit(p):
    p = np.asarray(p, float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("logit needs p in (0, 1)")
    out = np.log(p) - np.log1p(-p)
    return out if out.ndim else float(out)


def inv_logit(x):
    """Logistic function, clamped away from exact 0 and 1."""
    out = np.clip(special.expit(np.asarray(x, float)), _TINY, 1.0 - np.finfo(float).epsneg)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LogisticConfig:
    variant: str = "separate"
    prior_var_beta: float = 100.0
    ig_hyper: tuple[float, float] = (0.1, 0.1)
    target_accept: float = 0.44
    adapt_window: int = 50
    intercept: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.prior_var_beta <= 0 or min(self.ig_hyper) <= 0:
            raise ValueError("prior variances must be positive")
        object.__setattr__(self, "ig_hyper", tuple(float(v) for v in self.ig_hyper))

    @property
    def shared_beta(self) -> bool:
        return self.variant in ("shared_beta", "shared_beta_eps")

    @property
    def has_error(self) -> bool:
        return self.variant != "no_error"

    def label(self) -> str:
        return {
            "no_error": "logistic",
            "separate": "logistic separate",
            "shared_beta": "logistic shared beta",
            "shared_beta_eps": "logistic shared beta, eps",
        }[self.variant]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = "logistic"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticConfig":
        d = {k: v for k, v in d.items() if k != "family"}
        if "ig_hyper" in d:
            d["ig_hyper"] = tuple(d["ig_hyper"])
        return cls(**d)


def design(X, intercept: bool = True) -> np.ndarray:
    X = np.asarray(X, float)
    return np.hstack([np.ones((X.shape[0], 1)), X]) if intercept else X


def _cell_loglik(Y, n, eta):
    return Y * eta - n * np.logaddexp(0.0, eta)


class LogisticSampler:
    """State and adaptive random-walk steps for one logistic chain."""

    def __init__(self, config: LogisticConfig, data: Dataset, rng):
        self.config = config
        self.Xa = design(data.X, config.intercept)
        I, J = data.Y.shape
        P = self.Xa.shape[1]
        Jb = 1 if config.shared_beta else J
        self._J = J
        self.beta = np.zeros((Jb, P))
        self.beta_step = np.full((Jb, P), 0.5)
        if config.variant == "shared_beta_eps":
            self.eps = 0.1 * rng.standard_normal(I)
        elif config.has_error:
            self.eps = 0.1 * rng.standard_normal((I, J))
        else:
            self.eps = None
        self.eps_step = None if self.eps is None else np.full(self.eps.shape, 0.5)
        self.sigma2 = 1.0
        self.adapting = True
        self._acc_beta = np.zeros((Jb, P))
        self._acc_eps = None if self.eps is None else np.zeros(self.eps.shape)
        self._since = 0
        self._windows = 0
        self.accept_totals = {"beta": 0.0, "eps": 0.0, "n": 0}

    def eta(self) -> np.ndarray:
        xb = self.Xa @ self.beta.T  # I x Jb
        J = self._J
        eta = np.broadcast_to(xb, (xb.shape[0], J)).copy() if xb.shape[1] == 1 else xb.copy()
        if self.eps is not None:
            eta += self.eps[:, None] if self.eps.ndim == 1 else self.eps
        return eta

    def sweep(self, rng, data: Dataset) -> None:
        Y, n = data.Y, data.n
        eta = self.eta()
        ll = _cell_loglik(Y, n, eta)
        pv = self.config.prior_var_beta
        Jb, P = self.beta.shape

        for p in range(P):
            step = self.beta_step[:, p]
            delta = step * rng.standard_normal(Jb)
            xcol = self.Xa[:, p][:, None]
            if Jb == 1:
                eta_new = eta + xcol * delta[0]
                ll_new = _cell_loglik(Y, n, eta_new)
                dll = np.array([ll_new.sum() - ll.sum()])
            else:
                eta_new = eta + xcol * delta[None, :]
                ll_new = _cell_loglik(Y, n, eta_new)
                dll = ll_new.sum(axis=0) - ll.sum(axis=0)
            old = self.beta[:, p]
            new = old + delta
            log_r = dll - 0.5 * (new**2 - old**2) / pv
            acc = np.log(1.0 - rng.random(Jb)) < log_r
            self.beta[acc, p] = new[acc]
            if Jb == 1:
                if acc[0]:
                    eta, ll = eta_new, ll_new
            else:
                eta[:, acc] = eta_new[:, acc]
                ll[:, acc] = ll_new[:, acc]
            self._acc_beta[:, p] += acc

        if self.eps is not None:
            delta = self.eps_step * rng.standard_normal(self.eps.shape)
            new = self.eps + delta
            if self.eps.ndim == 1:
                eta_new = eta + delta[:, None]
                ll_new = _cell_loglik(Y, n, eta_new)
                dll = ll_new.sum(axis=1) - ll.sum(axis=1)
            else:
                eta_new = eta + delta
                ll_new = _cell_loglik(Y, n, eta_new)
                dll = ll_new - ll
            log_r = dll - 0.5 * (new**2 - self.eps**2) / self.sigma2
            acc = np.log(1.0 - rng.random(self.eps.shape)) < log_r
            self.eps = np.where(acc, new, self.eps)
            self._acc_eps += acc
            a0, b0 = self.config.ig_hyper
            self.sigma2 = float(
                sampling.sample_inverse_gamma(rng, a0 + 0.5 * self.eps.size, b0 + 0.5 * np.sum(self.eps**2))
            )

        self._since += 1
        if self._since == self.config.adapt_window:
            self._end_window()

    def _end_window(self) -> None:
        w = self._since
        rate_b = self._acc_beta / w
        if self._acc_eps is not None:
            rate_e = self._acc_eps / w
        if not self._acc_beta.any() or (self._acc_eps is not None and not self._acc_eps.any()):
            raise DivergenceError(f"no proposals accepted over a window of {w} iterations")
        self.accept_totals["beta"] += float(rate_b.mean())
        if self._acc_eps is not None:
            self.accept_totals["eps"] += float(rate_e.mean())
        self.accept_totals["n"] += 1
        if self.adapting:
            self._windows += 1
            gain = min(1.0, 3.0 / np.sqrt(self._windows))
            t = self.config.target_accept
            self.beta_step *= np.exp(gain * (rate_b - t))
            if self._acc_eps is not None:
                self.eps_step *= np.exp(gain * (rate_e - t))
        self._acc_beta[:] = 0
        if self._acc_eps is not None:
            self._acc_eps[:] = 0
        self._since = 0

    def freeze(self) -> None:
        self.adapting = False


def fit_logistic(chain, config: LogisticConfig, data: Dataset) -> DrawStore:
    """Adaptive Metropolis-within-Gibbs; step sizes adapt during burn-in only."""
    rng = sampling.make_rng(chain.seed)
    sampler = LogisticSampler(config, data, rng)
    betas, epss, sig = [], [], []
    for it in range(1, chain.iterations + 1):
        if it == chain.burn_in + 1:
            sampler.freeze()
        sampler.sweep(rng, data)
        if it > chain.burn_in and (it - chain.burn_in) % chain.thin == 0:
            betas.append(sampler.beta.copy())
            if sampler.eps is not None:
                epss.append(sampler.eps.copy())
                sig.append(sampler.sigma2)
    blocks = {}
    if betas:
        blocks["beta"] = np.stack(betas)
        if epss:
            blocks["eps"] = np.stack(epss)
            blocks["sigma2"] = np.array(sig)
    n_win = max(sampler.accept_totals["n"], 1)
    meta = {
        "family": "logistic",
        "model": config.to_dict(),
        "chain": chain.to_dict(),
        "seed": chain.seed,
        "config_hash": stable_hash({"model": config.to_dict(), "chain": chain.to_dict()}),
        "data_hash": data.digest(),
        "n_draws": len(betas),
        "I": data.I,
        "J": data.J,
        "D": data.D,
        "covariate_names": list(data.covariate_names),
        "type_names": list(data.type_names),
        "x_center": np.asarray(data.x_center).tolist(),
        "x_scale": np.asarray(data.x_scale).tolist(),
        "acceptance": {
            "beta": sampler.accept_totals["beta"] / n_win,
            "eps": sampler.accept_totals["eps"] / n_win,
        },
        "beta_step": sampler.beta_step.tolist(),
    }
    return DrawStore(blocks=blocks, meta=meta)


def logistic_predictive_probs(rng, store: DrawStore, X_new) -> np.ndarray:
    """Latent probabilities for new subjects, (T, m, J), with fresh errors per draw."""
    cfg = LogisticConfig.from_dict(store.meta["model"])
    J = store.meta["J"]
    Xa = design(X_new, cfg.intercept)
    beta = store["beta"]  # T x Jb x P
    T = beta.shape[0]
    m = Xa.shape[0]
    eta = np.einsum("ip,tjp->tij", Xa, beta)
    if eta.shape[2] == 1:
        eta = np.broadcast_to(eta, (T, m, J)).copy()
    if cfg.variant == "shared_beta_eps":
        eta += rng.standard_normal((T, m, 1)) * np.sqrt(store["sigma2"])[:, None, None]
    elif cfg.has_error:
        eta += rng.standard_normal((T, m, J)) * np.sqrt(store["sigma2"])[:, None, None]
    return inv_logit(eta)


def logistic_predictive_lppl(rng, store: DrawStore, data: Dataset) -> float:
    """LPPL of ``data`` (held-out subjects) under the fitted comparator."""
    from tensorstick.predictive import subject_lppl

    p = logistic_predictive_probs(rng, store, data.X)
    return float(np.sum(subject_lppl(p, data.Y, data.n)))
