"""Model configuration, parameter state, stick-breaking weights and likelihood.

Component indices are 0-based throughout the library (allocation ``C[i, j] == 0``
is the first stick).  The last stick is closed off, ``V[..., H-1] == 1``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import special

from tensorstick import sampling
from tensorstick.tensor_core import cp_compose

COEF_STRUCTURES = ("none", "shared_types", "full", "low_rank")


class InputError(ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


# --------------------------------------------------------------------------
# Data


def standardize_columns(X):
    """Center and scale columns to mean 0, variance 1 (population variance).

    Constant columns are centered but left unscaled.
    """
    X = np.asarray(X, float)
    center = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    scale = X.std(axis=0) if X.shape[0] else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return (X - center) / scale, center, scale


@dataclass
class Dataset:
    """Binomial counts ``Y`` out of ``n`` trials for I subjects by J types, with
    subject covariates ``X`` (I x D, standardized)."""

    Y: np.ndarray
    n: np.ndarray
    X: np.ndarray
    covariate_names: list[str] | None = None
    type_names: list[str] | None = None
    subject_ids: list[str] | None = None
    x_center: np.ndarray | None = None
    x_scale: np.ndarray | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.int64)
        self.n = np.asarray(self.n, dtype=np.int64)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 0) if self.X.size == 0 else self.X[:, None]
        if self.Y.ndim != 2 or self.Y.shape != self.n.shape:
            raise InputError(f"Y{self.Y.shape} and n{self.n.shape} must be matching I x J matrices")
        if self.X.shape[0] != self.Y.shape[0]:
            raise InputError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if np.any(self.n < 0) or np.any(self.Y < 0) or np.any(self.Y > self.n):
            raise InputError("counts must satisfy 0 <= Y <= n")
        if not np.all(np.isfinite(self.X)):
            raise InputError("covariates must be finite")
        I, J = self.Y.shape
        if self.covariate_names is None:
            self.covariate_names = [f"x{d + 1}" for d in range(self.D)]
        if self.type_names is None:
            self.type_names = [f"type{j + 1}" for j in range(J)]
        if self.subject_ids is None:
            self.subject_ids = [str(i + 1) for i in range(I)]
        if self.x_center is None:
            self.x_center = np.zeros(self.D)
        if self.x_scale is None:
            self.x_scale = np.ones(self.D)

    @property
    def I(self) -> int:  # noqa: E743
        return self.Y.shape[0]

    @property
    def J(self) -> int:
        return self.Y.shape[1]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_raw(cls, Y, n, X_raw, **names) -> "Dataset":
        X, center, scale = standardize_columns(np.asarray(X_raw, float).reshape(np.shape(Y)[0], -1))
        return cls(Y=Y, n=n, X=X, x_center=center, x_scale=scale, **names)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(
            self,
            Y=self.Y[rows],
            n=self.n[rows],
            X=self.X[rows],
            subject_ids=[self.subject_ids[r] for r in rows],
        )

    def restandardized(self):
        """Copy with X rescaled to mean 0 / variance 1 on these rows, plus the
        affine map ``x -> (x - center) / scale`` that was applied."""
        X, center, scale = standardize_columns(self.X)
        return replace(self, X=X), center, scale

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.Y, self.n, self.X):
            h.update(np.ascontiguousarray(arr).tobytes())
            h.update(str(arr.shape).encode())
        return h.hexdigest()

    def to_csv(self, outcomes_path, covariates_path, raw: bool = True) -> None:
        """Write long-format outcomes and (optionally de-standardized) covariates."""
        with open(outcomes_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", "type", "y", "n"])
            for i, sid in enumerate(self.subject_ids):
                for j, tname in enumerate(self.type_names):
                    w.writerow([sid, tname, int(self.Y[i, j]), int(self.n[i, j])])
        X = self.X * self.x_scale + self.x_center if raw else self.X
        with open(covariates_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject", *self.covariate_names])
            for i, sid in enumerate(self.subject_ids):
                w.writerow([sid, *(repr(float(v)) for v in X[i])])

    @classmethod
    def from_csv(cls, outcomes_path, covariates_path) -> "Dataset":
        """Read ``subject,type,y,n`` outcomes and ``subject,<covariates...>``.

        Types are indexed by first appearance.  Cells missing from the outcome
        file get ``n = 0``.  Raises :class:`InputError` citing the file line.
        """
        cov_rows: dict[str, list[float]] = {}
        order: list[str] = []
        with open(covariates_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0].strip() != "subject":
                raise InputError(f"{covariates_path}: line 1: header must start with 'subject'")
            names = [h.strip() for h in header[1:]]
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(header):
                    raise InputError(
                        f"{covariates_path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                    )
                sid = row[0].strip()
                if sid in cov_rows:
                    raise InputError(f"{covariates_path}: line {lineno}: duplicate subject {sid!r}")
                try:
                    cov_rows[sid] = [float(v) for v in row[1:]]
                except ValueError as exc:
                    raise InputError(f"{covariates_path}: line {lineno}: {exc}") from None
                order.append(sid)

        types: list[str] = []
        cells: dict[tuple[str, str], tuple[int, int]] = {}
        with open(outcomes_path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            if header != ["subject", "type", "y", "n"]:
                raise InputError(f"{outcomes_path}: line 1: header must be 'subject,type,y,n'")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 4:
                    raise InputError(f"{outcomes_path}: line {lineno}: expected 4 fields, got {len(row)}")
                sid, tname = row[0].strip(), row[1].strip()
                try:
                    y, nn = int(row[2]), int(row[3])
                except ValueError:
                    raise InputError(f"{outcomes_path}: line {lineno}: y and n must be integers") from None
                if sid not in cov_rows:
                    raise InputError(f"{outcomes_path}: line {lineno}: subject {sid!r} has no covariates")
                if nn < 0 or y < 0 or y > nn:
                    raise InputError(f"{outcomes_path}: line {lineno}: need 0 <= y <= n, got y={y}, n={nn}")
                if (sid, tname) in cells:
                    raise InputError(f"{outcomes_path}: line {lineno}: duplicate cell ({sid}, {tname})")
                if tname not in types:
                    types.append(tname)
                cells[(sid, tname)] = (y, nn)

        I, J = len(order), len(types)
        Y = np.zeros((I, J), dtype=np.int64)
        n = np.zeros((I, J), dtype=np.int64)
        tindex = {t: j for j, t in enumerate(types)}
        sindex = {s: i for i, s in enumerate(order)}
        for (sid, tname), (y, nn) in cells.items():
            Y[sindex[sid], tindex[tname]] = y
            n[sindex[sid], tindex[tname]] = nn
        X_raw = np.array([cov_rows[s] for s in order], dtype=float).reshape(I, len(names))
        return cls.from_raw(Y, n, X_raw, covariate_names=names, type_names=types, subject_ids=order)


# --------------------------------------------------------------------------
# Configuration and state


@dataclass(frozen=True)
class ModelConfig:
    """Structure of the stick-breaking regression.

    ``coef`` selects how covariates enter the sticks: ``none`` (intercepts only,
    the marginal DP-like model), ``shared_types`` (one D x H matrix for all
    types), ``full`` (independent D x J x H array) or ``low_rank`` (CP rank
    ``rank``).  ``error_rank`` is the CP rank of the subject effects; 0 drops them.
    """

    H: int = 25
    coef: str = "low_rank"
    rank: int = 1
    error_rank: int = 0
    beta_base: tuple[float, float] = (1.0, 1.0)
    ig_hyper: tuple[float, float] = (0.1, 0.1)

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be at least 1")
        if self.coef not in COEF_STRUCTURES:
            raise ValueError(f"coef must be one of {COEF_STRUCTURES}, not {self.coef!r}")
        if self.coef == "low_rank" and self.rank < 1:
            raise ValueError("low_rank coefficients need rank >= 1")
        if self.error_rank < 0:
            raise ValueError("error_rank must be >= 0")
        a, b = self.beta_base
        if a <= 0 or b <= 0:
            raise ValueError("beta_base parameters must be positive")
        if min(self.ig_hyper) <= 0:
            raise ValueError("ig_hyper parameters must be positive")
        object.__setattr__(self, "beta_base", (float(a), float(b)))
        object.__setattr__(self, "ig_hyper", tuple(float(v) for v in self.ig_hyper))

    @property
    def has_error(self) -> bool:
        return self.error_rank > 0

    def label(self) -> str:
        coef = {"none": "no B", "shared_types": "shared B", "full": "full B"}.get(
            self.coef, f"rank-{self.rank} B"
        )
        err = f"rank-{self.error_rank} E" if self.has_error else "no E"
        return f"{coef} / {err}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("beta_base", "ig_hyper"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class ParamState:
    """One complete sampler state.

    Coefficients live in ``B1, B2, B3`` (low rank), ``B_full`` (D x J x H) or
    ``B_shared`` (D x H) depending on the configuration; subject effects in
    ``E1, E2, E3`` with per-rank scales ``sigma2``.  ``Zstar`` entries with
    ``h > C[i, j]`` are placeholders and are never read.
    """

    theta: np.ndarray
    Z: np.ndarray
    alpha: float
    C: np.ndarray
    Zstar: np.ndarray
    B1: np.ndarray | None = None
    B2: np.ndarray | None = None
    B3: np.ndarray | None = None
    B_full: np.ndarray | None = None
    B_shared: np.ndarray | None = None
    E1: np.ndarray | None = None
    E2: np.ndarray | None = None
    E3: np.ndarray | None = None
    sigma2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def H(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "ParamState":
        kw = {}
        for k, v in self.__dict__.items():
            kw[k] = v.copy() if isinstance(v, np.ndarray) else v
        return ParamState(**kw)

    def coef_array(self, D: int) -> np.ndarray | None:
        """The D x J x H coefficient array, or None when covariates are absent."""
        J, H = self.Z.shape
        if self.B1 is not None:
            return cp_compose(self.B1, self.B2, self.B3)
        if self.B_full is not None:
            return self.B_full
        if self.B_shared is not None:
            return np.broadcast_to(self.B_shared[:, None, :], (D, J, H)).copy()
        return None

    def covariate_term(self, X) -> np.ndarray:
        """``X[i, :] @ B[:, j, h]`` as an I x J x H array (zeros when absent)."""
        X = np.asarray(X, float)
        J, H = self.Z.shape
        I = X.shape[0]
        if self.B1 is not None:
            return np.einsum("ir,jr,hr->ijh", X @ self.B1, self.B2, self.B3)
        if self.B_full is not None:
            return np.tensordot(X, self.B_full, axes=(1, 0))
        if self.B_shared is not None:
            return np.broadcast_to((X @ self.B_shared)[:, None, :], (I, J, H))
        return np.zeros((I, J, H))

    def error_term(self) -> np.ndarray | None:
        if self.E1 is None:
            return None
        return cp_compose(self.E1, self.E2, self.E3)

    def linear_predictor(self, X) -> np.ndarray:
        eta = self.Z[None, :, :] + self.covariate_term(X)
        E = self.error_term()
        if E is not None:
            eta = eta + E
        return eta

    def check(self) -> None:
        """Assert the state invariants; raises AssertionError on violation."""
        assert np.all((self.theta > 0) & (self.theta < 1)), "theta outside (0, 1)"
        assert np.all(self.sigma2 > 0), "nonpositive sigma2"
        H = self.H
        assert np.all((self.C >= 0) & (self.C < H)), "allocation out of range"
        hh = np.arange(H)
        C = self.C[..., None]
        neg = (hh < C) & (hh < H - 1)
        pos = (hh == C) & (hh < H - 1)
        assert np.all(self.Zstar[neg] < 0), "latent below allocation not negative"
        assert np.all(self.Zstar[pos] > 0), "latent at allocation not positive"


@dataclass
class StickWeights:
    V: np.ndarray
    pi: np.ndarray


# --------------------------------------------------------------------------
# Sticks and likelihood


def sticks_from_breaks(V) -> np.ndarray:
    """Weights ``V_h * prod_{l<h} (1 - V_l)`` along the last axis."""
    V = np.asarray(V, float)
    remaining = np.cumprod(1.0 - V, axis=-1)
    prev = np.concatenate([np.ones(V.shape[:-1] + (1,)), remaining[..., :-1]], axis=-1)
    return V * prev


def log_sticks(eta) -> np.ndarray:
    """Log weights for probit breaks ``Phi(eta)`` with the last break fixed to 1."""
    eta = np.asarray(eta, float)
    log_v = special.log_ndtr(eta)
    log_1mv = special.log_ndtr(-eta)
    log_v[..., -1] = 0.0
    before = np.cumsum(log_1mv, axis=-1)
    before = np.concatenate([np.zeros(eta.shape[:-1] + (1,)), before[..., :-1]], axis=-1)
    return log_v + before


def breaks_from_eta(eta) -> np.ndarray:
    V = special.ndtr(np.asarray(eta, float))
    V[..., -1] = 1.0
    return V


def compute_sticks(state: ParamState, X) -> StickWeights:
    eta = state.linear_predictor(X)
    if not np.all(np.isfinite(eta)):
        raise NumericalError("non-finite stick-breaking linear predictor")
    V = breaks_from_eta(eta)
    return StickWeights(V=V, pi=sticks_from_breaks(V))


def binomial_logpmf(y, n, p):
    """Binomial log pmf; p of exactly 0 or 1 gives -inf unless y sits on that boundary."""
    y = np.asarray(y)
    n = np.asarray(n)
    p = np.asarray(p, float)
    if np.any(y > n) or np.any(y < 0):
        raise ValueError("binomial_logpmf needs 0 <= y <= n")
    out = (
        special.gammaln(n + 1.0)
        - special.gammaln(y + 1.0)
        - special.gammaln(n - y + 1.0)
        + special.xlogy(y, p)
        + special.xlog1py(n - y, -p)
    )
    return out if out.ndim else float(out)


def loglik(state: ParamState, data: Dataset) -> float:
    return float(np.sum(binomial_logpmf(data.Y, data.n, state.theta[state.C])))


def mixture_mean(state: ParamState, X) -> np.ndarray:
    """Expected success probability ``sum_h pi_ijh theta_h`` per cell."""
    return compute_sticks(state, X).pi @ state.theta


# --------------------------------------------------------------------------
# Prior


def draw_latents(rng, eta, C) -> np.ndarray:
    """Latent probit variables consistent with allocations ``C``: negative for
    sticks before ``C``, positive at ``C``; later entries are filled with 0."""
    H = eta.shape[-1]
    hh = np.arange(H)
    neg = hh < C[..., None]
    active = (hh <= C[..., None]) & (hh < H - 1)
    Zstar = np.zeros_like(eta)
    Zstar[active] = sampling.trunc_normal_signed(rng, eta[active], ~neg[active])
    return Zstar


def prior_generative_draw(rng, config: ModelConfig, X, n) -> tuple[ParamState, Dataset]:
    """Draw all parameters top-down from the prior, then allocations and counts."""
    X = np.asarray(X, float)
    n = np.asarray(n, dtype=np.int64)
    I, D = X.shape
    J = n.shape[1]
    H = config.H

    alpha = float(rng.normal())
    Z = rng.normal(alpha, 1.0, size=(J, H))
    kw = {}
    if config.coef == "low_rank":
        R = config.rank
        kw.update(B1=rng.normal(size=(D, R)), B2=rng.normal(size=(J, R)), B3=rng.normal(size=(H, R)))
    elif config.coef == "full":
        kw["B_full"] = rng.normal(size=(D, J, H))
    elif config.coef == "shared_types":
        kw["B_shared"] = rng.normal(size=(D, H))
    sigma2 = np.zeros(0)
    if config.has_error:
        Re = config.error_rank
        sigma2 = sampling.sample_inverse_gamma(rng, config.ig_hyper[0], config.ig_hyper[1], size=Re)
        kw.update(
            E1=rng.normal(size=(I, Re)) * np.sqrt(sigma2),
            E2=rng.normal(size=(J, Re)),
            E3=rng.normal(size=(H, Re)),
        )
    a, b = config.beta_base
    theta = sampling.sample_beta(rng, a, b, size=H)

    state = ParamState(
        theta=theta, Z=Z, alpha=alpha, C=np.zeros((I, J), dtype=np.int64),
        Zstar=np.zeros((I, J, H)), sigma2=sigma2, **kw,
    )
    eta = state.linear_predictor(X)
    state.C = sampling.categorical_from_log(rng, log_sticks(eta))
    state.Zstar = draw_latents(rng, eta, state.C)
    Y = sampling.sample_binomial(rng, n, theta[state.C])
    return state, Dataset(Y=Y, n=n, X=X)
