"""Simulation designs and the model-comparison grid driver.

Three generators mirror the standard study: a logistic model with a shared
subject error, a rank-1 probit stick-breaking model and a probit stick-breaking
model with an unstructured coefficient array.  :func:`run_grid` cross-validates
a grid of stick-breaking structures and the logistic comparators on one
generated dataset and tabulates the LPPL.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from tensorstick import sampling
from tensorstick.baselines import LogisticConfig, inv_logit
from tensorstick.gibbs import ChainConfig
from tensorstick.model import Dataset, ModelConfig, prior_generative_draw, standardize_columns
from tensorstick.predictive import cross_validate
from tensorstick.store import dump_json, stable_hash

log = logging.getLogger(__name__)

KINDS = ("logistic", "lowrank_psb", "fullrank_psb")
LOGISTIC_BETA = np.array([0.0, 1.0, -1.0, 0.0, 1.0, -1.0])
DEFAULT_TRIALS = (48, 48, 48, 24)


@dataclass(frozen=True)
class SimDesign:
    kind: str = "lowrank_psb"
    I: int = 290
    J: int = 4
    D: int = 6
    seed: int = 1
    H: int = 25
    trials: tuple[int, ...] = DEFAULT_TRIALS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if min(self.I, self.J, self.D, self.H) < 1:
            raise ValueError("design dimensions must be positive")
        if len(self.trials) != self.J:
            raise ValueError(f"need {self.J} trial counts, got {len(self.trials)}")

    def trial_matrix(self) -> np.ndarray:
        return np.tile(np.asarray(self.trials, dtype=np.int64), (self.I, 1))


@dataclass
class SimTruth:
    p: np.ndarray
    params: dict = field(default_factory=dict)


def gen_covariates(rng, I: int, D: int) -> np.ndarray:
    """First ``(D + 1) // 2`` columns N(0, 1), the rest Bernoulli(0.5); all standardized."""
    n_cont = (D + 1) // 2
    X = np.empty((I, D))
    X[:, :n_cont] = rng.standard_normal((I, n_cont))
    for d in range(n_cont, D):
        col = rng.binomial(1, 0.5, size=I)
        while I > 1 and col.min() == col.max():
            col = rng.binomial(1, 0.5, size=I)
        X[:, d] = col
    return standardize_columns(X)[0]


def _dataset(design: SimDesign, Y, X) -> Dataset:
    return Dataset(
        Y=Y,
        n=design.trial_matrix(),
        X=X,
        subject_ids=[f"s{i + 1:04d}" for i in range(design.I)],
    )


def gen_logistic_sim(rng, design: SimDesign, eps=None) -> tuple[Dataset, SimTruth]:
    if design.D != LOGISTIC_BETA.size:
        raise ValueError("the logistic design needs D = 6")
    X = gen_covariates(rng, design.I, design.D)
    if eps is None:
        eps = rng.standard_normal(design.I)
    p_subject = inv_logit(X @ LOGISTIC_BETA + eps)
    p = np.repeat(p_subject[:, None], design.J, axis=1)
    Y = rng.binomial(design.trial_matrix(), p)
    return _dataset(design, Y, X), SimTruth(p=p, params={"beta": LOGISTIC_BETA.copy(), "eps": eps})


def _psb_sim(rng, design: SimDesign, config: ModelConfig):
    X = gen_covariates(rng, design.I, design.D)
    state, data = prior_generative_draw(rng, config, X, design.trial_matrix())
    params = {"theta": state.theta, "Z": state.Z, "alpha": state.alpha, "C": state.C,
              "B": state.coef_array(design.D)}
    if state.B1 is not None:
        params.update(B1=state.B1, B2=state.B2, B3=state.B3)
    return _dataset(design, data.Y, X), SimTruth(p=state.theta[state.C], params=params)


def gen_lowrank_psb_sim(rng, design: SimDesign) -> tuple[Dataset, SimTruth]:
    return _psb_sim(rng, design, ModelConfig(H=design.H, coef="low_rank", rank=1, error_rank=0))


def gen_fullrank_psb_sim(rng, design: SimDesign) -> tuple[Dataset, SimTruth]:
    return _psb_sim(rng, design, ModelConfig(H=design.H, coef="full", error_rank=0))


GENERATORS = {
    "logistic": gen_logistic_sim,
    "lowrank_psb": gen_lowrank_psb_sim,
    "fullrank_psb": gen_fullrank_psb_sim,
}


def generate(design: SimDesign, replicate: int = 0) -> tuple[Dataset, SimTruth]:
    rng = sampling.substream(design.seed, 0x51D, replicate)
    return GENERATORS[design.kind](rng, design)


# --------------------------------------------------------------------------
# Grid

COEF_ROWS = (("none", 0), ("low_rank", 1), ("low_rank", 2), ("full", 0))
ERROR_COLS = (0, 1, 2)
LOGISTIC_VARIANTS = ("separate", "shared_beta", "shared_beta_eps")
ROW_LABELS = {("none", 0): "No B", ("low_rank", 1): "Rank(B)=1", ("low_rank", 2): "Rank(B)=2", ("full", 0): "Full B"}
COL_LABELS = {0: "No E", 1: "Rank(E)=1", 2: "Rank(E)=2"}
LOGISTIC_LABELS = {"separate": "Separate", "shared_beta": "Shared beta", "shared_beta_eps": "Shared beta, eps"}


def cell_key(model) -> str:
    if isinstance(model, LogisticConfig):
        return f"logistic:{model.variant}"
    coef = model.coef if model.coef != "low_rank" else f"rank{model.rank}"
    return f"psb:{coef}:E{model.error_rank}"


def default_grid(H: int = 25) -> list:
    cells = []
    for coef, rank in COEF_ROWS:
        for er in ERROR_COLS:
            cells.append(ModelConfig(H=H, coef=coef, rank=max(rank, 1), error_rank=er))
    cells.extend(LogisticConfig(variant=v) for v in LOGISTIC_VARIANTS)
    return cells


PRESETS = {
    "table2-desk": dict(kind="logistic"),
    "table3-desk": dict(kind="lowrank_psb"),
    "table4-desk": dict(kind="fullrank_psb"),
}
DESK = dict(I=150, iterations=1500, burn_in=750, K=5)


@dataclass
class GridResult:
    kind: str
    values: dict[str, float | None]
    replicate_values: dict[str, list]
    meta: dict = field(default_factory=dict)

    def get(self, key: str):
        return self.values.get(key)

    def psb(self, coef: str, rank: int, error_rank: int):
        c = coef if coef != "low_rank" else f"rank{rank}"
        return self.values.get(f"psb:{c}:E{error_rank}")

    def logistic(self, variant: str):
        return self.values.get(f"logistic:{variant}")

    def rows(self) -> list[list[str]]:
        """Table body: four stick-breaking rows by three error columns, then the logistic row."""
        def fmt(v):
            return "failed" if v is None else f"{v:.1f}"

        out = [["Stick-breaking", *(COL_LABELS[e] for e in ERROR_COLS)]]
        for coef, rank in COEF_ROWS:
            out.append([ROW_LABELS[(coef, rank)], *(fmt(self.psb(coef, rank, e)) for e in ERROR_COLS)])
        out.append(["Logistic", *(LOGISTIC_LABELS[v] for v in LOGISTIC_VARIANTS)])
        out.append(["", *(fmt(self.logistic(v)) for v in LOGISTIC_VARIANTS)])
        return out

    def render(self) -> str:
        rows = self.rows()
        widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
        lines = []
        for k, r in enumerate(rows):
            lines.append(" | ".join(cell.rjust(w) if c else cell.ljust(w) for c, (cell, w) in enumerate(zip(r, widths))))
            if k in (0, 4):
                lines.append("-+-".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cell", "mean_lppl", *(f"replicate_{r}" for r in range(self.meta.get("replicates", 1)))])
            for key in sorted(self.values):
                v = self.values[key]
                reps = self.replicate_values.get(key, [])
                w.writerow([key, "" if v is None else repr(v), *("" if x is None else repr(x) for x in reps)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": self.values, "replicates": self.replicate_values, "meta": self.meta}


def _run_cell(args):
    model, chain, data, K = args
    try:
        value = cross_validate(model, chain, data, K).lppl
        log.info("%s: LPPL %.2f", cell_key(model), value)
        return value
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("cell %s failed: %s", cell_key(model), exc)
        return None


def run_grid(design: SimDesign, grid=None, chain: ChainConfig | None = None, K: int = 5,
             replicates: int = 1, jobs: int = 1) -> GridResult:
    """Cross-validated LPPL for every model in ``grid`` on data from ``design``.

    All cells of a replicate share the generated dataset and the fold split.
    The reported value is the mean over replicates; a cell that fails in any
    replicate is reported as failed (None).
    """
    grid = default_grid(design.H) if grid is None else list(grid)
    chain = chain or ChainConfig(iterations=DESK["iterations"], burn_in=DESK["burn_in"], seed=design.seed)
    per_cell: dict[str, list] = {cell_key(m): [] for m in grid}
    for r in range(replicates):
        data, _ = generate(design, r)
        rep_chain = replace(chain, seed=sampling.derive_seed(chain.seed, 0xC7, r))
        jobs_args = [(m, rep_chain, data, K) for m in grid]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                results = list(ex.map(_run_cell, jobs_args))
        else:
            results = [_run_cell(a) for a in jobs_args]
        for m, v in zip(grid, results):
            per_cell[cell_key(m)].append(v)
    values = {k: (None if any(v is None for v in vs) else float(np.mean(vs))) for k, vs in per_cell.items()}
    meta = {
        "design": asdict(design),
        "chain": chain.to_dict(),
        "K": K,
        "replicates": replicates,
        "config_hash": stable_hash({"design": asdict(design), "chain": chain.to_dict(), "K": K,
                                    "grid": [m.to_dict() for m in grid], "replicates": replicates}),
    }
    return GridResult(kind=design.kind, values=values, replicate_values=per_cell, meta=meta)


def desk_design(preset: str, seed: int = 1, I: int | None = None) -> SimDesign:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return SimDesign(I=I or DESK["I"], seed=seed, **PRESETS[preset])
