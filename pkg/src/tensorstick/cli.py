"""Command line interface: ``tensorstick {fit|predict|cv|simulate}``.

Settings come from an optional YAML ``--config`` file with ``model``,
``chain``, ``cv`` and ``simulate`` sections; command-line flags override the
file.  All randomness derives from ``--seed``.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import yaml

from tensorstick import plotting, sampling
from tensorstick.baselines import VARIANTS, LogisticConfig
from tensorstick.gibbs import ChainConfig, run_chain
from tensorstick.model import COEF_STRUCTURES, Dataset, InputError, ModelConfig, NumericalError
from tensorstick.predictive import cross_validate, fit_model, predictive_summary
from tensorstick.simstudy import KINDS, PRESETS, SimDesign, desk_design, generate, run_grid
from tensorstick.store import DrawStore, dump_json, stable_hash

log = logging.getLogger("tensorstick")

EXIT_INPUT, EXIT_NUMERIC, EXIT_INVARIANT = 2, 3, 4


# --------------------------------------------------------------------------
# configuration


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file {p} does not exist")
    try:
        cfg = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise InputError(f"{p}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{p}: top level must be a mapping")
    return cfg


def _merge(section: dict, overrides: dict) -> dict:
    out = dict(section or {})
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _model_from(args, cfg):
    m = _merge(cfg.get("model"), {
        "family": args.family, "H": args.H, "coef": args.coef, "rank": args.rank,
        "error_rank": args.error_rank, "variant": args.variant,
    })
    family = m.pop("family", "psb")
    try:
        if family == "logistic":
            keep = {k: m[k] for k in ("variant", "prior_var_beta", "ig_hyper", "target_accept",
                                      "adapt_window", "intercept") if k in m}
            return LogisticConfig(**keep)
        if family != "psb":
            raise InputError(f"unknown model family {family!r}")
        keep = {k: m[k] for k in ("H", "coef", "rank", "error_rank", "beta_base", "ig_hyper") if k in m}
        for key in ("beta_base", "ig_hyper"):
            if key in keep:
                keep[key] = tuple(keep[key])
        return ModelConfig(**keep)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid model settings: {exc}") from None


def _chain_from(args, cfg):
    c = _merge(cfg.get("chain"), {"iterations": args.iterations, "burn_in": args.burn_in, "thin": args.thin})
    c["seed"] = args.seed
    try:
        return ChainConfig(**c)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid chain settings: {exc}") from None


def _read_data(args) -> Dataset:
    for p in (args.outcomes, args.covariates):
        if p is None or not Path(p).exists():
            raise InputError(f"input file {p} does not exist")
    return Dataset.from_csv(args.outcomes, args.covariates)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# summaries


def _interval(a, axis=0):
    return (a.mean(axis=axis), np.quantile(a, 0.025, axis=axis), np.quantile(a, 0.975, axis=axis))


def _block(a, names=None):
    mean, lo, hi = _interval(a)
    out = {"mean": mean.tolist(), "lower": lo.tolist(), "upper": hi.tolist()}
    if names is not None:
        out["names"] = list(names)
    return out


def aligned_loadings(store: DrawStore):
    """Covariate and type loadings with each rank-r pair flipped so the type
    loadings sum to a nonnegative value (the product with B3 is unchanged)."""
    B1, B2 = store["B1"].copy(), store["B2"].copy()
    sign = np.where(B2.sum(axis=1) < 0, -1.0, 1.0)  # T x R
    return B1 * sign[:, None, :], B2 * sign[:, None, :]


def posterior_summary(store: DrawStore) -> dict:
    meta = store.meta
    out = {
        "family": meta["family"],
        "seed": meta["seed"],
        "config_hash": meta["config_hash"],
        "data_hash": meta["data_hash"],
        "n_draws": len(store),
    }
    if len(store) == 0:
        return out
    if meta["family"] == "psb":
        out["alpha"] = _block(store["alpha"])
        out["theta"] = _block(np.sort(store["theta"], axis=1)[:, ::-1])
        out["loglik"] = _block(store["loglik"])
        if "sigma2" in store:
            out["sigma2"] = _block(store["sigma2"])
        if "B1" in store:
            B1, B2 = aligned_loadings(store)
            out["B1"] = _block(B1, meta["covariate_names"])
            out["B2"] = _block(B2, meta["type_names"])
    else:
        names = (["(intercept)"] if store.meta["model"].get("intercept", True) else []) + meta["covariate_names"]
        out["beta"] = _block(store["beta"])
        out["beta"]["names"] = names
        if "sigma2" in store:
            out["sigma2"] = _block(store["sigma2"])
    return out


# --------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    data = _read_data(args)
    model = _model_from(args, cfg)
    chain = _chain_from(args, cfg)
    out = _out_dir(args)
    store = fit_model(model, chain, data)
    store.save(out / "draws")
    summary = posterior_summary(store)
    dump_json(summary, out / "summary.json")
    if "B1" in summary:
        plotting.loadings_figure(summary, out / "loadings.png")
    log.info("fit: %d draws written to %s", len(store), out)
    return 0


def _read_profiles(path, names):
    if path is None or not Path(path).exists():
        raise InputError(f"profile file {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        ids_col = header[0] in ("profile", "subject", "id") if header else False
        cov = header[1:] if ids_col else header
        if len(cov) != len(names):
            raise InputError(f"{path}: line 1: profile has {len(cov)} covariates, the fit used {len(names)}")
        if cov != list(names):
            raise InputError(f"{path}: line 1: covariate columns {cov} do not match {list(names)}")
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in (row[1:] if ids_col else row)]
            except ValueError as exc:
                raise InputError(f"{path}: line {lineno}: {exc}") from None
            ids.append(row[0].strip() if ids_col else str(len(ids) + 1))
            rows.append(vals)
    return ids, np.array(rows, dtype=float).reshape(len(rows), len(names))


def cmd_predict(args) -> int:
    if args.draws is None or not (Path(args.draws) / "meta.json").exists():
        raise InputError(f"draw store {args.draws} not found")
    store = DrawStore.load(args.draws)
    if len(store) == 0:
        raise InputError(f"draw store {args.draws} holds no retained draws")
    meta = store.meta
    ids, raw = _read_profiles(args.profiles, meta["covariate_names"])
    try:
        trials = [int(t) for t in args.trials.split(",")]
    except (AttributeError, ValueError):
        raise InputError("--trials must be a comma-separated list of integers") from None
    if len(trials) != meta["J"] or min(trials) < 0:
        raise InputError(f"--trials needs {meta['J']} nonnegative counts")
    if len(store) == 0:
        raise InputError("the draw store holds no retained draws")
    X = (raw - np.asarray(meta["x_center"])) / np.asarray(meta["x_scale"])
    out = _out_dir(args)
    profiles = []
    for k, (pid, x) in enumerate(zip(ids, X)):
        rng = sampling.substream(args.seed, 3, k)
        types = predictive_summary(rng, store, x, trials)
        profiles.append({"profile": pid, "covariates": raw[k].tolist(), "types": types})
        plotting.predictive_histograms_figure(profiles[-1], meta["type_names"], out / f"predictive_{k + 1}.png")
    dump_json({
        "seed": args.seed,
        "draws_config_hash": meta["config_hash"],
        "type_names": meta["type_names"],
        "trials": trials,
        "profiles": profiles,
    }, out / "predictive.json")
    return 0


def cmd_cv(args) -> int:
    cfg = _load_config(args.config)
    data = _read_data(args)
    model = _model_from(args, cfg)
    chain = _chain_from(args, cfg)
    cvcfg = _merge(cfg.get("cv"), {"K": args.folds})
    K = int(cvcfg.get("K", 10))
    if not 2 <= K <= data.I:
        raise InputError(f"number of folds must be between 2 and {data.I}")
    out = _out_dir(args)
    report = cross_validate(model, chain, data, K, keep_draws=True, jobs=args.jobs)
    report.write(out / "cv_report.json", out / "cv_quantiles.csv")
    plotting.quantile_ecdf_figure(report.phi_randomized, out / "quantile_ecdf.png")
    plotting.proportion_histogram_figure(report.y_draws_pooled, data.Y, data.n, out / "predictive_vs_observed.png")
    log.info("cv: LPPL %.2f", report.lppl)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    sim = _merge(cfg.get("simulate"), {"kind": args.kind, "I": args.subjects, "H": args.H})
    out = _out_dir(args)
    try:
        if args.grid:
            design = desk_design(args.grid, seed=args.seed, I=sim.get("I"))
        else:
            keep = {k: sim[k] for k in ("kind", "I", "J", "D", "H", "trials") if k in sim}
            if "trials" in keep:
                keep["trials"] = tuple(keep["trials"])
            design = SimDesign(seed=args.seed, **keep)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid simulation settings: {exc}") from None
    data, truth = generate(design)
    data.to_csv(out / "outcomes.csv", out / "covariates.csv")
    dump_json({"design": asdict(design), "p": truth.p,
               **{k: v for k, v in truth.params.items() if v is not None}}, out / "truth.json")
    if args.grid:
        chain = _chain_from(args, {"chain": {"iterations": 1500, "burn_in": 750, **(cfg.get("chain") or {})}})
        K = int(_merge(cfg.get("cv"), {"K": args.folds}).get("K", 5))
        reps = int(sim.get("replicates", args.replicates or 1))
        result = run_grid(design, chain=chain, K=K, replicates=reps, jobs=args.jobs)
        result.write_csv(out / "lppl_table.csv")
        (out / "lppl_table.txt").write_text(result.render())
        dump_json(result.to_dict(), out / "grid.json")
        plotting.lppl_grid_figure(result, out / "lppl_grid.png")
        print(result.render(), end="")
    return 0


# --------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for folds / grid cells")
    p.add_argument("--out", default="tensorstick-out", help="output directory")
    p.add_argument("--config", default=None, help="YAML settings file; flags override it")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p):
    p.add_argument("--outcomes", help="long-format CSV: subject,type,y,n")
    p.add_argument("--covariates", help="CSV: subject,<covariate columns>")
    p.add_argument("--family", choices=("psb", "logistic"))
    p.add_argument("--H", type=int, help="truncation level")
    p.add_argument("--coef", choices=COEF_STRUCTURES)
    p.add_argument("--rank", type=int, help="CP rank of the coefficient array")
    p.add_argument("--error-rank", type=int, dest="error_rank", help="CP rank of subject effects (0: none)")
    p.add_argument("--variant", choices=VARIANTS, help="logistic comparator variant")
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--thin", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensorstick", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the sampler and write draws plus a posterior summary")
    _common(p)
    _model_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="posterior predictive distributions for covariate profiles")
    _common(p)
    p.add_argument("--draws", help="draw store directory written by fit")
    p.add_argument("--profiles", help="CSV of raw covariate profiles (optional leading 'profile' column)")
    p.add_argument("--trials", help="comma-separated trial counts per type")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="K-fold cross-validated LPPL and calibration")
    _common(p)
    _model_flags(p)
    p.add_argument("--folds", type=int, help="number of folds (default 10)")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="generate simulated data, optionally run a comparison grid")
    _common(p)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--subjects", type=int, help="number of subjects")
    p.add_argument("--H", type=int, help="generator truncation level")
    p.add_argument("--grid", choices=sorted(PRESETS), help="run the model grid preset on the generated data")
    p.add_argument("--folds", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--thin", type=int)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"tensorstick: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"tensorstick: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AssertionError as exc:
        print(f"tensorstick: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
