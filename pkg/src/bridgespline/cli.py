"""Command-line surface: simulate, fit, predict, compare, bench.

Configuration is a JSON tree merged in increasing precedence from a named
preset, an optional --config file and individual flags.  Every command is
reproducible byte-for-byte given (config, seed), except for wall-clock fields
in summaries.  Exit status is 0 iff all outputs were written and no numerical
failure occurred.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path

import numpy as np

from . import advi as advi_mod
from . import mcmc as mcmc_mod
from .advi import FitConfig, PosteriorSamples
from .basis import BasisSpec, bspline_spec_from_grid, build_design
from .diagnostics import compare_posteriors, credible_band, curve_mae, timing_report
from .model import ModelSpec
from .simulate import (
    Scenario1Spec,
    simulate_scaled,
    simulate_scenario1,
    simulate_scenario3,
)

# batch size and total iteration count of the variational run per sample size
TABLE1_BATCH = {1000: 1000, 10000: 1000, 50000: 1000,
                100000: 10000, 500000: 10000, 1000000: 10000}
TABLE1_ITERS = {1000: 2000, 10000: 2000, 50000: 5000,
                100000: 1000, 500000: 5000, 1000000: 10000}
BENCH_MCMC_ITERS = 5000

VAGUE_PRIORS = {"a_phi": 1.0, "b_phi": 1.0, "a_lambda": 1.0, "b_lambda": 1.0,
                "a_eta": 1.0, "b_eta": 1.0, "alpha_max": 2.5}


class CliError(RuntimeError):
    pass


def preset_config(name: str) -> dict:
    """Named defaults for the scenarios and the hourly-series layout."""
    if name == "scenario1":
        return {
            "simulate": {"scenario": "scenario1", "n": 100, "replicas": 100},
            "priors": dict(VAGUE_PRIORS),
            "basis": [{"type": "bspline", "penalized": True,
                       "grid": {"lo": -0.066, "hi": 1.066, "spacing": 0.033},
                       "degree": 3, "target_k": 34}],
            "intercept": False,
            "advi": {"learning_rate": 0.01, "mc_samples": 100,
                     "iterations": 5000, "batch_size": None},
            "mcmc": {"n_iter": 6000, "burn_in": 1000, "thin": 1},
            "posterior_draws": 5000,
        }
    if name.startswith("scenario2-"):
        n = int(name.split("-", 1)[1])
        if n not in TABLE1_BATCH:
            raise CliError(
                f"no batch settings for n={n}; known sizes: {sorted(TABLE1_BATCH)}"
            )
        cfg = preset_config("scenario1")
        cfg["simulate"] = {"scenario": "scenario2", "n": n, "replicas": 1}
        cfg["advi"].update(batch_size=TABLE1_BATCH[n], iterations=TABLE1_ITERS[n])
        cfg["mcmc"] = {"n_iter": BENCH_MCMC_ITERS, "burn_in": 0, "thin": 1}
        return cfg
    if name == "scenario3":
        return {
            "simulate": {"scenario": "scenario3", "n": 1000,
                         "tau1": 1.0, "tau2": 2.0, "sigma2": 1.0},
            "priors": dict(VAGUE_PRIORS),
            "basis": [
                {"type": "bspline", "penalized": True, "n_knots": 100, "degree": 3},
                {"type": "bspline", "penalized": True, "n_knots": 100, "degree": 3},
            ],
            "intercept": True,
            "advi": {"learning_rate": 0.01, "mc_samples": 100,
                     "iterations": 5000, "batch_size": None},
            "mcmc": {"n_iter": 6000, "burn_in": 1000, "thin": 1},
            "posterior_draws": 5000,
        }
    if name == "energy-weekly":
        # weekly harmonics on hourly data (period 24*7) stay unpenalized; the
        # long-run level is a penalized cubic spline with a knot every 100 hours
        return {
            "priors": dict(VAGUE_PRIORS),
            "basis": [{"type": "fourier", "penalized": False,
                       "period": 168.0, "n_harmonics": 84},
                      {"type": "bspline", "penalized": True,
                       "knot_spacing": 100.0, "degree": 3,
                       "same_covariate_as": 0}],
            "intercept": False,
            "timestamp_covariates": True,
            "advi": {"learning_rate": 0.01, "mc_samples": 100,
                     "iterations": 2000, "batch_size": 10000},
            "mcmc": {"n_iter": 2000, "burn_in": 500, "thin": 1},
            "posterior_draws": 5000,
        }
    raise CliError(f"unknown preset {name!r}")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(args) -> dict:
    cfg = preset_config(args.preset) if args.preset else {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file {path} does not exist")
        with open(path) as fh:
            cfg = _merge(cfg, json.load(fh))
    if not cfg:
        raise CliError("need --preset and/or --config")
    return cfg


# ---------------------------------------------------------------------------
# dataset and artifact I/O
# ---------------------------------------------------------------------------

def _parse_covariate(values, allow_timestamps: bool):
    try:
        return np.asarray([float(v) for v in values])
    except ValueError:
        if not allow_timestamps:
            raise
    stamps = [datetime.fromisoformat(v) for v in values]
    t0 = stamps[0]
    return np.asarray([(s - t0).total_seconds() / 3600.0 for s in stamps])


def read_dataset(path, allow_timestamps: bool = False):
    """CSV with a header: first column response, remaining columns covariates."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"dataset {path} does not exist")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise CliError(f"dataset {path} needs a header row plus data")
    header, data = rows[0], rows[1:]
    cols = list(zip(*data))
    y = np.asarray([float(v) for v in cols[0]])
    x = np.column_stack(
        [_parse_covariate(c, allow_timestamps) for c in cols[1:]]
    ) if len(cols) > 1 else np.zeros((y.size, 0))
    return y, x, header


def write_csv(path, header, rows, fmt="%.17g"):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt % v for v in row) + "\n")


def write_samples(path, samples: PosteriorSamples):
    write_csv(path, samples.names, samples.draws)


def read_samples(path, source="file") -> PosteriorSamples:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        names = next(reader)
        draws = np.asarray([[float(v) for v in row] for row in reader])
    return PosteriorSamples(draws, names, source)


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------

def basis_spec_from_config(bcfg: dict, xcol: np.ndarray) -> BasisSpec:
    kind = bcfg.get("type", "bspline")
    if kind == "identity":
        return BasisSpec("identity")
    if kind == "fourier":
        return BasisSpec("fourier", period=float(bcfg["period"]),
                         n_harmonics=int(bcfg["n_harmonics"]))
    degree = int(bcfg.get("degree", 3))
    if "knots" in bcfg:
        return BasisSpec("bspline", degree=degree, knots=tuple(bcfg["knots"]))
    if "grid" in bcfg:
        g = bcfg["grid"]
        return bspline_spec_from_grid(g["lo"], g["hi"], g["spacing"], degree=degree,
                                      target_k=bcfg.get("target_k"))
    lo, hi = float(np.min(xcol)), float(np.max(xcol))
    span = hi - lo
    if "knot_spacing" in bcfg:
        spacing = float(bcfg["knot_spacing"])
    else:
        n_knots = int(bcfg.get("n_knots", 20))
        spacing = span / max(n_knots - 1, 1)
    pad = max(spacing * 0.05, 1e-9)
    return bspline_spec_from_grid(lo - pad, hi + pad, spacing, degree=degree,
                                  target_k=bcfg.get("target_k"))


def build_model(y, x, cfg, basis_specs=None):
    """Assemble the ModelSpec (and the basis specs used) from a config tree."""
    bconfigs = cfg["basis"]
    blocks = []
    specs = []
    if cfg.get("intercept", False):
        blocks.append((np.ones((y.size, 1)), False))
    for i, bcfg in enumerate(bconfigs):
        col = int(bcfg.get("same_covariate_as", bcfg.get("covariate", i)))
        if col >= x.shape[1]:
            raise CliError(
                f"basis entry {i} wants covariate {col} but the dataset has {x.shape[1]}"
            )
        spec = (basis_specs[i] if basis_specs is not None
                else basis_spec_from_config(bcfg, x[:, col]))
        specs.append(spec)
        blocks.append((build_design(x[:, col], spec), bool(bcfg.get("penalized", True))))
    priors = cfg.get("priors", dict(VAGUE_PRIORS))
    model = ModelSpec.from_blocks(blocks, **priors)
    return model, specs


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args)
    sim = cfg.get("simulate", {})
    scenario = sim.get("scenario", "scenario1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))

    if scenario in ("scenario1", "scenario2"):
        if scenario == "scenario1":
            spec = Scenario1Spec(n=int(sim.get("n", 100)),
                                 replicas=int(sim.get("replicas", 100)),
                                 sigma2=float(sim.get("sigma2", 1.0)), seed=seed)
            data = simulate_scenario1(spec)
        else:
            spec = Scenario1Spec(replicas=1, sigma2=float(sim.get("sigma2", 1.0)),
                                 seed=seed)
            data = simulate_scaled(int(sim.get("n", 1000)), spec)
        def _write_one(r):
            write_csv(out / f"replica_{r + 1:03d}.csv", ["y", "x"],
                      np.column_stack([data.y[r], data.x]))
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                list(pool.map(_write_one, range(data.y.shape[0])))
        else:
            for r in range(data.y.shape[0]):
                _write_one(r)
        truth = {
            "scenario": scenario,
            "seed": seed,
            "beta_true": data.beta_true.tolist(),
            "x": data.x.tolist(),
            "curve": data.curve.tolist(),
            "basis": data.basis.to_dict(),
            "sigma2": spec.sigma2,
        }
    elif scenario == "scenario3":
        data = simulate_scenario3(
            n=int(sim.get("n", 1000)), tau1=float(sim.get("tau1", 1.0)),
            tau2=float(sim.get("tau2", 2.0)), sigma2=float(sim.get("sigma2", 1.0)),
            seed=seed,
        )
        write_csv(out / "replica_001.csv", ["y", "x1", "x2"],
                  np.column_stack([data.y, data.x]))
        truth = {
            "scenario": "scenario3",
            "seed": seed,
            "intercept": data.intercept,
            "f1": data.f1.tolist(),
            "f2": data.f2.tolist(),
            "x": data.x.tolist(),
            "curve": (data.intercept + data.f1 + data.f2).tolist(),
        }
    else:
        raise CliError(f"unknown scenario {scenario!r}")

    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
    print(f"wrote {scenario} dataset(s) to {out}")
    return 0


def _fit_advi(y, model, cfg, seed, out):
    settings = dict(cfg.get("advi", {}))
    settings.setdefault("seed", seed)
    fit_cfg = FitConfig(**settings)
    t0 = time.perf_counter()
    state, trace = advi_mod.fit(y, model, fit_cfg)
    seconds = time.perf_counter() - t0
    if trace.shape[0] < fit_cfg.iterations:
        raise CliError(
            f"variational optimization diverged after {trace.shape[0]} iterations"
        )
    rng = np.random.default_rng(seed + 1 if seed is not None else None)
    samples = advi_mod.sample_posterior(state, int(cfg.get("posterior_draws", 5000)),
                                        rng, model)
    write_csv(out / "trace.csv", ["iteration", "elbo", "grad_norm", "seconds"], trace)
    np.savez(out / "variational_state.npz", m=state.m, log_diag=state.log_diag,
             lower=state.lower)
    extra = {"final_elbo": float(trace[-1, 1]), "iterations": int(trace.shape[0])}
    return samples, seconds, extra


def _fit_mcmc(y, model, cfg, seed, out):
    settings = cfg.get("mcmc", {})
    rng = np.random.default_rng(seed)
    chain = mcmc_mod.run_chain(
        y, model,
        n_iter=int(settings.get("n_iter", 6000)),
        burn_in=int(settings.get("burn_in", 1000)),
        thin=int(settings.get("thin", 1)),
        rng=rng,
        marginalized_alpha=bool(settings.get("marginalized_alpha", True)),
    )
    diag = {
        "acceptance_rate": chain.accept_rate.tolist(),
        "rw_variance": chain.rw_var.tolist(),
        "n_iter": chain.n_iter,
        "burn_in": chain.burn_in,
        "thin": chain.thin,
        "seconds": chain.seconds,
    }
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(diag, fh, indent=1, sort_keys=True)
    return chain.samples, chain.seconds, {"acceptance_rate": diag["acceptance_rate"]}


def cmd_fit(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    y, x, _ = read_dataset(args.data,
                           allow_timestamps=cfg.get("timestamp_covariates", False))
    model, specs = build_model(y, x, cfg)
    if args.backend == "advi":
        samples, seconds, extra = _fit_advi(y, model, cfg, seed, out)
    else:
        samples, seconds, extra = _fit_mcmc(y, model, cfg, seed, out)
    write_samples(out / "posterior_samples.csv", samples)
    summary = {
        "backend": args.backend,
        "seed": seed,
        "n_obs": int(y.size),
        "n_parameters": len(samples.names),
        "seconds": seconds,
        "basis": [s.to_dict() for s in specs],
        "intercept": bool(cfg.get("intercept", False)),
        "priors": cfg.get("priors", dict(VAGUE_PRIORS)),
        "dataset": str(args.data),
    }
    summary.update(extra)
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    print(f"{args.backend} fit finished in {seconds:.1f}s; artifacts in {out}")
    return 0


def _rebuild_designs(summary: dict, x: np.ndarray):
    specs = [BasisSpec.from_dict(d) for d in summary["basis"]]
    blocks = []
    if summary.get("intercept", False):
        blocks.append(np.ones((x.shape[0], 1)))
    else:
        blocks.append(np.zeros((x.shape[0], 0)))
    designs = []
    for i, spec in enumerate(specs):
        col = min(i, x.shape[1] - 1)
        designs.append(build_design(x[:, col], spec).values)
    return blocks[0], designs


def cmd_predict(args) -> int:
    fit_dir = Path(args.fit)
    with open(fit_dir / "summary.json") as fh:
        summary = json.load(fh)
    samples = read_samples(fit_dir / "posterior_samples.csv")
    if args.grid:
        with open(args.grid, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        grid = np.asarray([[float(v) for v in r] for r in rows]) \
            if rows else np.zeros((0, 1))
    else:
        _, grid, _ = read_dataset(summary["dataset"],
                                  allow_timestamps=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    band_path = out / "band.csv"
    if grid.shape[0] == 0:
        write_csv(band_path, ["x", "mean", "lower", "upper"], [])
        print(f"wrote empty band to {band_path}")
        return 0
    x0, designs = _rebuild_designs(summary, grid)
    mean, lower, upper = credible_band(samples, x0, designs, level=args.level)
    write_csv(band_path, ["x", "mean", "lower", "upper"],
              np.column_stack([grid[:, 0], mean, lower, upper]))
    print(f"wrote band for {grid.shape[0]} points to {band_path}")
    return 0


def cmd_compare(args) -> int:
    a = read_samples(Path(args.fit_a) / "posterior_samples.csv", source="a")
    b = read_samples(Path(args.fit_b) / "posterior_samples.csv", source="b")
    report = compare_posteriors(a, b)
    payload = report.to_dict()
    if args.truth:
        with open(args.truth) as fh:
            truth = json.load(fh)
        grid = np.asarray(truth["x"], dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        curve = np.asarray(truth["curve"], dtype=float)
        maes = {}
        for label, fit_dir, samples in (("a", args.fit_a, a), ("b", args.fit_b, b)):
            with open(Path(fit_dir) / "summary.json") as fh:
                summary = json.load(fh)
            x0, designs = _rebuild_designs(summary, grid)
            mean, _, _ = credible_band(samples, x0, designs)
            maes[label] = curve_mae(mean, curve)
        payload["mae"] = maes
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    print(f"reject fraction at 5%: {report.reject_fraction:.3f}; "
          f"report in {out / 'comparison.json'}")
    return 0


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    runs = []
    for n in sizes:
        data = simulate_scaled(n, Scenario1Spec(replicas=1, seed=seed))
        y = data.y[0]
        cfg = preset_config(f"scenario2-{n}") if n in TABLE1_BATCH else \
            preset_config("scenario1")
        model, _ = build_model(y, data.x[:, None], cfg,
                               basis_specs=[data.basis])
        batch = cfg["advi"].get("batch_size") or min(n, 1000)
        advi_iters = args.advi_iters or cfg["advi"]["iterations"]
        mcmc_iters = args.mcmc_iters or BENCH_MCMC_ITERS
        fit_cfg = FitConfig(learning_rate=0.01, mc_samples=100, seed=seed,
                            batch_size=min(batch, n), iterations=advi_iters)
        t0 = time.perf_counter()
        advi_mod.fit(y, model, fit_cfg)
        advi_seconds = time.perf_counter() - t0
        chain = mcmc_mod.run_chain(y, model, n_iter=mcmc_iters, burn_in=0, thin=1,
                                   rng=np.random.default_rng(seed))
        runs.append({"n": n, "mcmc_seconds": chain.seconds,
                     "advi_seconds": advi_seconds})
        print(f"n={n}: mcmc {chain.seconds:.1f}s ({mcmc_iters} iters), "
              f"advi {advi_seconds:.1f}s ({advi_iters} iters)")
    with open(out / "timing.csv", "w") as fh:
        fh.write(timing_report(runs))
    print(f"wrote timing table to {out / 'timing.csv'}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridgespline",
        description="Semi-parametric Bayesian bridge regression "
                    "(variational and MCMC backends)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", help="named preset (scenario1, scenario2-<n>, "
                                        "scenario3, energy-weekly)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("simulate", help="generate synthetic datasets")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one backend to a CSV dataset")
    common(p)
    p.add_argument("--data", required=True, help="CSV: response, covariates")
    p.add_argument("--backend", choices=("advi", "mcmc"), required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="credible band on a grid")
    common(p)
    p.add_argument("--fit", required=True, help="directory from a fit command")
    p.add_argument("--grid", help="CSV of grid covariates (header row)")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="KS comparison of two fits")
    common(p)
    p.add_argument("--fit-a", required=True)
    p.add_argument("--fit-b", required=True)
    p.add_argument("--truth", help="truth.json from simulate (adds curve MAE)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="wall-clock comparison across sizes")
    common(p)
    p.add_argument("--sizes", default="10000,50000",
                   help="comma-separated sample sizes")
    p.add_argument("--advi-iters", type=int, default=None)
    p.add_argument("--mcmc-iters", type=int, default=None)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, MemoryError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
