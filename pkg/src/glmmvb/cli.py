"""Batch command line front-end.

Fits a GLMM from a long-format CSV and writes summary/trace/state/diagnostic
files, or generates one of the named synthetic datasets. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical divergence.
"""

import argparse
import csv
import sys

import numpy as np

from . import engine, fileio, model, posterior, recombine, simulate
from .exceptions import (
    ConfigError,
    DataError,
    DivergedError,
    GlmmVbError,
    InvalidVError,
    IrlsDivergedError,
    ModeSearchFailedError,
    NotPositiveDefiniteError,
    OverflowGuardError,
    RankDeficientError,
)

_NUMERIC_ERRORS = (DivergedError, NotPositiveDefiniteError, OverflowGuardError,
                   ModeSearchFailedError, IrlsDivergedError, RankDeficientError)


def build_parser():
    p = argparse.ArgumentParser(prog="glmmvb", description=__doc__)
    p.add_argument("--data", help="input CSV (long format, one row per observation)")
    p.add_argument("--family", choices=["poisson", "binomial", "bernoulli", "gaussian-unit"],
                   help="response family")
    p.add_argument("--enable-test-family", action="store_true",
                   help="allow the internal gaussian-unit test family")
    p.add_argument("--trials-col", default=None, help="binomial trials column")
    p.add_argument("--group-col", default="group", help="subject/group id column")
    p.add_argument("--response-col", default="y", help="response column")
    p.add_argument("--fixed", default="", help="comma-separated fixed-effect columns")
    p.add_argument("--random", default="", help="comma-separated random-effect columns")
    p.add_argument("--intercept", choices=["x", "z", "both", "none"], default="both",
                   help="where to inject an all-ones intercept column")
    p.add_argument("--method", choices=["a1", "a2"], default="a2",
                   help="transform construction: a1 regularized-estimate Taylor, "
                        "a2 conditional-mode Newton")
    p.add_argument("--prior", choices=["default", "normal-omega", "file"], default="default")
    p.add_argument("--prior-file", default=None)
    p.add_argument("--omega-prior-sd", type=float, default=10.0,
                   help="sd of the normal prior on omega (normal-omega mode)")
    p.add_argument("--sigma-beta2", type=float, default=model.DEFAULT_SIGMA_BETA2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shards", type=int, default=1, help="V for divide and recombine")
    p.add_argument("--max-iter", type=int, default=200_000)
    p.add_argument("--estimator", choices=["L1", "L2", "L3"], default="L2")
    p.add_argument("--draws", type=int, default=50_000,
                   help="posterior simulation draws for reporting")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--simulate", default=None, metavar="SCENARIO",
                   choices=sorted(simulate.SCENARIOS),
                   help="write a synthetic dataset instead of fitting")
    p.add_argument("--simulate-n", type=int, default=None)
    return p


def _make_prior(args, data):
    if args.prior == "default":
        return model.default_prior(data, sigma_beta2=args.sigma_beta2)
    if args.prior == "normal-omega":
        return model.normal_omega_prior(data.r, sigma_beta2=args.sigma_beta2,
                                        sd=args.omega_prior_sd)
    if args.prior_file is None:
        raise ConfigError("--prior file requires --prior-file")
    return read_prior_file(args.prior_file, data.r)


def read_prior_file(path, r):
    """Prior specification file: key,value CSV with a type line."""
    rows = {}
    s_rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = [t.strip() for t in line.strip().split(",")]
            if not parts or not parts[0]:
                continue
            if parts[0] == "S":
                s_rows.append([float(v) for v in parts[1:]])
            else:
                rows[parts[0]] = parts[1:]
    kind = rows.get("type", ["wishart"])[0]
    sb2 = float(rows.get("sigma_beta2", [model.DEFAULT_SIGMA_BETA2])[0])
    if kind == "wishart":
        return model.WishartPrior(sb2, float(rows["nu"][0]), np.array(s_rows))
    if kind == "normal-omega":
        mean = np.array([float(v) for v in rows["mean"]])
        sd = np.array([float(v) for v in rows["sd"]])
        return model.NormalOmegaPrior(sb2, mean, sd)
    raise ConfigError(f"unknown prior type {kind!r}")


def _write_sim(args):
    data, truth = simulate.simulate_dataset(args.simulate, args.seed, n=args.simulate_n)
    import os
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "dataset.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        cols = ["group", "y", "x"] + (["m"] if truth["trials"] else [])
        w.writerow(cols)
        for i in range(data.n):
            for j in range(int(data.n_obs[i])):
                row = [i + 1, fileio.SUMMARY_FMT % data.y[i, j],
                       fileio.SUMMARY_FMT % data.X[i, j, 1]]
                if truth["trials"]:
                    row.append(fileio.SUMMARY_FMT % data.trials[i, j])
                w.writerow(row)
    with open(os.path.join(args.out, "truth.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("key,value\n")
        fh.write(f"scenario,{args.simulate}\nseed,{args.seed}\n")
        fh.write(f"beta0,{truth['beta'][0]}\nbeta1,{truth['beta'][1]}\n")
        fh.write(f"sigma,{truth['sigma']}\nfamily,{truth['family']}\n")
    print(f"wrote {path} ({data.total_obs} rows, {data.n} groups)")
    return 0


def _scales_from_factor(factor, data, n_draws, seed):
    """Derived scale summaries from a Gaussian global factor (sharded path)."""
    rng = engine.stream(seed, engine.LANE_SIM, 1)
    L = np.linalg.cholesky(factor.cov)
    draws = factor.mean + rng.standard_normal((n_draws, factor.mean.size)) @ L.T
    omega = draws[:, data.p:]
    names, scales = posterior._scales_from_omega(omega, data.r)
    return names, scales.mean(axis=0), scales.std(axis=0, ddof=1)


def run(args):
    import os
    if args.simulate:
        return _write_sim(args)
    if not args.data or not args.family:
        raise ConfigError("--data and --family are required unless --simulate is given")
    if args.family == "gaussian-unit" and not args.enable_test_family:
        raise ConfigError("gaussian-unit is an internal test family; "
                          "pass --enable-test-family to use it")
    if args.family == "binomial" and not args.trials_col:
        raise ConfigError("binomial fits need --trials-col")
    data = fileio.load_csv(args.data, args.family, args.group_col,
                           fileio._split_cols(args.fixed), fileio._split_cols(args.random),
                           response_col=args.response_col, trials_col=args.trials_col,
                           intercept=args.intercept)
    if not 1 <= args.shards <= data.n:
        raise InvalidVError(f"--shards must be in [1, {data.n}]")
    if args.shards > 1 and args.prior != "normal-omega":
        raise ConfigError("sharded fits require --prior normal-omega")
    prior = _make_prior(args, data)
    config = engine.FitConfig(method=args.method, seed=args.seed,
                              max_iter=args.max_iter, estimator=args.estimator)
    os.makedirs(args.out, exist_ok=True)

    if args.shards == 1:
        result = engine.fit(data, prior, config)
        summary = posterior.simulate_b(data, prior, result.state, args.method,
                                       args.draws, args.seed)
        fileio.write_summary(os.path.join(args.out, "summary.csv"), summary,
                             args.method, result.n_iter, result.wall_time, result.elbo)
        fileio.write_trace(os.path.join(args.out, "trace.csv"),
                           result.window_means, config.window)
        fileio.write_state(os.path.join(args.out, "state.txt"), result.state,
                           args.method, data.family.name, args.seed)
        fileio.write_subject_diagnostics(os.path.join(args.out, "subjects.csv"),
                                         data, summary)
        print(f"converged={result.converged} iterations={result.n_iter} "
              f"elbo={result.elbo:.4f}")
    else:
        sharded = recombine.fit_sharded(data, prior, config, args.shards)
        names, sm, ss = _scales_from_factor(sharded.combined, data,
                                            max(args.draws, 1000), args.seed)
        lines = ["key,value", f"method,{args.method}", f"shards,{args.shards}",
                 "parameter,mean,sd"]
        sds = np.sqrt(np.diag(sharded.combined.cov))
        for nm, mu, sd in zip(sharded.global_names, sharded.combined.mean, sds):
            lines.append(f"{nm},{fileio.SUMMARY_FMT % mu},{fileio.SUMMARY_FMT % sd}")
        for nm, mu, sd in zip(names, sm, ss):
            lines.append(f"{nm},{fileio.SUMMARY_FMT % mu},{fileio.SUMMARY_FMT % sd}")
        with open(os.path.join(args.out, "summary.csv"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        for v, res in enumerate(sharded.shard_results):
            fileio.write_state(os.path.join(args.out, f"state_shard{v}.txt"),
                               res.state, args.method, data.family.name, args.seed)
            fileio.write_trace(os.path.join(args.out, f"trace_shard{v}.csv"),
                               res.window_means, config.window)
        print(f"combined {args.shards} shards; "
              f"per-shard elbo: {[round(r.elbo, 2) for r in sharded.shard_results]}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (ConfigError, InvalidVError, ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3
    except _NUMERIC_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 4
    except GlmmVbError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
