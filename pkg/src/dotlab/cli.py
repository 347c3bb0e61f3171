"""``dotlab`` command line: solve, rate, clt and check."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import checks, stats
from .config import RunConfig, load_cost, load_population, parse_config
from .divergence import divergence_from_name
from .errors import (
    DotlabError,
    ExperimentAborted,
    NotConverged,
    ParseError,
    ValidationError,
    ZeroVariance,
)
from .solver import SolveConfig, recover_plan_scaled, solve_scaled

logger = logging.getLogger("dotlab")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_ABORTED = 0, 1, 2, 3, 4


def fmt(x) -> str:
    """Round-trip decimal text for a number."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_metadata(path: Path, cfg: RunConfig, started: float, error=None, extra=None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "seed": cfg.seed,
        "config": cfg.echo(),
        "wall_time_s": time.time() - started,
        "error": error,
    }
    if extra:
        meta.update(extra)
    path.write_text(json.dumps(meta, indent=2, default=str) + "\n")


# -- report writers -----------------------------------------------------------------

def write_potentials(path: Path, sol) -> None:
    rows = [("mu", i, v) for i, v in enumerate(sol.f)] + [("nu", j, v) for j, v in enumerate(sol.g)]
    write_csv(path, ["side", "index", "value"], rows)


def write_plan(path: Path, plan) -> None:
    n, m = plan.pi.shape
    rows = ((i, j, plan.pi[i, j], plan.density[i, j]) for i in range(n) for j in range(m))
    write_csv(path, ["i", "j", "mass", "density"], rows)


def write_rate_report(path: Path, rep: stats.RateReport) -> None:
    header = ["n_grid", "mean_abs_error", "bias", "variance", "fitted_slope", "slope_stderr", "seeds"]
    rows = [
        (n, e, b, v, rep.fitted_slope, rep.slope_stderr, rep.seeds)
        for n, e, b, v in zip(rep.n_grid, rep.mean_abs_error, rep.bias, rep.variance)
    ]
    write_csv(path, header, rows)


def write_bias_variance(path: Path, table) -> None:
    header = ["n", "bias", "variance", "bias_sq_plus_variance", "mse"]
    write_csv(path, header, ([row[k] for k in header] for row in table))


def write_clt_report(path: Path, rep: stats.CltReport) -> None:
    header = ["mode", "n", "m", "lambda", "replicate", "standardized",
              "sigma_sq_exact", "sigma_sq_plugin", "ks_distance", "centering"]
    rows = (
        (rep.mode, rep.n, rep.m, rep.lam, r, z, rep.sigma_sq_exact, rep.sigma_sq_plugin,
         rep.ks_distance, rep.centering)
        for r, z in enumerate(rep.standardized)
    )
    write_csv(path, header, rows)


# -- commands ----------------------------------------------------------------------------

def _base(cfg: RunConfig) -> Path:
    return Path(cfg.source).parent if cfg.source else Path(".")


def _problem(cfg: RunConfig):
    base = _base(cfg)
    mu = load_population(cfg.mu, "mu", base)
    nu = load_population(cfg.nu, "nu", base)
    return mu, nu, load_cost(cfg.cost, mu, nu, base), divergence_from_name(cfg.divergence)


def _out(cfg: RunConfig, name: str) -> Path:
    p = Path(cfg.output)
    if not p.is_absolute():
        p = _base(cfg) / p
    return p / name


def _resolve(cfg: RunConfig, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else _base(cfg) / p


def _run_solve(cfg: RunConfig) -> dict:
    mu, nu, cost, div = _problem(cfg)
    sol = solve_scaled(mu, nu, cost, div, cfg.solver)
    pot = _resolve(cfg, cfg.potentials) if cfg.potentials else _out(cfg, "potentials.csv")
    write_potentials(pot, sol)
    if cfg.plan:
        write_plan(_resolve(cfg, cfg.plan), recover_plan_scaled(sol, mu, nu, cost, div, cfg.epsilon))
    print(f"S = {sol.dual_value!r}  sweeps = {sol.iterations}  max residual = {sol.max_residual:.3g}")
    return {"dual_value": sol.dual_value, "iterations": sol.iterations}


def _run_rate(cfg: RunConfig) -> dict:
    mu, nu, cost, div = _problem(cfg)
    rep = stats.rate_experiment(mu, nu, cost, div, cfg.n_grid, cfg.replicates, cfg.seed, cfg.solver)
    write_rate_report(_out(cfg, "rate_report.csv"), rep)
    write_bias_variance(_out(cfg, "bias_variance.csv"), stats.bias_variance_table(rep))
    print(f"fitted slope {rep.fitted_slope:.4f} +/- {rep.slope_stderr:.4f}")
    return {"fitted_slope": rep.fitted_slope, "failures": rep.failures,
            "degenerate_zero_error": rep.degenerate_zero_error}


def _run_clt(cfg: RunConfig) -> dict:
    mu, nu, cost, div = _problem(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = stats.clt_experiment(
            mu, nu, cost, div, cfg.mode, n=cfg.n, m=cfg.m, replicates=cfg.replicates,
            centering=cfg.centering, seed=cfg.seed, cfg=cfg.solver,
        )
    for w in caught:
        logger.warning("%s", w.message)
    write_clt_report(_out(cfg, "clt_report.csv"), rep)
    print(f"KS distance {rep.ks_distance:.4f}  sigma^2 exact {rep.sigma_sq_exact:.6g}  plug-in {rep.sigma_sq_plugin:.6g}")
    return {"ks_distance": rep.ks_distance, "failures": rep.failures,
            "warnings": [str(w.message) for w in caught]}


def _run_check(cfg: RunConfig) -> tuple:
    results = checks.run_check_suite(cfg.seed, cfg.instances)
    rows = [(r.name, "pass" if r.passed else "FAIL", r.worst) for r in results]
    write_csv(_out(cfg, "check_report.csv"), ["check", "status", "worst"], rows)
    for name, status, worst in rows:
        print(f"{status:4s}  {name:28s} worst={worst:.3g}")
    ok = all(r.passed for r in results)
    return (EXIT_OK if ok else EXIT_CHECK_FAILED), {"passed": ok}


def run(cfg: RunConfig) -> int:
    """Execute a validated configuration and return the process exit code."""
    started = time.time()
    meta_path = _out(cfg, "run_metadata.json")
    code, extra, error = EXIT_OK, {}, None
    try:
        if cfg.command == "solve":
            extra = _run_solve(cfg)
        elif cfg.command == "rate":
            extra = _run_rate(cfg)
        elif cfg.command == "clt":
            extra = _run_clt(cfg)
        else:
            code, extra = _run_check(cfg)
    except NotConverged as exc:
        code, error = EXIT_NOT_CONVERGED, {"type": "NotConverged", "message": str(exc)}
    except ExperimentAborted as exc:
        code = EXIT_ABORTED
        error = {"type": "ExperimentAborted", "message": str(exc),
                 "failures": exc.failures, "total": exc.total}
    except (ZeroVariance, DotlabError, ValueError) as exc:
        code, error = EXIT_INVALID, {"type": type(exc).__name__, "message": str(exc)}
    if error:
        print(f"error: {error['message']}", file=sys.stderr)
    write_metadata(meta_path, cfg, started, error, extra)
    return code


# -- argument parsing ------------------------------------------------------------------------

def _solve_from_flags(args) -> RunConfig:
    spec_mu = {"csv": args.mu} if args.mu.endswith(".csv") else {"instance": args.mu}
    spec_nu = {"csv": args.nu} if args.nu.endswith(".csv") else {"instance": args.nu}
    errors = []
    if not args.epsilon > 0:
        errors.append("epsilon must be positive")
    try:
        divergence_from_name(args.div)
    except ValueError as exc:
        errors.append(str(exc))
    for spec in (spec_mu, spec_nu):
        if "csv" in spec and not Path(spec["csv"]).exists():
            errors.append(f"measure file {spec['csv']!r} does not exist")
    if args.cost.endswith(".csv") and not Path(args.cost).exists():
        errors.append(f"cost file {args.cost!r} does not exist")
    if errors:
        raise ValidationError(errors)
    kwargs = {"max_sweeps": args.max_sweeps} if args.max_sweeps else {}
    return RunConfig(
        command="solve", mu=spec_mu, nu=spec_nu, divergence=args.div,
        epsilon=args.epsilon, cost=args.cost, output=args.output,
        plan=str(Path(args.plan).resolve()) if args.plan else None,
        potentials=str(Path(args.potentials).resolve()) if args.potentials else None,
        solver=SolveConfig(epsilon=args.epsilon, **kwargs),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dotlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one regularized transport problem")
    p.add_argument("--config")
    p.add_argument("--mu", help="measure CSV (x1..xd,weight) or built-in instance name")
    p.add_argument("--nu")
    p.add_argument("--cost", default="euclidean", help="cost CSV, 'euclidean' or 'squared_capped:M'")
    p.add_argument("--div", default="entropic")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--max-sweeps", type=int)
    p.add_argument("--plan")
    p.add_argument("--potentials")
    p.add_argument("--output", default="dotlab_out")

    for name, text in (("rate", "sample-complexity experiment"),
                       ("clt", "central limit theorem experiment")):
        q = sub.add_parser(name, help=text)
        q.add_argument("--config", required=True)

    q = sub.add_parser("check", help="randomized invariant suite")
    q.add_argument("--config")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--instances", type=int, default=20)
    q.add_argument("--output", default="dotlab_out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "config", None):
            cfg = parse_config(args.config)
            if cfg.command != args.command:
                raise ValidationError([f"config is for {cfg.command!r}, not {args.command!r}"])
        elif args.command == "solve":
            if not (args.mu and args.nu):
                raise ValidationError(["solve needs --config or both --mu and --nu"])
            cfg = _solve_from_flags(args)
        else:
            cfg = RunConfig(command="check", mu={}, nu={}, seed=args.seed,
                            instances=args.instances, output=args.output)
    except (ParseError, ValidationError) as exc:
        violations = getattr(exc, "violations", [str(exc)])
        for v in violations:
            print(f"invalid config: {v}", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
