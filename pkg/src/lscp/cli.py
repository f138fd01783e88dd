"""Command line interface: ``lscp <subcommand>``.

Subcommands cover every pipeline stage: ``eval`` (one coverage value),
``grid`` (contour-plot data), ``min`` (minimum coverage), ``fit``
(model fit and intervals from a CSV), ``simulate`` (finite- vs
large-sample comparison), ``bootstrap`` (uncertainty of the minimum)
and ``oracle-check`` (formula vs Monte Carlo on a point list).

Options may come from flags or from a JSON config file via ``--config``;
flags win on conflict.  Stochastic commands take ``--seed``; when it is
omitted a fresh seed is drawn and recorded in the output metadata so
every run remains reproducible.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical/convergence error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .analysis import (
    MinSearchConfig,
    bootstrap_min,
    coverage_grid,
    minimize_coverage,
    simulate_finite_sample,
)
from .coverage import LscpInputs, lscp
from .logistic import (
    ConvergenceError,
    DataError,
    confidence_intervals,
    fit_model,
    load_model_data,
)
from .oracle import OracleConfig, oracle_lscp
from .quadrature import QuadratureError, QuadratureSpec

__all__ = ["main", "build_parser"]


def _parse_grid(text: str) -> np.ndarray:
    """Grid syntax: ``lo:hi:count`` or a comma-separated value list."""
    try:
        if ":" in text:
            lo, hi, count = text.split(":")
            return np.linspace(float(lo), float(hi), int(count))
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ValueError(f"cannot parse grid spec {text!r} (use lo:hi:count or v1,v2,...)") from None


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ValueError(f"cannot parse vector {text!r} (use comma-separated numbers)") from None


def _add_scalar_inputs(p: argparse.ArgumentParser, with_lambda_psi: bool = True) -> None:
    p.add_argument("--q", type=int, default=None, help="dimension of the tested parameter block (>= 2)")
    p.add_argument("--alpha", type=float, default=None, help="1 - nominal coverage (default 0.05)")
    p.add_argument("--alpha-tilde", type=float, default=None, help="pretest size (default 0.05)")
    p.add_argument("--norm-b", type=float, default=None, help="coupling norm in [0, 1)")
    if with_lambda_psi:
        p.add_argument("--norm-lambda", type=float, default=None, help="violation norm >= 0")
        p.add_argument("--psi", type=float, default=None, help="cosine between coupling and violation, in [-1, 1]")


def _add_data_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=None, help="grouped binomial CSV with a header row")
    p.add_argument("--theta-cols", default=None, help="comma-separated retained-design columns")
    p.add_argument("--gamma-cols", default=None, help="comma-separated tested-design columns")
    p.add_argument("--successes-col", default=None, help="successes column name")
    p.add_argument("--trials-col", default=None, help="trials column name (omit for Bernoulli rows)")
    p.add_argument("--a-vector", default=None, help="interest contrast over the theta columns, e.g. 0,1,0")
    p.add_argument("--gamma-tilde", default=None, help="restriction value, e.g. 0,0")
    p.add_argument("--intercept", action="store_true", default=None, help="prepend a column of ones to the theta design")
    p.add_argument("--alpha", type=float, default=None, help="1 - nominal coverage (default 0.05)")
    p.add_argument("--alpha-tilde", type=float, default=None, help="pretest size (default 0.05)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON file supplying defaults for any flag")
    p.add_argument("--output", default=None, help="output path (stdout when omitted)")
    p.add_argument("--format", choices=["json", "csv"], default=None, help="output format (default json)")
    p.add_argument("--seed", type=int, default=None, help="RNG seed; generated and recorded when omitted")
    p.add_argument("--workers", type=int, default=None, help="parallelism cap (recorded; results never depend on it)")
    p.add_argument("--quad-nodes", type=int, default=None, help="quadrature nodes per axis (default 64)")
    p.add_argument("--quad-tol", type=float, default=None, help="quadrature refinement tolerance (default 1e-7)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lscp",
        description="Coverage probability of confidence intervals reported after a Wald pretest.",
    )
    parser.add_argument("--version", action="version", version=f"lscp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate the large-sample coverage probability at one point")
    _add_scalar_inputs(p)
    _add_common(p)

    p = sub.add_parser("grid", help="coverage probability over a (norm_lambda, psi) grid")
    _add_scalar_inputs(p, with_lambda_psi=False)
    p.add_argument("--lambda-grid", default=None, help="grid spec lo:hi:count or comma list (default 0:8:41)")
    p.add_argument("--psi-grid", default=None, help="grid spec for psi (default 0:1:21); use --psi-grid=-1:1:21 for negative bounds")
    _add_common(p)

    p = sub.add_parser("min", help="minimum coverage probability over (norm_lambda, psi)")
    _add_scalar_inputs(p, with_lambda_psi=False)
    p.add_argument("--lambda-max", type=float, default=None, help="search bound (default: auto, adaptively extended)")
    p.add_argument("--coarse", type=int, default=None, help="coarse grid resolution per axis (default 41)")
    _add_common(p)

    p = sub.add_parser("fit", help="fit full/restricted models and report the pretest intervals")
    _add_data_inputs(p)
    _add_common(p)

    p = sub.add_parser("simulate", help="finite-sample vs large-sample coverage along a gamma path")
    _add_data_inputs(p)
    p.add_argument("--gamma-path", default=None, help="path spec lo:hi:count (default -1:1:11); use --gamma-path=-1:1:11 for negative bounds")
    p.add_argument("--n-sims", type=int, default=None, help="simulations per path point (default 40000)")
    p.add_argument("--replication-factor", type=int, default=None, help="stack the design this many times (default 1)")
    _add_common(p)

    p = sub.add_parser("bootstrap", help="parametric bootstrap of the minimum coverage probability")
    _add_data_inputs(p)
    p.add_argument("--n-boot", type=int, default=None, help="number of bootstrap resamples (default 1000)")
    p.add_argument("--coarse", type=int, default=None, help="coarse grid resolution of each inner search (default 21)")
    _add_common(p)

    p = sub.add_parser("oracle-check", help="compare the formula against Monte Carlo on a point list")
    p.add_argument("--points", default=None, help="JSON file: list of {q, alpha, alpha_tilde, norm_b, norm_lambda, psi}")
    p.add_argument("--n-draws", type=int, default=None, help="Monte Carlo draws per point (default 1e7)")
    _add_common(p)

    return parser


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the --config JSON file (flags win)."""
    if getattr(args, "config", None) is None:
        return args
    try:
        with open(args.config) as fh:
            values = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"config file {args.config} is not valid JSON: {exc}") from None
    if not isinstance(values, dict):
        raise ValueError(f"config file {args.config} must hold a JSON object")
    for key, value in values.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValueError(f"config key {key!r} is not a recognized option for this command")
        if getattr(args, attr) is None:
            setattr(args, attr, value)
    return args


def _require(args: argparse.Namespace, names: list[str]) -> None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ValueError(f"missing required option(s): {flags}")


def _quad_spec(args: argparse.Namespace) -> QuadratureSpec:
    return QuadratureSpec(
        nodes_per_axis=args.quad_nodes if args.quad_nodes is not None else 64,
        abs_tol=args.quad_tol if args.quad_tol is not None else 1e-7,
    )


def _seed(args: argparse.Namespace) -> tuple[int, bool]:
    if args.seed is not None:
        return args.seed, False
    return int(np.random.SeedSequence().entropy % (2**63)), True


def _run_meta(args: argparse.Namespace, seed=None, seed_generated=False) -> dict:
    meta = {"version": __version__, "command": args.command}
    if args.workers is not None:
        meta["workers"] = args.workers
    if seed is not None:
        meta["seed"] = seed
        meta["seed_generated"] = seed_generated
    return meta


def _emit(args: argparse.Namespace, payload: dict, csv_writer=None) -> None:
    fmt = args.format or "json"
    if fmt == "csv":
        if csv_writer is None:
            raise ValueError(f"command {args.command!r} has no CSV representation; use --format json")
        if args.output is None:
            raise ValueError("--format csv requires --output")
        csv_writer(args.output)
        return
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load_data(args: argparse.Namespace):
    _require(args, ["data", "theta_cols", "gamma_cols", "successes_col", "a_vector", "gamma_tilde"])
    try:
        open(args.data).close()
    except FileNotFoundError:
        raise DataError(f"data file not found: {args.data}") from None
    return load_model_data(
        args.data,
        theta_cols=[c.strip() for c in args.theta_cols.split(",")],
        gamma_cols=[c.strip() for c in args.gamma_cols.split(",")],
        successes_col=args.successes_col,
        trials_col=args.trials_col,
        a_vector=_parse_vector(args.a_vector),
        gamma_tilde=_parse_vector(args.gamma_tilde),
        intercept=bool(args.intercept),
    )


def _alphas(args: argparse.Namespace) -> tuple[float, float]:
    alpha = args.alpha if args.alpha is not None else 0.05
    alpha_tilde = args.alpha_tilde if args.alpha_tilde is not None else 0.05
    return alpha, alpha_tilde


def _cmd_eval(args) -> int:
    _require(args, ["q", "norm_b", "norm_lambda"])
    alpha, alpha_tilde = _alphas(args)
    inputs = LscpInputs(
        q=args.q,
        alpha=alpha,
        alpha_tilde=alpha_tilde,
        norm_b=args.norm_b,
        norm_lambda=args.norm_lambda,
        psi=args.psi if args.psi is not None else 1.0,
    )
    breakdown = lscp(inputs, _quad_spec(args))
    payload = {"inputs": vars(inputs).copy(), **breakdown.to_dict(), "meta": _run_meta(args)}
    payload["inputs"] = {k: payload["inputs"][k] for k in ("q", "alpha", "alpha_tilde", "norm_b", "norm_lambda", "psi")}
    _emit(args, payload)
    return 0


def _cmd_grid(args) -> int:
    _require(args, ["q", "norm_b"])
    alpha, alpha_tilde = _alphas(args)
    template = LscpInputs(q=args.q, alpha=alpha, alpha_tilde=alpha_tilde, norm_b=args.norm_b, norm_lambda=0.0)
    grid = coverage_grid(
        template,
        _parse_grid(args.lambda_grid or "0:8:41"),
        _parse_grid(args.psi_grid or "0:1:21"),
        _quad_spec(args),
    )
    grid.meta.update(_run_meta(args))
    _emit(args, grid.to_dict(), csv_writer=grid.write_csv)
    return 0


def _cmd_min(args) -> int:
    _require(args, ["q", "norm_b"])
    alpha, alpha_tilde = _alphas(args)
    search = MinSearchConfig(
        lambda_max=args.lambda_max,
        coarse_lambda=args.coarse if args.coarse is not None else 41,
        coarse_psi=args.coarse if args.coarse is not None else 41,
    )
    result = minimize_coverage(args.norm_b, args.q, alpha, alpha_tilde, search, _quad_spec(args))
    result.meta.update(_run_meta(args))
    _emit(args, result.to_dict())
    return 0


def _cmd_fit(args) -> int:
    data = _load_data(args)
    alpha, alpha_tilde = _alphas(args)
    fit = fit_model(data)
    full, restricted, chosen, selected = confidence_intervals(data, fit, alpha, alpha_tilde)
    payload = {
        **fit.to_dict(),
        "intervals": {
            "full": list(full),
            "restricted": list(restricted),
            "selected": list(chosen),
            "selected_model": selected,
            "full_or_scale": [float(np.exp(v)) for v in full],
            "restricted_or_scale": [float(np.exp(v)) for v in restricted],
            "selected_or_scale": [float(np.exp(v)) for v in chosen],
        },
        "alpha": alpha,
        "alpha_tilde": alpha_tilde,
        "meta": _run_meta(args),
    }
    _emit(args, payload)
    return 0


def _cmd_simulate(args) -> int:
    data = _load_data(args)
    alpha, alpha_tilde = _alphas(args)
    seed, generated = _seed(args)
    report = simulate_finite_sample(
        data,
        gamma_path=_parse_grid(args.gamma_path or "-1:1:11"),
        n_sims=args.n_sims if args.n_sims is not None else 40_000,
        alpha=alpha,
        alpha_tilde=alpha_tilde,
        replication_factor=args.replication_factor if args.replication_factor is not None else 1,
        seed=seed,
        spec=_quad_spec(args),
    )
    report.meta.update(_run_meta(args, seed, generated))
    _emit(args, report.to_dict(), csv_writer=report.write_csv)
    return 0


def _cmd_bootstrap(args) -> int:
    data = _load_data(args)
    alpha, alpha_tilde = _alphas(args)
    seed, generated = _seed(args)
    search = None
    if args.coarse is not None:
        search = MinSearchConfig(coarse_lambda=args.coarse, coarse_psi=args.coarse, n_starts=1, nm_fatol=1e-4, nm_maxiter=80)
    report = bootstrap_min(
        data,
        fit_model(data),
        B=args.n_boot if args.n_boot is not None else 1000,
        alpha=alpha,
        alpha_tilde=alpha_tilde,
        seed=seed,
        search=search,
        spec=_quad_spec(args),
    )
    report.meta.update(_run_meta(args, seed, generated))
    _emit(args, report.to_dict())
    return 0


def _cmd_oracle_check(args) -> int:
    _require(args, ["points"])
    try:
        with open(args.points) as fh:
            points = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"points file not found: {args.points}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"points file {args.points} is not valid JSON: {exc}") from None
    if not isinstance(points, list) or not points:
        raise ValueError("points file must hold a non-empty JSON list")
    seed, generated = _seed(args)
    n_draws = args.n_draws if args.n_draws is not None else 10_000_000
    spec = _quad_spec(args)
    rows = []
    for index, point in enumerate(points):
        inputs = LscpInputs(**point)
        formula = lscp(inputs, spec).total
        estimate, se = oracle_lscp(inputs, OracleConfig(n_draws=n_draws, seed=seed + index))
        rows.append(
            {
                "inputs": point,
                "formula": formula,
                "oracle": estimate,
                "oracle_se": se,
                "standardized_discrepancy": (formula - estimate) / se if se > 0 else 0.0,
            }
        )
    payload = {
        "points": rows,
        "max_abs_standardized_discrepancy": max(abs(r["standardized_discrepancy"]) for r in rows),
        "n_draws": n_draws,
        "meta": _run_meta(args, seed, generated),
    }
    _emit(args, payload)
    return 0


_COMMANDS = {
    "eval": _cmd_eval,
    "grid": _cmd_grid,
    "min": _cmd_min,
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "bootstrap": _cmd_bootstrap,
    "oracle-check": _cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args)
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"lscp: data error: {exc}", file=sys.stderr)
        return 3
    except (ConvergenceError, QuadratureError, np.linalg.LinAlgError) as exc:
        print(f"lscp: numerical error: {exc}", file=sys.stderr)
        return 4
    except (ValueError, TypeError) as exc:
        print(f"lscp: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
