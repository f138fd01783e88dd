"""Coverage-analysis pipeline: grids, minimum-coverage search, bootstrap, simulation.

The plug-in workflow: fit the model once, keep the coupling norm at the
estimated ``theta``, then sweep or minimize the large-sample coverage
probability over the violation scalars ``(norm_lambda, psi)``, which
stay free parameters rather than being estimated.  The coverage surface
is even in ``psi``, so every search runs over ``psi in [0, 1]`` only.

All stochastic operations draw from per-task child streams of a single
seed and reduce in a fixed order, so reports are reproducible
bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize as _nelder_mead
from scipy.special import expit

from . import __version__ as _pkg_version
from .coverage import LscpInputs, lscp
from .distributions import chisq_quantile, normal_cdf, normal_quantile
from .logistic import (
    ConvergenceError,
    FitResult,
    ModelData,
    batch_pretest_fit,
    coupling_vector,
    fit_glm,
    fit_model,
    violation_vector,
)
from .quadrature import QuadratureSpec

__all__ = [
    "CoverageGrid",
    "MinSearchConfig",
    "MinCoverageResult",
    "BootstrapReport",
    "SimulationReport",
    "coverage_grid",
    "minimize_coverage",
    "bootstrap_min",
    "simulate_finite_sample",
]


@dataclass
class CoverageGrid:
    """Coverage probabilities on a rectangular (norm_lambda, psi) grid."""

    lambda_values: np.ndarray
    psi_values: np.ndarray | None
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lambda_values": np.asarray(self.lambda_values).tolist(),
            "psi_values": None if self.psi_values is None else np.asarray(self.psi_values).tolist(),
            "values": np.asarray(self.values).tolist(),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoverageGrid":
        return cls(
            lambda_values=np.asarray(d["lambda_values"]),
            psi_values=None if d["psi_values"] is None else np.asarray(d["psi_values"]),
            values=np.asarray(d["values"]),
            meta=dict(d.get("meta", {})),
        )

    def write_csv(self, path) -> None:
        """Matrix CSV with norm_lambda down the rows and psi across the columns."""
        import csv as _csv

        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            if self.psi_values is None:
                writer.writerow(["norm_lambda", "coverage"])
                for lam, v in zip(self.lambda_values, self.values):
                    writer.writerow([repr(float(lam)), repr(float(v))])
            else:
                writer.writerow(["norm_lambda/psi"] + [repr(float(p)) for p in self.psi_values])
                for lam, row in zip(self.lambda_values, self.values):
                    writer.writerow([repr(float(lam))] + [repr(float(v)) for v in row])


def coverage_grid(
    template: LscpInputs,
    lambda_values,
    psi_values,
    spec: QuadratureSpec | None = None,
) -> CoverageGrid:
    """Evaluate the coverage probability on the cross product of the two grids.

    Per-cell evaluation failures are recorded in ``meta["failed_cells"]``
    and leave NaN in the matrix instead of aborting the sweep.
    """
    lambda_values = np.asarray(lambda_values, dtype=float)
    psi_values = np.asarray(psi_values, dtype=float)
    if not (np.isfinite(lambda_values).all() and np.isfinite(psi_values).all()):
        raise ValueError("grid values must be finite")
    values = np.empty((lambda_values.size, psi_values.size))
    failed = []
    for i, lam in enumerate(lambda_values):
        for j, psi in enumerate(psi_values):
            try:
                values[i, j] = lscp(replace(template, norm_lambda=float(lam), psi=float(psi)), spec).total
            except Exception as exc:  # noqa: BLE001 - cell-level isolation is the contract
                values[i, j] = math.nan
                failed.append({"i": i, "j": j, "error": str(exc)})
    meta = {
        "q": template.q,
        "alpha": template.alpha,
        "alpha_tilde": template.alpha_tilde,
        "norm_b": template.norm_b,
        "failed_cells": failed,
        "version": _pkg_version,
    }
    return CoverageGrid(lambda_values, psi_values, values, meta)


@dataclass(frozen=True)
class MinSearchConfig:
    """Search layout for the minimum-coverage problem.

    ``lambda_max = None`` starts at twice the pretest radius plus 10 and
    grows whenever the coarse minimum lands near the boundary (the
    surface returns to 1 - alpha for large violations, so the dip sits
    at moderate norm_lambda).
    """

    lambda_max: float | None = None
    coarse_lambda: int = 41
    coarse_psi: int = 41
    n_starts: int = 3
    nm_fatol: float = 1e-5
    nm_maxiter: int = 200
    max_extensions: int = 4


# Cheaper layout for inner loops (bootstrap resampling) where the Monte
# Carlo noise dwarfs the search resolution.
_LIGHT_SEARCH = MinSearchConfig(coarse_lambda=21, coarse_psi=17, n_starts=1, nm_fatol=1e-4, nm_maxiter=80)


@dataclass
class MinCoverageResult:
    min_value: float
    argmin: tuple[float, float]  # (norm_lambda, psi)
    search_trace: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "min_value": self.min_value,
            "argmin": {"norm_lambda": self.argmin[0], "psi": self.argmin[1]},
            "search_trace": [list(t) for t in self.search_trace],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MinCoverageResult":
        return cls(
            min_value=d["min_value"],
            argmin=(d["argmin"]["norm_lambda"], d["argmin"]["psi"]),
            search_trace=[tuple(t) for t in d.get("search_trace", [])],
            meta=dict(d.get("meta", {})),
        )


def minimize_coverage(
    norm_b: float,
    q: int,
    alpha: float,
    alpha_tilde: float,
    search: MinSearchConfig | None = None,
    spec: QuadratureSpec | None = None,
) -> MinCoverageResult:
    """Minimize the coverage probability over (norm_lambda, psi in [0, 1]).

    Coarse grid scan followed by Nelder-Mead polish from the best cells;
    the reported minimum is the best value ever evaluated, so it never
    exceeds the minimum of any sub-grid of the scan.
    """
    search = search or MinSearchConfig()
    trace: list[tuple[float, float, float]] = []

    def evaluate(lam: float, psi: float) -> float:
        lam = max(0.0, float(lam))
        psi = min(1.0, max(0.0, float(psi)))
        value = lscp(
            LscpInputs(q=q, alpha=alpha, alpha_tilde=alpha_tilde, norm_b=norm_b, norm_lambda=lam, psi=psi),
            spec,
        ).total
        trace.append((lam, psi, value))
        return value

    if norm_b == 0.0:
        value = evaluate(0.0, 1.0)
        return MinCoverageResult(value, (0.0, 1.0), trace, {"note": "no coupling: flat surface"})

    lambda_max = search.lambda_max or 2.0 * math.sqrt(chisq_quantile(1.0 - alpha_tilde, q)) + 10.0
    psi_grid = np.linspace(0.0, 1.0, search.coarse_psi)
    extensions = 0
    while True:
        lam_grid = np.linspace(0.0, lambda_max, search.coarse_lambda)
        cells = [(evaluate(lam, psi), lam, psi) for lam in lam_grid for psi in psi_grid]
        cells.sort(key=lambda t: t[0])
        best_lam = cells[0][1]
        if best_lam < 0.95 * lambda_max or extensions >= search.max_extensions:
            break
        lambda_max *= 1.5
        extensions += 1

    polished = False
    for _, lam0, psi0 in cells[: search.n_starts]:
        try:
            res = _nelder_mead(
                lambda x: evaluate(x[0], x[1]),
                x0=np.array([lam0, psi0]),
                method="Nelder-Mead",
                bounds=[(0.0, lambda_max), (0.0, 1.0)],
                options={"fatol": search.nm_fatol, "xatol": 1e-4, "maxiter": search.nm_maxiter},
            )
            polished = polished or bool(res.success)
        except Exception:  # pragma: no cover - fall back to the grid minimum
            pass

    val_best, lam_best, psi_best = min((v, l, p) for l, p, v in trace)
    return MinCoverageResult(
        min_value=val_best,
        argmin=(lam_best, psi_best),
        search_trace=trace,
        meta={
            "lambda_max": lambda_max,
            "extensions": extensions,
            "refinement_converged": polished,
            "n_evaluations": len(trace),
            "version": _pkg_version,
        },
    )


@dataclass
class BootstrapReport:
    resamples: np.ndarray
    percentile_interval: tuple[float, float]
    bca_interval: tuple[float, float]
    B: int
    seed: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "resamples": np.asarray(self.resamples).tolist(),
            "percentile_interval": list(self.percentile_interval),
            "bca_interval": list(self.bca_interval),
            "B": self.B,
            "seed": self.seed,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BootstrapReport":
        return cls(
            resamples=np.asarray(d["resamples"]),
            percentile_interval=tuple(d["percentile_interval"]),
            bca_interval=tuple(d["bca_interval"]),
            B=d["B"],
            seed=d["seed"],
            meta=dict(d.get("meta", {})),
        )


def _bca_interval(resamples: np.ndarray, observed: float, jackknife_values: np.ndarray | None, alpha: float):
    """Bias-corrected accelerated interval endpoints from the resamples.

    Acceleration comes from the jackknife skewness of the statistic; a
    degenerate bias correction (all resamples on one side of the
    observed value) falls back to the percentile endpoints.
    """
    B = resamples.size
    prop = float(np.mean(resamples < observed))
    if prop <= 0.0 or prop >= 1.0:
        lo, hi = np.quantile(resamples, [0.5 * alpha, 1.0 - 0.5 * alpha])
        return (float(lo), float(hi)), {"bca_degenerate": True, "acceleration": 0.0, "z0": None}
    z0 = normal_quantile(prop)
    accel = 0.0
    if jackknife_values is not None and jackknife_values.size >= 2:
        centered = jackknife_values.mean() - jackknife_values
        denom = float(np.sum(centered**2)) ** 1.5
        if denom > 0.0:
            accel = float(np.sum(centered**3)) / (6.0 * denom)
    out = []
    for z_alpha in (normal_quantile(0.5 * alpha), normal_quantile(1.0 - 0.5 * alpha)):
        adj = z0 + (z0 + z_alpha) / (1.0 - accel * (z0 + z_alpha))
        out.append(float(np.quantile(resamples, min(1.0, max(0.0, normal_cdf(adj))))))
    return (out[0], out[1]), {"bca_degenerate": False, "acceleration": accel, "z0": z0}


def bootstrap_min(
    data: ModelData,
    fit: FitResult,
    B: int,
    alpha: float,
    alpha_tilde: float,
    seed: int,
    search: MinSearchConfig | None = None,
    spec: QuadratureSpec | None = None,
    max_retries: int = 3,
) -> BootstrapReport:
    """Parametric bootstrap of the minimized coverage probability.

    Responses are regenerated at the fitted (theta, gamma), the full
    model is refitted, and the minimum coverage is recomputed with the
    refitted coupling norm.  Reports the equal-tail percentile interval
    and the bias-corrected accelerated interval (acceleration from a
    jackknife over the covariate-pattern rows) at level ``1 - alpha``.
    Resamples whose refit fails are redrawn up to ``max_retries`` times;
    more than 5% total failures aborts.
    """
    if B < 100:
        raise ValueError(f"B must be >= 100, got {B}")
    search = search or _LIGHT_SEARCH
    q = data.q
    eta_hat = data.design_theta @ fit.theta_hat + data.design_gamma @ fit.gamma_hat
    pi_hat = expit(eta_hat)
    trials = data.trials.astype(np.int64)
    X_full = data.design_full
    start = np.concatenate([fit.theta_hat, fit.gamma_hat])

    observed = minimize_coverage(fit.norm_b, q, alpha, alpha_tilde, search, spec).min_value

    resamples = np.empty(B)
    failures = 0
    for b in range(B):
        for attempt in range(max_retries + 1):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b, attempt)))
            y_star = rng.binomial(trials, pi_hat).astype(float)
            try:
                refit = fit_glm(X_full, y_star, data.trials, start=start)
                _, norm_b_star = coupling_vector(refit.beta[: data.p], data)
                break
            except (ConvergenceError, np.linalg.LinAlgError):
                failures += 1
        else:
            raise ConvergenceError(f"resample {b}: refit failed {max_retries + 1} times")
        if failures > 0.05 * B:
            raise ConvergenceError(f"bootstrap aborted: {failures} refit failures in <= {b + 1} resamples")
        resamples[b] = minimize_coverage(norm_b_star, q, alpha, alpha_tilde, search, spec).min_value

    # Jackknife over covariate-pattern rows for the acceleration constant.
    jack = []
    jack_failures = 0
    for i in range(data.n_rows):
        keep = np.arange(data.n_rows) != i
        try:
            sub = ModelData(
                design_theta=data.design_theta[keep],
                design_gamma=data.design_gamma[keep],
                successes=data.successes[keep],
                trials=data.trials[keep],
                a_vector=data.a_vector,
                gamma_tilde=data.gamma_tilde,
            )
            refit = fit_glm(sub.design_full, sub.successes, sub.trials, start=start)
            _, nb_i = coupling_vector(refit.beta[: data.p], sub)
            jack.append(minimize_coverage(nb_i, q, alpha, alpha_tilde, search, spec).min_value)
        except (ConvergenceError, np.linalg.LinAlgError, ValueError):
            jack_failures += 1
    jack_values = np.asarray(jack) if jack else None

    lo, hi = np.quantile(resamples, [0.5 * alpha, 1.0 - 0.5 * alpha])
    bca, bca_meta = _bca_interval(resamples, observed, jack_values, alpha)
    return BootstrapReport(
        resamples=resamples,
        percentile_interval=(float(lo), float(hi)),
        bca_interval=bca,
        B=B,
        seed=seed,
        meta={
            "observed_min": observed,
            "refit_failures": failures,
            "jackknife_failures": jack_failures,
            "ci_level": 1.0 - alpha,
            "version": _pkg_version,
            **bca_meta,
        },
    )


@dataclass
class SimulationReport:
    gamma_path: np.ndarray
    finite_sample_cp: np.ndarray
    finite_sample_se: np.ndarray
    large_sample_cp: np.ndarray
    n_sims: int
    replication_factor: int
    n_failed: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "gamma_path": np.asarray(self.gamma_path).tolist(),
            "finite_sample_cp": np.asarray(self.finite_sample_cp).tolist(),
            "finite_sample_se": np.asarray(self.finite_sample_se).tolist(),
            "large_sample_cp": np.asarray(self.large_sample_cp).tolist(),
            "n_sims": self.n_sims,
            "replication_factor": self.replication_factor,
            "n_failed": np.asarray(self.n_failed).tolist(),
            "seed": self.seed,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationReport":
        return cls(
            gamma_path=np.asarray(d["gamma_path"]),
            finite_sample_cp=np.asarray(d["finite_sample_cp"]),
            finite_sample_se=np.asarray(d["finite_sample_se"]),
            large_sample_cp=np.asarray(d["large_sample_cp"]),
            n_sims=d["n_sims"],
            replication_factor=d["replication_factor"],
            n_failed=np.asarray(d["n_failed"]),
            seed=d["seed"],
            meta=dict(d.get("meta", {})),
        )

    def write_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["gamma_both", "finite_sample_cp", "finite_sample_se", "large_sample_cp", "n_failed"])
            for row in zip(self.gamma_path, self.finite_sample_cp, self.finite_sample_se, self.large_sample_cp, self.n_failed):
                writer.writerow([repr(float(v)) for v in row[:4]] + [int(row[4])])


def simulate_finite_sample(
    data: ModelData,
    gamma_path,
    n_sims: int,
    alpha: float,
    alpha_tilde: float,
    replication_factor: int = 1,
    seed: int = 0,
    fit: FitResult | None = None,
    spec: QuadratureSpec | None = None,
    batch_size: int = 4000,
) -> SimulationReport:
    """Finite-sample coverage of the post-pretest interval along a gamma path.

    Each path value ``g`` sets every tested coefficient to ``g``;
    responses are simulated at the observed theta estimate, both models
    are refitted, the pretest picks the interval, and coverage of the
    contrast at the observed theta is tallied.  ``replication_factor``
    stacks the design that many times (implemented by scaling the
    binomial trial counts, which has the identical likelihood).  The
    matching large-sample curve is evaluated at the violation scalars
    implied by each path point on the (replicated) design.
    """
    fit = fit or fit_model(data)
    rep = data.with_replicated_trials(replication_factor)
    theta_obs = fit.theta_hat
    q, n = rep.q, rep.n_rows
    trials_int = rep.trials.astype(np.int64)
    phi_true = float(rep.a_vector @ theta_obs)
    z = normal_quantile(1.0 - 0.5 * alpha)
    threshold = chisq_quantile(1.0 - alpha_tilde, q)
    _, norm_b = coupling_vector(theta_obs, rep)

    gamma_path = np.asarray(gamma_path, dtype=float)
    cp = np.empty(gamma_path.size)
    se = np.empty(gamma_path.size)
    large = np.empty(gamma_path.size)
    failed = np.zeros(gamma_path.size, dtype=int)

    for gi, gval in enumerate(gamma_path):
        gamma = np.full(q, gval)
        _, norm_lam, psi = violation_vector(theta_obs, gamma, rep)
        large[gi] = lscp(
            LscpInputs(q=q, alpha=alpha, alpha_tilde=alpha_tilde, norm_b=norm_b, norm_lambda=norm_lam, psi=psi),
            spec,
        ).total

        pi_true = expit(rep.design_theta @ theta_obs + rep.design_gamma @ gamma)
        covered = 0
        used = 0
        done = 0
        chunk_index = 0
        while done < n_sims:
            size = min(batch_size, n_sims - done)
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(gi, chunk_index)))
            Y = rng.binomial(trials_int[:, None], pi_true[:, None], size=(n, size)).astype(float)

            batch = batch_pretest_fit(rep, Y, theta_start=theta_obs, gamma_start=gamma)
            accept = batch.wald <= threshold
            cover_r = np.abs(batch.phi_restricted - phi_true) <= z * np.sqrt(np.maximum(batch.var_restricted, 0.0))
            cover_f = np.abs(batch.phi_full - phi_true) <= z * np.sqrt(np.maximum(batch.var_full, 0.0))
            hit = np.where(accept, cover_r, cover_f)
            covered += int(hit[batch.ok].sum())
            used += int(batch.ok.sum())
            done += size
            chunk_index += 1

        failed[gi] = n_sims - used
        p_hat = covered / used if used else math.nan
        cp[gi] = p_hat
        se[gi] = math.sqrt(p_hat * (1.0 - p_hat) / used) if used else math.nan

    return SimulationReport(
        gamma_path=gamma_path,
        finite_sample_cp=cp,
        finite_sample_se=se,
        large_sample_cp=large,
        n_sims=n_sims,
        replication_factor=replication_factor,
        n_failed=failed,
        seed=seed,
        meta={
            "norm_b": norm_b,
            "alpha": alpha,
            "alpha_tilde": alpha_tilde,
            "phi_true": phi_true,
            "version": _pkg_version,
        },
    )
