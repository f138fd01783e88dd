"""Binomial-logistic regression layer: fits, information blocks, pretest pieces.

The package implements one concrete family end to end (grouped binomial
with canonical logit link, where the expected and observed information
coincide); everything downstream touches the family only through
``log_likelihood_terms``/``information``, so another family can be
slotted in behind the same interface.

Data are grouped: one row per covariate pattern with a (successes,
trials) pair; Bernoulli data are the trials = 1 special case.  The
parameter vector splits into the retained block ``theta`` (p columns)
and the tested block ``gamma`` (q columns); the scalar of interest is
``a_vector @ theta``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, xlogy

from .distributions import chisq_quantile, normal_quantile

__all__ = [
    "DataError",
    "ConvergenceError",
    "ModelData",
    "GlmFit",
    "FitResult",
    "fit_glm",
    "fit_glm_batch",
    "BatchPretestFit",
    "batch_pretest_fit",
    "fit_full",
    "fit_restricted",
    "fit_model",
    "wald_statistic",
    "confidence_intervals",
    "coupling_vector",
    "violation_vector",
    "information",
    "batched_information",
    "load_model_data",
]

_MAX_ITER = 50
_SCORE_TOL = 1e-8
_DEVIANCE_RTOL = 1e-10
_DIVERGENCE_BOUND = 1e3
# Linear predictors beyond this saturate the probabilities in double
# precision; reaching it means complete or quasi-complete separation.
_ETA_BOUND = 30.0
_CONDITION_LIMIT = 1e12


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class ConvergenceError(RuntimeError):
    """Maximum-likelihood fit failed to converge."""


@dataclass
class ModelData:
    """Grouped binomial data with the retained/tested design split."""

    design_theta: np.ndarray
    design_gamma: np.ndarray
    successes: np.ndarray
    trials: np.ndarray
    a_vector: np.ndarray
    gamma_tilde: np.ndarray

    def __post_init__(self):
        self.design_theta = np.atleast_2d(np.asarray(self.design_theta, dtype=float))
        self.design_gamma = np.atleast_2d(np.asarray(self.design_gamma, dtype=float))
        self.successes = np.asarray(self.successes, dtype=float)
        self.trials = np.asarray(self.trials, dtype=float)
        self.a_vector = np.asarray(self.a_vector, dtype=float)
        self.gamma_tilde = np.asarray(self.gamma_tilde, dtype=float)
        n = self.design_theta.shape[0]
        if self.design_gamma.shape[0] != n:
            raise DataError("design_theta and design_gamma row counts differ")
        if self.successes.shape != (n,) or self.trials.shape != (n,):
            raise DataError("successes/trials must be vectors matching the design rows")
        if np.any(self.trials < 1) or np.any(self.successes < 0) or np.any(self.successes > self.trials):
            bad = int(np.argmax((self.trials < 1) | (self.successes < 0) | (self.successes > self.trials)))
            raise DataError(f"row {bad}: need 0 <= successes <= trials with trials >= 1")
        if self.a_vector.shape != (self.p,):
            raise DataError(f"a_vector must have length p = {self.p}")
        if not np.any(self.a_vector != 0.0):
            raise DataError("a_vector must be non-zero")
        if self.gamma_tilde.shape != (self.q,):
            raise DataError(f"gamma_tilde must have length q = {self.q}")
        full = self.design_full
        if np.linalg.matrix_rank(full) < full.shape[1]:
            raise DataError("combined design matrix is rank deficient")

    @property
    def p(self) -> int:
        return self.design_theta.shape[1]

    @property
    def q(self) -> int:
        return self.design_gamma.shape[1]

    @property
    def n_rows(self) -> int:
        return self.design_theta.shape[0]

    @property
    def design_full(self) -> np.ndarray:
        return np.hstack([self.design_theta, self.design_gamma])

    def with_replicated_trials(self, factor: int) -> "ModelData":
        """Stack the design ``factor`` times; identical covariates fold into trials."""
        if factor < 1 or int(factor) != factor:
            raise ValueError(f"replication factor must be a positive integer, got {factor}")
        return ModelData(
            design_theta=self.design_theta,
            design_gamma=self.design_gamma,
            successes=self.successes * factor,
            trials=self.trials * factor,
            a_vector=self.a_vector,
            gamma_tilde=self.gamma_tilde,
        )


@dataclass
class GlmFit:
    """Raw output of one iteratively reweighted least-squares fit."""

    beta: np.ndarray
    info: np.ndarray
    deviance: float
    log_likelihood: float
    n_iter: int
    converged: bool
    max_abs_score: float


def _solve_pd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve with a symmetric positive-definite matrix.

    Cholesky first; if the factorization fails or the eigenvalue ratio
    exceeds 1e12, fall back to an eigendecomposition solve and warn.
    """
    try:
        c = np.linalg.cholesky(A)
        d = np.diagonal(c)
        if (d.max() / d.min()) ** 2 < _CONDITION_LIMIT:
            y = np.linalg.solve(c, B)
            return np.linalg.solve(c.T, y)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(A)
    if w[0] <= 0.0:
        raise np.linalg.LinAlgError("information matrix is not positive definite")
    warnings.warn(
        f"ill-conditioned information matrix (condition number {w[-1] / w[0]:.2e}); "
        "using eigendecomposition solve",
        RuntimeWarning,
        stacklevel=2,
    )
    return v @ ((v.T @ B).T / w).T


def _pd_inverse(A: np.ndarray) -> np.ndarray:
    return _solve_pd(A, np.eye(A.shape[0]))


def _spd_inverse_sqrt(M: np.ndarray) -> np.ndarray:
    """Symmetric positive-definite inverse square root via eigendecomposition."""
    w, v = np.linalg.eigh(M)
    if w[0] <= 0.0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return (v / np.sqrt(w)) @ v.T


def _binomial_loglik(y, m, eta):
    # log C(m, y) omitted: constant in the parameters.
    return float(np.sum(y * eta - m * np.logaddexp(0.0, eta)))


def _binomial_deviance(y, m, pi):
    mu = m * pi
    return float(2.0 * np.sum(xlogy(y, y) - xlogy(y, mu) + xlogy(m - y, m - y) - xlogy(m - y, m - mu)))


def fit_glm(
    X: np.ndarray,
    successes: np.ndarray,
    trials: np.ndarray,
    offset: np.ndarray | None = None,
    start: np.ndarray | None = None,
    max_iter: int = _MAX_ITER,
) -> GlmFit:
    """Maximum-likelihood logistic fit by Newton steps with step halving.

    Convergence requires both a relative deviance change below 1e-10 and
    a score sup-norm below 1e-8.  Divergence of the parameter norm
    (complete or quasi-complete separation) and iteration exhaustion
    raise :class:`ConvergenceError` with diagnostics.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(successes, dtype=float)
    m = np.asarray(trials, dtype=float)
    off = np.zeros(X.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    beta = np.zeros(X.shape[1]) if start is None else np.asarray(start, dtype=float).copy()

    eta = X @ beta + off
    pi = expit(eta)
    deviance = _binomial_deviance(y, m, pi)
    info = None
    for iteration in range(1, max_iter + 1):
        w = m * pi * (1.0 - pi)
        score = X.T @ (y - m * pi)
        info = X.T @ (X * w[:, None])
        max_score = float(np.max(np.abs(score)))
        step = _solve_pd(info, score)

        # Step halving keeps the deviance non-increasing.
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step
            eta_new = X @ candidate + off
            pi_new = expit(eta_new)
            dev_new = _binomial_deviance(y, m, pi_new)
            if dev_new <= deviance + 1e-12:
                break
            scale *= 0.5
        else:
            raise ConvergenceError(
                f"step halving failed at iteration {iteration} (deviance {deviance:.6g})"
            )
        rel_change = abs(deviance - dev_new) / (abs(deviance) + 1e-300)
        beta, eta, pi, deviance = candidate, eta_new, pi_new, dev_new

        if np.max(np.abs(beta)) > _DIVERGENCE_BOUND or np.max(np.abs(eta)) > _ETA_BOUND:
            raise ConvergenceError(
                f"fit diverged at iteration {iteration} "
                f"(max |coefficient| = {np.max(np.abs(beta)):.3g}, max |linear predictor| = "
                f"{np.max(np.abs(eta)):.3g}); data may be completely separated"
            )
        score = X.T @ (y - m * pi)
        max_score = float(np.max(np.abs(score)))
        if max_score < _SCORE_TOL and rel_change < _DEVIANCE_RTOL:
            w = m * pi * (1.0 - pi)
            info = X.T @ (X * w[:, None])
            return GlmFit(beta, info, deviance, _binomial_loglik(y, m, eta), iteration, True, max_score)

    raise ConvergenceError(
        f"no convergence after {max_iter} iterations (max |score| = {max_score:.3e}, "
        f"deviance = {deviance:.6g})"
    )


def fit_glm_batch(
    X: np.ndarray,
    successes: np.ndarray,
    trials: np.ndarray,
    offset: np.ndarray | None = None,
    start: np.ndarray | None = None,
    max_iter: int = 30,
    step_tol: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Newton fits for many response vectors sharing one design.

    ``successes`` has shape (n_rows, n_fits).  Plain Newton without step
    halving: replicates that diverge or fail to converge are flagged out
    in the returned mask rather than repaired (simulation callers count
    and drop them).  Returns ``(beta, ok)`` with ``beta`` of shape
    (n_coef, n_fits).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(successes, dtype=float)
    m = np.asarray(trials, dtype=float)
    n, k = X.shape
    S = Y.shape[1]
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if start is None:
        beta = np.zeros((k, S))
    else:
        beta = np.broadcast_to(np.asarray(start, dtype=float).reshape(k, -1), (k, S)).copy()

    ok = np.ones(S, dtype=bool)
    done = np.zeros(S, dtype=bool)
    active = np.arange(S)
    for _ in range(max_iter):
        if active.size == 0:
            break
        eta = X @ beta[:, active] + off[:, None]
        pi = expit(eta)
        w = m[:, None] * pi * (1.0 - pi)
        score = X.T @ (Y[:, active] - m[:, None] * pi)
        H = np.einsum("ik,is,il->skl", X, w, X, optimize=True)
        try:
            step = np.linalg.solve(H, score.T[:, :, None])[:, :, 0].T
        except np.linalg.LinAlgError:
            step = np.full((k, active.size), np.nan)
            for j in range(active.size):
                try:
                    step[:, j] = np.linalg.solve(H[j], score[:, j])
                except np.linalg.LinAlgError:
                    pass
        beta[:, active] += step

        eta_new = X @ beta[:, active] + off[:, None]
        bad = (
            ~np.isfinite(step).all(axis=0)
            | (np.abs(beta[:, active]).max(axis=0) > _DIVERGENCE_BOUND)
            | (np.abs(eta_new).max(axis=0) > _ETA_BOUND)
        )
        conv = np.abs(step).max(axis=0) < step_tol
        ok[active[bad]] = False
        done[active[bad | conv]] = True
        active = active[~(bad | conv)]
    ok[active] = False  # never converged
    return beta, ok


@dataclass
class BatchPretestFit:
    """Per-replicate pretest quantities for a batch of simulated responses."""

    wald: np.ndarray
    phi_full: np.ndarray
    var_full: np.ndarray
    phi_restricted: np.ndarray
    var_restricted: np.ndarray
    ok: np.ndarray


def batch_pretest_fit(
    data: ModelData,
    responses: np.ndarray,
    theta_start: np.ndarray | None = None,
    gamma_start: np.ndarray | None = None,
) -> BatchPretestFit:
    """Fit full and restricted models to many response vectors at once.

    Returns the Wald statistic, the interest contrast and its variance
    under each model, and a mask of replicates whose fits converged.
    ``responses`` has shape (n_rows, n_replicates).
    """
    p, q = data.p, data.q
    X_full, X_theta = data.design_full, data.design_theta
    offset_r = data.design_gamma @ data.gamma_tilde
    a = data.a_vector
    start_full = None
    if theta_start is not None:
        start_full = np.concatenate([theta_start, gamma_start if gamma_start is not None else np.zeros(q)])

    beta_full, ok_full = fit_glm_batch(X_full, responses, data.trials, start=start_full)
    theta_r, ok_r = fit_glm_batch(X_theta, responses, data.trials, offset=offset_r, start=theta_start)
    ok = ok_full & ok_r
    size = responses.shape[1]

    # Pretest statistic: Schur complement of the theta block at the
    # restricted fit, applied to the full-model gamma estimate.
    info_r = batched_information(X_full, X_theta @ theta_r + offset_r[:, None], data.trials)
    tt, tg = info_r[:, :p, :p], info_r[:, :p, p:]
    gt, gg = info_r[:, p:, :p], info_r[:, p:, p:]
    schur_gamma = gg - gt @ np.linalg.solve(tt, tg)
    d = (beta_full[p:] - data.gamma_tilde[:, None]).T
    wald = np.einsum("sq,sqr,sr->s", d, schur_gamma, d)

    a_stack = np.broadcast_to(a, (size, p))[..., None]
    var_restricted = np.einsum("p,sp->s", a, np.linalg.solve(tt, a_stack)[:, :, 0])

    info_f = batched_information(X_full, X_full @ beta_full, data.trials)
    ttf, tgf = info_f[:, :p, :p], info_f[:, :p, p:]
    gtf, ggf = info_f[:, p:, :p], info_f[:, p:, p:]
    schur_theta = ttf - tgf @ np.linalg.solve(ggf, gtf)
    var_full = np.einsum("p,sp->s", a, np.linalg.solve(schur_theta, a_stack)[:, :, 0])

    return BatchPretestFit(
        wald=wald,
        phi_full=a @ beta_full[:p],
        var_full=var_full,
        phi_restricted=a @ theta_r,
        var_restricted=var_restricted,
        ok=ok,
    )


def information(data: ModelData, theta: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Expected information of the full design at the given parameter point."""
    X = data.design_full
    eta = data.design_theta @ np.asarray(theta, dtype=float) + data.design_gamma @ np.asarray(gamma, dtype=float)
    pi = expit(eta)
    w = data.trials * pi * (1.0 - pi)
    return X.T @ (X * w[:, None])


def batched_information(X: np.ndarray, eta: np.ndarray, trials: np.ndarray) -> np.ndarray:
    """Expected information per column of ``eta``; returns shape (S, k, k)."""
    pi = expit(eta)
    w = trials[:, None] * pi * (1.0 - pi)
    return np.einsum("ik,is,il->skl", X, w, X, optimize=True)


def fit_full(data: ModelData, max_iter: int = _MAX_ITER):
    """Joint MLE of (theta, gamma); returns the estimates and the information there."""
    fit = fit_glm(data.design_full, data.successes, data.trials, max_iter=max_iter)
    return fit.beta[: data.p], fit.beta[data.p :], fit.info


def fit_restricted(data: ModelData, max_iter: int = _MAX_ITER) -> np.ndarray:
    """MLE of theta with gamma pinned at gamma_tilde (entering as an offset)."""
    offset = data.design_gamma @ data.gamma_tilde
    fit = fit_glm(data.design_theta, data.successes, data.trials, offset=offset, max_iter=max_iter)
    return fit.beta


def _blocks(info: np.ndarray, p: int):
    return info[:p, :p], info[:p, p:], info[p:, :p], info[p:, p:]


def wald_statistic(data: ModelData, theta_restricted: np.ndarray, gamma_hat: np.ndarray) -> float:
    """Wald statistic of the restriction, standardized at the restricted fit.

    Uses the gamma-gamma block of the inverse information evaluated at
    ``(theta_restricted, gamma_tilde)``; its inverse is the Schur
    complement of the theta-theta block.
    """
    info = information(data, theta_restricted, data.gamma_tilde)
    tt, tg, gt, gg = _blocks(info, data.p)
    schur = gg - gt @ _solve_pd(tt, tg)
    d = np.asarray(gamma_hat, dtype=float) - data.gamma_tilde
    return float(d @ schur @ d)


def coupling_vector(theta: np.ndarray, data: ModelData) -> tuple[np.ndarray, float]:
    """Standardized information coupling between the interest contrast and gamma.

    Computed from the inverse-information blocks at ``(theta,
    gamma_tilde)``; its norm is always below 1 for a positive-definite
    information matrix, and values within 1e-9 of 1 signal numerical
    degeneracy and raise.
    """
    info = information(data, np.asarray(theta, dtype=float), data.gamma_tilde)
    inv = _pd_inverse(info)
    p = data.p
    inv_tt, inv_gt = inv[:p, :p], inv[p:, :p]
    denom = math.sqrt(float(data.a_vector @ inv_tt @ data.a_vector))
    b = _spd_inverse_sqrt(inv[p:, p:]) @ (inv_gt @ data.a_vector) / denom
    norm_b = float(np.linalg.norm(b))
    if norm_b >= 1.0 - 1e-9:
        raise np.linalg.LinAlgError(
            f"coupling norm {norm_b} is numerically at 1; information matrix near singular"
        )
    return b, norm_b


def violation_vector(theta: np.ndarray, gamma: np.ndarray, data: ModelData):
    """Standardized restriction violation and its angle to the coupling.

    Returns ``(vector, norm, psi)`` where ``psi`` is the cosine between
    the violation and coupling directions, taken as 1 when either norm
    vanishes.
    """
    info = information(data, np.asarray(theta, dtype=float), data.gamma_tilde)
    inv = _pd_inverse(info)
    lam = _spd_inverse_sqrt(inv[data.p :, data.p :]) @ (np.asarray(gamma, dtype=float) - data.gamma_tilde)
    norm_lam = float(np.linalg.norm(lam))
    b, norm_b = coupling_vector(theta, data)
    if norm_lam > 0.0 and norm_b > 0.0:
        psi = float(b @ lam / (norm_b * norm_lam))
        psi = min(1.0, max(-1.0, psi))
    else:
        psi = 1.0
    return lam, norm_lam, psi


@dataclass
class FitResult:
    """Every piece of the fitted pretest problem needed downstream."""

    theta_hat: np.ndarray
    gamma_hat: np.ndarray
    theta_hat_restricted: np.ndarray
    info: np.ndarray
    info_blocks: dict
    wald: float
    norm_b: float
    converged: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.tolist(),
            "gamma_hat": self.gamma_hat.tolist(),
            "theta_hat_restricted": self.theta_hat_restricted.tolist(),
            "info": self.info.tolist(),
            "info_blocks": {k: np.asarray(v).tolist() for k, v in self.info_blocks.items()},
            "wald": self.wald,
            "norm_b": self.norm_b,
            "converged": dict(self.converged),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            theta_hat=np.asarray(d["theta_hat"]),
            gamma_hat=np.asarray(d["gamma_hat"]),
            theta_hat_restricted=np.asarray(d["theta_hat_restricted"]),
            info=np.asarray(d["info"]),
            info_blocks={k: np.asarray(v) for k, v in d["info_blocks"].items()},
            wald=d["wald"],
            norm_b=d["norm_b"],
            converged=dict(d.get("converged", {})),
        )


def fit_model(data: ModelData, max_iter: int = _MAX_ITER) -> FitResult:
    """Fit full and restricted models and assemble the pretest quantities."""
    full = fit_glm(data.design_full, data.successes, data.trials, max_iter=max_iter)
    restricted = fit_glm(
        data.design_theta,
        data.successes,
        data.trials,
        offset=data.design_gamma @ data.gamma_tilde,
        max_iter=max_iter,
    )
    p = data.p
    theta_hat, gamma_hat = full.beta[:p], full.beta[p:]
    inv = _pd_inverse(full.info)
    tt, tg, gt, gg = _blocks(full.info, p)
    itt, itg, igt, igg = _blocks(inv, p)
    wald = wald_statistic(data, restricted.beta, gamma_hat)
    _, norm_b = coupling_vector(theta_hat, data)
    return FitResult(
        theta_hat=theta_hat,
        gamma_hat=gamma_hat,
        theta_hat_restricted=restricted.beta,
        info=full.info,
        info_blocks={
            "theta_theta": tt,
            "theta_gamma": tg,
            "gamma_theta": gt,
            "gamma_gamma": gg,
            "inv_theta_theta": itt,
            "inv_theta_gamma": itg,
            "inv_gamma_theta": igt,
            "inv_gamma_gamma": igg,
        },
        wald=wald,
        norm_b=norm_b,
        converged={
            "full": full.converged,
            "restricted": restricted.converged,
            "full_iterations": full.n_iter,
            "restricted_iterations": restricted.n_iter,
            "full_max_abs_score": full.max_abs_score,
            "restricted_max_abs_score": restricted.max_abs_score,
        },
    )


def confidence_intervals(data: ModelData, fit: FitResult, alpha: float, alpha_tilde: float):
    """Full, restricted and post-pretest intervals for the interest contrast.

    The full-model interval standardizes with the theta-theta block of
    the inverse information at the joint MLE; the restricted one uses
    the inverse of the theta-theta information block at the restricted
    fit (these differ whenever the two parameter blocks are coupled).
    Returns ``(full, restricted, selected_interval, selected)`` with
    ``selected`` equal to "restricted" when the pretest accepts.
    """
    a = data.a_vector
    z = normal_quantile(1.0 - 0.5 * alpha)

    phi_full = float(a @ fit.theta_hat)
    se_full = math.sqrt(float(a @ fit.info_blocks["inv_theta_theta"] @ a))
    interval_full = (phi_full - z * se_full, phi_full + z * se_full)

    info_r = information(data, fit.theta_hat_restricted, data.gamma_tilde)
    tt_r = info_r[: data.p, : data.p]
    phi_r = float(a @ fit.theta_hat_restricted)
    se_r = math.sqrt(float(a @ _solve_pd(tt_r, a)))
    interval_r = (phi_r - z * se_r, phi_r + z * se_r)

    accept = fit.wald <= chisq_quantile(1.0 - alpha_tilde, data.q)
    selected = "restricted" if accept else "full"
    chosen = interval_r if accept else interval_full
    return interval_full, interval_r, chosen, selected


def load_model_data(
    path,
    theta_cols: list[str],
    gamma_cols: list[str],
    successes_col: str,
    trials_col: str | None,
    a_vector,
    gamma_tilde,
    intercept: bool = False,
) -> ModelData:
    """Read grouped binomial data from a headered CSV file.

    ``trials_col = None`` treats rows as Bernoulli (trials = 1).  With
    ``intercept=True`` a column of ones is prepended to the theta design
    and ``a_vector`` must cover it as its first entry.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: missing header row")
        needed = list(theta_cols) + list(gamma_cols) + [successes_col] + ([trials_col] if trials_col else [])
        for col in needed:
            if col not in reader.fieldnames:
                raise DataError(f"{path}: column {col!r} not found (header: {reader.fieldnames})")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            parsed = {}
            for col in needed:
                try:
                    parsed[col] = float(row[col])
                except (TypeError, ValueError):
                    raise DataError(f"{path}:{line_no}: field {col!r} is not numeric: {row[col]!r}") from None
            rows.append(parsed)
    if not rows:
        raise DataError(f"{path}: no data rows")

    theta = np.array([[r[c] for c in theta_cols] for r in rows])
    if intercept:
        theta = np.hstack([np.ones((len(rows), 1)), theta])
    gamma = np.array([[r[c] for c in gamma_cols] for r in rows])
    successes = np.array([r[successes_col] for r in rows])
    trials = np.array([r[trials_col] for r in rows]) if trials_col else np.ones(len(rows))
    return ModelData(
        design_theta=theta,
        design_gamma=gamma,
        successes=successes,
        trials=trials,
        a_vector=a_vector,
        gamma_tilde=gamma_tilde,
    )
