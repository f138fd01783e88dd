"""Monte Carlo reference for the post-pretest coverage probability.

Direct simulation of the limiting experiment: the standardized
full-model error and the pretest statistic vector are jointly normal;
each draw either accepts the pretest (and then scores the exact
restricted-interval coverage probability, which is independent of the
pretest vector) or rejects it and scores the indicator that the
full-model interval covers.  Scoring the accept branch with its exact
conditional probability instead of a Bernoulli draw removes that
component of the Monte Carlo variance.

This evaluator is deliberately independent of the quadrature-based
formula in :mod:`lscp.coverage`: it never touches the angular/radial
decomposition, so agreement between the two is a meaningful check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coverage import LscpInputs, _pretest_threshold
from .distributions import NormalParams, normal_cdf, normal_quantile

__all__ = ["OracleConfig", "oracle_lscp", "conditional_pivot_params", "embed_directions"]

_BATCH = 2_000_000


@dataclass(frozen=True)
class OracleConfig:
    n_draws: int = 10_000_000
    seed: int = 0

    def __post_init__(self):
        if self.n_draws < 10_000:
            raise ValueError(f"n_draws must be >= 10000, got {self.n_draws}")


def conditional_pivot_params(h: np.ndarray, b: np.ndarray, lam: np.ndarray) -> NormalParams:
    """Law of the standardized full-model error given the pretest vector.

    Normal with mean ``b @ (h - lam)`` and variance ``1 - ||b||**2``.
    """
    h = np.asarray(h, dtype=float)
    b = np.asarray(b, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if not (h.shape == b.shape == lam.shape):
        raise ValueError(f"dimension mismatch: {h.shape}, {b.shape}, {lam.shape}")
    nb2 = float(b @ b)
    if nb2 >= 1.0:
        raise ValueError(f"||b|| must be < 1, got {math.sqrt(nb2)}")
    return NormalParams(mean=float(b @ (h - lam)), sd=math.sqrt(1.0 - nb2))


def embed_directions(norm_b: float, norm_lambda: float, psi: float, q: int):
    """Planar embedding of the coupling and violation vectors.

    Places the violation direction on the first axis and the coupling
    direction in the span of the first two axes at cosine ``psi``; the
    coverage probability depends on the vectors only through
    ``(norm_b, norm_lambda, psi)``, so this choice is without loss.
    """
    u_lam = np.zeros(q)
    u_lam[0] = 1.0
    u_b = np.zeros(q)
    u_b[0] = psi
    u_b[1] = math.sqrt(max(0.0, 1.0 - psi * psi))
    return norm_b * u_b, norm_lambda * u_lam


def oracle_lscp(
    inputs: LscpInputs,
    cfg: OracleConfig | None = None,
    b_vec: np.ndarray | None = None,
    lambda_vec: np.ndarray | None = None,
) -> tuple[float, float]:
    """Monte Carlo estimate of the coverage probability, with its standard error.

    Draws are generated in fixed-size batches with one child RNG stream
    per batch derived from ``cfg.seed``, so the estimate is reproducible
    bit-for-bit and does not depend on how batches might be scheduled.
    Explicit ``b_vec``/``lambda_vec`` override the canonical planar
    embedding (used to check orientation invariance).
    """
    cfg = cfg or OracleConfig()
    q = inputs.q
    if b_vec is None or lambda_vec is None:
        b_vec, lambda_vec = embed_directions(inputs.norm_b, inputs.norm_lambda, inputs.psi, q)
    b_vec = np.asarray(b_vec, dtype=float)
    lambda_vec = np.asarray(lambda_vec, dtype=float)
    if b_vec.shape != (q,) or lambda_vec.shape != (q,):
        raise ValueError("b_vec and lambda_vec must have length q")

    nb2 = float(b_vec @ b_vec)
    resid_sd = math.sqrt(1.0 - nb2)
    z = normal_quantile(1.0 - 0.5 * inputs.alpha)
    threshold = _pretest_threshold(inputs.alpha_tilde, q)

    # Accept-branch score: the restricted-interval pivot is independent of
    # the pretest vector, so its conditional coverage probability is a
    # constant (exact, no sampling needed).
    shift = -float(b_vec @ lambda_vec) / resid_sd
    accept_score = float(normal_cdf(z - shift) - normal_cdf(-z - shift))

    n_accept = 0
    n_reject_cover = 0
    remaining = cfg.n_draws
    batch_index = 0
    while remaining > 0:
        size = min(_BATCH, remaining)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(batch_index,)))
        zmat = rng.standard_normal((size, q))
        eps = rng.standard_normal(size)
        h = zmat + lambda_vec
        accept = np.einsum("ij,ij->i", h, h) <= threshold
        n_accept += int(accept.sum())
        v1 = zmat @ b_vec + resid_sd * eps
        n_reject_cover += int((~accept & (np.abs(v1) <= z)).sum())
        remaining -= size
        batch_index += 1

    n = cfg.n_draws
    estimate = (n_accept * accept_score + n_reject_cover) / n
    # Exact second moment from the integer tallies (scores are 0, 1 or the
    # accept constant), giving the usual delta-method standard error.
    second_moment = (n_accept * accept_score**2 + n_reject_cover) / n
    variance = max(0.0, second_moment - estimate**2)
    std_error = math.sqrt(variance / n)
    return estimate, std_error
