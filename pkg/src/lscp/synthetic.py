"""Synthetic grouped-binomial datasets for demos and tests."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .logistic import ModelData

__all__ = ["make_grouped_logistic", "make_example_casecontrol"]


def make_grouped_logistic(
    n_patterns: int,
    trials_per_pattern: int,
    p: int,
    q: int,
    seed: int,
    theta: np.ndarray | None = None,
    gamma: np.ndarray | None = None,
    coupling: float = 0.6,
) -> ModelData:
    """Random grouped logistic dataset with a tunable theta/gamma coupling.

    The theta design is an intercept plus standard-normal columns; each
    gamma column mixes a theta column (weight ``coupling``) with fresh
    noise so the information blocks are coupled and the coupling norm is
    bounded away from zero.  Responses are binomial draws at the given
    coefficients (defaults: mild theta effects, gamma at zero).  The
    interest contrast is the first non-intercept theta coefficient.
    """
    rng = np.random.default_rng(seed)
    if p < 2:
        raise ValueError("need p >= 2 (intercept plus at least one slope)")
    design_theta = np.hstack([np.ones((n_patterns, 1)), rng.standard_normal((n_patterns, p - 1))])
    noise = rng.standard_normal((n_patterns, q))
    base = design_theta[:, 1 + (np.arange(q) % (p - 1))]
    design_gamma = coupling * base + np.sqrt(1.0 - coupling**2) * noise

    theta = np.asarray(theta, dtype=float) if theta is not None else np.concatenate([[-0.5], 0.4 * np.ones(p - 1)])
    gamma = np.asarray(gamma, dtype=float) if gamma is not None else np.zeros(q)
    pi = expit(design_theta @ theta + design_gamma @ gamma)
    trials = np.full(n_patterns, trials_per_pattern, dtype=float)
    successes = rng.binomial(trials_per_pattern, pi).astype(float)
    a_vector = np.zeros(p)
    a_vector[1] = 1.0
    return ModelData(
        design_theta=design_theta,
        design_gamma=design_gamma,
        successes=successes,
        trials=trials,
        a_vector=a_vector,
        gamma_tilde=np.zeros(q),
    )


def make_example_casecontrol(trials_per_pattern: int = 250) -> ModelData:
    """Deterministic case-control style example with two tested interactions.

    Eight covariate patterns from three binary factors (exposure, age
    group, smoking); the retained model carries the intercept and main
    effects, the tested block holds the exposure-by-age and
    exposure-by-smoking interactions, and the contrast of interest is
    the exposure log odds ratio.  Success counts are expected counts at
    fixed coefficients, rounded, so the dataset is reproducible without
    a seed.
    """
    cells = np.array([[e, g, s] for e in (0, 1) for g in (0, 1) for s in (0, 1)], dtype=float)
    exposure, age, smoking = cells[:, 0], cells[:, 1], cells[:, 2]
    design_theta = np.column_stack([np.ones(8), exposure, age, smoking])
    design_gamma = np.column_stack([exposure * age, exposure * smoking])
    theta = np.array([-1.6, 0.9, 0.55, 0.75])
    pi = expit(design_theta @ theta)
    successes = np.round(trials_per_pattern * pi)
    return ModelData(
        design_theta=design_theta,
        design_gamma=design_gamma,
        successes=successes,
        trials=np.full(8, float(trials_per_pattern)),
        a_vector=np.array([0.0, 1.0, 0.0, 0.0]),
        gamma_tilde=np.zeros(2),
    )
