"""Large-sample coverage probability (LSCP) of a post-pretest confidence interval.

Setting: a confidence interval for a scalar contrast is reported after a
Wald pretest of a q-dimensional restriction (q >= 2); if the pretest
accepts, the restricted-model interval is used, otherwise the full-model
one.  In the large-sample limit the coverage probability of the reported
interval depends on exactly five scalars besides q: the nominal level
``alpha``, the pretest size ``alpha_tilde``, the information-coupling
norm ``norm_b`` in [0, 1), the standardized restriction violation
``norm_lambda`` >= 0, and the cosine ``psi`` between the coupling and
violation directions.

The value decomposes into an "accept" term (a product of a normal and a
noncentral chi-square probability) plus a correction term evaluated as a
double integral (q = 2) or triple integral (q > 2) over spherical-angle
and radial coordinates.  The radial integration interval is the set of
radii at which the pretest accepts; it is empty for part of the angular
range once ``norm_lambda`` exceeds the pretest radius, and the integrand
has a square-root kink at the transition.  We split the angular axis at
the closed-form transition points and map a squared variable onto each
vanishing endpoint, so the fixed Gauss-Legendre rules converge fast.

Degenerate branches: ``norm_b = 0`` gives exactly ``1 - alpha`` with no
quadrature; ``norm_b > 0, norm_lambda = 0`` uses a dedicated
two-integral formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .distributions import (
    chi_pdf,
    chisq_quantile,
    noncentral_chisq_cdf,
    normal_cdf,
    normal_quantile,
    sphere_angle1_pdf,
    sphere_angle2_pdf,
)
from .quadrature import QuadratureResult, QuadratureSpec, integrate_nested

__all__ = [
    "LscpInputs",
    "LscpBreakdown",
    "coverage_given_offset",
    "projection_kernel",
    "pretest_radius_interval",
    "lscp",
]

# norm_b this close to 1 degenerates the conditional variance 1 - norm_b**2.
_NORM_B_CEILING = 1.0 - 1e-9


@dataclass(frozen=True)
class LscpInputs:
    """The scalars that determine the large-sample coverage probability.

    ``psi`` is only identified when both ``norm_b`` and ``norm_lambda``
    are positive; otherwise it is canonicalized to 1.
    """

    q: int
    alpha: float
    alpha_tilde: float
    norm_b: float
    norm_lambda: float
    psi: float = 1.0

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise ValueError(f"q must be an integer >= 2, got {self.q}")
        object.__setattr__(self, "q", int(self.q))
        for name in ("alpha", "alpha_tilde"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must be in (0,1), got {v}")
        if not (0.0 <= self.norm_b < _NORM_B_CEILING):
            raise ValueError(
                f"norm_b must be in [0, 1) and below {_NORM_B_CEILING} "
                f"(unit coupling degenerates the interval law), got {self.norm_b}"
            )
        if not (self.norm_lambda >= 0.0 and math.isfinite(self.norm_lambda)):
            raise ValueError(f"norm_lambda must be finite and >= 0, got {self.norm_lambda}")
        if not (-1.0 <= self.psi <= 1.0):
            raise ValueError(f"psi must be in [-1, 1], got {self.psi}")
        if self.norm_b == 0.0 or self.norm_lambda == 0.0:
            object.__setattr__(self, "psi", 1.0)


@dataclass
class LscpBreakdown:
    """Coverage probability split into its accept-term and correction term."""

    a_term: float
    b_term: float
    total: float
    branch: str  # "general", "b_zero" or "lambda_zero"
    quadrature_flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "a_term": self.a_term,
            "b_term": self.b_term,
            "total": self.total,
            "branch": self.branch,
            "quadrature_flags": dict(self.quadrature_flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LscpBreakdown":
        return cls(
            a_term=d["a_term"],
            b_term=d["b_term"],
            total=d["total"],
            branch=d["branch"],
            quadrature_flags=dict(d.get("quadrature_flags", {})),
        )


@lru_cache(maxsize=None)
def _pretest_threshold(alpha_tilde: float, q: int) -> float:
    """Chi-square acceptance threshold of the pretest."""
    return chisq_quantile(1.0 - alpha_tilde, q)


def coverage_given_offset(offset, norm_b: float, alpha: float):
    """Probability that the full-model interval covers, given its offset.

    The standardized full-model error, conditional on the pretest
    statistic, is normal with variance ``1 - norm_b**2`` around
    ``offset``; this returns the mass it puts on the nominal interval
    ``[-z, z]`` with ``z`` the ``1 - alpha/2`` normal quantile.  Even in
    ``offset`` and maximal at 0.
    """
    if not (0.0 <= norm_b < 1.0):
        raise ValueError(f"norm_b must be in [0, 1), got {norm_b}")
    z = normal_quantile(1.0 - 0.5 * alpha)
    s = math.sqrt(1.0 - norm_b * norm_b)
    offset = np.asarray(offset, dtype=float)
    out = normal_cdf((z - offset) / s) - normal_cdf((-z - offset) / s)
    return float(out) if np.ndim(out) == 0 else out


def projection_kernel(t1, psi: float, q: int, t2=None):
    """Projection of a uniform unit q-vector onto the coupling direction.

    Expressed through the normalized spherical angles: the first angle
    ``t1`` always enters; a second angle ``t2`` is required exactly when
    q > 2.  The q = 2 parameterization winds the full circle (angle
    2*pi*t1); for q >= 3 the polar angle is pi*t1 and the second factor
    is cos(2*pi*t2) for q = 3, cos(pi*t2) for q > 3.  The result always
    lies in [-1, 1].
    """
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if not (-1.0 <= psi <= 1.0):
        raise ValueError(f"psi must be in [-1, 1], got {psi}")
    orth = math.sqrt(max(0.0, 1.0 - psi * psi))
    t1 = np.asarray(t1, dtype=float)
    if q == 2:
        if t2 is not None:
            raise ValueError("t2 must be omitted when q = 2")
        out = psi * np.cos(2.0 * math.pi * t1) + orth * np.sin(2.0 * math.pi * t1)
    else:
        if t2 is None:
            raise ValueError(f"t2 is required when q > 2 (q = {q})")
        t2 = np.asarray(t2, dtype=float)
        inner = np.cos((2.0 if q == 3 else 1.0) * math.pi * t2)
        out = psi * np.cos(math.pi * t1) + orth * np.sin(math.pi * t1) * inner
    return float(out) if np.ndim(out) == 0 else out


def _radius_bounds(cos_vals, norm_lambda: float, threshold: float):
    """Radial acceptance interval, vectorized over the angle cosine.

    The pretest accepts at radius r when
    ``r**2 + 2*r*norm_lambda*cos + norm_lambda**2 <= threshold``; the
    roots of this quadratic, intersected with [0, inf), give the
    interval.  Empty cells (negative discriminant, or an upper root at
    or below the clipped lower end) are encoded as ``hi == lo`` so they
    contribute exactly zero weight.
    """
    lam = norm_lambda
    c = np.asarray(cos_vals, dtype=float)
    disc = lam * lam * c * c + threshold - lam * lam
    root = np.sqrt(np.maximum(disc, 0.0))
    lo = np.maximum(-lam * c - root, 0.0)
    hi = np.maximum(-lam * c + root, lo)
    empty = disc < 0.0
    lo = np.where(empty, 0.0, lo)
    hi = np.where(empty, 0.0, hi)
    return lo, hi


def pretest_radius_interval(t1: float, norm_lambda: float, alpha_tilde: float, q: int):
    """Acceptance interval of radii at angle ``t1``, or None when empty.

    A single-point intersection has zero mass under the radial density
    and is reported as empty.
    """
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if norm_lambda < 0.0:
        raise ValueError(f"norm_lambda must be >= 0, got {norm_lambda}")
    threshold = _pretest_threshold(alpha_tilde, q)
    scale = 2.0 * math.pi if q == 2 else math.pi
    lo, hi = _radius_bounds(math.cos(scale * t1), norm_lambda, threshold)
    lo, hi = float(lo), float(hi)
    if hi <= lo:
        return None
    return lo, hi


def _t1_support(norm_lambda: float, threshold: float, q: int):
    """Sub-intervals of the angle axis where the radial interval is nonempty.

    Each piece is ``(lo, hi, anchor)`` with ``anchor`` naming the
    endpoint ("lo"/"hi") at which the radial interval shrinks to a
    point -- the integrand behaves like a square root there and the
    evaluator substitutes a squared variable at that end.
    """
    lam2 = norm_lambda * norm_lambda
    if lam2 < threshold:
        return [(0.0, 1.0, None)]
    # Nonempty requires cos(angle) <= -c0.
    c0 = math.sqrt(1.0 - threshold / lam2)
    if q == 2:
        a = math.acos(-c0) / (2.0 * math.pi)
        if 0.5 - a <= 0.0:
            return []
        return [(a, 0.5, "lo"), (0.5, 1.0 - a, "hi")]
    a = math.acos(-c0) / math.pi
    if 1.0 - a <= 0.0:
        return []
    return [(a, 1.0, "lo")]


def _piece_transform(lo: float, hi: float, anchor):
    """Map the unit interval onto [lo, hi], squaring into a sqrt endpoint."""
    width = hi - lo
    if anchor is None:
        return (lambda v: lo + width * v), (lambda v: np.full_like(v, width))
    if anchor == "lo":
        return (lambda v: lo + width * v * v), (lambda v: 2.0 * width * v)
    return (lambda v: hi - width * v * v), (lambda v: 2.0 * width * v)


def _merge_flags(results: list[QuadratureResult]) -> dict:
    if not results:
        return {"converged": True, "refinements": 0, "last_change": 0.0, "nodes_used": 0, "pieces": 0}
    return {
        "converged": all(r.converged for r in results),
        "refinements": max(r.refinements for r in results),
        "last_change": max(r.last_change for r in results),
        "nodes_used": max(r.nodes_used for r in results),
        "pieces": len(results),
    }


def _correction_integral_general(inputs: LscpInputs, spec: QuadratureSpec):
    """The quadrature part of the correction term on the general branch."""
    q, alpha = inputs.q, inputs.alpha
    nb, lam, psi = inputs.norm_b, inputs.norm_lambda, inputs.psi
    threshold = _pretest_threshold(inputs.alpha_tilde, q)
    orth = math.sqrt(max(0.0, 1.0 - psi * psi))
    results: list[QuadratureResult] = []

    for lo, hi, anchor in _t1_support(lam, threshold, q):
        if hi - lo <= 0.0:
            continue
        t_of_v, jac_of_v = _piece_transform(lo, hi, anchor)

        if q == 2:

            def integrand(v, r, _t=t_of_v, _j=jac_of_v):
                t1 = _t(v)
                angle = 2.0 * math.pi * t1
                k = psi * np.cos(angle) + orth * np.sin(angle)
                return coverage_given_offset(r * nb * k, nb, alpha) * chi_pdf(r, 2) * _j(v)

            def bounds(v, _t=t_of_v):
                return _radius_bounds(np.cos(2.0 * math.pi * _t(v)), lam, threshold)

            results.append(integrate_nested(integrand, [(0.0, 1.0), bounds], spec))
        else:
            # For q = 3 the second angle enters only through cos(2*pi*t2),
            # which is symmetric about t2 = 1/2 under the (uniform) angle
            # density, so we integrate over [0, 1/2] and double.
            t2_hi, mult = (0.5, 2.0) if q == 3 else (1.0, 1.0)
            inner_scale = 2.0 * math.pi if q == 3 else math.pi

            def integrand(v, t2, r, _t=t_of_v, _j=jac_of_v):
                t1 = _t(v)
                k = psi * np.cos(math.pi * t1) + orth * np.sin(math.pi * t1) * np.cos(inner_scale * t2)
                return (
                    coverage_given_offset(r * nb * k, nb, alpha)
                    * chi_pdf(r, q)
                    * sphere_angle1_pdf(t1, q)
                    * sphere_angle2_pdf(t2, q)
                    * (_j(v) * mult)
                )

            def bounds(v, t2, _t=t_of_v):
                return _radius_bounds(np.cos(math.pi * _t(v)), lam, threshold)

            results.append(integrate_nested(integrand, [(0.0, 1.0), (0.0, t2_hi), bounds], spec))

    return sum(r.value for r in results), _merge_flags(results)


def _correction_integral_lambda_zero(inputs: LscpInputs, spec: QuadratureSpec):
    """Quadrature part of the correction term when the violation is zero."""
    q, alpha, nb = inputs.q, inputs.alpha, inputs.norm_b
    r_hi = math.sqrt(_pretest_threshold(inputs.alpha_tilde, q))
    angle_scale = 2.0 * math.pi if q == 2 else math.pi

    def integrand(t1, r):
        g = np.cos(angle_scale * t1)
        return coverage_given_offset(r * nb * g, nb, alpha) * chi_pdf(r, q) * sphere_angle1_pdf(t1, q)

    res = integrate_nested(integrand, [(0.0, 1.0), (0.0, r_hi)], spec)
    return res.value, _merge_flags([res])


def lscp(inputs: LscpInputs, spec: QuadratureSpec | None = None) -> LscpBreakdown:
    """Large-sample coverage probability of the post-pretest interval.

    Returns the accept-term/correction-term breakdown; ``total`` is
    always their sum.  Quadrature convergence problems are reported in
    ``quadrature_flags`` rather than raised, so grid sweeps can flag
    individual cells.
    """
    spec = spec or QuadratureSpec(abs_tol=1e-7)
    one_minus_alpha = 1.0 - inputs.alpha
    threshold = _pretest_threshold(inputs.alpha_tilde, inputs.q)

    if inputs.norm_b == 0.0:
        # The pretest cannot distort an uncoupled contrast: exactly 1 - alpha.
        p_accept = noncentral_chisq_cdf(threshold, inputs.q, inputs.norm_lambda**2)
        a_term = one_minus_alpha * p_accept
        return LscpBreakdown(
            a_term=a_term,
            b_term=one_minus_alpha - a_term,
            total=one_minus_alpha,
            branch="b_zero",
            quadrature_flags=_merge_flags([]),
        )

    if inputs.norm_lambda == 0.0:
        integral, flags = _correction_integral_lambda_zero(inputs, spec)
        a_term = one_minus_alpha * (1.0 - inputs.alpha_tilde)
        b_term = one_minus_alpha - integral
        return LscpBreakdown(a_term, b_term, a_term + b_term, "lambda_zero", flags)

    s = math.sqrt(1.0 - inputs.norm_b**2)
    z = normal_quantile(1.0 - 0.5 * inputs.alpha)
    mean_shift = -inputs.psi * inputs.norm_b * inputs.norm_lambda / s
    p_interval = float(normal_cdf(z - mean_shift) - normal_cdf(-z - mean_shift))
    p_accept = noncentral_chisq_cdf(threshold, inputs.q, inputs.norm_lambda**2)
    a_term = p_interval * p_accept
    integral, flags = _correction_integral_general(inputs, spec)
    b_term = one_minus_alpha - integral
    return LscpBreakdown(a_term, b_term, a_term + b_term, "general", flags)
