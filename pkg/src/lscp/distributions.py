"""Distribution primitives used throughout the package.

Everything here is a pure function of its arguments.  The normal and
central chi-square pieces are thin wrappers over the corresponding
``scipy.special`` primitives (erfc-based normal CDF, regularized
incomplete gamma); the noncentral chi-square CDF is built from scratch
as a Poisson-weighted mixture of central CDFs with a controlled
truncation error, so its accuracy does not depend on any external
noncentral routine.

Scalar arguments give floats back; ``chi_pdf`` and the two spherical
angle densities also accept numpy arrays (they sit inside quadrature
integrands).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

__all__ = [
    "NormalParams",
    "normal_cdf",
    "normal_quantile",
    "chi_pdf",
    "chisq_cdf",
    "chisq_quantile",
    "noncentral_chisq_cdf",
    "beta_function",
    "sphere_angle1_pdf",
    "sphere_angle2_pdf",
]

# Relative Poisson tail mass discarded by the noncentral CDF series.
_NCX2_TAIL = 1e-14


@dataclass(frozen=True)
class NormalParams:
    """Mean and standard deviation of a univariate normal law."""

    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if not (self.sd > 0.0) or not math.isfinite(self.sd):
            raise ValueError(f"sd must be finite and positive, got {self.sd}")
        if not math.isfinite(self.mean):
            raise ValueError(f"mean must be finite, got {self.mean}")


def normal_cdf(x, params: NormalParams | None = None):
    """Normal cumulative distribution function.

    Parameters
    ----------
    x : float or ndarray
        Evaluation point(s).  ``+/-inf`` are allowed and map to 1/0;
        NaN raises.
    params : NormalParams, optional
        Location/scale; standard normal when omitted.
    """
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise ValueError("normal_cdf: NaN evaluation point")
    if params is not None:
        x = (x - params.mean) / params.sd
    out = _sp.ndtr(x)
    return float(out) if out.ndim == 0 else out


def normal_quantile(a: float) -> float:
    """Inverse of the standard normal CDF.

    Raises ``ValueError`` outside the open interval (0, 1).
    """
    if not (0.0 < a < 1.0):
        raise ValueError(f"normal_quantile: probability must be in (0,1), got {a}")
    return float(_sp.ndtri(a))


def chi_pdf(r, q: int):
    """Density of the chi distribution with ``q >= 2`` degrees of freedom.

    If R follows this law then R**2 is central chi-square with q degrees
    of freedom.  Zero for r <= 0; underflows gracefully far in the tail.
    """
    if q < 2:
        raise ValueError(f"chi_pdf: q must be >= 2, got {q}")
    r = np.asarray(r, dtype=float)
    # log normalising constant: -(q/2 - 1) log 2 - log Gamma(q/2)
    log_norm = -(0.5 * q - 1.0) * math.log(2.0) - math.lgamma(0.5 * q)
    with np.errstate(divide="ignore", invalid="ignore"):
        logpdf = (q - 1) * np.log(r) - 0.5 * r * r + log_norm
        out = np.where(r > 0.0, np.exp(logpdf), 0.0)
    return float(out) if out.ndim == 0 else out


def chisq_cdf(x, q: float):
    """Central chi-square CDF (regularized lower incomplete gamma)."""
    if q <= 0:
        raise ValueError(f"chisq_cdf: q must be positive, got {q}")
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0.0, _sp.gammainc(0.5 * q, 0.5 * np.maximum(x, 0.0)), 0.0)
    return float(out) if out.ndim == 0 else out


def chisq_quantile(a: float, q: int) -> float:
    """Inverse central chi-square CDF for probability ``a`` in (0, 1)."""
    if not (0.0 < a < 1.0):
        raise ValueError(f"chisq_quantile: probability must be in (0,1), got {a}")
    if q < 1:
        raise ValueError(f"chisq_quantile: q must be >= 1, got {q}")
    return float(2.0 * _sp.gammaincinv(0.5 * q, a))


def noncentral_chisq_cdf(x: float, q: int, ncp: float) -> float:
    """Noncentral chi-square CDF via a Poisson mixture of central CDFs.

    The distribution of ``||Z||**2`` for ``Z ~ N(mu, I_q)`` with
    ``ncp = ||mu||**2``.  Computed as

        sum_j  Poisson(j; ncp/2) * ChiSqCDF(x; q + 2j)

    with the summation window chosen so the discarded Poisson mass is
    below 1e-14; since every central CDF term lies in [0, 1], the
    truncation error is bounded by that mass.
    """
    if ncp < 0.0:
        raise ValueError(f"noncentral_chisq_cdf: ncp must be >= 0, got {ncp}")
    if q < 1:
        raise ValueError(f"noncentral_chisq_cdf: q must be >= 1, got {q}")
    if x <= 0.0:
        return 0.0
    m = 0.5 * ncp
    if m == 0.0:
        return chisq_cdf(x, q)
    # Window around the Poisson mode wide enough that both tails are
    # far below _NCX2_TAIL (Chernoff bound: 10+ sigma).
    half_width = 10.0 * math.sqrt(m) + 25.0
    j_lo = max(0, int(math.floor(m - half_width)))
    j_hi = int(math.ceil(m + half_width))
    j = np.arange(j_lo, j_hi + 1)
    log_w = j * math.log(m) - m - _sp.gammaln(j + 1.0)
    w = np.exp(log_w)
    terms = _sp.gammainc(0.5 * q + j, 0.5 * x)
    return float(min(1.0, np.dot(w, terms)))


def beta_function(a: float, b: float) -> float:
    """Euler beta function B(a, b) for positive arguments."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"beta_function: arguments must be positive, got ({a}, {b})")
    return math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))


def sphere_angle1_pdf(t, q: int):
    """Density of the first normalized spherical angle of a uniform unit q-vector.

    With U uniform on the unit sphere in R^q (q >= 2), the first angular
    coordinate of the spherical parameterization, rescaled to [0, 1],
    has density  pi * sin(pi t)**(q-2) / B(1/2, (q-1)/2).  For q = 2 the
    density is identically 1.
    """
    if q < 2:
        raise ValueError(f"sphere_angle1_pdf: q must be >= 2, got {q}")
    t = np.asarray(t, dtype=float)
    norm = math.pi / beta_function(0.5, 0.5 * (q - 1))
    inside = (t >= 0.0) & (t <= 1.0)
    out = np.where(inside, norm * np.sin(math.pi * t) ** (q - 2), 0.0)
    return float(out) if out.ndim == 0 else out


def sphere_angle2_pdf(t, q: int):
    """Density of the second normalized spherical angle, defined for q > 2.

    Equals  pi * sin(pi t)**(q-3) / B(1/2, (q-2)/2)  on [0, 1]; for
    q = 3 this is identically 1.
    """
    if q <= 2:
        raise ValueError(f"sphere_angle2_pdf: q must be > 2, got {q}")
    t = np.asarray(t, dtype=float)
    norm = math.pi / beta_function(0.5, 0.5 * (q - 2))
    inside = (t >= 0.0) & (t <= 1.0)
    out = np.where(inside, norm * np.sin(math.pi * t) ** (q - 3), 0.0)
    return float(out) if out.ndim == 0 else out
