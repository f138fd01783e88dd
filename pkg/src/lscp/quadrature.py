"""Deterministic tensor-product Gauss-Legendre quadrature.

Fixed-rule quadrature with doubling refinement: evaluate at
``nodes_per_axis`` nodes, multiply the node count by
``refinement_factor`` and repeat until two successive estimates differ
by at most ``abs_tol`` or ``max_refinements`` is exhausted (in which
case the result is returned with ``converged=False``).  Fixed rules
keep outputs bit-reproducible, which golden-file tests rely on.

Integrands must accept numpy arrays and evaluate elementwise (wrap
scalar functions with ``np.vectorize`` if needed).  Nested integration
supports inner integration bounds that depend on the outer coordinates;
an empty inner interval (``None`` or ``hi <= lo``) contributes exactly
zero.

Semi-infinite radial axes do not occur here: callers truncate them
(e.g. at the square root of an extreme chi-square quantile) before
integrating, so every axis below is a finite interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "QuadratureSpec",
    "QuadratureResult",
    "QuadratureError",
    "integrate_1d",
    "integrate_nested",
]

# Cap on elements per integrand call; larger tensors are evaluated in
# blocks along the outermost axis (fixed order, so results do not change).
_BLOCK_ELEMENTS = 1 << 22


class QuadratureError(RuntimeError):
    """Raised when an integrand returns a non-finite value.

    Carries the offending abscissa in ``abscissa``.
    """

    def __init__(self, message: str, abscissa):
        super().__init__(f"{message} at abscissa {abscissa}")
        self.abscissa = abscissa


@dataclass(frozen=True)
class QuadratureSpec:
    nodes_per_axis: int = 64
    refinement_factor: int = 2
    abs_tol: float = 1e-8
    max_refinements: int = 5

    def __post_init__(self):
        if self.nodes_per_axis < 8:
            raise ValueError(f"nodes_per_axis must be >= 8, got {self.nodes_per_axis}")
        if self.abs_tol <= 0.0:
            raise ValueError(f"abs_tol must be positive, got {self.abs_tol}")
        if self.refinement_factor < 2:
            raise ValueError("refinement_factor must be >= 2")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be >= 0")


@dataclass
class QuadratureResult:
    """Value plus convergence diagnostics of one integration."""

    value: float
    converged: bool
    refinements: int
    last_change: float
    nodes_used: int

    def __float__(self) -> float:
        return self.value


@lru_cache(maxsize=None)
def _gauss_nodes(n: int):
    """Gauss-Legendre nodes/weights on [-1, 1], cached and read-only."""
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def _check_finite(values: np.ndarray, coords) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.unravel_index(np.argmax(bad), values.shape)
        where = tuple(float(np.broadcast_to(c, values.shape)[idx]) for c in coords)
        raise QuadratureError("non-finite integrand value", where)


def integrate_1d(
    f: Callable,
    lo: float,
    hi: float,
    spec: QuadratureSpec | None = None,
) -> QuadratureResult:
    """Integrate ``f`` over [lo, hi] with refinement until ``abs_tol``."""
    spec = spec or QuadratureSpec()
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError(f"integration bounds must be finite, got [{lo}, {hi}]")
    if lo > hi:
        raise ValueError(f"lo must not exceed hi, got [{lo}, {hi}]")
    if lo == hi:
        return QuadratureResult(0.0, True, 0, 0.0, 0)

    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    n = spec.nodes_per_axis
    previous = None
    for refinement in range(spec.max_refinements + 1):
        x, w = _gauss_nodes(n)
        pts = mid + half * x
        vals = np.asarray(f(pts), dtype=float)
        vals = np.broadcast_to(vals, pts.shape)
        _check_finite(vals, (pts,))
        estimate = half * float(np.dot(w, vals))
        if previous is not None:
            change = abs(estimate - previous)
            if change <= spec.abs_tol:
                return QuadratureResult(estimate, True, refinement, change, n)
        previous = estimate
        n *= spec.refinement_factor
    n //= spec.refinement_factor
    return QuadratureResult(previous, False, spec.max_refinements, change, n)


def _resolve_bounds(bound, outer_coords, shape):
    """Normalize an axis bound into (lo, hi) arrays of ``shape``.

    ``bound`` is a constant pair or a callable of the outer coordinate
    arrays returning a pair (or ``None`` for everywhere-empty).  Cells
    with hi <= lo are treated as empty and contribute exactly 0.
    """
    if callable(bound):
        out = bound(*outer_coords)
        if out is None:
            return np.zeros(shape), np.zeros(shape)
        lo, hi = out
    else:
        lo, hi = bound
    lo = np.broadcast_to(np.asarray(lo, dtype=float), shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), shape)
    return lo, hi


def _nested_pass(f, axes, node_counts):
    """One fixed-rule tensor pass; blocks along the outermost axis."""
    lo0, hi0 = axes[0]
    x0, w0 = _gauss_nodes(node_counts[0])
    pts0 = 0.5 * (lo0 + hi0) + 0.5 * (hi0 - lo0) * x0
    wts0 = 0.5 * (hi0 - lo0) * w0

    inner_elems = int(np.prod(node_counts[1:]))
    block = max(1, _BLOCK_ELEMENTS // max(1, inner_elems))

    # Reduce each outer node's inner tensor on its own, then reduce the
    # per-node sums in one pass: the result is bit-identical no matter
    # how the outer axis is split into blocks.
    node_sums = np.empty(len(pts0))
    for start in range(0, len(pts0), block):
        stop = min(start + block, len(pts0))
        coords = [pts0[start:stop]]
        weight = wts0[start:stop].copy()
        for depth in range(1, len(axes)):
            shape = np.broadcast_shapes(*(c.shape for c in coords))
            lo, hi = _resolve_bounds(axes[depth], coords, shape)
            half = 0.5 * np.clip(hi - lo, 0.0, None)
            mid = lo + half
            xb, wb = _gauss_nodes(node_counts[depth])
            new = mid[..., None] + half[..., None] * xb
            coords = [c[..., None] for c in coords]
            coords.append(new)
            weight = weight[..., None] * (half[..., None] * wb)
        vals = np.asarray(f(*coords), dtype=float)
        vals = np.broadcast_to(vals, weight.shape)
        _check_finite(vals, coords)
        node_sums[start:stop] = np.ascontiguousarray(weight * vals).reshape(stop - start, -1).sum(axis=1)
    return float(node_sums.sum())


def integrate_nested(
    f: Callable,
    axes: Sequence,
    spec: QuadratureSpec | None = None,
) -> QuadratureResult:
    """Nested tensor Gauss-Legendre integral over 2 or 3 axes.

    ``axes`` is ordered outermost first.  The outermost axis must be a
    constant ``(lo, hi)`` pair; any later axis may instead be a callable
    of the outer coordinate arrays returning per-point ``(lo, hi)``
    arrays, or ``None`` to mark the interval empty.  ``f`` receives one
    broadcastable array per axis.
    """
    spec = spec or QuadratureSpec()
    if not (2 <= len(axes) <= 3):
        raise ValueError(f"integrate_nested supports 2 or 3 axes, got {len(axes)}")
    if callable(axes[0]):
        raise ValueError("outermost axis must have constant bounds")
    lo0, hi0 = axes[0]
    if lo0 > hi0:
        raise ValueError(f"outer axis bounds inverted: [{lo0}, {hi0}]")
    if lo0 == hi0:
        return QuadratureResult(0.0, True, 0, 0.0, 0)

    n = spec.nodes_per_axis
    previous = None
    for refinement in range(spec.max_refinements + 1):
        estimate = _nested_pass(f, axes, [n] * len(axes))
        if previous is not None:
            change = abs(estimate - previous)
            if change <= spec.abs_tol:
                return QuadratureResult(estimate, True, refinement, change, n)
        previous = estimate
        n *= spec.refinement_factor
    n //= spec.refinement_factor
    return QuadratureResult(previous, False, spec.max_refinements, change, n)
