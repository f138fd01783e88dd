import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lscp.distributions import chi_pdf, chisq_quantile, sphere_angle1_pdf, sphere_angle2_pdf
from lscp.quadrature import QuadratureError, QuadratureSpec, integrate_1d, integrate_nested


class TestSpec:
    def test_defaults(self):
        spec = QuadratureSpec()
        assert spec.nodes_per_axis == 64
        assert spec.abs_tol == 1e-8

    def test_validation(self):
        with pytest.raises(ValueError):
            QuadratureSpec(nodes_per_axis=4)
        with pytest.raises(ValueError):
            QuadratureSpec(abs_tol=0.0)


class TestIntegrate1d:
    def test_constant(self):
        assert integrate_1d(lambda t: np.ones_like(t), 0.0, 1.0).value == pytest.approx(1.0, abs=1e-14)

    def test_zero_width(self):
        res = integrate_1d(lambda t: t, 2.0, 2.0)
        assert res.value == 0.0 and res.converged

    def test_chi_pdf_normalization(self):
        upper = math.sqrt(chisq_quantile(1.0 - 1e-12, 2))
        res = integrate_1d(lambda r: chi_pdf(r, 2), 0.0, upper)
        assert res.value == pytest.approx(1.0, abs=1e-8)

    def test_angle_density_normalization_q3(self):
        res = integrate_1d(lambda t: sphere_angle1_pdf(t, 3), 0.0, 1.0)
        assert res.value == pytest.approx(1.0, abs=1e-8)

    def test_nonfinite_integrand_reports_abscissa(self):
        def f(t):
            return np.where(t > 0.5, np.inf, 1.0)

        with pytest.raises(QuadratureError) as err:
            integrate_1d(f, 0.0, 1.0)
        assert err.value.abscissa[0] > 0.5

    def test_nonconvergence_flagged(self):
        # A step function cannot converge under node doubling at 1e-12.
        spec = QuadratureSpec(nodes_per_axis=8, abs_tol=1e-12, max_refinements=2)
        res = integrate_1d(lambda t: np.where(t > math.pi / 7.0, 1.0, 0.0), 0.0, 1.0, spec)
        assert not res.converged
        assert res.last_change > 1e-12

    def test_gauss_exactness_degree_2n_minus_1(self):
        # An 8-node rule integrates degree-15 polynomials exactly.
        rng = np.random.default_rng(7)
        coeffs = rng.uniform(-1.0, 1.0, 16)
        exact = sum(c / (k + 1) for k, c in enumerate(coeffs))  # over [0, 1]
        spec = QuadratureSpec(nodes_per_axis=8, abs_tol=1e-9, max_refinements=1)
        res = integrate_1d(lambda t: np.polynomial.polynomial.polyval(t, coeffs), 0.0, 1.0, spec)
        assert res.value == pytest.approx(exact, abs=1e-12)

    @given(st.floats(min_value=-3.0, max_value=3.0), st.floats(min_value=-3.0, max_value=3.0))
    @settings(max_examples=50, deadline=None)
    def test_linearity(self, a, b):
        f = lambda t: np.sin(3.0 * t)
        g = lambda t: t**3 - t
        combined = integrate_1d(lambda t: a * f(t) + b * g(t), 0.0, 2.0).value
        separate = a * integrate_1d(f, 0.0, 2.0).value + b * integrate_1d(g, 0.0, 2.0).value
        assert combined == pytest.approx(separate, abs=1e-8)

    def test_refinement_shrinks_change(self):
        # On a smooth integrand the estimate change decays across refinements.
        spec_coarse = QuadratureSpec(nodes_per_axis=8, abs_tol=1e-30, max_refinements=1)
        spec_fine = QuadratureSpec(nodes_per_axis=16, abs_tol=1e-30, max_refinements=1)
        f = lambda t: np.exp(np.sin(5.0 * t))
        coarse = integrate_1d(f, 0.0, 3.0, spec_coarse)
        fine = integrate_1d(f, 0.0, 3.0, spec_fine)
        assert fine.last_change <= coarse.last_change


class TestIntegrateNested:
    def test_constant_2d(self):
        res = integrate_nested(lambda x, y: np.ones(np.broadcast_shapes(x.shape, y.shape)), [(0.0, 1.0), (0.0, 1.0)])
        assert res.value == pytest.approx(1.0, abs=1e-13)

    def test_empty_inner_sentinel(self):
        res = integrate_nested(lambda x, y: np.ones_like(x * y), [(0.0, 1.0), lambda x: None])
        assert res.value == 0.0

    def test_empty_cells_by_inverted_bounds(self):
        # hi <= lo cells contribute exactly zero.
        def bounds(x):
            return np.ones_like(x), np.where(x < 0.5, 2.0, 0.0)

        res = integrate_nested(lambda x, y: np.ones_like(x * y), [(0.0, 1.0), bounds])
        assert res.value == pytest.approx(0.5, abs=1e-10)

    def test_angle_density_product_q5(self):
        res = integrate_nested(
            lambda t1, t2: sphere_angle1_pdf(t1, 5) * sphere_angle2_pdf(t2, 5),
            [(0.0, 1.0), (0.0, 1.0)],
        )
        assert res.value == pytest.approx(1.0, abs=1e-7)

    def test_three_axes_with_variable_inner(self):
        # Volume of {0<=x<=1, 0<=y<=1, 0<=z<=x}: 1/2.
        res = integrate_nested(
            lambda x, y, z: np.ones(np.broadcast_shapes(x.shape, y.shape, z.shape)),
            [(0.0, 1.0), (0.0, 1.0), lambda x, y: (np.zeros_like(x * y), x * np.ones_like(y))],
        )
        assert res.value == pytest.approx(0.5, abs=1e-12)

    def test_variable_bounds_polynomial(self):
        # int_0^1 int_0^{x^2} x y dy dx = int_0^1 x^5/2 dx = 1/12.
        res = integrate_nested(
            lambda x, y: x * y,
            [(0.0, 1.0), lambda x: (np.zeros_like(x), x * x)],
        )
        assert res.value == pytest.approx(1.0 / 12.0, abs=1e-12)

    def test_axis_count_validation(self):
        with pytest.raises(ValueError):
            integrate_nested(lambda x: x, [(0.0, 1.0)])

    def test_outer_axis_must_be_constant(self):
        with pytest.raises(ValueError):
            integrate_nested(lambda x, y: x * y, [lambda: (0.0, 1.0), (0.0, 1.0)])

    def test_blocked_evaluation_matches_unblocked(self, monkeypatch):
        import lscp.quadrature as qmod

        f = lambda x, y: np.exp(-x * y) * np.sin(x + y)
        axes = [(0.0, 2.0), lambda x: (np.zeros_like(x), 1.0 + 0.5 * np.sin(x))]
        full = integrate_nested(f, axes)
        monkeypatch.setattr(qmod, "_BLOCK_ELEMENTS", 128)
        blocked = integrate_nested(f, axes)
        assert blocked.value == full.value  # identical fixed-order reduction
