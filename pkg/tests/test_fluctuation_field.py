"""Tests for test functions, fluctuation values and weighted Sobolev norms."""

import math

import numpy as np
import pandas as pd
import pytest
from numpy.polynomial import Polynomial
from scipy.integrate import quad

from src.mfglab.exceptions import (
    DimensionMismatchError,
    ParameterDomainError,
    TruncationDomainError,
    UnsupportedError,
)
from src.mfglab.fluctuation_field import (
    SobolevGridFn,
    bump,
    dilate,
    dump_fluctuations_csv,
    expect_under,
    fluctuation_values,
    from_polynomial,
    hermite,
    lambda_d,
    make_test_suite,
    monomial,
    sobolev_norm,
    sobolev_weight,
)
from src.mfglab.model_lq import GaussianMixtureLaw
from src.mfglab.particle_systems import simulate_mkv_proxy
from src.mfglab.stochastic_kernel import make_bundle

STANDARD_NORMAL = GaussianMixtureLaw(np.array([1.0]), np.array([0.0]), np.array([1.0]))


class TestFunctions:
    def test_monomial(self):
        phi = monomial(3)
        assert phi.fn(np.array([2.0]))[0] == pytest.approx(8.0)
        assert phi.d1(np.array([2.0]))[0] == pytest.approx(12.0)
        assert phi.d2(np.array([2.0]))[0] == pytest.approx(12.0)
        np.testing.assert_allclose(phi.coefficients, [0.0, 0.0, 0.0, 1.0])

    def test_hermite(self):
        phi = hermite(3)
        assert phi.fn(np.array([2.0]))[0] == pytest.approx(2.0)
        assert phi.d1(np.array([2.0]))[0] == pytest.approx(9.0)
        np.testing.assert_allclose(phi.coefficients, [0.0, -3.0, 0.0, 1.0])

    def test_bump_support_and_derivatives(self):
        phi = bump(0.5, 1.0)
        assert phi.support() == (-0.5, 1.5)
        np.testing.assert_array_equal(phi.fn(np.array([-0.5, 1.5, 3.0])), np.zeros(3))
        assert phi.fn(np.array([0.5]))[0] == pytest.approx(math.exp(-1.0))
        assert phi.check_derivatives() < 1e-6
        assert not phi.is_polynomial

    def test_dilate_polynomial(self):
        phi = dilate(monomial(2), 2.0)
        assert phi.fn(np.array([1.5]))[0] == pytest.approx(9.0)
        assert phi.d1(np.array([1.5]))[0] == pytest.approx(12.0)
        np.testing.assert_allclose(phi.coefficients, [0.0, 0.0, 4.0])

    def test_dilate_bump(self):
        phi = dilate(bump(1.0, 1.0), 2.0)
        assert phi.support() == (0.0, 1.0)
        assert phi.check_derivatives() < 1e-5

    def test_suites(self):
        assert [phi.label for phi in make_test_suite("monomial", 2)] == ["x^0", "x^1", "x^2"]
        bumps = make_test_suite("bump", 4)
        assert [phi.center for phi in bumps] == [-2.0, -1.0, 0.0, 1.0, 2.0]
        with pytest.raises(UnsupportedError):
            make_test_suite("spline", 2)
        with pytest.raises(UnsupportedError):
            make_test_suite("hermite", 7)


class TestExpectations:
    def test_polynomial_expectations_are_exact(self):
        assert expect_under(STANDARD_NORMAL, monomial(4)) == pytest.approx(3.0, rel=1e-14)
        assert expect_under(STANDARD_NORMAL, hermite(4)) == pytest.approx(0.0, abs=1e-13)

    def test_bump_matches_adaptive_quadrature(self):
        phi = bump(0.3, 0.8)
        reference, _ = quad(
            lambda x: float(phi.fn(np.array([x]))[0])
            * math.exp(-0.5 * x * x)
            / math.sqrt(2.0 * math.pi),
            -0.5,
            1.1,
            epsabs=1e-12,
        )
        assert expect_under(STANDARD_NORMAL, phi) == pytest.approx(reference, abs=1e-7)


class TestFluctuationValues:
    def test_constant_test_function_has_no_fluctuation(self, baseline, small_grid):
        bundle = make_bundle(3, 0, small_grid, 16)
        paths = simulate_mkv_proxy(baseline, 16, bundle)
        sample = fluctuation_values(
            paths, bundle.w_path, make_test_suite("monomial", 2), [0.5, 1.0], baseline
        )
        assert sample.values.shape == (2, 3)
        np.testing.assert_allclose(sample.values[:, 0], 0.0, atol=1e-12)
        assert np.all(np.isfinite(sample.values))
        assert sample.labels == ["x^0", "x^1", "x^2"]
        assert sample.n == 16

    def test_field_is_linear_in_the_test_function(self, baseline, small_grid):
        bundle = make_bundle(4, 0, small_grid, 24)
        paths = simulate_mkv_proxy(baseline, 24, bundle)
        combined = from_polynomial(2.0 * Polynomial.basis(1) - 3.0 * Polynomial.basis(3), label="combo")
        testfns = [monomial(1), monomial(3), combined, monomial(2), hermite(2)]
        sample = fluctuation_values(paths, bundle.w_path, testfns, [0.5, 1.0], baseline)
        x1, x3, combo, x2, he2 = sample.values.T
        np.testing.assert_allclose(combo, 2.0 * x1 - 3.0 * x3, rtol=1e-10, atol=1e-10)
        # He_2 = x^2 - 1 and the constant carries no fluctuation
        np.testing.assert_allclose(he2, x2, rtol=1e-10, atol=1e-10)

    def test_wrong_common_path(self, baseline, small_grid):
        bundle = make_bundle(3, 0, small_grid, 4)
        paths = simulate_mkv_proxy(baseline, 4, bundle)
        with pytest.raises(DimensionMismatchError):
            fluctuation_values(paths, bundle.w_path[:-1], [monomial(1)], [1.0], baseline)

    def test_off_grid_time(self, baseline, small_grid):
        bundle = make_bundle(3, 0, small_grid, 4)
        paths = simulate_mkv_proxy(baseline, 4, bundle)
        with pytest.raises(DimensionMismatchError):
            fluctuation_values(paths, bundle.w_path, [monomial(1)], [0.333], baseline)

    def test_dump_csv(self, baseline, small_grid, tmp_path):
        samples = []
        for rep in range(2):
            bundle = make_bundle(5, rep, small_grid, 8)
            paths = simulate_mkv_proxy(baseline, 8, bundle)
            samples.append(
                fluctuation_values(paths, bundle.w_path, [monomial(1), monomial(2)], [0.5, 1.0], baseline)
            )
        path = tmp_path / "fluct.csv"
        dump_fluctuations_csv(samples, path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["replication", "time", "testfn_label", "value"]
        assert len(frame) == 8
        assert sorted(frame["replication"].unique()) == [0, 1]


class TestSobolev:
    def test_lambda_d(self):
        assert [lambda_d(d) for d in (1, 2, 3, 4)] == [1, 2, 2, 3]
        with pytest.raises(UnsupportedError):
            lambda_d(0)

    def test_gaussian_density_norms(self):
        g = SobolevGridFn.from_callable(
            lambda x: np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi), half_width=10.0, spacing=0.005
        )
        assert sobolev_norm(g, 0, 0.0) == pytest.approx((4.0 * math.pi) ** -0.25, abs=1e-4)
        assert sobolev_norm(g, 0, 0.0) == pytest.approx(0.5311, abs=1e-4)
        assert sobolev_norm(g, 1, 0.0) == pytest.approx(math.sqrt(0.75 / math.sqrt(math.pi)), rel=1e-5)

    def test_grid_refinement(self):
        def density(x):
            return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)

        coarse = SobolevGridFn.from_callable(density, half_width=10.0, spacing=0.01)
        fine = SobolevGridFn.from_callable(density, half_width=10.0, spacing=0.005)
        assert abs(sobolev_norm(coarse, 1, 1.0) - sobolev_norm(fine, 1, 1.0)) < 5e-5

    def test_weight_shrinks_the_norm(self):
        g = SobolevGridFn.from_callable(lambda x: np.exp(-0.5 * (x - 4.0) ** 2), half_width=10.0, spacing=0.01)
        assert sobolev_norm(g, 1, 2.0) < sobolev_norm(g, 1, 0.5)

    def test_norm_is_monotone_for_mass_near_zero(self):
        g = SobolevGridFn.from_callable(lambda x: np.exp(-50.0 * x * x), half_width=5.0, spacing=0.001)
        norms = [sobolev_norm(g, j, alpha) for j in (0, 1) for alpha in (0.0, 0.5, 1.0, 2.0)]
        assert norms[0] >= norms[1] >= norms[2] >= norms[3]
        assert norms[4] >= norms[5] >= norms[6] >= norms[7]

    def test_weight_is_equivalent_to_the_polynomial_form(self):
        x = np.linspace(-50.0, 50.0, 2001)
        for alpha in (0.25, 0.5, 1.0, 2.0, 3.0):
            ratio = sobolev_weight(x, alpha) * (1.0 + np.abs(x) ** (2.0 * alpha))
            low, high = sorted((1.0, 2.0 ** (1.0 - alpha)))
            assert np.all(ratio >= low * (1.0 - 1e-12))
            assert np.all(ratio <= high * (1.0 + 1e-12))
        np.testing.assert_array_equal(sobolev_weight(x, 0.0), np.ones_like(x))

    def test_negative_exponent(self):
        g = SobolevGridFn.from_callable(lambda x: np.exp(-x * x), half_width=8.0, spacing=0.1)
        with pytest.raises(ParameterDomainError):
            sobolev_norm(g, 0, -1.0)
        with pytest.raises(ParameterDomainError):
            sobolev_norm(g, 0, float("nan"))

    def test_zero_function(self):
        g = SobolevGridFn.from_callable(np.zeros_like, half_width=5.0, spacing=0.1)
        assert sobolev_norm(g, 2, 1.0) == 0.0

    def test_truncation_error(self):
        g = SobolevGridFn.from_callable(lambda x: 1.0 / (1.0 + x * x), half_width=5.0, spacing=0.01)
        with pytest.raises(TruncationDomainError):
            sobolev_norm(g, 0, 1.0)

    def test_invalid_grids(self):
        with pytest.raises(DimensionMismatchError):
            SobolevGridFn(np.linspace(0.0, 1.0, 11), np.zeros(11))
        g = SobolevGridFn.from_callable(lambda x: np.exp(-x * x), half_width=8.0, spacing=0.1)
        with pytest.raises(UnsupportedError):
            sobolev_norm(g, 5, 1.0)
