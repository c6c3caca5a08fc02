"""Tests for the coupled Nash, proxy and hat particle systems."""

import math

import numpy as np
import pandas as pd
import pytest

from src.mfglab.exceptions import DimensionMismatchError, NumericError
from src.mfglab.model_lq import mu_t_explicit
from src.mfglab.particle_systems import (
    MeanFieldDrift,
    conditional_mean_path,
    dump_paths_csv,
    lq_mean_field_drift,
    simulate_coupled_triple,
    simulate_generic_mkv,
    simulate_hat,
    simulate_mkv_proxy,
    simulate_nash,
    strong_order_study,
    tanh_mean_drift,
)
from src.mfglab.stochastic_kernel import TimeGrid, make_bundle


def test_quiet_system_stays_at_the_mean(quiet_params, small_grid):
    bundle = make_bundle(1, 0, small_grid, 7)
    triple = simulate_coupled_triple(quiet_params, 7, bundle)
    for paths in triple:
        np.testing.assert_allclose(paths.states, 0.7, rtol=0.0, atol=1e-12)


def test_shared_start(baseline, small_grid):
    bundle = make_bundle(2, 0, small_grid, 9)
    triple = simulate_coupled_triple(baseline, 9, bundle)
    np.testing.assert_array_equal(triple.nash.states[0], triple.mkv.states[0])
    np.testing.assert_array_equal(triple.nash.states[0], triple.hat.states[0])
    assert triple.nash.system_tag == "nash"


def test_interaction_cancels_in_the_empirical_mean(baseline, small_grid):
    """Both interacting systems share the mean path m_0 + sigma mean(B) + sigma0 W."""
    bundle = make_bundle(3, 1, small_grid, 25)
    nash = simulate_nash(baseline, 25, bundle)
    mkv = simulate_mkv_proxy(baseline, 25, bundle)
    expected = (
        np.mean(nash.states[0])
        + baseline.sigma * np.mean(bundle.b_paths, axis=1)
        + baseline.sigma0 * bundle.w_path
    )
    np.testing.assert_allclose(nash.mean_path(), expected, atol=1e-12)
    np.testing.assert_allclose(mkv.mean_path(), expected, atol=1e-12)


def test_generic_lq_drift_reproduces_the_proxy(baseline, small_grid):
    bundle = make_bundle(4, 0, small_grid, 11)
    generic = simulate_generic_mkv(lq_mean_field_drift(baseline, small_grid), baseline, 11, bundle)
    proxy = simulate_mkv_proxy(baseline, 11, bundle)
    np.testing.assert_allclose(generic.states, proxy.states, rtol=0.0, atol=1e-13)


def test_generic_tanh_drift_runs(baseline, small_grid):
    bundle = make_bundle(4, 0, small_grid, 5)
    paths = simulate_generic_mkv(tanh_mean_drift(), baseline, 5, bundle)
    assert paths.states.shape == (small_grid.n_steps + 1, 5)
    assert np.all(np.isfinite(paths.states))


def test_steep_drift_is_rejected():
    with pytest.raises(NumericError):
        MeanFieldDrift(lambda t, x, f: 1e6 * x, ("mean",), lipschitz_bound=10.0, name="steep")


def test_unknown_feature_is_rejected():
    with pytest.raises(DimensionMismatchError):
        MeanFieldDrift(lambda t, x, f: x, ("skew",))


def test_population_must_match_bundle(baseline, small_grid):
    bundle = make_bundle(0, 0, small_grid, 4)
    with pytest.raises(DimensionMismatchError):
        simulate_nash(baseline, 5, bundle)


def test_hat_refuses_a_foreign_common_path(baseline, small_grid):
    bundle = make_bundle(0, 0, small_grid, 4)
    other = make_bundle(0, 1, small_grid, 4)
    with pytest.raises(DimensionMismatchError):
        simulate_hat(baseline, 4, bundle, other.w_path)


def test_hat_particles_ignore_each_other(baseline, small_grid):
    """A hat particle's path does not depend on the population size."""
    bundle = make_bundle(6, 0, small_grid, 10)
    full = simulate_hat(baseline, 10, bundle, bundle.w_path)
    sub = bundle.prefix(3)
    part = simulate_hat(baseline, 3, sub, sub.w_path)
    np.testing.assert_array_equal(full.states[:, :3], part.states)


def test_conditional_mean_path(baseline):
    w = np.array([0.0, 0.5, -1.0])
    np.testing.assert_allclose(conditional_mean_path(w, baseline), baseline.sigma0 * w)


def test_strong_order_is_one(baseline):
    # additive noise: Euler converges pathwise at order 1
    grid = TimeGrid(baseline.horizon, 512)
    bundle = make_bundle(8, 0, grid, 40)
    study = strong_order_study(baseline, 40, bundle, factors=(8, 16, 32))
    assert study.errors.shape == (3,)
    assert np.all(np.diff(study.errors) > 0.0)
    assert study.slope == pytest.approx(1.0, abs=0.2)


def test_hat_particles_follow_the_conditional_law(baseline):
    grid = TimeGrid(baseline.horizon, 200)
    n = 4000
    bundle = make_bundle(21, 0, grid, n)
    hat = simulate_hat(baseline, n, bundle, bundle.w_path)
    law = mu_t_explicit(baseline.horizon, bundle.w_path[-1], baseline)
    sample_var = np.var(hat.final, ddof=1)
    var_se = law.variance * math.sqrt(2.0 / (n - 1))
    # Euler bias in the variance is O(dt)
    assert abs(sample_var - law.variance) <= 4.0 * var_se + 0.02 * law.variance
    assert abs(np.mean(hat.final) - law.mean) <= 4.0 * math.sqrt(law.variance / n)


def test_hat_particles_are_uncorrelated_given_the_common_noise(baseline, small_grid):
    n = 4000
    bundle = make_bundle(22, 0, small_grid, n)
    hat = simulate_hat(baseline, n, bundle, bundle.w_path)
    # E[X^i_T | W] is the exact conditional mean for the Euler scheme too
    deviations = hat.final - conditional_mean_path(bundle.w_path, baseline)[-1]
    rho = np.corrcoef(deviations[0::2], deviations[1::2])[0, 1]
    assert abs(rho) < 4.0 / math.sqrt(n // 2)


def test_dump_paths_csv(baseline, small_grid, tmp_path):
    bundle = make_bundle(1, 0, small_grid, 3)
    triple = simulate_coupled_triple(baseline, 3, bundle)
    path = tmp_path / "paths.csv"
    dump_paths_csv(triple, path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["step", "time", "particle", "x_nash", "x_mkv", "x_hat"]
    assert len(frame) == (small_grid.n_steps + 1) * 3
    assert frame["x_nash"].iloc[-1] == pytest.approx(triple.nash.final[-1])
