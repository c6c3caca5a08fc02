"""Tests for rate fitting, experiment runners, provenance and config errors."""

import json
import math

import numpy as np
import pytest

from src.experiments import registered, run_experiment
from src.experiments.fitting import fit_rate, mean_and_se, root_mean_and_se
from src.experiments.rates import expected_gaussian_l4
from src.experiments.registry import on_experiment
from src.mfglab.exceptions import ConfigError
from src.mfglab.model_lq import InitialLaw, ModelParams, drift_rate_nash
from src.mfglab.models import (
    ComparisonReport,
    ConcentrationReport,
    DriftArbitrationReport,
    LadderRung,
    RateReport,
    load_experiment_config,
)
from src.utils.output import config_hash, output_paths, seed_hash, write_outputs

from .conftest import experiment_dict


def _ladder(ns, statistics, errors):
    return [LadderRung(n=n, statistic=s, standard_error=e) for n, s, e in zip(ns, statistics, errors)]


class TestFitting:
    def test_weighted_fit_recovers_slope(self):
        ns = np.array([10, 20, 40, 80])
        stats = 2.0 * ns**-0.5
        fit = fit_rate(_ladder(ns, stats, 0.01 * stats))
        assert fit.slope == pytest.approx(-0.5, abs=1e-10)
        assert fit.slope_se > 0.0
        assert not fit.degenerate

    def test_exact_ladder_uses_ordinary_fit(self):
        ns = np.array([10, 100, 1000])
        fit = fit_rate(_ladder(ns, 1.0 / ns, [0.0, 0.0, 0.0]))
        assert fit.slope == pytest.approx(-1.0, abs=1e-12)

    def test_all_zero_ladder_is_degenerate(self):
        fit = fit_rate(_ladder([8, 16], [0.0, 0.0], [0.0, 0.0]))
        assert fit.degenerate
        assert fit.slope is None

    def test_noisy_rungs_are_dropped(self):
        fit = fit_rate(_ladder([8, 16, 32], [1.0, 0.5, 0.01], [0.01, 0.01, 0.01]))
        assert fit.dropped == [32]
        assert fit.slope == pytest.approx(-1.0, abs=1e-10)

    def test_too_few_rungs(self):
        fit = fit_rate(_ladder([8, 16], [1.0, 0.001], [0.01, 0.01]))
        assert fit.slope is None
        assert not fit.degenerate

    def test_mean_and_root_mean(self):
        assert mean_and_se(np.array([1.0, 3.0])) == pytest.approx((2.0, 1.0))
        assert root_mean_and_se(np.full(10, 16.0), 4.0) == pytest.approx((2.0, 0.0))
        assert root_mean_and_se(np.zeros(5), 4.0) == (0.0, 0.0)


class TestRegistry:
    def test_every_experiment_is_registered(self):
        assert set(registered()) == {
            "lln_rate",
            "coupling_rate",
            "hat_rate",
            "l4_rate",
            "clt",
            "concentration",
            "drift_arbitration",
        }

    def test_duplicate_registration(self):
        with pytest.raises(ConfigError):
            on_experiment("clt")(lambda cfg: None)


class TestRateExperiments:
    def test_coupling_rate_passes(self):
        cfg = load_experiment_config(
            experiment_dict("coupling_rate", n_ladder=[100, 1000, 10000], M=1, dt_steps=1000)
        )
        report = run_experiment(cfg)
        assert isinstance(report, RateReport)
        assert report.passed
        assert report.fitted_slope == pytest.approx(-1.0, abs=0.1)
        assert all(rung.standard_error == 0.0 for rung in report.ladder)

    def test_coupling_rate_needs_two_players(self):
        cfg = load_experiment_config(experiment_dict("coupling_rate", n_ladder=[1, 10], M=1))
        with pytest.raises(ConfigError):
            run_experiment(cfg)

    def test_quiet_lln_is_degenerate(self):
        params = ModelParams.baseline(
            sigma=0.0, sigma0=0.0, mu0=InitialLaw(kind="point", mean=0.0, var=0.0)
        )
        cfg = load_experiment_config(
            experiment_dict("lln_rate", params=params.model_dump(mode="json", by_alias=True))
        )
        report = run_experiment(cfg)
        assert report.degenerate
        assert report.passed
        assert all(rung.statistic == 0.0 for rung in report.ladder)

    def test_small_lln_run(self):
        report = run_experiment(load_experiment_config(experiment_dict("lln_rate")))
        assert [rung.n for rung in report.ladder] == [8, 16, 32]
        assert all(rung.statistic > 0.0 for rung in report.ladder)
        assert report.expected_slope == -2.0
        assert report.ladder[0].statistic > report.ladder[-1].statistic

    def test_small_hat_run(self):
        report = run_experiment(load_experiment_config(experiment_dict("hat_rate")))
        assert report.expected_slope == -0.5
        assert all(rung.statistic > 0.0 for rung in report.ladder)

    def test_small_l4_run(self):
        report = run_experiment(
            load_experiment_config(experiment_dict("l4_rate", n_ladder=[10, 40, 160], M=400))
        )
        assert report.expected_slope == -0.5
        assert [check.name for check in report.checks] == [
            "gaussian_mean_fourth_moment_n10",
            "gaussian_mean_fourth_moment_n160",
        ]
        assert report.fitted_slope == pytest.approx(-0.5, abs=0.2)

    def test_gaussian_l4_reference(self):
        assert expected_gaussian_l4(1.0, 1) == pytest.approx(3.0**0.25)
        assert expected_gaussian_l4(0.5, 16) ** 4 == pytest.approx(3.0 * 0.25 / 256.0)

    def test_unknown_functional(self):
        cfg = load_experiment_config(experiment_dict("l4_rate", functional="median"))
        with pytest.raises(ConfigError):
            run_experiment(cfg)


class TestDistributionExperiments:
    def test_small_clt_run(self):
        cfg = load_experiment_config(
            experiment_dict("clt", n_ladder=[20], M=200, dt_steps=20, degrees=[1, 2])
        )
        report = run_experiment(cfg)
        assert isinstance(report, ComparisonReport)
        assert len(report.rows) == 4
        assert report.n_empirical == report.n_oracle == 200
        assert report.negative_control is not None
        assert report.negative_control.convention == "printed"
        names = [check.name for check in report.checks]
        assert names[0] == "constant_field_zero"
        assert report.checks[0].passed
        assert "identity_variance_t0.5" in names
        assert "negative_control_rejected" in names
        control_check = next(check for check in report.checks if check.name == "negative_control_rejected")
        assert control_check.observed == report.negative_control.row(1.0, 2).var_rel_err
        assert control_check.passed == report.negative_control.marginal_rejected(1.0, 2)

    def test_clt_without_degree_two_skips_the_control(self):
        cfg = load_experiment_config(
            experiment_dict("clt", n_ladder=[10], M=200, dt_steps=20, degrees=[1])
        )
        report = run_experiment(cfg)
        assert report.negative_control is None

    def test_small_concentration_run(self):
        cfg = load_experiment_config(experiment_dict("concentration", n_ladder=[16], M=200))
        report = run_experiment(cfg)
        assert isinstance(report, ConcentrationReport)
        assert report.monotone
        assert report.curve[0].a <= report.curve[-1].a
        assert any(point.in_fit for point in report.curve)

    def test_small_drift_arbitration_run(self):
        cfg = load_experiment_config(experiment_dict("drift_arbitration", n_ladder=[16], M=200))
        report = run_experiment(cfg)
        assert isinstance(report, DriftArbitrationReport)
        assert report.expected == [4.0, -2.0]
        assert report.printed_expected == [-4.0, 2.0]
        assert len(report.coefficients) == 2
        assert all(np.isfinite(report.coefficients))
        assert report.reference_time == pytest.approx(0.5)
        # mbar_t = sigma0 W_t at baseline, so its root mean square is sigma0 sqrt(t)
        assert report.reference_mean_rms == pytest.approx(0.3 * math.sqrt(0.5), rel=0.25)
        c_ref = drift_rate_nash(0.5, 16, ModelParams.baseline())
        assert report.scaled_coefficients[0] == pytest.approx(report.coefficients[0] * c_ref * report.reference_mean_rms)
        assert report.scaled_coefficients[1] == pytest.approx(report.coefficients[1] * c_ref)


class TestProvenanceAndOutput:
    def test_provenance_fields(self):
        cfg = load_experiment_config(experiment_dict("coupling_rate", M=1))
        report = run_experiment(cfg, seed=5)
        assert report.seed == 5
        assert report.experiment == "coupling_rate"
        assert report.config_hash == config_hash(cfg.model_copy(update={"base_seed": 5}))
        assert report.code_version.startswith("mfglab ")
        dumped = json.loads(report.model_dump_json(by_alias=True))
        assert dumped["schema"] == 1
        assert "pass" in dumped

    def test_hash_ignores_threads_and_output(self):
        cfg = load_experiment_config(experiment_dict("lln_rate"))
        other = cfg.model_copy(update={"threads": 4, "output_dir": "elsewhere"})
        assert config_hash(cfg) == config_hash(other)
        assert config_hash(cfg) != config_hash(cfg.model_copy(update={"base_seed": 12}))

    def test_output_names(self, tmp_path):
        cfg = load_experiment_config(experiment_dict("lln_rate"))
        csv_path, json_path = output_paths(cfg, tmp_path)
        assert csv_path.name == f"lln_rate_{seed_hash(cfg)}.csv"
        assert json_path.suffix == ".json"
        assert len(seed_hash(cfg)) == 12

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = load_experiment_config(experiment_dict("lln_rate"))
        first = write_outputs(run_experiment(cfg), cfg, tmp_path / "a")
        second = write_outputs(run_experiment(cfg), cfg, tmp_path / "b")
        for left, right in zip(first, second):
            assert left.read_bytes() == right.read_bytes()

    def test_worker_count_does_not_change_results(self, tmp_path):
        cfg = load_experiment_config(experiment_dict("lln_rate"))
        serial = write_outputs(run_experiment(cfg, threads=1), cfg, tmp_path / "serial")
        parallel = write_outputs(run_experiment(cfg, threads=2), cfg, tmp_path / "parallel")
        assert serial[0].read_bytes() == parallel[0].read_bytes()


class TestConfigErrors:
    def test_decreasing_ladder(self):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(experiment_dict("lln_rate", n_ladder=[16, 8]))
        assert info.value.context["field"] == "n_ladder"

    def test_too_few_replications(self):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(experiment_dict("clt", M=50))
        assert "200" in str(info.value)

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(experiment_dict("lln_rate", bogus=1))
        assert info.value.context["field"] == "bogus"

    def test_parameter_domain(self):
        params = ModelParams.baseline().model_dump(mode="json", by_alias=True)
        params.update(q=2.0, eps=1.0)
        with pytest.raises(ConfigError) as info:
            load_experiment_config(experiment_dict("lln_rate", params=params))
        assert info.value.context["field"] == "params"

    def test_times_outside_horizon(self):
        with pytest.raises(ConfigError):
            load_experiment_config(experiment_dict("clt", M=200, times=[0.5, 2.0]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(tmp_path / "absent.json")
        assert info.value.context["field"] == "<file>"

    def test_alias_and_field_name(self):
        by_alias = load_experiment_config(experiment_dict("lln_rate"))
        data = experiment_dict("lln_rate")
        data["replications"] = data.pop("M")
        assert load_experiment_config(data) == by_alias
