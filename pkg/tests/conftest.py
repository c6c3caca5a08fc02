"""Shared fixtures."""

import pytest

from src.mfglab.model_lq import InitialLaw, ModelParams
from src.mfglab.stochastic_kernel import TimeGrid


@pytest.fixture
def baseline():
    return ModelParams.baseline()


@pytest.fixture
def quiet_params():
    """No noise and a point-mass start: every system stays at the mean."""
    return ModelParams.baseline(sigma=0.0, sigma0=0.0, mu0=InitialLaw(kind="point", mean=0.7, var=0.0))


@pytest.fixture
def small_grid(baseline):
    return TimeGrid(baseline.horizon, 40)


def experiment_dict(experiment, **overrides):
    data = {
        "experiment": experiment,
        "params": ModelParams.baseline().model_dump(mode="json", by_alias=True),
        "n_ladder": [8, 16, 32],
        "M": 50,
        "dt_steps": 20,
        "base_seed": 11,
    }
    data.update(overrides)
    return data
