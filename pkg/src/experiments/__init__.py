# Experiment runners package; importing a module registers its runners
from . import clt, concentration, rates  # noqa: F401
from .registry import on_experiment, registered, run_experiment

__all__ = ["on_experiment", "registered", "run_experiment"]
