"""Pydantic models for experiment configuration files and emitted reports."""

# pylint: disable=no-self-argument,too-few-public-methods

import json
import math
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigError, ParameterDomainError
from .model_lq import InitialLaw, ModelParams

__all__ = [
    "InitialLaw",
    "ModelParams",
    "ExperimentConfig",
    "LadderRung",
    "NamedCheck",
    "RateReport",
    "ComparisonRow",
    "ComparisonReport",
    "TailPoint",
    "ConcentrationReport",
    "DriftArbitrationReport",
    "load_experiment_config",
]

REPORT_SCHEMA = 1

RATE_EXPERIMENTS = ("lln_rate", "coupling_rate", "hat_rate", "l4_rate")
DISTRIBUTION_EXPERIMENTS = ("clt", "concentration", "drift_arbitration")

ExperimentName = Literal[
    "lln_rate",
    "coupling_rate",
    "clt",
    "l4_rate",
    "hat_rate",
    "concentration",
    "drift_arbitration",
]


class ExperimentConfig(BaseModel):
    """Model for an experiment configuration file."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    experiment: ExperimentName
    params: ModelParams = Field(default_factory=ModelParams.baseline)
    n_ladder: List[int] = Field(..., min_length=1)
    replications: int = Field(..., ge=1, alias="M")
    dt_steps: Optional[int] = Field(default=None, ge=10)
    base_seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: Path = Path("out")
    times: Optional[List[float]] = None
    degrees: List[int] = Field(default_factory=lambda: [1, 2, 3])
    functional: str = "tanh_mean"
    system: Literal["nash", "mkv"] = "nash"
    negative_control: bool = True
    threads: Optional[int] = Field(default=None, ge=1)

    @field_validator("n_ladder")
    def validate_ladder(cls, v):
        """Ladder entries are positive and strictly increasing."""
        if any(n < 1 for n in v):
            raise ValueError("ladder entries must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("n_ladder must be strictly increasing")
        return v

    @field_validator("degrees")
    def validate_degrees(cls, v):
        """Monomial degrees for the fluctuation comparison."""
        if not v or any(not 0 <= k <= 6 for k in v):
            raise ValueError("degrees must lie in [0, 6]")
        return v

    @model_validator(mode="after")
    def validate_replications(self):
        """Rate fits need M >= 50, distribution tests M >= 200."""
        minimum = 50 if self.experiment in RATE_EXPERIMENTS else 200
        if self.experiment != "coupling_rate" and self.replications < minimum:
            raise ValueError(
                f"{self.experiment} needs at least {minimum} replications, got {self.replications}"
            )
        if self.times is not None:
            if any(not 0.0 <= t <= self.params.horizon for t in self.times):
                raise ValueError("times must lie in [0, T]")
        return self

    @property
    def effective_times(self) -> List[float]:
        horizon = self.params.horizon
        return list(self.times) if self.times is not None else [horizon / 2.0, horizon]

    def canonical_json(self) -> str:
        """Sorted, alias-keyed JSON used for the config hash."""
        return json.dumps(
            self.model_dump(mode="json", by_alias=True, exclude={"threads", "output_dir"}),
            sort_keys=True,
            separators=(",", ":"),
        )


def _field_path(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "<root>"


def load_experiment_config(source: Union[str, Path, dict]) -> ExperimentConfig:
    """Parse an ExperimentConfig, mapping validation errors to ConfigError."""
    try:
        if isinstance(source, dict):
            data = source
        else:
            with open(source, "r", encoding="utf-8") as f:
                data = json.load(f)
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        path = _field_path(first)
        raise ConfigError(
            f"invalid experiment config at {path}: {first.get('msg')}",
            context={"field": path, "errors": len(e.errors())},
        ) from e
    except ParameterDomainError as e:
        raise ConfigError(str(e), context={"field": "params", **e.context}) from e
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read experiment config: {e}", context={"field": "<file>"}) from e


class Provenance(BaseModel):
    """Fields every report carries."""

    model_config = ConfigDict(populate_by_name=True)

    schema_version: int = Field(default=REPORT_SCHEMA, alias="schema")
    experiment: str = ""
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    code_version: Optional[str] = None
    threads: int = 1


class LadderRung(BaseModel):
    """One (n, statistic, standard_error) entry of a rate ladder."""

    n: int
    statistic: float
    standard_error: float


class NamedCheck(BaseModel):
    """An exact identity checked against Monte Carlo output."""

    name: str
    observed: float
    expected: float
    standard_error: float
    passed: bool


class RateReport(Provenance):
    """Model for a log-log rate fit over an n-ladder."""

    ladder: List[LadderRung]
    fitted_slope: Optional[float] = None
    slope_se: Optional[float] = None
    expected_slope: float
    tolerance: float
    passed: bool = Field(alias="pass")
    degenerate: bool = False
    dropped: List[int] = Field(default_factory=list)
    checks: List[NamedCheck] = Field(default_factory=list)


class ComparisonRow(BaseModel):
    """Per (time, degree) comparison of two fluctuation samples."""

    time: float
    degree: int
    mean_diff: float
    mean_se: float
    cov_rel_err: float
    var_rel_err: float = 0.0
    ks_stat: float
    ks_p: float


class ComparisonReport(Provenance):
    """Model for an empirical-versus-oracle distribution comparison."""

    rows: List[ComparisonRow]
    passed: bool = Field(alias="pass")
    n_empirical: int
    n_oracle: int
    cov_tolerance: float
    ks_level: float
    ks_pass_fraction: float
    convention: str = "derived"
    checks: List[NamedCheck] = Field(default_factory=list)
    negative_control: Optional["ComparisonReport"] = None

    def row(self, time: float, degree: int) -> ComparisonRow:
        for row in self.rows:
            if row.degree == degree and math.isclose(row.time, time, rel_tol=1e-12, abs_tol=1e-12):
                return row
        raise KeyError(f"no comparison row for degree {degree} at t={time}")

    def marginal_rejected(self, time: float, degree: int) -> bool:
        """One marginal fails when its variance error or its KS test fails."""
        row = self.row(time, degree)
        return row.var_rel_err > self.cov_tolerance or row.ks_p <= self.ks_level


class TailPoint(BaseModel):
    """Empirical tail probability P(W1 > a) at one threshold."""

    a: float
    tail: float
    log_tail: Optional[float] = None
    in_fit: bool = False


class ConcentrationReport(Provenance):
    """Model for the log-tail versus a^2 shape check."""

    n: int
    replications: int
    curve: List[TailPoint]
    slope: Optional[float] = None
    r_squared: Optional[float] = None
    monotone: bool
    passed: bool = Field(alias="pass")


class DriftArbitrationReport(Provenance):
    """Model for the pooled one-step regression of the degree-2 drift."""

    n: int
    replications: int
    reference_time: float
    reference_mean_rms: float = 0.0
    coefficients: List[float]
    standard_errors: List[float]
    expected: List[float]
    printed_expected: List[float]
    relative_errors: List[float]
    scaled_coefficients: List[float]
    passed: bool = Field(alias="pass")
