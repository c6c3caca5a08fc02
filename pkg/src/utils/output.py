"""Output naming, provenance and report emission."""

import hashlib
import logging
from pathlib import Path
from typing import Tuple, Union

import pandas as pd

from ..mfglab import __version__
from ..mfglab.models import (
    REPORT_SCHEMA,
    ComparisonReport,
    ConcentrationReport,
    DriftArbitrationReport,
    ExperimentConfig,
    RateReport,
)

logger = logging.getLogger(__name__)

Report = Union[RateReport, ComparisonReport, ConcentrationReport, DriftArbitrationReport]


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical config JSON."""
    return hashlib.sha256(cfg.canonical_json().encode("utf-8")).hexdigest()


def seed_hash(cfg: ExperimentConfig) -> str:
    """Short tag naming the output files of one (config, seed) pair."""
    digest = hashlib.sha256(f"{cfg.base_seed}:{config_hash(cfg)}".encode("utf-8"))
    return digest.hexdigest()[:12]


def code_version() -> str:
    return f"mfglab {__version__}"


def output_paths(cfg: ExperimentConfig, out_dir: Union[str, Path, None] = None) -> Tuple[Path, Path]:
    """<out>/<experiment>_<seedhash>.csv and .json."""
    directory = Path(out_dir) if out_dir is not None else cfg.output_dir
    stem = f"{cfg.experiment}_{seed_hash(cfg)}"
    return directory / f"{stem}.csv", directory / f"{stem}.json"


def report_table(report: Report) -> pd.DataFrame:
    """Tabular view of a report for the CSV contract."""
    if isinstance(report, RateReport):
        frame = pd.DataFrame(
            [
                {
                    "n": rung.n,
                    "statistic": rung.statistic,
                    "standard_error": rung.standard_error,
                    "dropped": rung.n in report.dropped,
                }
                for rung in report.ladder
            ],
            columns=["n", "statistic", "standard_error", "dropped"],
        )
    elif isinstance(report, ComparisonReport):
        frame = pd.DataFrame(
            [row.model_dump() for row in report.rows],
            columns=["time", "degree", "mean_diff", "mean_se", "cov_rel_err", "var_rel_err", "ks_stat", "ks_p"],
        )
    elif isinstance(report, ConcentrationReport):
        frame = pd.DataFrame(
            [point.model_dump() for point in report.curve],
            columns=["a", "tail", "log_tail", "in_fit"],
        )
    else:
        frame = pd.DataFrame(
            {
                "regressor": ["c_mean_s1", "c_s2"],
                "coefficient": report.coefficients,
                "standard_error": report.standard_errors,
                "expected": report.expected,
                "printed_expected": report.printed_expected,
            }
        )
    frame.insert(0, "schema", REPORT_SCHEMA)
    return frame


def write_outputs(report: Report, cfg: ExperimentConfig, out_dir: Union[str, Path, None] = None) -> Tuple[Path, Path]:
    """Write the CSV table and the JSON report; returns both paths."""
    csv_path, json_path = output_paths(cfg, out_dir)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    report_table(report).to_csv(csv_path, index=False, float_format="%.17g")
    json_path.write_text(report.model_dump_json(by_alias=True, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote %s and %s", csv_path, json_path)
    return csv_path, json_path
