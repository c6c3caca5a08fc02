"""Configuration management for the mfglab fluctuation laboratory."""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_FILE = Path(__file__).resolve().parent.parent / "config" / "defaults.yaml"


class Config:
    """Configuration manager for numeric defaults and tolerances."""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file or os.getenv(
            "MFG_FLUCT_CONFIG_FILE", str(DEFAULT_CONFIG_FILE)
        )
        self._config: Dict[str, Any] = {}
        self._load_config()

    def _load_config(self) -> None:
        """Load configuration from file and environment variables."""
        defaults = self._load_yaml_config()
        env_config = self._load_env_config()
        for section, values in env_config.items():
            if isinstance(values, dict):
                defaults.setdefault(section, {}).update(values)
            else:
                defaults[section] = values
        self._config = defaults

    def _load_yaml_config(self) -> Dict[str, Any]:
        """Load configuration from YAML file."""
        try:
            config_path = Path(self.config_file)
            if config_path.exists():
                with open(config_path, "r", encoding="utf-8") as f:
                    return yaml.safe_load(f) or {}
        except (IOError, yaml.YAMLError) as e:
            logger.warning("Could not load config file %s: %s", self.config_file, e)
        return {}

    def _load_env_config(self) -> Dict[str, Any]:
        """Load configuration from environment variables."""
        env_config: Dict[str, Any] = {}

        self._load_simulation_config(env_config)
        self._load_numeric_config(env_config)

        if threads := os.getenv("MFG_FLUCT_THREADS"):
            try:
                env_config.setdefault("execution", {})["threads"] = int(threads)
            except ValueError:
                pass

        if level := os.getenv("MFG_FLUCT_LOG_LEVEL"):
            env_config.setdefault("logging", {})["level"] = level.upper()

        return env_config

    def _load_simulation_config(self, env_config: Dict[str, Any]) -> None:
        """Load time-grid overrides from environment variables."""
        if dt_steps := os.getenv("MFG_FLUCT_DT_STEPS"):
            try:
                env_config.setdefault("simulation", {})["dt_steps"] = int(dt_steps)
            except ValueError:
                pass
        if clt_dt_steps := os.getenv("MFG_FLUCT_CLT_DT_STEPS"):
            try:
                env_config.setdefault("simulation", {})["clt_dt_steps"] = int(
                    clt_dt_steps
                )
            except ValueError:
                pass

    def _load_numeric_config(self, env_config: Dict[str, Any]) -> None:
        """Load solver tolerances from environment variables."""
        if max_jitter := os.getenv("MFG_FLUCT_MAX_JITTER"):
            try:
                env_config.setdefault("covariance", {})["max_jitter"] = float(
                    max_jitter
                )
            except ValueError:
                pass
        if tolerance := os.getenv("MFG_FLUCT_QUADRATURE_TOLERANCE"):
            try:
                env_config.setdefault("quadrature", {})["tolerance"] = float(tolerance)
            except ValueError:
                pass

    def _section(self, name: str) -> Dict[str, Any]:
        return self._config.get(name) or {}

    @property
    def dt_steps(self) -> int:
        """Get default number of Euler steps for particle simulation."""
        return int(self._section("simulation").get("dt_steps", 500))

    @property
    def clt_dt_steps(self) -> int:
        """Get default number of Euler steps for fluctuation runs."""
        return int(self._section("simulation").get("clt_dt_steps", 2000))

    @property
    def quadrature_intervals(self) -> int:
        """Get Simpson intervals used for the ell_t integrals."""
        return int(self._section("riccati").get("quadrature_intervals", 1000))

    @property
    def riccati_degenerate_threshold(self) -> float:
        """Get the |delta+ - delta-| * T threshold for the ODE fallback."""
        return float(self._section("riccati").get("degenerate_threshold", 1e-6))

    @property
    def riccati_blowup_threshold(self) -> float:
        """Get the magnitude treated as numerical blow-up."""
        return float(self._section("riccati").get("blowup_threshold", 1e12))

    @property
    def riccati_fallback_steps(self) -> int:
        """Get RK4 steps used by the degenerate-case fallback."""
        return int(self._section("riccati").get("fallback_steps", 10000))

    @property
    def sobolev_half_width(self) -> float:
        """Get half width L of the Sobolev grid."""
        return float(self._section("sobolev").get("half_width", 10.0))

    @property
    def sobolev_spacing(self) -> float:
        """Get spacing h of the Sobolev grid."""
        return float(self._section("sobolev").get("spacing", 0.005))

    @property
    def quadrature_nodes(self) -> int:
        """Get number of Gauss-Hermite nodes."""
        return int(self._section("quadrature").get("nodes", 201))

    @property
    def quadrature_tolerance(self) -> float:
        """Get tolerance for test-function expectations."""
        return float(self._section("quadrature").get("tolerance", 1e-8))

    @property
    def covariance_max_attempts(self) -> int:
        """Get maximum Cholesky attempts."""
        return int(self._section("covariance").get("max_attempts", 7))

    @property
    def covariance_initial_jitter(self) -> float:
        """Get first relative jitter added after a failed factorisation."""
        return float(self._section("covariance").get("initial_jitter", 1e-15))

    @property
    def covariance_jitter_factor(self) -> float:
        """Get geometric growth factor of the jitter."""
        return float(self._section("covariance").get("jitter_factor", 10.0))

    @property
    def covariance_max_jitter(self) -> float:
        """Get largest admissible relative jitter."""
        return float(self._section("covariance").get("max_jitter", 1e-10))

    @property
    def tolerances(self) -> Dict[str, float]:
        """Get pass/fail tolerances."""
        return {
            "lln_rate": 0.3,
            "coupling_rate": 0.1,
            "hat_rate": 0.15,
            "l4_rate": 0.1,
            "covariance_rel": 0.10,
            "ks_level": 0.01,
            "ks_min_pass_fraction": 5.0 / 6.0,
            "drift_rel": 0.10,
            "concentration_r2": 0.9,
            **self._section("tolerances"),
        }

    def get_tolerance(self, key: str, default: Optional[float] = None) -> float:
        """Get a specific tolerance value."""
        value = self.tolerances.get(key, default)
        if value is None:
            raise KeyError(f"Unknown tolerance: {key}")
        return float(value)

    @property
    def threads(self) -> int:
        """Get size of the replication worker pool."""
        return max(1, int(self._section("execution").get("threads", 1)))

    @property
    def log_level(self) -> str:
        """Get logging level name."""
        return str(self._section("logging").get("level", "INFO")).upper()

    def reload(self) -> None:
        """Reload configuration from files and environment."""
        self._load_config()


# Global config instance
config = Config()
