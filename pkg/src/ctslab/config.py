"""
Runtime configuration: env knobs, numerical tolerances and the error hierarchy.
"""

from __future__ import annotations

import logging
import os

from pydantic import BaseModel, ConfigDict, Field

DEFAULT_LOG_LEVEL = "WARNING"
SUPPORTED_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
DEFAULT_ENABLE_RUNTIME_EVENT_LOGS = False
DEFAULT_MAX_WORKERS = 4
DEFAULT_EXPLORATION_WEIGHT = 2.0
DEFAULT_ORACLE_GRID_SIZE = 2001
RESULT_SCHEMA_VERSION = 1


class CtsLabError(RuntimeError):
    """Base error carrying a stable machine-readable code."""

    default_code = "cts_lab_error"

    def __init__(self, message: str, *, code: str | None = None) -> None:
        super().__init__(message)
        self.code = code or self.default_code


class SpreadModelError(CtsLabError):
    """Raised when a spread model is invalid or cannot be evaluated."""

    default_code = "invalid_spread_model"


class ClearingError(CtsLabError):
    """Raised when a bid profile cannot be cleared."""

    default_code = "clearing_failed"


class GameError(CtsLabError):
    """Raised when an equilibrium or payoff cannot be computed."""

    default_code = "game_failed"


class LearningError(CtsLabError):
    """Raised when a repeated-game run is misconfigured."""

    default_code = "learning_failed"


class CalibrationError(CtsLabError):
    """Raised when market data cannot be loaded or fitted."""

    default_code = "calibration_failed"


class ExperimentConfigError(CtsLabError):
    """Raised when an experiment configuration is invalid."""

    default_code = "invalid_config"


class Tolerances(BaseModel):
    """Numerical tolerances shared by every solver in the package."""

    model_config = ConfigDict(frozen=True)

    schedule_rel_width: float = Field(
        default=1e-10,
        gt=0,
        description="Bisection interval width for the clearing schedule, relative to max(1, bracket).",
    )
    spread_root_rel_width: float = Field(
        default=1e-10,
        gt=0,
        description="Bisection interval width for the spread root, relative to max(1, Q_hi).",
    )
    max_doublings: int = Field(default=200, ge=1, description="Cap on bracket doublings when locating the spread root.")
    quad_abs: float = Field(default=1e-9, gt=0, description="Absolute tolerance of the welfare quadrature.")
    identity_rel: float = Field(default=1e-8, gt=0, description="Relative tolerance for clearing identities.")
    deviation_gain_rel: float = Field(
        default=1e-6,
        gt=0,
        description="A deviation counts as profitable when it gains more than this times max(1, |payoff|).",
    )
    probe_points: int = Field(default=64, ge=3, description="Probe grid size for concavity checks of general models.")
    probe_slack: float = Field(default=1e-9, ge=0, description="Concavity probe slack, relative to scale.")


DEFAULT_TOLERANCES = Tolerances()


def _resolve_int_env(var_name: str, default: int, minimum: int = 1) -> int:
    """Resolve an integer config value from env with a safe fallback."""
    raw_value = os.environ.get(var_name)
    if raw_value is None:
        return default

    try:
        value = int(str(raw_value).strip())
    except (TypeError, ValueError):
        return default

    if value < minimum:
        return default
    return value


def _resolve_bool_env(var_name: str, default: bool = False) -> bool:
    raw_value = os.environ.get(var_name)
    if raw_value is None:
        return default
    return str(raw_value).strip().lower() in {"1", "true", "yes", "on"}


def get_log_level() -> int:
    """Log level named by ``CTS_LAB_LOG``; unknown names fall back to WARNING."""
    raw_value = str(os.environ.get("CTS_LAB_LOG", DEFAULT_LOG_LEVEL)).strip().upper()
    if raw_value not in SUPPORTED_LOG_LEVELS:
        raw_value = DEFAULT_LOG_LEVEL
    return logging.getLevelName(raw_value)


def runtime_event_logs_enabled() -> bool:
    """Return whether structured runtime event logs are enabled."""
    return _resolve_bool_env("CTS_LAB_EVENT_LOGS", DEFAULT_ENABLE_RUNTIME_EVENT_LOGS)


def get_max_workers() -> int:
    """Hard cap for learning replications executing at the same time."""
    return _resolve_int_env("CTS_LAB_MAX_WORKERS", DEFAULT_MAX_WORKERS, minimum=1)


def get_dataset_dir() -> str | None:
    """Directory holding the published LMP dataset, if configured."""
    raw_value = str(os.environ.get("CTS_LAB_DATASET_DIR", "")).strip()
    return raw_value or None
