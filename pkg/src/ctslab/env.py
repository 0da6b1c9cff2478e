"""Environment bootstrap and logging setup for local/runtime execution."""

from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

from dotenv import load_dotenv

from .config import get_log_level

_PROJECT_ROOT = Path(__file__).resolve().parents[2]
_PROJECT_DOTENV = _PROJECT_ROOT / ".env"
_DEFAULT_PROJECT_DOTENV = _PROJECT_DOTENV
_ENV_FILE_OVERRIDE_VAR = "CTS_LAB_ENV_FILE"
_ENV_BOOTSTRAPPED = False
_BOOTSTRAPPED_DOTENV: Path | None = None
_LOG_HANDLER_NAME = "cts-lab-stderr"


def project_dotenv_path() -> Path:
    """Return expected project .env path."""
    override = os.environ.get(_ENV_FILE_OVERRIDE_VAR, "").strip()
    if override:
        override_path = Path(override).expanduser()
        if not override_path.is_absolute():
            override_path = (Path.cwd() / override_path).resolve()
        return override_path

    if _PROJECT_DOTENV != _DEFAULT_PROJECT_DOTENV:
        return _PROJECT_DOTENV

    discovered = _discover_dotenv_path_from_cwd()
    if discovered is not None:
        return discovered

    return _PROJECT_DOTENV


def bootstrap_env(*, override: bool = False) -> Path:
    """Load the project .env file once per process."""
    global _ENV_BOOTSTRAPPED, _BOOTSTRAPPED_DOTENV
    dotenv_path = project_dotenv_path()
    should_reload = override or not _ENV_BOOTSTRAPPED or _BOOTSTRAPPED_DOTENV != dotenv_path
    if should_reload:
        load_dotenv(dotenv_path=dotenv_path, override=override)
        _ENV_BOOTSTRAPPED = True
        _BOOTSTRAPPED_DOTENV = dotenv_path
    return dotenv_path


def _discover_dotenv_path_from_cwd() -> Path | None:
    try:
        cwd = Path.cwd().resolve()
    except Exception:
        return None

    for directory in [cwd, *cwd.parents]:
        dotenv_candidate = directory / ".env"
        if dotenv_candidate.exists():
            return dotenv_candidate
    return None


def configure_logging(stream=None) -> logging.Logger:
    """Attach a single stderr handler to the package logger at the ``CTS_LAB_LOG`` level."""
    package_logger = logging.getLogger("ctslab")
    package_logger.setLevel(get_log_level())
    for handler in list(package_logger.handlers):
        if handler.get_name() == _LOG_HANDLER_NAME:
            package_logger.removeHandler(handler)

    handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
    handler.set_name(_LOG_HANDLER_NAME)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
    package_logger.addHandler(handler)
    package_logger.propagate = False
    return package_logger
