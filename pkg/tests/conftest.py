import logging

import pytest

from ctslab import env

_ENV_KNOBS = ("CTS_LAB_LOG", "CTS_LAB_EVENT_LOGS", "CTS_LAB_MAX_WORKERS", "CTS_LAB_ENV_FILE", "CTS_LAB_DATASET_DIR")


@pytest.fixture(autouse=True)
def _isolate_env_knobs(monkeypatch, tmp_path):
    for name in _ENV_KNOBS:
        # Register each knob so values loaded from a .env during the test are removed afterwards.
        monkeypatch.setenv(name, "")
        monkeypatch.delenv(name)
    monkeypatch.setattr(env, "_PROJECT_DOTENV", tmp_path / ".env")
    monkeypatch.setattr(env, "_ENV_BOOTSTRAPPED", False)
    monkeypatch.setattr(env, "_BOOTSTRAPPED_DOTENV", None)


@pytest.fixture(autouse=True)
def _reset_package_logger():
    yield
    package_logger = logging.getLogger("ctslab")
    for handler in list(package_logger.handlers):
        if handler.get_name() == "cts-lab-stderr":
            package_logger.removeHandler(handler)
    package_logger.propagate = True
    package_logger.setLevel(logging.NOTSET)
