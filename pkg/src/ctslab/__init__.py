"""ctslab package exports."""

from __future__ import annotations

from .env import bootstrap_env

# Load project-local .env once for package consumers (CLI, scripts, notebooks).
bootstrap_env(override=False)

__all__ = ["run_experiment", "load_config"]


def __getattr__(name: str):
    if name in __all__:
        from . import experiments

        return getattr(experiments, name)
    raise AttributeError(name)
