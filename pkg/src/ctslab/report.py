"""Result documents, round logs and plot-ready figure series."""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd

from .config import RESULT_SCHEMA_VERSION, ExperimentConfigError
from .learning import RoundRecord, cumulative_nash_pct

_logger = logging.getLogger(__name__)

FigureKind = Literal["fig2", "fig3", "fig4", "fig5"]
FIGURE_KINDS: tuple[FigureKind, ...] = ("fig2", "fig3", "fig4", "fig5")
_CSV_FLOAT_FORMAT = "%.12g"


@dataclass(frozen=True)
class PayoffLandscape:
    """Payoff of each player over a bid grid, all other bids held at the reference profile."""

    players: tuple[str, ...]
    thetas: tuple[tuple[float, ...], ...]
    payoffs: tuple[tuple[float, ...], ...]


def result_document(kind: str, config: Mapping[str, Any], result: Mapping[str, Any]) -> dict[str, Any]:
    return {"schema_version": RESULT_SCHEMA_VERSION, "kind": kind, "config": dict(config), "result": dict(result)}


def error_document(code: str, message: str) -> dict[str, Any]:
    return {"schema_version": RESULT_SCHEMA_VERSION, "error": {"code": code, "message": message}}


def dumps_json(document: Mapping[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=True, ensure_ascii=True, allow_nan=False) + "\n"


def write_json(path: Path, document: Mapping[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(document), encoding="utf-8")
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=_CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def rounds_frame(runs: Sequence[Sequence[RoundRecord]], agent_ids: Sequence[str]) -> pd.DataFrame:
    """Long-format round log: one row per replication, round and agent."""
    rows = []
    for run_id, records in enumerate(runs):
        for record in records:
            for index, agent_id in enumerate(agent_ids):
                rows.append(
                    {
                        "run_id": run_id,
                        "round": record.round,
                        "initialization": record.initialization,
                        "agent_id": agent_id,
                        "action": record.actions[index],
                        "theta": record.thetas[index],
                        "reward": record.rewards[index],
                        "nash": record.nash_flags[index],
                        "q_cts": record.q_cts,
                        "spread": record.spread,
                        "clearing_price": record.clearing_price,
                    }
                )
    return pd.DataFrame(rows)


def _require_records(which: str, source: Any) -> Sequence[RoundRecord]:
    if not isinstance(source, Sequence) or not source or not all(isinstance(r, RoundRecord) for r in source):
        raise ExperimentConfigError(f"{which} series needs a nonempty round log", code="mismatched_series_kind")
    return source


def emit_figure_series(
    which: FigureKind,
    source: Any,
    *,
    agent_ids: Sequence[str] | None = None,
    q_to: float | None = None,
    q_star: float | None = None,
) -> pd.DataFrame:
    """Plot-ready series for one figure kind."""
    if which == "fig2":
        if not isinstance(source, PayoffLandscape):
            raise ExperimentConfigError("fig2 series needs a payoff landscape", code="mismatched_series_kind")
        rows = [
            {"player": player, "theta": theta, "payoff": value}
            for player, thetas, payoffs in zip(source.players, source.thetas, source.payoffs)
            for theta, value in zip(thetas, payoffs)
        ]
        return pd.DataFrame(rows, columns=["player", "theta", "payoff"])

    if which == "fig3":
        records = _require_records(which, source)
        pct = cumulative_nash_pct(records)
        ids = list(agent_ids) if agent_ids is not None else [f"agent-{i + 1}" for i in range(pct.shape[1])]
        rows = [
            {"round": record.round, "agent_id": agent_id, "cumulative_nash_pct": float(pct[t, i])}
            for t, record in enumerate(records)
            for i, agent_id in enumerate(ids)
        ]
        return pd.DataFrame(rows, columns=["round", "agent_id", "cumulative_nash_pct"])

    if which == "fig4":
        if q_to is None or not isinstance(source, Sequence) or not source:
            raise ExperimentConfigError("fig4 series needs runs and q_to", code="mismatched_series_kind")
        frames = []
        for run_id, run in enumerate(source):
            records = _require_records(which, run)
            frames.append(
                pd.DataFrame(
                    {
                        "run_id": run_id,
                        "round": [r.round for r in records],
                        "q_ratio": np.array([r.q_cts for r in records]) / q_to,
                        "spread": [r.spread for r in records],
                    }
                )
            )
        return pd.concat(frames, ignore_index=True)

    if which == "fig5":
        records = _require_records(which, source)
        if q_to is None or q_star is None:
            raise ExperimentConfigError("fig5 series needs q_to and q_star", code="mismatched_series_kind")
        return pd.DataFrame(
            {
                "round": [r.round for r in records],
                "q_cts": [r.q_cts for r in records],
                "q_to": q_to,
                "q_star": q_star,
            }
        )

    raise ExperimentConfigError(f"Unknown figure kind {which!r}", code="mismatched_series_kind")
