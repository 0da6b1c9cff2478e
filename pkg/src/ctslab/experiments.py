"""Experiment configuration and dispatch from a config to the market modules."""

from __future__ import annotations

import json
import logging
import tomllib
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import presets
from .calibrate import (
    CsvFormat,
    Dependent,
    compare_spread_stats,
    fit_regression,
    implied_spread_model,
    load_samples,
    spread_stats,
)
from .clearing import Bidder, BidProfile, clear, roster_liquidities
from .config import DEFAULT_EXPLORATION_WEIGHT, DEFAULT_ORACLE_GRID_SIZE, CtsLabError, ExperimentConfigError
from .game import (
    ConjecturedGameSpec,
    EquilibriumProfile,
    correction_condition,
    conjectured_cost_sweep,
    effective_budgets,
    nash_baseline,
    nash_conjectured,
    nash_utc,
    payoff_curve,
    verify_equilibrium,
)
from .learning import (
    InitOrder,
    RoundRecord,
    build_action_grid,
    nash_selection_rates,
    perturb_spread,
    run_repeated_game,
    trajectory_stats,
)
from .report import FigureKind, PayoffLandscape, emit_figure_series, rounds_frame
from .runtime_utils import log_runtime_event, run_in_threads
from .spread import AffineSpread, efficiency_at, welfare

_logger = logging.getLogger(__name__)

_LANDSCAPE_POINTS = 201


class ExperimentKind(str, Enum):
    CLEAR = "clear"
    NASH = "nash"
    NASH_UTC = "nash-utc"
    NASH_CONJECTURED = "nash-conjectured"
    LEARN = "learn"
    CALIBRATE = "calibrate"
    SPREAD_STATS = "spread-stats"
    VERIFY = "verify"


class MarketSection(BaseModel):
    """Affine spread given directly or by preset name."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    preset: Literal["calibrated"] | None = None
    alpha: float | None = Field(default=None, gt=0)
    beta: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _one_source(self) -> MarketSection:
        if self.preset is None and (self.alpha is None or self.beta is None):
            raise ValueError("market needs either a preset or both alpha and beta")
        return self

    def spread(self) -> AffineSpread:
        if self.preset == "calibrated":
            return presets.calibrated_spread()
        return AffineSpread(alpha=self.alpha, beta=self.beta)


class VerifySection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    grid_size: int = Field(default=DEFAULT_ORACLE_GRID_SIZE, ge=3)
    radius: float | None = Field(default=None, gt=0)
    payoff_kind: Literal["baseline", "utc", "conjectured"] = "baseline"


class LearningSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    rounds: int = Field(default=presets.LEARNING_ROUNDS, ge=1)
    rho: float = Field(default=DEFAULT_EXPLORATION_WEIGHT, ge=0)
    grid_low: float = 0.0
    grid_high: float = presets.LEARNING_GRID_HIGH
    grid_size: int = Field(default=presets.LEARNING_GRID_SIZE, ge=1)
    snap_nash: bool = True
    init_order: InitOrder = "sequential"
    replications: int = Field(default=1, ge=1)
    settlement_noise_std: float = Field(default=0.0, ge=0)
    so_alpha_factor: float = Field(default=1.0, gt=0)
    so_beta_factor: float = Field(default=1.0, gt=0)


class ConjectureSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    preset_cost: float | None = Field(default=None, ge=0, description="Use the calibrated forecast-error instance.")
    spec: ConjecturedGameSpec | None = None
    cost_sweep: tuple[float, ...] = ()

    @model_validator(mode="after")
    def _one_source(self) -> ConjectureSection:
        if (self.preset_cost is None) == (self.spec is None):
            raise ValueError("conjecture needs exactly one of preset_cost or spec")
        return self

    def game(self) -> ConjecturedGameSpec:
        if self.spec is not None:
            return self.spec
        return presets.forecast_error_spec(self.preset_cost)


class CalibrationSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    path: str
    compare_path: str | None = None
    csv_format: CsvFormat = CsvFormat()
    dependent: Dependent = Dependent.AREA_B


class ExperimentConfig(BaseModel):
    """One experiment run; kind-specific sections are checked by :func:`validate_config`."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ExperimentKind
    seed: int | None = None
    market: MarketSection | None = None
    bidders: tuple[Bidder, ...] = ()
    thetas: tuple[float, ...] | None = None
    verify: VerifySection = VerifySection()
    learning: LearningSection = LearningSection()
    conjecture: ConjectureSection | None = None
    calibration: CalibrationSection | None = None
    series: tuple[FigureKind, ...] = ()


_SERIES_BY_KIND: dict[ExperimentKind, set[str]] = {
    ExperimentKind.CLEAR: {"fig2"},
    ExperimentKind.NASH: {"fig2"},
    ExperimentKind.NASH_UTC: {"fig2"},
    ExperimentKind.VERIFY: {"fig2"},
    ExperimentKind.LEARN: {"fig3", "fig4", "fig5"},
}


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    """Check that the sections ``config.kind`` needs are present."""
    kind = config.kind
    needs_market = kind in {ExperimentKind.CLEAR, ExperimentKind.NASH, ExperimentKind.NASH_UTC}
    if kind is ExperimentKind.VERIFY:
        needs_market = config.verify.payoff_kind != "conjectured"
    if kind is ExperimentKind.LEARN:
        needs_market = config.conjecture is None

    if needs_market and (config.market is None or not config.bidders):
        raise ExperimentConfigError(f"{kind.value} needs a market section and bidders", code="invalid_config")
    if kind is ExperimentKind.CLEAR and config.thetas is None:
        raise ExperimentConfigError("clear needs thetas", code="invalid_config")
    if config.thetas is not None and config.bidders and len(config.thetas) != len(config.bidders):
        raise ExperimentConfigError("thetas must align with bidders", code="invalid_config")
    if kind is ExperimentKind.NASH_CONJECTURED and config.conjecture is None:
        raise ExperimentConfigError("nash-conjectured needs a conjecture section", code="invalid_config")
    if kind is ExperimentKind.VERIFY and config.verify.payoff_kind == "conjectured" and config.conjecture is None:
        raise ExperimentConfigError("conjectured verification needs a conjecture section", code="invalid_config")
    if kind in {ExperimentKind.CALIBRATE, ExperimentKind.SPREAD_STATS} and config.calibration is None:
        raise ExperimentConfigError(f"{kind.value} needs a calibration section", code="invalid_config")
    if kind is ExperimentKind.LEARN and config.seed is None:
        raise ExperimentConfigError("learn runs require an explicit seed", code="missing_seed")

    allowed = _SERIES_BY_KIND.get(kind, set())
    for which in config.series:
        if which not in allowed:
            raise ExperimentConfigError(
                f"{which} series is not produced by {kind.value}",
                code="mismatched_series_kind",
            )
    if "fig5" in config.series and config.conjecture is None:
        raise ExperimentConfigError("fig5 series needs a conjectured learning run", code="mismatched_series_kind")
    return config


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply ``dotted.key=value`` overrides; values are JSON when they parse, strings otherwise."""
    merged = json.loads(json.dumps(data))
    for override in overrides:
        key, sep, raw = override.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ExperimentConfigError(f"Override {override!r} is not key=value", code="invalid_config")
        parts = key.split(".")
        target = merged
        for part in parts[:-1]:
            child = target.get(part)
            if child is None:
                child = {}
                target[part] = child
            if not isinstance(child, dict):
                raise ExperimentConfigError(
                    f"Override {key!r} descends into a non-table value",
                    code="invalid_config",
                )
            target = child
        target[parts[-1]] = _parse_override_value(raw)
    return merged


def _read_config_file(path: Path) -> dict[str, Any]:
    try:
        if path.suffix == ".toml":
            with path.open("rb") as handle:
                return tomllib.load(handle)
        if path.suffix == ".json":
            return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ExperimentConfigError(f"Config file not found: {path}", code="invalid_config") from exc
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ExperimentConfigError(f"Cannot parse {path}: {exc}", code="invalid_config") from exc
    raise ExperimentConfigError(f"Unsupported config format {path.suffix!r}", code="invalid_config")


def build_config(
    data: dict[str, Any],
    *,
    kind: str | None = None,
    seed: int | None = None,
    overrides: Sequence[str] = (),
) -> ExperimentConfig:
    merged = apply_overrides(data, overrides)
    if kind is not None:
        merged["kind"] = kind
    if seed is not None:
        merged["seed"] = seed
    try:
        config = ExperimentConfig.model_validate(merged)
    except ValidationError as exc:
        raise ExperimentConfigError(str(exc), code="invalid_config") from exc
    return validate_config(config)


def load_config(
    path: str | Path,
    *,
    kind: str | None = None,
    seed: int | None = None,
    overrides: Sequence[str] = (),
) -> ExperimentConfig:
    """Load a TOML or JSON config; CLI flags win over file values."""
    return build_config(_read_config_file(Path(path)), kind=kind, seed=seed, overrides=overrides)


@dataclass
class ExperimentOutcome:
    kind: ExperimentKind
    config: ExperimentConfig
    result: dict[str, Any]
    rounds: pd.DataFrame | None = None
    series: dict[str, pd.DataFrame] = field(default_factory=dict)


def _profile_payload(profile: EquilibriumProfile) -> dict[str, Any]:
    return {
        "thetas_ne": list(profile.thetas_ne),
        "marginal_player": profile.marginal_player,
        "regime": profile.regime.value,
        "q_cts": profile.clearing.q_cts,
        "price_p": profile.clearing.price_p,
        "allocations_x": list(profile.clearing.allocations_x),
        "eta": profile.efficiency.eta,
        "lower_bound": profile.efficiency.lower_bound,
        "z": profile.efficiency.z,
    }


def payoff_landscape(
    model: AffineSpread,
    bidders: Sequence[Bidder],
    profile: BidProfile,
    *,
    points: int = _LANDSCAPE_POINTS,
    payoff_kind: Literal["baseline", "utc"] = "baseline",
) -> PayoffLandscape:
    """Each player's payoff curve from its cost floor up to where clearing stays defined."""
    surplus = float(roster_liquidities(bidders).sum()) * model.alpha
    thetas, payoffs = [], []
    for i, bidder in enumerate(bidders):
        others = float(sum(profile.thetas)) - profile.thetas[i]
        cap = surplus - others
        high = min(cap * (1.0 - 1e-6), max(2.0 * profile.thetas[i], model.beta * bidder.liquidity_b**2))
        low = bidder.cost_c * bidder.liquidity_b
        grid = np.linspace(low, max(high, low), points)
        values = payoff_curve(model, bidders, profile, i, grid, payoff_kind=payoff_kind)
        thetas.append(tuple(float(v) for v in grid))
        payoffs.append(tuple(float(v) for v in values))
    return PayoffLandscape(players=tuple(b.id for b in bidders), thetas=tuple(thetas), payoffs=tuple(payoffs))


def _run_clear(config: ExperimentConfig) -> ExperimentOutcome:
    model = config.market.spread()
    profile = BidProfile(thetas=config.thetas)
    result = clear(model, config.bidders, profile)
    payload = result.model_dump(mode="json")
    payload["welfare"] = welfare(model, result.q_cts)
    payload["eta"] = efficiency_at(model, result.q_cts)
    outcome = ExperimentOutcome(kind=config.kind, config=config, result=payload)
    if "fig2" in config.series:
        outcome.series["fig2"] = emit_figure_series("fig2", payoff_landscape(model, config.bidders, profile))
    return outcome


def _run_nash(config: ExperimentConfig) -> ExperimentOutcome:
    model = config.market.spread()
    if config.kind is ExperimentKind.NASH_UTC:
        profile = nash_utc(model.alpha, model.beta, config.bidders)
        baseline = nash_baseline(
            model.alpha,
            model.beta,
            [b.liquidity_b for b in config.bidders],
            require_unique_max=False,
        )
        payload = _profile_payload(profile)
        payload["effective_budgets"] = [float(b) for b in effective_budgets(model.beta, config.bidders)]
        payload["q_cts_without_utc"] = baseline.clearing.q_cts
        payload["schedule_shift"] = baseline.clearing.q_cts - profile.clearing.q_cts
        landscape_kind = "utc"
    else:
        profile = nash_baseline(model.alpha, model.beta, [b.liquidity_b for b in config.bidders])
        payload = _profile_payload(profile)
        landscape_kind = "baseline"

    outcome = ExperimentOutcome(kind=config.kind, config=config, result=payload)
    if "fig2" in config.series:
        landscape = payoff_landscape(
            model,
            config.bidders,
            BidProfile(thetas=profile.thetas_ne),
            payoff_kind=landscape_kind,
        )
        outcome.series["fig2"] = emit_figure_series("fig2", landscape)
    return outcome


def _run_nash_conjectured(config: ExperimentConfig) -> ExperimentOutcome:
    spec = config.conjecture.game()
    profile = nash_conjectured(spec)
    payload = _profile_payload(profile)
    payload["gamma"] = spec.gamma
    payload["q_to"] = spec.q_to
    if spec.q_star is not None:
        payload["correction"] = correction_condition(spec).model_dump(mode="json")
    if config.conjecture.cost_sweep:
        payload["cost_sweep"] = [
            point.model_dump(mode="json") for point in conjectured_cost_sweep(spec, config.conjecture.cost_sweep)
        ]
    return ExperimentOutcome(kind=config.kind, config=config, result=payload)


def _run_verify(config: ExperimentConfig) -> ExperimentOutcome:
    section = config.verify
    if section.payoff_kind == "conjectured":
        spec = config.conjecture.game()
        model = spec.so_model()
        bidders = spec.roster()
        thetas = config.thetas if config.thetas is not None else nash_conjectured(spec).thetas_ne
    else:
        spec = None
        model = config.market.spread()
        bidders = list(config.bidders)
        if config.thetas is not None:
            thetas = config.thetas
        elif section.payoff_kind == "utc":
            thetas = nash_utc(model.alpha, model.beta, bidders).thetas_ne
        else:
            thetas = nash_baseline(model.alpha, model.beta, [b.liquidity_b for b in bidders]).thetas_ne

    verdict = verify_equilibrium(
        model,
        bidders,
        BidProfile(thetas=tuple(thetas)),
        section.grid_size,
        section.radius,
        payoff_kind=section.payoff_kind,
        conjecture=spec,
    )
    payload = verdict.model_dump(mode="json")
    payload["candidate"] = list(thetas)
    outcome = ExperimentOutcome(kind=config.kind, config=config, result=payload)
    if "fig2" in config.series and section.payoff_kind != "conjectured":
        landscape = payoff_landscape(model, bidders, BidProfile(thetas=tuple(thetas)), payoff_kind=section.payoff_kind)
        outcome.series["fig2"] = emit_figure_series("fig2", landscape)
    return outcome


@dataclass(frozen=True)
class _LearningSetup:
    settlement: AffineSpread
    so_model: AffineSpread
    bidders: list[Bidder]
    nash_thetas: tuple[float, ...] | None
    q_star: float | None


def _learning_setup(config: ExperimentConfig) -> _LearningSetup:
    section = config.learning
    if config.conjecture is not None:
        spec = config.conjecture.game()
        return _LearningSetup(
            settlement=spec.star_model() if spec.q_star is not None else spec.bidder_model(),
            so_model=spec.so_model(),
            bidders=spec.roster(),
            nash_thetas=nash_conjectured(spec).thetas_ne,
            q_star=spec.q_star,
        )

    settlement = config.market.spread()
    so_model = perturb_spread(settlement, section.so_alpha_factor, section.so_beta_factor)
    bidders = list(config.bidders)
    nash_thetas = None
    if all(b.cost_c == 0 and not b.utc for b in bidders):
        nash_thetas = nash_baseline(
            so_model.alpha,
            so_model.beta,
            [b.liquidity_b for b in bidders],
            require_unique_max=False,
        ).thetas_ne
    return _LearningSetup(
        settlement=settlement,
        so_model=so_model,
        bidders=bidders,
        nash_thetas=nash_thetas,
        q_star=settlement.q_to,
    )


def _run_learn(config: ExperimentConfig) -> ExperimentOutcome:
    section = config.learning
    setup = _learning_setup(config)
    grids = [
        build_action_grid(
            section.grid_low,
            section.grid_high,
            section.grid_size,
            floor=bidder.cost_c * bidder.liquidity_b,
            snap=setup.nash_thetas[i] if section.snap_nash and setup.nash_thetas is not None else None,
        )
        for i, bidder in enumerate(setup.bidders)
    ]
    seeds = [config.seed + offset for offset in range(section.replications)]

    def replicate(seed: int) -> list[RoundRecord]:
        return run_repeated_game(
            setup.settlement,
            setup.so_model,
            setup.bidders,
            grids,
            section.rho,
            section.rounds,
            seed,
            init_order=section.init_order,
            settlement_noise_std=section.settlement_noise_std,
            nash_thetas=setup.nash_thetas,
        )

    runs = run_in_threads(replicate, seeds)
    q_to = setup.so_model.q_to
    replications = []
    for seed, records in zip(seeds, runs):
        summary = trajectory_stats(records, q_to)
        replications.append(
            {
                "seed": seed,
                "nash_pct": list(nash_selection_rates(records)),
                "nash_pct_with_initialization": list(nash_selection_rates(records, include_initialization=True)),
                "mean_q_ratio": summary.mean_q_ratio,
                "median_q_ratio": summary.median_q_ratio,
                "mean_spread": summary.mean_spread,
                "median_spread": summary.median_spread,
                "rounds_closer_to_q_star": (
                    int(sum(abs(r.q_cts - setup.q_star) < abs(q_to - setup.q_star) for r in records))
                    if setup.q_star is not None
                    else None
                ),
            }
        )
    payload = {
        "q_to": q_to,
        "q_star": setup.q_star,
        "nash_thetas": list(setup.nash_thetas) if setup.nash_thetas is not None else None,
        "grids": [list(grid.actions) for grid in grids],
        "replications": replications,
    }
    agent_ids = [bidder.id for bidder in setup.bidders]
    outcome = ExperimentOutcome(
        kind=config.kind,
        config=config,
        result=payload,
        rounds=rounds_frame(runs, agent_ids),
    )
    for which in config.series:
        source = runs if which == "fig4" else runs[0]
        outcome.series[which] = emit_figure_series(which, source, agent_ids=agent_ids, q_to=q_to, q_star=setup.q_star)
    log_runtime_event(_logger, "learn_done", replications=len(runs), seeds=seeds)
    return outcome


def _run_calibrate(config: ExperimentConfig) -> ExperimentOutcome:
    section = config.calibration
    loaded = load_samples(section.path, section.csv_format)
    fit = fit_regression(loaded.samples, section.dependent)
    payload: dict[str, Any] = {"fit": fit.model_dump(mode="json"), "skipped": loaded.skipped}
    try:
        model = implied_spread_model(fit, loaded.samples)
        payload["spread_model"] = {"alpha": model.alpha, "beta": model.beta, "q_to": model.q_to}
    except CtsLabError as exc:
        payload["spread_model"] = None
        payload["conversion_error"] = {"code": exc.code, "message": str(exc)}
    return ExperimentOutcome(kind=config.kind, config=config, result=payload)


def _run_spread_stats(config: ExperimentConfig) -> ExperimentOutcome:
    section = config.calibration
    loaded = load_samples(section.path, section.csv_format)
    stats = spread_stats(loaded.samples)
    payload: dict[str, Any] = {**stats.model_dump(mode="json"), "skipped": loaded.skipped}
    if section.compare_path is not None:
        other = spread_stats(load_samples(section.compare_path, section.csv_format).samples)
        payload["compare"] = other.model_dump(mode="json")
        payload["comparison"] = compare_spread_stats(stats, other).model_dump(mode="json")
    return ExperimentOutcome(kind=config.kind, config=config, result=payload)


_DISPATCH = {
    ExperimentKind.CLEAR: _run_clear,
    ExperimentKind.NASH: _run_nash,
    ExperimentKind.NASH_UTC: _run_nash,
    ExperimentKind.NASH_CONJECTURED: _run_nash_conjectured,
    ExperimentKind.VERIFY: _run_verify,
    ExperimentKind.LEARN: _run_learn,
    ExperimentKind.CALIBRATE: _run_calibrate,
    ExperimentKind.SPREAD_STATS: _run_spread_stats,
}


def run_experiment(config: ExperimentConfig) -> ExperimentOutcome:
    """Validate ``config`` and dispatch it to the module that computes its result."""
    validate_config(config)
    log_runtime_event(_logger, "experiment_start", kind=config.kind.value, seed=config.seed)
    outcome = _DISPATCH[config.kind](config)
    log_runtime_event(_logger, "experiment_done", kind=config.kind.value, series=sorted(outcome.series))
    return outcome
