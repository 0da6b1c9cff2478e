"""UCB bidding agents and the repeated-play harness."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .clearing import Bidder, clear_arrays, roster_liquidities
from .config import DEFAULT_EXPLORATION_WEIGHT, DEFAULT_TOLERANCES, LearningError, Tolerances
from .game import nash_baseline
from .runtime_utils import log_runtime_event
from .spread import AffineSpread, SpreadModel, evaluate, tie_optimization

_logger = logging.getLogger(__name__)

InitOrder = Literal["sequential", "index", "shuffled"]


class ActionGrid(BaseModel):
    """Finite, strictly increasing set of bids ($/h) an agent chooses from."""

    model_config = ConfigDict(frozen=True)

    actions: tuple[float, ...] = Field(min_length=1)

    @field_validator("actions")
    @classmethod
    def _strictly_increasing(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(not math.isfinite(a) for a in value):
            raise ValueError("actions must be finite")
        if any(later <= earlier for earlier, later in zip(value, value[1:])):
            raise ValueError("actions must be strictly increasing")
        return value

    @property
    def size(self) -> int:
        return len(self.actions)

    def nearest_arm(self, theta: float) -> int:
        return int(np.argmin(np.abs(np.asarray(self.actions) - theta)))


def build_action_grid(
    low: float,
    high: float,
    size: int,
    *,
    floor: float = 0.0,
    snap: float | None = None,
) -> ActionGrid:
    """Uniform grid on [max(low, floor), high] with ``snap`` replacing its nearest point."""
    start = max(low, floor)
    if size < 1 or (size > 1 and high <= start):
        raise LearningError(f"Cannot build {size} actions on [{start:g}, {high:g}]", code="invalid_grid")
    actions = np.linspace(start, high, size) if size > 1 else np.array([start])

    if snap is not None:
        if snap < floor:
            log_runtime_event(_logger, "snap_below_cost_floor", snap=snap, floor=floor)
        else:
            k = int(np.argmin(np.abs(actions - snap)))
            actions[k] = snap
    return ActionGrid(actions=tuple(float(a) for a in actions))


def perturb_spread(model: AffineSpread, alpha_factor: float, beta_factor: float) -> AffineSpread:
    """Operators' forecast with multiplicative per-parameter error."""
    return AffineSpread(alpha=model.alpha * alpha_factor, beta=model.beta * beta_factor)


@dataclass(frozen=True)
class AgentState:
    grid: ActionGrid
    avg_reward_r: np.ndarray
    pull_count_t: np.ndarray
    rho: float = DEFAULT_EXPLORATION_WEIGHT

    @classmethod
    def initial(cls, grid: ActionGrid, rho: float = DEFAULT_EXPLORATION_WEIGHT) -> AgentState:
        if rho < 0:
            raise LearningError(f"Exploration weight must be nonnegative, got {rho!r}", code="invalid_rho")
        return cls(
            grid=grid,
            avg_reward_r=np.zeros(grid.size, dtype=float),
            pull_count_t=np.zeros(grid.size, dtype=np.int64),
            rho=rho,
        )

    @property
    def total_pulls(self) -> int:
        return int(self.pull_count_t.sum())


def ucb_update(state: AgentState, k: int, reward: float) -> AgentState:
    """Increment T^k, then move R^k toward ``reward`` by 1 / T^k."""
    if not 0 <= k < state.grid.size:
        raise LearningError(f"Arm {k} out of range for {state.grid.size} actions", code="index_out_of_range")
    counts = state.pull_count_t.copy()
    averages = state.avg_reward_r.copy()
    counts[k] += 1
    averages[k] += (reward - averages[k]) / counts[k]
    return replace(state, avg_reward_r=averages, pull_count_t=counts)


def ucb_scores(state: AgentState) -> np.ndarray:
    counts = state.pull_count_t.astype(float)
    if np.any(counts < 1):
        raise LearningError("Every arm must be pulled once before UCB selection", code="uninitialized_arms")
    return state.avg_reward_r + state.rho * np.sqrt(math.log(counts.sum()) / counts)


def ucb_select(state: AgentState) -> int:
    """Arm maximizing the upper confidence bound; lowest index on ties."""
    return int(np.argmax(ucb_scores(state)))


@dataclass(frozen=True)
class RoundRecord:
    round: int
    actions: tuple[int, ...]
    thetas: tuple[float, ...]
    q_cts: float
    spread: float
    clearing_price: float
    rewards: tuple[float, ...]
    nash_flags: tuple[bool, ...]
    initialization: bool = False


def _default_nash_arms(
    so_model: SpreadModel,
    bidders: Sequence[Bidder],
    grids: Sequence[ActionGrid],
) -> list[int | None]:
    if not isinstance(so_model, AffineSpread) or any(b.cost_c > 0 or b.utc for b in bidders):
        log_runtime_event(_logger, "nash_flags_unavailable", reason="not a fee-free affine instance")
        return [None] * len(bidders)
    profile = nash_baseline(
        so_model.alpha,
        so_model.beta,
        [b.liquidity_b for b in bidders],
        require_unique_max=False,
    )
    return [grid.nearest_arm(theta) for grid, theta in zip(grids, profile.thetas_ne)]


def run_repeated_game(
    settlement: SpreadModel,
    so_model: SpreadModel,
    bidders: Sequence[Bidder],
    grids: Sequence[ActionGrid],
    rho: float = DEFAULT_EXPLORATION_WEIGHT,
    rounds: int = 3000,
    seed: int = 0,
    *,
    init_order: InitOrder = "sequential",
    settlement_noise_std: float = 0.0,
    nash_thetas: Sequence[float] | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> list[RoundRecord]:
    """Play ``rounds`` simultaneous rounds of the CTS game between UCB agents.

    Bids clear against ``so_model``; each agent is paid (P_settlement(Q_CTS) - c) * x_i.

    ``init_order`` controls how each agent pulls every arm once before UCB takes over:

    * ``"sequential"``: agents enter one at a time in a seeded order. The entering agent sweeps its
      arms in index order while agents that already entered play UCB and agents still waiting post
      their lowest bid without learning from it. Initialization lasts the sum of the grid sizes.
    * ``"index"``/``"shuffled"``: all agents sweep simultaneously, in index or seeded random order.
      Initialization lasts the largest grid size.
    """
    if not bidders:
        raise LearningError("Bidder roster is empty", code="empty_roster")
    if len(grids) != len(bidders):
        raise LearningError(f"{len(grids)} grids for {len(bidders)} bidders", code="misaligned_grids")
    for index, (bidder, grid) in enumerate(zip(bidders, grids)):
        floor = bidder.cost_c * bidder.liquidity_b
        if grid.actions[0] < floor - 1e-12 * max(1.0, floor):
            raise LearningError(
                f"Grid of bidder {index} starts at {grid.actions[0]:g}, below its cost floor {floor:g}",
                code="invalid_grid",
            )
    liquidities = roster_liquidities(bidders)
    surplus = float(liquidities.sum()) * evaluate(so_model, 0.0)
    top_bids = sum(grid.actions[-1] for grid in grids)
    if top_bids >= surplus:
        raise LearningError(
            f"Largest bids sum to {top_bids:g}, at or above the spread surplus {surplus:g}",
            code="infeasible_action_grid",
        )
    if init_order == "sequential":
        init_rounds = sum(grid.size for grid in grids)
    else:
        init_rounds = max(grid.size for grid in grids)
    if rounds < init_rounds:
        raise LearningError(f"{rounds} rounds cannot cover {init_rounds} initialization rounds", code="too_few_rounds")
    if settlement_noise_std < 0:
        raise LearningError("Settlement noise must be nonnegative", code="invalid_noise")

    rng = np.random.default_rng(seed)
    entry = np.zeros(len(grids), dtype=int)
    if init_order == "shuffled":
        orders = [rng.permutation(grid.size) for grid in grids]
    else:
        orders = [np.arange(grid.size) for grid in grids]
    if init_order == "sequential":
        start = 0
        for agent in rng.permutation(len(grids)):
            entry[agent] = start
            start += grids[agent].size

    if nash_thetas is not None:
        if len(nash_thetas) != len(bidders):
            raise LearningError("Nash bids do not align with the roster", code="misaligned_grids")
        nash_arms: list[int | None] = [grid.nearest_arm(theta) for grid, theta in zip(grids, nash_thetas)]
    else:
        nash_arms = _default_nash_arms(so_model, bidders, grids)

    costs = np.array([bidder.cost_c for bidder in bidders], dtype=float)
    action_values = [np.asarray(grid.actions, dtype=float) for grid in grids]
    q_to = tie_optimization(so_model, tolerances=tolerances).q_to
    states = [AgentState.initial(grid, rho) for grid in grids]

    log_runtime_event(
        _logger,
        "repeated_game_start",
        agents=len(bidders),
        rounds=rounds,
        seed=seed,
        init_order=init_order,
        entry_rounds=entry.tolist(),
        nash_arms=nash_arms,
    )

    records: list[RoundRecord] = []
    for t in range(rounds):
        arms = []
        for i, state in enumerate(states):
            step = t - int(entry[i])
            if step < 0:
                arms.append(0)
            elif step < state.grid.size:
                arms.append(int(orders[i][step]))
            else:
                arms.append(ucb_select(state))
        thetas = np.array([action_values[i][arm] for i, arm in enumerate(arms)])
        q_cts, price, allocations, _ = clear_arrays(so_model, liquidities, thetas, q_to=q_to, tolerances=tolerances)

        realized = evaluate(settlement, q_cts)
        if settlement_noise_std > 0:
            realized += float(rng.normal(0.0, settlement_noise_std))
        rewards = (realized - costs) * allocations

        # agents waiting to enter do not learn from their placeholder bid
        states = [
            ucb_update(state, arm, float(reward)) if t >= entry[i] else state
            for i, (state, arm, reward) in enumerate(zip(states, arms, rewards))
        ]
        records.append(
            RoundRecord(
                round=t,
                actions=tuple(arms),
                thetas=tuple(float(theta) for theta in thetas),
                q_cts=float(q_cts),
                spread=float(realized),
                clearing_price=float(price),
                rewards=tuple(float(r) for r in rewards),
                nash_flags=tuple(nash is not None and arm == nash for arm, nash in zip(arms, nash_arms)),
                initialization=t < init_rounds,
            )
        )

    log_runtime_event(
        _logger,
        "repeated_game_done",
        rounds=rounds,
        seed=seed,
        nash_rates=list(nash_selection_rates(records)),
    )
    return records


class TrajectorySummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_rounds: int
    mean_q_ratio: float
    median_q_ratio: float
    mean_spread: float
    median_spread: float
    nash_pct_series: tuple[tuple[float, ...], ...] = Field(
        description="Per-agent cumulative Nash-selection percentage after each round in the window."
    )


def _window(records: Sequence[RoundRecord], window: tuple[int, int] | None) -> list[RoundRecord]:
    if window is None:
        return [record for record in records if not record.initialization]
    start, stop = window
    return [record for record in records if start <= record.round < stop]


def cumulative_nash_pct(records: Sequence[RoundRecord]) -> np.ndarray:
    """Rounds-by-agents matrix of cumulative Nash-selection percentages."""
    if not records:
        raise LearningError("No rounds to summarise", code="empty_window")
    flags = np.array([record.nash_flags for record in records], dtype=float)
    played = np.arange(1, len(records) + 1, dtype=float)[:, None]
    return 100.0 * np.cumsum(flags, axis=0) / played


def trajectory_stats(
    records: Sequence[RoundRecord],
    q_to: float,
    window: tuple[int, int] | None = None,
) -> TrajectorySummary:
    """Schedule and spread statistics over a round window (default: after initialization)."""
    selected = _window(records, window)
    if not selected:
        raise LearningError("Round window selects no records", code="empty_window")
    ratios = np.array([record.q_cts for record in selected]) / q_to
    spreads = np.array([record.spread for record in selected])
    series = cumulative_nash_pct(selected)
    return TrajectorySummary(
        n_rounds=len(selected),
        mean_q_ratio=float(ratios.mean()),
        median_q_ratio=float(np.median(ratios)),
        mean_spread=float(spreads.mean()),
        median_spread=float(np.median(spreads)),
        nash_pct_series=tuple(tuple(float(v) for v in column) for column in series.T),
    )


def nash_selection_rates(
    records: Sequence[RoundRecord],
    *,
    include_initialization: bool = False,
) -> tuple[float, ...]:
    """Final cumulative Nash-selection percentage per agent."""
    selected = list(records) if include_initialization else [r for r in records if not r.initialization]
    if not selected:
        raise LearningError("No rounds to summarise", code="empty_window")
    return tuple(float(v) for v in cumulative_nash_pct(selected)[-1])
