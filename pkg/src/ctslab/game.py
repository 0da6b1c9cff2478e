"""Payoffs, closed-form equilibria and the deviation oracle for the CTS games."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize

from .clearing import (
    Bidder,
    BidProfile,
    ClearingResult,
    UtcPosition,
    affine_schedule,
    allocation_welfare,
    check_feasible,
    clear,
    roster_liquidities,
)
from .config import DEFAULT_ORACLE_GRID_SIZE, DEFAULT_TOLERANCES, ClearingError, GameError, Tolerances
from .runtime_utils import log_runtime_event
from .spread import AffineSpread, SpreadModel, derivative, evaluate, second_derivative, welfare

_logger = logging.getLogger(__name__)

__all__ = [
    "ConjecturedGameSpec",
    "CorrectionReport",
    "DeviationVerdict",
    "EfficiencyReport",
    "EquilibriumProfile",
    "LiquidityRegime",
    "PayoffKind",
    "UtcPosition",
    "best_response",
    "check_existence_condition",
    "classify_regime",
    "conjectured_cost_sweep",
    "conjectured_gradient",
    "correction_condition",
    "effective_budgets",
    "nash_baseline",
    "nash_conjectured",
    "nash_utc",
    "payoff",
    "payoff_conjectured",
    "payoff_curve",
    "payoff_gradient_affine",
    "payoff_utc",
    "verify_equilibrium",
]

PayoffKind = Literal["baseline", "utc", "conjectured"]
_EFFICIENCY_SLACK = 1e-9


class LiquidityRegime(str, Enum):
    """Aggregate liquidity relative to the tie-optimization schedule."""

    HIGH = "High"
    INTERMEDIATE = "Intermediate"
    LOW = "Low"


class EfficiencyReport(BaseModel):
    """Welfare ratio of an equilibrium schedule against tie optimization."""

    model_config = ConfigDict(frozen=True)

    eta: float
    regime: LiquidityRegime
    z: float | None = Field(default=None, description="beta * sum(B) / alpha, reported in the Low regime.")
    lower_bound: float

    @model_validator(mode="after")
    def _bounded(self) -> EfficiencyReport:
        if not (-_EFFICIENCY_SLACK <= self.eta <= 1.0 + _EFFICIENCY_SLACK):
            raise ValueError(f"eta={self.eta} outside [0, 1]")
        if self.eta < self.lower_bound - _EFFICIENCY_SLACK:
            raise ValueError(f"eta={self.eta} below its lower bound {self.lower_bound}")
        return self


class EquilibriumProfile(BaseModel):
    """Equilibrium bids with their regime, clearing outcome and efficiency."""

    model_config = ConfigDict(frozen=True)

    thetas_ne: tuple[float, ...]
    marginal_player: int | None = Field(default=None, description="Zero-based index of the pivotal bidder.")
    regime: LiquidityRegime
    clearing: ClearingResult
    efficiency: EfficiencyReport


class ConjecturedGameSpec(BaseModel):
    """Homogeneous bidders bidding on a conjectured spread, cleared on the operators' spread."""

    model_config = ConfigDict(frozen=True)

    n_players: int = Field(ge=1)
    liquidity_b: float = Field(gt=0, description="Common liquidity B, MW.")
    cost_c: float = Field(default=0.0, ge=0, description="Transaction fee, $/MWh.")
    bidder_alpha: float = Field(gt=0)
    bidder_beta: float = Field(gt=0)
    so_alpha: float = Field(gt=0)
    so_beta: float
    star_alpha: float | None = Field(default=None, gt=0)
    star_beta: float | None = Field(default=None, gt=0)
    consistency_budget: float | None = Field(
        default=None,
        gt=0,
        description="Allowed |N B - alpha/beta| times N; defaults to alpha/beta.",
    )

    @model_validator(mode="after")
    def _liquidity_consistent(self) -> ConjecturedGameSpec:
        conjectured_q = self.bidder_alpha / self.bidder_beta
        budget = self.consistency_budget if self.consistency_budget is not None else conjectured_q
        gap = abs(self.n_players * self.liquidity_b - conjectured_q)
        if gap > budget / self.n_players:
            raise ValueError(
                f"inconsistent_liquidity: |N*B - alpha/beta| = {gap:g} exceeds {budget / self.n_players:g}"
            )
        return self

    @property
    def gamma(self) -> float:
        n = self.n_players
        return self.cost_c * (2.0 - 1.0 / n) + self.bidder_beta * self.liquidity_b

    @property
    def total_liquidity(self) -> float:
        return self.n_players * self.liquidity_b

    @property
    def q_to(self) -> float:
        return self.so_alpha / self.so_beta

    @property
    def q_star(self) -> float | None:
        if self.star_alpha is None or self.star_beta is None:
            return None
        return self.star_alpha / self.star_beta

    def so_model(self) -> AffineSpread:
        return AffineSpread(alpha=self.so_alpha, beta=self.so_beta)

    def star_model(self) -> AffineSpread:
        if self.star_alpha is None or self.star_beta is None:
            raise GameError("Realized spread parameters are not set", code="missing_star_parameters")
        return AffineSpread(alpha=self.star_alpha, beta=self.star_beta)

    def bidder_model(self) -> AffineSpread:
        return AffineSpread(alpha=self.bidder_alpha, beta=self.bidder_beta)

    def roster(self) -> list[Bidder]:
        return [
            Bidder(id=f"bidder-{index + 1}", liquidity_b=self.liquidity_b, cost_c=self.cost_c)
            for index in range(self.n_players)
        ]


class CorrectionReport(BaseModel):
    """Whether strategic bidding pulls the schedule toward the realized optimum."""

    model_config = ConfigDict(frozen=True)

    condition_holds: bool
    lhs: float
    rhs: float
    q_cts: float
    q_to: float
    q_star: float
    distance_cts: float
    distance_to: float
    closer_directly: bool
    sufficient_case: bool = Field(description="Q_star <= Q_TO / 2, where CTS is always closer.")


class DeviationVerdict(BaseModel):
    """Outcome of the brute-force unilateral deviation scan."""

    model_config = ConfigDict(frozen=True)

    confirmed: bool
    player: int | None = None
    better_theta: float | None = None
    gain: float | None = None

    @property
    def violated(self) -> bool:
        return not self.confirmed


def _check_index(bidders: Sequence[Bidder], i: int) -> None:
    if not 0 <= i < len(bidders):
        raise GameError(f"Player index {i} out of range for {len(bidders)} bidders", code="index_out_of_range")


def _utc_term(bidder: Bidder, q: float | np.ndarray) -> float | np.ndarray:
    total = 0.0
    for position in bidder.utc:
        total = total + (position.alpha_in - position.beta_in * q - position.da_spread) * position.megawatts_f
    return total


def payoff(
    model: SpreadModel,
    bidders: Sequence[Bidder],
    profile: BidProfile,
    i: int,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """Revenue p * B_i - theta_i less transaction cost c * x_i."""
    _check_index(bidders, i)
    check_feasible(bidders, profile)
    result = clear(model, bidders, profile, tolerances=tolerances)
    bidder = bidders[i]
    return result.price_p * bidder.liquidity_b - profile.thetas[i] - bidder.cost_c * result.allocations_x[i]


def payoff_utc(
    model: SpreadModel,
    bidders: Sequence[Bidder],
    profile: BidProfile,
    i: int,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """CTS payoff plus the real-time value of the bidder's UTC positions at Q_CTS."""
    _check_index(bidders, i)
    check_feasible(bidders, profile)
    result = clear(model, bidders, profile, tolerances=tolerances)
    bidder = bidders[i]
    base = result.price_p * bidder.liquidity_b - profile.thetas[i] - bidder.cost_c * result.allocations_x[i]
    return base + float(_utc_term(bidder, result.q_cts))


def effective_budgets(beta: float, bidders: Sequence[Bidder]) -> np.ndarray:
    """B_i augmented by UTC exposure, B_i + sum_k (beta_in / beta) f_i."""
    return np.array(
        [
            bidder.liquidity_b + sum(position.beta_in / beta * position.megawatts_f for position in bidder.utc)
            for bidder in bidders
        ],
        dtype=float,
    )


def classify_regime(alpha: float, beta: float, sum_b: float, b_pivot: float) -> LiquidityRegime:
    """Liquidity regime; boundary cases resolve High first, then Low."""
    excess = sum_b - alpha / beta
    if excess >= b_pivot:
        return LiquidityRegime.HIGH
    if abs(excess) < b_pivot:
        return LiquidityRegime.INTERMEDIATE
    return LiquidityRegime.LOW


def check_existence_condition(model: SpreadModel, sum_b: float, q_grid: Sequence[float]) -> bool:
    """Sufficient condition P''(Q)(sum_b - Q) >= 2 P'(Q) for equilibrium existence, checked on a grid."""
    for q in q_grid:
        lhs = second_derivative(model, q) * (sum_b - q)
        rhs = 2.0 * derivative(model, q)
        if lhs < rhs:
            _logger.debug("existence condition fails at q=%s lhs=%s rhs=%s", q, lhs, rhs)
            return False
    return True


def _unique_pivot(budgets: np.ndarray, require_unique_max: bool) -> int:
    pivot = int(np.argmax(budgets))
    ties = int(np.sum(budgets == budgets[pivot]))
    if ties > 1:
        if require_unique_max:
            raise GameError(
                f"{ties} bidders share the maximal budget {budgets[pivot]:g}",
                code="ambiguous_pivot",
            )
        log_runtime_event(_logger, "pivot_tie_resolved", pivot=pivot, ties=ties)
    return pivot


def _efficiency_report(
    model: AffineSpread,
    clearing: ClearingResult,
    regime: LiquidityRegime,
    sum_b: float,
    *,
    lower_bound: float | None = None,
) -> EfficiencyReport:
    eta = allocation_welfare(model, clearing) / welfare(model, model.q_to)
    z = model.beta * sum_b / model.alpha if regime is LiquidityRegime.LOW else None
    if lower_bound is None:
        if regime is LiquidityRegime.HIGH:
            lower_bound = 1.0
        elif regime is LiquidityRegime.INTERMEDIATE:
            lower_bound = 0.75
        else:
            lower_bound = 2.0 * z - z * z
    return EfficiencyReport(eta=min(eta, 1.0), regime=regime, z=z, lower_bound=lower_bound)


def _pivot_bid(alpha: float, beta: float, sum_b: float, pivot_budget: float) -> float:
    spread_at_b = alpha - beta * sum_b
    return (beta * beta * pivot_budget * pivot_budget - spread_at_b * spread_at_b) / (4.0 * beta)


def nash_baseline(
    alpha: float,
    beta: float,
    liquidities: Sequence[float],
    *,
    require_unique_max: bool = True,
) -> EquilibriumProfile:
    """Unique equilibrium of the fee-free game with affine spread."""
    budgets = np.asarray(liquidities, dtype=float)
    if budgets.size == 0 or np.any(budgets <= 0):
        raise GameError("Liquidities must be a nonempty vector of positive values", code="invalid_liquidity")

    model = AffineSpread(alpha=alpha, beta=beta)
    bidders = [Bidder(id=f"bidder-{index + 1}", liquidity_b=float(b)) for index, b in enumerate(budgets)]
    pivot = _unique_pivot(budgets, require_unique_max)
    sum_b = float(budgets.sum())
    regime = classify_regime(alpha, beta, sum_b, float(budgets[pivot]))

    thetas = [0.0] * len(bidders)
    marginal = None
    if regime is LiquidityRegime.INTERMEDIATE:
        thetas[pivot] = _pivot_bid(alpha, beta, sum_b, float(budgets[pivot]))
        marginal = pivot

    clearing = clear(model, bidders, BidProfile(thetas=tuple(thetas)))
    efficiency = _efficiency_report(model, clearing, regime, sum_b)
    log_runtime_event(
        _logger,
        "nash_baseline",
        regime=regime.value,
        pivot=marginal,
        theta=thetas[pivot],
        q_cts=clearing.q_cts,
        eta=efficiency.eta,
    )
    return EquilibriumProfile(
        thetas_ne=tuple(thetas),
        marginal_player=marginal,
        regime=regime,
        clearing=clearing,
        efficiency=efficiency,
    )


def nash_utc(
    alpha: float,
    beta: float,
    bidders: Sequence[Bidder],
    *,
    require_unique_max: bool = True,
) -> EquilibriumProfile:
    """Equilibrium when bidders also hold UTC positions exposed to the tie-line flow."""
    if not bidders:
        raise GameError("Bidder roster is empty", code="empty_roster")
    for bidder in bidders:
        for position in bidder.utc:
            if position.megawatts_f < 0:
                raise GameError(
                    f"Bidder {bidder.id} holds a negative UTC position at {position.node_id}",
                    code="negative_utc_position",
                )

    model = AffineSpread(alpha=alpha, beta=beta)
    budgets = effective_budgets(beta, bidders)
    pivot = _unique_pivot(budgets, require_unique_max)
    pivot_budget = float(budgets[pivot])
    sum_b = float(roster_liquidities(bidders).sum())
    regime = classify_regime(alpha, beta, sum_b, pivot_budget)

    thetas = [0.0] * len(bidders)
    marginal = None
    lower_bound = None
    if regime is LiquidityRegime.INTERMEDIATE:
        q_intermediate = 0.5 * (model.q_to + sum_b - pivot_budget)
        if q_intermediate <= 0:
            raise GameError(
                f"Effective budget {pivot_budget:g} drives the schedule to {q_intermediate:g} MW",
                code="schedule_below_zero",
            )
        thetas[pivot] = _pivot_bid(alpha, beta, sum_b, pivot_budget)
        marginal = pivot
        if sum_b < pivot_budget:
            share = q_intermediate / model.q_to
            lower_bound = 2.0 * share - share * share

    clearing = clear(model, bidders, BidProfile(thetas=tuple(thetas)))
    efficiency = _efficiency_report(model, clearing, regime, sum_b, lower_bound=lower_bound)
    log_runtime_event(
        _logger,
        "nash_utc",
        regime=regime.value,
        pivot=marginal,
        effective_budgets=[float(b) for b in budgets],
        q_cts=clearing.q_cts,
    )
    return EquilibriumProfile(
        thetas_ne=tuple(thetas),
        marginal_player=marginal,
        regime=regime,
        clearing=clearing,
        efficiency=efficiency,
    )


def payoff_gradient_affine(
    alpha: float,
    beta: float,
    bidders: Sequence[Bidder],
    profile: BidProfile,
    i: int,
) -> float:
    """Derivative of the (UTC-augmented) payoff in theta_i for an affine spread."""
    _check_index(bidders, i)
    sum_b = float(roster_liquidities(bidders).sum())
    sum_theta = float(sum(profile.thetas))
    spread_at_b = alpha - beta * sum_b
    root = math.sqrt(spread_at_b * spread_at_b + 4.0 * beta * sum_theta)
    if root == 0:
        raise GameError("Payoff is not differentiable at this profile", code="degenerate_profile")
    budget = float(effective_budgets(beta, [bidders[i]])[0])
    gradient = beta * budget / root - 1.0

    cost = bidders[i].cost_c
    if cost > 0:
        price = 0.5 * (spread_at_b + root)
        if price <= 0:
            raise GameError("Transaction-cost term needs a positive price", code="degenerate_profile")
        theta_i = profile.thetas[i]
        gradient += cost / price - cost * theta_i * beta / (price * price * root)
    return gradient


def _conjectured_price(spec: ConjecturedGameSpec, sum_theta: np.ndarray, exact_price: bool) -> np.ndarray:
    sum_theta = np.asarray(sum_theta, dtype=float)
    if not exact_price:
        return np.sqrt(spec.bidder_beta * sum_theta)
    spread_at_b = spec.bidder_alpha - spec.bidder_beta * spec.total_liquidity
    return 0.5 * (spread_at_b + np.sqrt(spread_at_b * spread_at_b + 4.0 * spec.bidder_beta * sum_theta))


def _conjectured_payoffs(
    spec: ConjecturedGameSpec,
    others: float,
    own: np.ndarray,
    *,
    exact_price: bool = False,
) -> np.ndarray:
    own = np.asarray(own, dtype=float)
    price = _conjectured_price(spec, others + own, exact_price)
    with np.errstate(divide="ignore", invalid="ignore"):
        offered = np.where(price > 0, spec.liquidity_b - own / price, spec.liquidity_b)
    return price * spec.liquidity_b - own - spec.cost_c * offered


def payoff_conjectured(
    spec: ConjecturedGameSpec,
    thetas: Sequence[float],
    i: int,
    *,
    exact_price: bool = False,
) -> float:
    """Perceived payoff of bidder ``i`` under the common conjectured spread.

    By default the price is the large-N approximation sqrt(beta * sum(theta)); ``exact_price``
    switches to the quadratic-root price of the conjectured spread.
    """
    if len(thetas) != spec.n_players:
        raise GameError(f"Expected {spec.n_players} bids, got {len(thetas)}", code="misaligned_profile")
    if not 0 <= i < spec.n_players:
        raise GameError(f"Player index {i} out of range", code="index_out_of_range")
    others = float(sum(thetas)) - thetas[i]
    return float(_conjectured_payoffs(spec, others, np.array([thetas[i]]), exact_price=exact_price)[0])


def conjectured_gradient(spec: ConjecturedGameSpec, thetas: Sequence[float], i: int) -> float:
    """First-order condition of the perceived payoff in theta_i."""
    sum_theta = float(sum(thetas))
    if sum_theta <= 0:
        raise GameError("Gradient undefined when no bidder bids", code="degenerate_profile")
    price = math.sqrt(spec.bidder_beta * sum_theta)
    theta_i = thetas[i]
    return (
        spec.bidder_beta * spec.liquidity_b / (2.0 * price)
        - 1.0
        + spec.cost_c * (1.0 / price - theta_i / (2.0 * price * sum_theta))
    )


def nash_conjectured(spec: ConjecturedGameSpec) -> EquilibriumProfile:
    """Symmetric equilibrium of the conjectured-spread game, cleared on the operators' spread."""
    if spec.so_beta <= 0:
        raise GameError(f"Operators' slope must be positive, got {spec.so_beta!r}", code="nonpositive_so_slope")

    theta = spec.gamma**2 / (4.0 * spec.n_players * spec.bidder_beta)
    floor = spec.cost_c * spec.liquidity_b
    if theta < floor:
        _logger.warning("Equilibrium bid %.6g sits below the cost floor %.6g", theta, floor)
        log_runtime_event(_logger, "conjectured_bid_below_cost_floor", theta=theta, floor=floor)

    model = spec.so_model()
    bidders = spec.roster()
    clearing = clear(model, bidders, BidProfile(thetas=(theta,) * spec.n_players))
    regime = classify_regime(spec.so_alpha, spec.so_beta, spec.total_liquidity, spec.liquidity_b)
    efficiency = _efficiency_report(model, clearing, regime, spec.total_liquidity, lower_bound=0.0)
    log_runtime_event(
        _logger,
        "nash_conjectured",
        theta=theta,
        gamma=spec.gamma,
        q_cts=clearing.q_cts,
        q_to=spec.q_to,
    )
    return EquilibriumProfile(
        thetas_ne=(theta,) * spec.n_players,
        marginal_player=None,
        regime=regime,
        clearing=clearing,
        efficiency=efficiency,
    )


def correction_condition(spec: ConjecturedGameSpec) -> CorrectionReport:
    """Check whether the equilibrium schedule lands closer to Q_star than Q_TO does."""
    q_star = spec.q_star
    if q_star is None:
        raise GameError("Realized spread parameters are required", code="missing_star_parameters")

    q_to = spec.q_to
    lhs = spec.gamma**2 / (spec.bidder_beta * spec.so_beta)
    rhs = 8.0 * (q_to - q_star) * (q_to - 2.0 * q_star + spec.total_liquidity)
    q_cts = nash_conjectured(spec).clearing.q_cts
    distance_cts = abs(q_cts - q_star)
    distance_to = abs(q_to - q_star)
    return CorrectionReport(
        condition_holds=lhs <= rhs,
        lhs=lhs,
        rhs=rhs,
        q_cts=q_cts,
        q_to=q_to,
        q_star=q_star,
        distance_cts=distance_cts,
        distance_to=distance_to,
        closer_directly=distance_cts < distance_to,
        sufficient_case=q_star <= q_to / 2.0,
    )


class ConjecturedSweepPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    cost_c: float
    theta_ne: float
    q_cts: float


def conjectured_cost_sweep(spec: ConjecturedGameSpec, costs: Sequence[float]) -> list[ConjecturedSweepPoint]:
    """Equilibrium bid and schedule across transaction fees."""
    points = []
    for cost in costs:
        profile = nash_conjectured(spec.model_copy(update={"cost_c": float(cost)}))
        points.append(
            ConjecturedSweepPoint(cost_c=float(cost), theta_ne=profile.thetas_ne[0], q_cts=profile.clearing.q_cts)
        )
    return points


def _feasible_cap(model: SpreadModel, bidders: Sequence[Bidder], others: float) -> float:
    surplus = float(roster_liquidities(bidders).sum()) * evaluate(model, 0.0)
    cap = surplus - others
    return cap - 1e-9 * max(1.0, abs(cap))


def _grid_payoffs(
    model: SpreadModel,
    bidders: Sequence[Bidder],
    thetas: Sequence[float],
    i: int,
    own: np.ndarray,
    *,
    payoff_kind: PayoffKind,
    conjecture: ConjecturedGameSpec | None,
    tolerances: Tolerances,
) -> np.ndarray:
    others = float(sum(thetas)) - thetas[i]
    if payoff_kind == "conjectured":
        if conjecture is None:
            raise GameError("Conjectured payoffs need a game spec", code="missing_conjecture")
        return _conjectured_payoffs(conjecture, others, own)

    bidder = bidders[i]
    include_utc = payoff_kind == "utc"
    if not isinstance(model, AffineSpread):
        values = []
        payoff_fn = payoff_utc if include_utc else payoff
        for value in own:
            trial = list(thetas)
            trial[i] = float(value)
            values.append(payoff_fn(model, bidders, BidProfile(thetas=tuple(trial)), i, tolerances=tolerances))
        return np.array(values, dtype=float)

    liquidities = roster_liquidities(bidders)
    sum_b = float(liquidities.sum())
    total = others + own
    q = np.empty_like(own)
    price = np.empty_like(own)
    allocation = np.empty_like(own)

    positive = total > 0
    if np.any(positive):
        q[positive], price[positive] = affine_schedule(model.alpha, model.beta, sum_b, total[positive])
        allocation[positive] = bidder.liquidity_b - own[positive] / price[positive]
    if np.any(~positive):
        q_zero = min(sum_b, model.q_to)
        q[~positive] = q_zero
        price[~positive] = evaluate(model, q_zero)
        allocation[~positive] = bidder.liquidity_b if sum_b < model.q_to else bidder.liquidity_b / sum_b * model.q_to

    values = price * bidder.liquidity_b - own - bidder.cost_c * allocation
    if include_utc:
        values = values + _utc_term(bidder, q)
    return values


def payoff_curve(
    model: SpreadModel,
    bidders: Sequence[Bidder],
    profile: BidProfile,
    i: int,
    thetas: Sequence[float],
    *,
    payoff_kind: PayoffKind = "baseline",
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """Payoff of player ``i`` over ``thetas`` with every other bid held fixed."""
    _check_index(bidders, i)
    own = np.asarray(thetas, dtype=float)
    others = float(sum(profile.thetas)) - profile.thetas[i]
    if np.any(own > _feasible_cap(model, bidders, others)):
        raise ClearingError("Payoff curve reaches past the spread surplus", code="bids_exceed_spread_surplus")
    return _grid_payoffs(
        model,
        bidders,
        profile.thetas,
        i,
        own,
        payoff_kind=payoff_kind,
        conjecture=None,
        tolerances=tolerances,
    )


def best_response(
    model: SpreadModel,
    bidders: Sequence[Bidder],
    profile: BidProfile,
    i: int,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """Payoff-maximizing theta_i against the other bids (UTC positions included)."""
    _check_index(bidders, i)
    bidder = bidders[i]
    others = float(sum(profile.thetas)) - profile.thetas[i]
    floor = bidder.cost_c * bidder.liquidity_b
    cap = _feasible_cap(model, bidders, others)
    if cap <= floor:
        return floor

    if isinstance(model, AffineSpread) and bidder.cost_c == 0:
        sum_b = float(roster_liquidities(bidders).sum())
        budget = float(effective_budgets(model.beta, [bidder])[0])
        target = _pivot_bid(model.alpha, model.beta, sum_b, budget) - others
        return float(min(max(floor, target), cap))

    def loss(value: float) -> float:
        trial = list(profile.thetas)
        trial[i] = value
        return -payoff_utc(model, bidders, BidProfile(thetas=tuple(trial)), i, tolerances=tolerances)

    result = optimize.minimize_scalar(
        loss,
        bounds=(floor, cap),
        method="bounded",
        options={"xatol": tolerances.schedule_rel_width * max(1.0, cap)},
    )
    best = float(result.x)
    if loss(floor) <= loss(best):
        return floor
    return best


def _default_radius(
    model: SpreadModel,
    bidder: Bidder,
    payoff_kind: PayoffKind,
    conjecture: ConjecturedGameSpec | None,
) -> float:
    if payoff_kind == "conjectured" and conjecture is not None:
        return conjecture.bidder_beta * conjecture.liquidity_b**2
    slope = model.beta if isinstance(model, AffineSpread) else -derivative(model, 0.0)
    return slope * bidder.liquidity_b**2


def verify_equilibrium(
    model: SpreadModel,
    bidders: Sequence[Bidder],
    candidate: BidProfile,
    grid_size: int = DEFAULT_ORACLE_GRID_SIZE,
    radius: float | None = None,
    *,
    payoff_kind: PayoffKind = "baseline",
    conjecture: ConjecturedGameSpec | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> DeviationVerdict:
    """Scan unilateral deviations on a grid around each bid.

    Reports the most profitable deviation over all players (lowest player, then lowest grid
    index, on ties). Deviations that would exhaust the spread surplus are outside the
    cleared domain and are not scanned.
    """
    if grid_size < 3:
        raise GameError(f"grid_size must be at least 3, got {grid_size}", code="invalid_grid")
    if payoff_kind == "conjectured":
        if conjecture is None:
            raise GameError("Conjectured verification needs a game spec", code="missing_conjecture")
        bidders = conjecture.roster()
    if len(candidate.thetas) != len(bidders):
        raise GameError(
            f"Candidate has {len(candidate.thetas)} bids for {len(bidders)} bidders",
            code="misaligned_profile",
        )

    thetas = list(candidate.thetas)
    best: DeviationVerdict = DeviationVerdict(confirmed=True)
    best_gain = -math.inf
    for i, bidder in enumerate(bidders):
        span = radius if radius is not None else _default_radius(model, bidder, payoff_kind, conjecture)
        low = max(bidder.cost_c * bidder.liquidity_b, thetas[i] - span)
        high = thetas[i] + span
        if payoff_kind != "conjectured":
            high = min(high, _feasible_cap(model, bidders, float(sum(thetas)) - thetas[i]))
        if high <= low:
            continue

        current = _grid_payoffs(
            model,
            bidders,
            thetas,
            i,
            np.array([thetas[i]], dtype=float),
            payoff_kind=payoff_kind,
            conjecture=conjecture,
            tolerances=tolerances,
        )[0]
        grid = np.linspace(low, high, grid_size)
        gains = (
            _grid_payoffs(
                model,
                bidders,
                thetas,
                i,
                grid,
                payoff_kind=payoff_kind,
                conjecture=conjecture,
                tolerances=tolerances,
            )
            - current
        )
        k = int(np.argmax(gains))
        threshold = tolerances.deviation_gain_rel * max(1.0, abs(current))
        if gains[k] > threshold and gains[k] > best_gain:
            best_gain = float(gains[k])
            best = DeviationVerdict(confirmed=False, player=i, better_theta=float(grid[k]), gain=best_gain)

    log_runtime_event(
        _logger,
        "verify_equilibrium",
        confirmed=best.confirmed,
        player=best.player,
        gain=best.gain,
        grid_size=grid_size,
    )
    return best
