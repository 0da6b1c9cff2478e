"""Interface clearing: CTS schedule, clearing price and per-bidder allocations."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from typing import Annotated

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import optimize

from .config import DEFAULT_TOLERANCES, ClearingError, Tolerances
from .spread import AffineSpread, SpreadModel, evaluate, tie_optimization, welfare

_logger = logging.getLogger(__name__)

PowerMW = Annotated[float, Field(description="Power in megawatts (MW)")]


class UtcPosition(BaseModel):
    """Day-ahead up-to-congestion position coupled to the CTS schedule."""

    model_config = ConfigDict(frozen=True)

    node_id: str
    megawatts_f: PowerMW = 0.0
    alpha_in: float = Field(description="Internal spread intercept, $/MWh.")
    beta_in: float = Field(ge=0, description="Internal spread sensitivity to tie-line flow, $/MWh per MW.")
    da_spread: float = Field(default=0.0, description="Day-ahead internal spread the position was bought at, $/MWh.")


class Bidder(BaseModel):
    """A virtual CTS bidder offering up to ``liquidity_b`` MW across the interface."""

    model_config = ConfigDict(frozen=True)

    id: str
    liquidity_b: float = Field(gt=0, description="Maximum quantity B_i, MW.")
    cost_c: float = Field(default=0.0, ge=0, description="Transaction cost rate c, $/MWh.")
    utc: tuple[UtcPosition, ...] = ()


class BidProfile(BaseModel):
    """Bid parameters theta_i ($/h), aligned with a bidder roster."""

    model_config = ConfigDict(frozen=True)

    thetas: tuple[float, ...]

    @field_validator("thetas")
    @classmethod
    def _finite(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(theta) for theta in value):
            raise ValueError("thetas must be finite")
        return value

    @classmethod
    def zeros(cls, n: int) -> BidProfile:
        return cls(thetas=(0.0,) * n)


class ClearingResult(BaseModel):
    """Cleared schedule, price and allocations for one bid profile."""

    model_config = ConfigDict(frozen=True)

    q_cts: float = Field(description="Tie-line schedule Q_CTS, MW.")
    price_p: float = Field(description="Clearing price, $/MWh.")
    allocations_x: tuple[float, ...] = Field(description="Per-bidder allocations x_i, MW (may be negative).")
    degenerate_zero_theta: bool = False


def roster_liquidities(bidders: Sequence[Bidder]) -> np.ndarray:
    return np.array([bidder.liquidity_b for bidder in bidders], dtype=float)


def _validate_alignment(bidders: Sequence[Bidder], profile: BidProfile) -> None:
    if not bidders:
        raise ClearingError("Bidder roster is empty", code="empty_roster")
    if len(profile.thetas) != len(bidders):
        raise ClearingError(
            f"Bid profile has {len(profile.thetas)} entries for {len(bidders)} bidders",
            code="misaligned_profile",
        )


def check_feasible(bidders: Sequence[Bidder], profile: BidProfile) -> None:
    """Reject bids below the cost floor c_i * B_i."""
    _validate_alignment(bidders, profile)
    for index, (bidder, theta) in enumerate(zip(bidders, profile.thetas)):
        floor = bidder.cost_c * bidder.liquidity_b
        if theta < floor - 1e-12 * max(1.0, floor):
            raise ClearingError(
                f"Bidder {index} ({bidder.id}) bids theta={theta:g} below its cost floor {floor:g}",
                code="infeasible_bid",
            )


def transport_offer(bidder: Bidder, theta: float, price: float) -> float:
    """Quantity B - theta/p a bidder offers at price ``price``."""
    if price <= 0:
        if theta == 0:
            return bidder.liquidity_b
        raise ClearingError(f"Transport offer undefined at price {price:g}", code="nonpositive_price")
    return bidder.liquidity_b - theta / price


def interface_supply(bidders: Sequence[Bidder], profile: BidProfile, price: float) -> float:
    """Aggregate interface supply stack at ``price``."""
    _validate_alignment(bidders, profile)
    return sum(transport_offer(bidder, theta, price) for bidder, theta in zip(bidders, profile.thetas))


def affine_schedule(
    alpha: float, beta: float, sum_b: float, sum_theta: float | np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form schedule and price for an affine spread, vectorised over ``sum_theta`` > 0.

    Uses the rationalised root so that tiny aggregate bids do not cancel catastrophically.
    """
    sum_theta = np.asarray(sum_theta, dtype=float)
    spread_at_b = alpha - beta * sum_b
    root = np.sqrt(spread_at_b * spread_at_b + 4.0 * beta * sum_theta)
    if spread_at_b >= 0:
        gap = 2.0 * sum_theta / (root + spread_at_b)
        price = 0.5 * (spread_at_b + root)
    else:
        gap = (root - spread_at_b) / (2.0 * beta)
        price = 2.0 * beta * sum_theta / (root - spread_at_b)
    return sum_b - gap, price


def _surplus_at_zero(model: SpreadModel, sum_b: float) -> float:
    return sum_b * evaluate(model, 0.0)


def schedule_by_bisection(
    model: SpreadModel,
    sum_b: float,
    sum_theta: float,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """Root of g(Q) = (sum_b - Q) P(Q) = sum_theta on [0, sum_b] by bisection."""
    if sum_theta <= 0:
        raise ClearingError("Bisection path needs a positive aggregate bid", code="degenerate_profile")
    if sum_theta >= _surplus_at_zero(model, sum_b):
        raise ClearingError(
            f"Aggregate bid {sum_theta:g} reaches the spread surplus {_surplus_at_zero(model, sum_b):g}",
            code="bids_exceed_spread_surplus",
        )

    def excess(q: float) -> float:
        return (sum_b - q) * evaluate(model, q) - sum_theta

    root = optimize.bisect(
        excess,
        0.0,
        sum_b,
        xtol=tolerances.schedule_rel_width * max(1.0, sum_b),
        maxiter=500,
    )
    return float(root)


def clear_arrays(
    model: SpreadModel,
    liquidities: np.ndarray,
    thetas: np.ndarray,
    *,
    q_to: float | None = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> tuple[float, float, np.ndarray, bool]:
    """Array-level clearing used by :func:`clear` and the repeated-game loop."""
    if np.any(thetas < 0):
        raise ClearingError(f"Bids must be nonnegative, got {np.asarray(thetas).tolist()}", code="negative_bid")
    sum_b = float(np.sum(liquidities))
    sum_theta = float(np.sum(thetas))

    if sum_theta == 0:
        if q_to is None:
            q_to = tie_optimization(model, tolerances=tolerances).q_to
        if sum_b < q_to:
            q_cts = sum_b
            allocations = liquidities.astype(float).copy()
        else:
            q_cts = q_to
            allocations = liquidities / sum_b * q_to
        return q_cts, evaluate(model, q_cts), allocations, True

    if isinstance(model, AffineSpread):
        if sum_theta >= _surplus_at_zero(model, sum_b):
            raise ClearingError(
                f"Aggregate bid {sum_theta:g} reaches the spread surplus {_surplus_at_zero(model, sum_b):g}",
                code="bids_exceed_spread_surplus",
            )
        q_cts, price = affine_schedule(model.alpha, model.beta, sum_b, sum_theta)
        q_cts, price = float(q_cts), float(price)
    else:
        q_cts = schedule_by_bisection(model, sum_b, sum_theta, tolerances=tolerances)
        price = evaluate(model, q_cts)

    allocations = liquidities - thetas / price
    return q_cts, price, allocations, False


def clear(
    model: SpreadModel,
    bidders: Sequence[Bidder],
    profile: BidProfile,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> ClearingResult:
    """Solve the operators' allocation problem for ``profile``."""
    _validate_alignment(bidders, profile)
    q_cts, price, allocations, degenerate = clear_arrays(
        model,
        roster_liquidities(bidders),
        np.asarray(profile.thetas, dtype=float),
        tolerances=tolerances,
    )
    _logger.debug("cleared q_cts=%s price=%s degenerate=%s", q_cts, price, degenerate)
    return ClearingResult(
        q_cts=q_cts,
        price_p=price,
        allocations_x=tuple(float(x) for x in allocations),
        degenerate_zero_theta=degenerate,
    )


def allocation_welfare(
    model: SpreadModel,
    result: ClearingResult,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> float:
    """Welfare W(Q_CTS) of a cleared schedule."""
    return welfare(model, result.q_cts, tolerances=tolerances)
