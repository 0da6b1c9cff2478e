"""Inter-area price spread models, welfare and the tie-optimization benchmark."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Annotated

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, optimize

from .config import DEFAULT_TOLERANCES, SpreadModelError, Tolerances

_logger = logging.getLogger(__name__)

SlopeDollarPerMWhPerMW = Annotated[float, Field(gt=0, description="Spread slope in $/MWh per MW")]

ScalarFn = Callable[[float], float]


class AffineSpread(BaseModel):
    """Affine price spread P(Q) = alpha - beta * Q."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(gt=0, description="Spread at zero flow, $/MWh.")
    beta: SlopeDollarPerMWhPerMW

    @property
    def q_to(self) -> float:
        return self.alpha / self.beta


@dataclass(frozen=True)
class GeneralConcaveSpread:
    """Black-box concave, strictly decreasing spread with caller-supplied derivatives.

    Construction spot-checks the shape on ``probe_points`` evenly spaced flows over
    ``[0, probe_upper]``; a callable that passes the probe is trusted elsewhere.
    """

    spread: ScalarFn
    derivative: ScalarFn
    second_derivative: ScalarFn
    probe_upper: float
    tolerances: Tolerances = field(default=DEFAULT_TOLERANCES, compare=False, repr=False)

    def __post_init__(self) -> None:
        _validate_concave_probe(self)


SpreadModel = AffineSpread | GeneralConcaveSpread


class Benchmark(BaseModel):
    """Tie-optimization schedule and the welfare it attains."""

    model_config = ConfigDict(frozen=True)

    q_to: float = Field(ge=0, description="Flow at which the spread vanishes, MW.")
    welfare_at_q_to: float = Field(description="Welfare W(Q_TO), $/h.")


def _call(fn: ScalarFn, q: float, what: str) -> float:
    try:
        value = float(fn(q))
    except Exception as exc:
        raise SpreadModelError(f"Spread {what} failed at q={q!r}: {exc}", code="evaluation_failed") from exc
    if not math.isfinite(value):
        raise SpreadModelError(f"Spread {what} returned non-finite value at q={q!r}", code="evaluation_failed")
    return value


def _validate_concave_probe(model: GeneralConcaveSpread) -> None:
    if not (math.isfinite(model.probe_upper) and model.probe_upper > 0):
        raise SpreadModelError(f"probe_upper must be a positive finite flow, got {model.probe_upper!r}")

    grid = np.linspace(0.0, model.probe_upper, model.tolerances.probe_points)
    values = np.array([_call(model.spread, float(q), "evaluation") for q in grid])
    curvature = np.array([_call(model.second_derivative, float(q), "second derivative") for q in grid])
    scale = max(1.0, float(np.max(np.abs(values))))
    slack = model.tolerances.probe_slack * scale

    if values[0] <= 0:
        raise SpreadModelError(f"Spread at zero flow must be positive, got {values[0]!r}")
    if np.any(np.diff(values) >= 0):
        raise SpreadModelError("Spread is not strictly decreasing on the probe grid")
    if np.any(values[2:] - 2 * values[1:-1] + values[:-2] > slack):
        raise SpreadModelError("Spread is not concave on the probe grid")
    if np.any(curvature > slack):
        raise SpreadModelError("Second derivative is positive somewhere on the probe grid")


def affine_from_benchmark(q_to: float, beta: float) -> AffineSpread:
    """Affine spread with root ``q_to`` and slope ``beta``."""
    return AffineSpread(alpha=beta * q_to, beta=beta)


def evaluate(model: SpreadModel, q: float) -> float:
    """Spread P(q); affine models extend to negative flows."""
    if isinstance(model, AffineSpread):
        return model.alpha - model.beta * q
    return _call(model.spread, q, "evaluation")


def derivative(model: SpreadModel, q: float) -> float:
    if isinstance(model, AffineSpread):
        return -model.beta
    return _call(model.derivative, q, "derivative")


def second_derivative(model: SpreadModel, q: float) -> float:
    if isinstance(model, AffineSpread):
        return 0.0
    return _call(model.second_derivative, q, "second derivative")


def welfare(model: SpreadModel, q: float, *, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Welfare W(q), the integral of the spread from 0 to q."""
    if q < 0:
        raise SpreadModelError(f"Welfare requires a nonnegative flow, got {q!r}", code="negative_quantity")
    if isinstance(model, AffineSpread):
        return model.alpha * q - model.beta * q * q / 2.0
    if q == 0:
        return 0.0
    value, abs_error = integrate.quad(
        lambda z: evaluate(model, z),
        0.0,
        q,
        epsabs=tolerances.quad_abs,
        epsrel=1e-12,
        limit=200,
    )
    _logger.debug("welfare quadrature q=%s value=%s abs_error=%s", q, value, abs_error)
    return float(value)


def _general_spread_root(model: GeneralConcaveSpread, tolerances: Tolerances) -> float:
    q_hi = 1.0
    doublings = 0
    while True:
        value = evaluate(model, q_hi)
        if value == 0:
            return q_hi
        if value < 0:
            break
        if doublings >= tolerances.max_doublings:
            raise SpreadModelError(
                f"Spread stays positive after {doublings} doublings (q={q_hi:g})",
                code="unbounded_demand",
            )
        q_hi *= 2.0
        doublings += 1

    root = optimize.bisect(
        lambda q: evaluate(model, q),
        0.0,
        q_hi,
        xtol=tolerances.spread_root_rel_width * max(1.0, q_hi),
        maxiter=500,
    )
    return float(root)


def tie_optimization(model: SpreadModel, *, tolerances: Tolerances = DEFAULT_TOLERANCES) -> Benchmark:
    """Welfare-maximizing schedule Q_TO where the spread vanishes."""
    if isinstance(model, AffineSpread):
        return Benchmark(q_to=model.q_to, welfare_at_q_to=model.alpha**2 / (2.0 * model.beta))
    q_to = _general_spread_root(model, tolerances)
    return Benchmark(q_to=q_to, welfare_at_q_to=welfare(model, q_to, tolerances=tolerances))


def efficiency_at(model: SpreadModel, q: float, *, tolerances: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Welfare at ``q`` relative to the tie-optimization welfare."""
    benchmark = tie_optimization(model, tolerances=tolerances)
    return welfare(model, q, tolerances=tolerances) / benchmark.welfare_at_q_to
