"""LMP/interchange ingestion, spread regression and spread statistics."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from datetime import datetime
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg

from .config import CalibrationError
from .runtime_utils import log_runtime_event
from .spread import AffineSpread

_logger = logging.getLogger(__name__)

_MIN_REGRESSION_SAMPLES = 4
_UNIT_WEIGHT_BAND = (0.9, 1.1)


class CsvFormat(BaseModel):
    """Column mapping for market CSV files."""

    model_config = ConfigDict(frozen=True)

    timestamp: str = "timestamp"
    price_a: str = "price_a"
    price_b: str = "price_b"
    q_mw: str = "q_mw"
    delimiter: str = Field(default=",", min_length=1, max_length=1)

    def columns(self) -> list[str]:
        return [self.timestamp, self.price_a, self.price_b, self.q_mw]


class MarketSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    timestamp: datetime
    price_area_a: float = Field(description="LMP in area A, $/MWh.")
    price_area_b: float = Field(description="LMP in area B, $/MWh.")
    interchange_q: float = Field(description="Scheduled interchange from A to B, MW.")

    @property
    def spread(self) -> float:
        return self.price_area_b - self.price_area_a


class LoadedSamples(BaseModel):
    model_config = ConfigDict(frozen=True)

    samples: tuple[MarketSample, ...]
    skipped: int = Field(ge=0)


class Dependent(str, Enum):
    AREA_A = "AreaA"
    AREA_B = "AreaB"


class RegressionFit(BaseModel):
    """OLS fit of one area's LMP on the other's LMP and the interchange."""

    model_config = ConfigDict(frozen=True)

    w1: float
    w2: float
    w3: float
    adjusted_r2: float = Field(le=1.0 + 1e-12)
    implied_alpha: float
    implied_beta: float
    n_samples: int
    dependent: Dependent


class SpreadStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: float
    abs_mean: float
    std_dev: float = Field(ge=0)
    n_samples: int


class SpreadComparison(BaseModel):
    model_config = ConfigDict(frozen=True)

    abs_mean_gap: float
    std_gap: float


def load_samples(path: str | Path, csv_format: CsvFormat | None = None) -> LoadedSamples:
    """Parse a market CSV; rows with missing or malformed fields and repeated timestamps are skipped."""
    csv_format = csv_format or CsvFormat()
    path = Path(path)
    try:
        frame = pd.read_csv(path, sep=csv_format.delimiter, dtype=str, encoding="utf-8", skipinitialspace=True)
    except FileNotFoundError as exc:
        raise CalibrationError(f"Market file not found: {path}", code="file_not_found") from exc
    except pd.errors.EmptyDataError as exc:
        raise CalibrationError(f"Market file is empty: {path}", code="empty_file") from exc

    frame.columns = [str(column).strip() for column in frame.columns]
    missing = [column for column in csv_format.columns() if column not in frame.columns]
    if missing:
        raise CalibrationError(f"Missing columns {missing} in {path}", code="missing_columns")

    parsed = pd.DataFrame(
        {
            "timestamp": pd.to_datetime(frame[csv_format.timestamp], format="ISO8601", utc=True, errors="coerce"),
            "price_area_a": pd.to_numeric(frame[csv_format.price_a], errors="coerce"),
            "price_area_b": pd.to_numeric(frame[csv_format.price_b], errors="coerce"),
            "interchange_q": pd.to_numeric(frame[csv_format.q_mw], errors="coerce"),
        }
    )
    numeric = parsed[["price_area_a", "price_area_b", "interchange_q"]]
    valid = parsed["timestamp"].notna() & np.isfinite(numeric).all(axis=1)
    cleaned = parsed[valid].sort_values("timestamp", kind="stable")
    cleaned = cleaned.drop_duplicates(subset="timestamp", keep="first")
    skipped = len(parsed) - len(cleaned)
    if cleaned.empty:
        raise CalibrationError(f"No valid rows in {path}", code="no_valid_rows")

    samples = tuple(
        MarketSample(
            timestamp=row.timestamp.to_pydatetime(),
            price_area_a=float(row.price_area_a),
            price_area_b=float(row.price_area_b),
            interchange_q=float(row.interchange_q),
        )
        for row in cleaned.itertuples(index=False)
    )
    log_runtime_event(_logger, "samples_loaded", path=str(path), rows=len(samples), skipped=skipped)
    if skipped:
        _logger.info("Skipped %d of %d rows in %s", skipped, len(parsed), path)
    return LoadedSamples(samples=samples, skipped=skipped)


def _columns(samples: Sequence[MarketSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    price_a = np.array([s.price_area_a for s in samples], dtype=float)
    price_b = np.array([s.price_area_b for s in samples], dtype=float)
    q = np.array([s.interchange_q for s in samples], dtype=float)
    return price_a, price_b, q


def _least_squares(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    q_factor, r_factor = np.linalg.qr(design, mode="reduced")
    diagonal = np.abs(np.diag(r_factor))
    cutoff = max(design.shape) * np.finfo(float).eps * max(float(diagonal.max(initial=0.0)), 1.0)
    if diagonal.size < design.shape[1] or np.any(diagonal <= cutoff):
        raise CalibrationError("Regression design matrix is rank deficient", code="rank_deficient")
    return linalg.solve_triangular(r_factor, q_factor.T @ target)


def fit_regression(samples: Sequence[MarketSample], dependent: Dependent = Dependent.AREA_B) -> RegressionFit:
    """Fit price_dep = w1 * price_other + w2 * Q + w3 by orthogonal-factorization OLS."""
    n = len(samples)
    if n < _MIN_REGRESSION_SAMPLES:
        raise CalibrationError(
            f"Regression needs at least {_MIN_REGRESSION_SAMPLES} samples, got {n}",
            code="too_few_samples",
        )
    price_a, price_b, q = _columns(samples)
    if dependent is Dependent.AREA_B:
        target, other = price_b, price_a
    else:
        target, other = price_a, price_b

    design = np.column_stack([other, q, np.ones(n)])
    w1, w2, w3 = (float(w) for w in _least_squares(design, target))

    residuals = target - design @ np.array([w1, w2, w3])
    ss_res = float(residuals @ residuals)
    centered = target - target.mean()
    ss_tot = float(centered @ centered)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    regressors = design.shape[1] - 1
    adjusted = 1.0 - (1.0 - r2) * (n - 1) / (n - regressors - 1) if n > regressors + 1 else r2

    if dependent is Dependent.AREA_B:
        implied_alpha, implied_beta = w3, -w2
    else:
        implied_alpha, implied_beta = -w3, w2

    log_runtime_event(_logger, "regression_fit", w1=w1, w2=w2, w3=w3, adjusted_r2=adjusted, n=n)
    return RegressionFit(
        w1=w1,
        w2=w2,
        w3=w3,
        adjusted_r2=min(adjusted, 1.0),
        implied_alpha=implied_alpha,
        implied_beta=implied_beta,
        n_samples=n,
        dependent=dependent,
    )


def implied_spread_model(fit: RegressionFit, samples: Sequence[MarketSample]) -> AffineSpread:
    """Affine spread P(Q) = alpha - beta * Q refit on the spread series, taking w1 as one."""
    low, high = _UNIT_WEIGHT_BAND
    if not low <= fit.w1 <= high:
        raise CalibrationError(
            f"w1={fit.w1:.4f} is too far from one to treat prices as coupled",
            code="unconvertible_fit",
        )
    price_a, price_b, q = _columns(samples)
    slope, intercept = _least_squares(np.column_stack([q, np.ones(len(q))]), price_b - price_a)
    alpha, beta = float(intercept), -float(slope)
    if beta <= 0 or alpha <= 0:
        raise CalibrationError(
            f"Spread refit gives alpha={alpha:g}, beta={beta:g}; need both positive",
            code="unconvertible_fit",
        )
    return AffineSpread(alpha=alpha, beta=beta)


def spread_stats(samples: Sequence[MarketSample]) -> SpreadStats:
    """Mean, absolute mean and population standard deviation of price_b - price_a."""
    if not samples:
        raise CalibrationError("Spread statistics need at least one sample", code="too_few_samples")
    price_a, price_b, _ = _columns(samples)
    spreads = price_b - price_a
    return SpreadStats(
        mean=float(spreads.mean()),
        abs_mean=float(np.abs(spreads).mean()),
        std_dev=float(spreads.std(ddof=0)),
        n_samples=len(samples),
    )


def compare_spread_stats(first: SpreadStats, second: SpreadStats) -> SpreadComparison:
    return SpreadComparison(abs_mean_gap=first.abs_mean - second.abs_mean, std_gap=first.std_dev - second.std_dev)


def synthesize_samples(
    model: AffineSpread,
    price_a: Sequence[float],
    q: Sequence[float],
    *,
    start: str = "2018-01-01T00:00:00Z",
) -> list[MarketSample]:
    """Noiseless hourly samples with price_b = price_a + P(q)."""
    if len(price_a) != len(q):
        raise CalibrationError("price_a and q must have equal length", code="misaligned_series")
    timestamps = pd.date_range(start=start, periods=len(q), freq="h")
    return [
        MarketSample(
            timestamp=stamp.to_pydatetime(),
            price_area_a=float(a),
            price_area_b=float(a) + model.alpha - model.beta * float(flow),
            interchange_q=float(flow),
        )
        for stamp, a, flow in zip(timestamps, price_a, q)
    ]
