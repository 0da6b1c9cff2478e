from pathlib import Path

import numpy as np
import pytest

from ctslab.calibrate import (
    CsvFormat,
    Dependent,
    compare_spread_stats,
    fit_regression,
    implied_spread_model,
    load_samples,
    spread_stats,
    synthesize_samples,
)
from ctslab.config import CalibrationError, get_dataset_dir
from ctslab.spread import AffineSpread

# Read at import time: the autouse env fixture clears CTS_LAB_* knobs before each test.
_DATASET_DIR = get_dataset_dir()


def _write(tmp_path: Path, text: str, name: str = "market.csv") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _samples(price_a, price_b, q):
    model = AffineSpread(alpha=1.0, beta=1.0)
    samples = synthesize_samples(model, price_a, q)
    return [
        sample.model_copy(update={"price_area_b": float(b)}) for sample, b in zip(samples, price_b)
    ]


# --- loading ---------------------------------------------------------------


def test_load_sorts_rows_and_skips_malformed_ones(tmp_path):
    path = _write(
        tmp_path,
        "timestamp,price_a,price_b,q_mw\n"
        "2018-01-01T02:00:00Z,30.0,31.0,900\n"
        "2018-01-01T00:00:00Z,25.0,27.5,1000\n"
        "2018-01-01T01:00:00Z,abc,30.0,950\n"
        "2018-01-01T03:00:00Z,32.0,,800\n",
    )
    loaded = load_samples(path)
    assert loaded.skipped == 2
    assert [s.price_area_a for s in loaded.samples] == [25.0, 30.0]
    assert loaded.samples[0].spread == pytest.approx(2.5)
    assert loaded.samples[0].timestamp < loaded.samples[1].timestamp


def test_repeated_timestamps_keep_the_first_row(tmp_path):
    path = _write(
        tmp_path,
        "timestamp,price_a,price_b,q_mw\n2018-01-01 00:00,25,27,1000\n2018-01-01 00:00,99,99,1\n",
    )
    loaded = load_samples(path)
    assert len(loaded.samples) == 1
    assert loaded.samples[0].price_area_a == 25.0
    assert loaded.skipped == 1


def test_custom_columns_and_delimiter(tmp_path):
    path = _write(tmp_path, "hour;nyiso;isone;flow\n2018-06-01T12:00:00Z;40;42;1200\n")
    csv_format = CsvFormat(timestamp="hour", price_a="nyiso", price_b="isone", q_mw="flow", delimiter=";")
    loaded = load_samples(path, csv_format)
    assert loaded.samples[0].interchange_q == 1200.0
    assert loaded.samples[0].spread == pytest.approx(2.0)


@pytest.mark.parametrize(
    ("text", "code"),
    [
        ("", "empty_file"),
        ("timestamp,price_a,price_b,q_mw\n", "no_valid_rows"),
        ("timestamp,price_a,q_mw\n2018-01-01T00:00:00Z,1,2\n", "missing_columns"),
        ("timestamp,price_a,price_b,q_mw\nnot-a-time,1,2,3\n", "no_valid_rows"),
    ],
)
def test_load_errors(tmp_path, text, code):
    with pytest.raises(CalibrationError) as excinfo:
        load_samples(_write(tmp_path, text))
    assert excinfo.value.code == code


def test_missing_file(tmp_path):
    with pytest.raises(CalibrationError) as excinfo:
        load_samples(tmp_path / "absent.csv")
    assert excinfo.value.code == "file_not_found"


# --- regression ------------------------------------------------------------


def _noiseless(n=200, seed=0):
    rng = np.random.default_rng(seed)
    price_a = rng.uniform(10, 80, size=n)
    q = rng.uniform(0, 2000, size=n)
    price_b = 1.0 * price_a - 0.01 * q + 2.0
    return price_a, price_b, q


def test_noiseless_fit_recovers_weights():
    price_a, price_b, q = _noiseless()
    fit = fit_regression(_samples(price_a, price_b, q))
    assert fit.w1 == pytest.approx(1.0, abs=1e-8)
    assert fit.w2 == pytest.approx(-0.01, abs=1e-8)
    assert fit.w3 == pytest.approx(2.0, abs=1e-6)
    assert fit.adjusted_r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.implied_alpha == pytest.approx(2.0, abs=1e-6)
    assert fit.implied_beta == pytest.approx(0.01, abs=1e-8)


def test_swapping_the_dependent_area_inverts_the_price_weight():
    price_a, _, q = _noiseless(seed=4)
    price_b = 0.98 * price_a - 0.005 * q + 5.0
    samples = _samples(price_a, price_b, q)
    forward = fit_regression(samples, Dependent.AREA_B)
    backward = fit_regression(samples, Dependent.AREA_A)
    assert forward.w1 * backward.w1 == pytest.approx(1.0, abs=1e-6)
    assert backward.dependent is Dependent.AREA_A


def test_scaling_prices_scales_intercept_and_slope_only():
    rng = np.random.default_rng(8)
    price_a, price_b, q = _noiseless(seed=8)
    price_b = price_b + rng.normal(0, 1.0, size=q.size)
    base = fit_regression(_samples(price_a, price_b, q))
    scaled = fit_regression(_samples(3.0 * price_a, 3.0 * price_b, q))
    assert scaled.w1 == pytest.approx(base.w1, rel=1e-9)
    assert scaled.w2 == pytest.approx(3.0 * base.w2, rel=1e-9)
    assert scaled.w3 == pytest.approx(3.0 * base.w3, rel=1e-9)
    assert scaled.adjusted_r2 == pytest.approx(base.adjusted_r2, rel=1e-9)

    base_stats = spread_stats(_samples(price_a, price_b, q))
    scaled_stats = spread_stats(_samples(3.0 * price_a, 3.0 * price_b, q))
    assert scaled_stats.abs_mean == pytest.approx(3.0 * base_stats.abs_mean, rel=1e-9)
    assert scaled_stats.std_dev == pytest.approx(3.0 * base_stats.std_dev, rel=1e-9)


def test_residuals_are_orthogonal_to_every_regressor():
    rng = np.random.default_rng(12)
    price_a, price_b, q = _noiseless(seed=12)
    price_b = price_b + rng.normal(0, 2.0, size=q.size)
    fit = fit_regression(_samples(price_a, price_b, q))
    residuals = price_b - (fit.w1 * price_a + fit.w2 * q + fit.w3)
    for column in (price_a, q, np.ones_like(q)):
        assert abs(column @ residuals) <= 1e-8 * np.linalg.norm(column) * np.linalg.norm(price_b)


def test_constant_interchange_is_rank_deficient():
    price_a = np.linspace(20, 40, 10)
    q = np.full(10, 1000.0)
    with pytest.raises(CalibrationError) as excinfo:
        fit_regression(_samples(price_a, price_a + 1.0, q))
    assert excinfo.value.code == "rank_deficient"


def test_too_few_samples():
    with pytest.raises(CalibrationError) as excinfo:
        fit_regression(_samples([1.0, 2.0, 3.0], [1.0, 2.0, 4.0], [1.0, 5.0, 2.0]))
    assert excinfo.value.code == "too_few_samples"


def test_implied_model_round_trips_a_synthetic_spread():
    model = AffineSpread(alpha=40.0, beta=0.0268)
    rng = np.random.default_rng(21)
    samples = synthesize_samples(model, rng.uniform(10, 80, size=300), rng.uniform(0, 2500, size=300))
    recovered = implied_spread_model(fit_regression(samples), samples)
    assert recovered.alpha == pytest.approx(model.alpha, rel=1e-8)
    assert recovered.beta == pytest.approx(model.beta, rel=1e-8)


def test_uncoupled_prices_are_not_converted():
    price_a, _, q = _noiseless(seed=2)
    price_b = 2.0 * price_a - 0.01 * q + 2.0
    samples = _samples(price_a, price_b, q)
    with pytest.raises(CalibrationError) as excinfo:
        implied_spread_model(fit_regression(samples), samples)
    assert excinfo.value.code == "unconvertible_fit"


def test_synthesize_rejects_misaligned_series():
    with pytest.raises(CalibrationError) as excinfo:
        synthesize_samples(AffineSpread(alpha=1.0, beta=1.0), [1.0, 2.0], [1.0])
    assert excinfo.value.code == "misaligned_series"


# --- spread statistics -----------------------------------------------------


def test_spread_stats_example():
    stats = spread_stats(_samples([10.0, 10.0], [11.0, 9.0], [0.0, 0.0]))
    assert stats.mean == pytest.approx(0.0)
    assert stats.abs_mean == pytest.approx(1.0)
    assert stats.std_dev == pytest.approx(1.0)
    assert stats.n_samples == 2


def test_spread_comparison_reports_gaps():
    wide = spread_stats(_samples([10.0, 10.0], [14.0, 6.0], [0.0, 0.0]))
    narrow = spread_stats(_samples([10.0, 10.0], [11.0, 9.0], [0.0, 0.0]))
    gaps = compare_spread_stats(wide, narrow)
    assert gaps.abs_mean_gap == pytest.approx(3.0)
    assert gaps.std_gap == pytest.approx(3.0)


def test_spread_stats_need_samples():
    with pytest.raises(CalibrationError):
        spread_stats([])


# --- published-data checks (opt-in) -----------------------------------------


def _dataset(name: str) -> Path:
    if not _DATASET_DIR:
        pytest.skip("CTS_LAB_DATASET_DIR not set")
    path = Path(_DATASET_DIR) / name
    if not path.exists():
        pytest.skip(f"{name} not present in CTS_LAB_DATASET_DIR")
    return path


def test_published_regression_has_strong_fit():
    samples = load_samples(_dataset("nyiso_isone_2018.csv")).samples
    fit = fit_regression(samples)
    assert 0.93 <= fit.adjusted_r2 <= 0.97
    assert 0.95 <= fit.w1 <= 1.05


def test_cts_interface_spreads_are_tighter_than_the_reference_interface():
    isone = spread_stats(load_samples(_dataset("nyiso_isone_2018.csv")).samples)
    pjm = spread_stats(load_samples(_dataset("nyiso_pjm_2018.csv")).samples)
    assert (isone.mean, isone.abs_mean, isone.std_dev) == pytest.approx((0.44, 5.59, 18.14), abs=0.01)
    assert (pjm.abs_mean, pjm.std_dev) == pytest.approx((8.92, 22.11), abs=0.01)
    comparison = compare_spread_stats(isone, pjm)
    assert comparison.abs_mean_gap < 0
    assert comparison.std_gap < 0
