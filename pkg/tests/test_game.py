import logging
import math

import numpy as np
import pytest

from ctslab import presets
from ctslab.clearing import Bidder, BidProfile, UtcPosition, clear
from ctslab.config import ClearingError, GameError
from ctslab.game import (
    ConjecturedGameSpec,
    LiquidityRegime,
    best_response,
    check_existence_condition,
    classify_regime,
    conjectured_cost_sweep,
    conjectured_gradient,
    correction_condition,
    effective_budgets,
    nash_baseline,
    nash_conjectured,
    nash_utc,
    payoff,
    payoff_conjectured,
    payoff_curve,
    payoff_gradient_affine,
    payoff_utc,
    verify_equilibrium,
)
from ctslab.spread import AffineSpread, GeneralConcaveSpread

MODEL = AffineSpread(alpha=10.0, beta=1.0)


def _roster(*liquidities: float, cost_c: float = 0.0) -> list[Bidder]:
    return [Bidder(id=f"b{i}", liquidity_b=b, cost_c=cost_c) for i, b in enumerate(liquidities)]


def _small_spec(cost_c: float = 0.0, **updates) -> ConjecturedGameSpec:
    fields = dict(
        n_players=2,
        liquidity_b=5.0,
        cost_c=cost_c,
        bidder_alpha=10.0,
        bidder_beta=1.0,
        so_alpha=10.0,
        so_beta=1.0,
        star_alpha=7.0,
        star_beta=1.0,
    )
    fields.update(updates)
    return ConjecturedGameSpec(**fields)


# --- payoffs ---------------------------------------------------------------


def test_payoff_at_intermediate_equilibrium():
    bidders = _roster(2, 3, 6)
    profile = BidProfile(thetas=(0.0, 0.0, 8.75))
    assert payoff(MODEL, bidders, profile, 2) == pytest.approx(6.25)
    assert payoff(MODEL, bidders, profile, 0) == pytest.approx(5.0)


def test_utc_payoff_adds_internal_spread_term():
    position = UtcPosition(node_id="n1", megawatts_f=4.0, alpha_in=5.0, beta_in=0.5, da_spread=1.0)
    bidders = _roster(2, 3, 6)
    bidders[0] = bidders[0].model_copy(update={"utc": (position,)})
    profile = BidProfile(thetas=(0.0, 0.0, 8.75))
    assert payoff_utc(MODEL, bidders, profile, 0) == pytest.approx(5.0 + 1.0)
    assert payoff_utc(MODEL, bidders, profile, 1) == pytest.approx(payoff(MODEL, bidders, profile, 1))


def test_payoff_rejects_bad_index_and_infeasible_bids():
    with pytest.raises(GameError) as excinfo:
        payoff(MODEL, _roster(2, 3), BidProfile.zeros(2), 2)
    assert excinfo.value.code == "index_out_of_range"
    with pytest.raises(ClearingError) as excinfo:
        payoff(MODEL, _roster(2, 3, cost_c=1.0), BidProfile(thetas=(2.0, 1.0)), 0)
    assert excinfo.value.code == "infeasible_bid"


def test_payoff_gradient_matches_finite_differences():
    position = UtcPosition(node_id="n1", megawatts_f=3.0, alpha_in=9.0, beta_in=0.4)
    bidders = _roster(2, 3, 6, cost_c=0.5)
    bidders[1] = bidders[1].model_copy(update={"utc": (position,)})
    thetas = [3.0, 4.0, 9.0]
    h = 1e-5
    for i in range(3):
        up, down = list(thetas), list(thetas)
        up[i] += h
        down[i] -= h
        numeric = (
            payoff_utc(MODEL, bidders, BidProfile(thetas=tuple(up)), i)
            - payoff_utc(MODEL, bidders, BidProfile(thetas=tuple(down)), i)
        ) / (2 * h)
        analytic = payoff_gradient_affine(10.0, 1.0, bidders, BidProfile(thetas=tuple(thetas)), i)
        assert analytic == pytest.approx(numeric, rel=1e-5, abs=1e-7)


def test_payoff_curve_matches_scalar_payoffs_and_stops_at_surplus():
    bidders = _roster(2, 3, 6)
    profile = BidProfile(thetas=(0.0, 0.0, 8.75))
    points = [0.0, 4.0, 8.75, 20.0]
    curve = payoff_curve(MODEL, bidders, profile, 2, points)
    for theta, value in zip(points, curve):
        expected = payoff(MODEL, bidders, BidProfile(thetas=(0.0, 0.0, theta)), 2)
        assert value == pytest.approx(expected, rel=1e-9, abs=1e-9)
    with pytest.raises(ClearingError) as excinfo:
        payoff_curve(MODEL, bidders, profile, 2, [200.0])
    assert excinfo.value.code == "bids_exceed_spread_surplus"


# --- regimes and the baseline equilibrium -----------------------------------


@pytest.mark.parametrize(
    ("sum_b", "pivot", "regime"),
    [(19.0, 8.0, LiquidityRegime.HIGH), (11.0, 6.0, LiquidityRegime.INTERMEDIATE), (6.0, 3.0, LiquidityRegime.LOW)],
)
def test_classify_regime(sum_b, pivot, regime):
    assert classify_regime(10.0, 1.0, sum_b, pivot) is regime


def test_intermediate_example():
    profile = nash_baseline(10.0, 1.0, [2, 3, 6])
    assert profile.thetas_ne == pytest.approx((0.0, 0.0, 8.75))
    assert profile.marginal_player == 2
    assert profile.regime is LiquidityRegime.INTERMEDIATE
    assert profile.clearing.q_cts == pytest.approx(7.5)
    assert profile.clearing.allocations_x[2] == pytest.approx(2.5)
    assert profile.efficiency.eta == pytest.approx(0.9375)


def test_high_example_is_fully_efficient():
    profile = nash_baseline(10.0, 1.0, [5, 6, 8])
    assert profile.regime is LiquidityRegime.HIGH
    assert profile.thetas_ne == (0.0, 0.0, 0.0)
    assert profile.marginal_player is None
    assert profile.clearing.q_cts == pytest.approx(10.0)
    assert profile.efficiency.eta == pytest.approx(1.0)


def test_low_example_reports_z():
    profile = nash_baseline(10.0, 1.0, [1, 2, 3])
    assert profile.regime is LiquidityRegime.LOW
    assert profile.clearing.q_cts == pytest.approx(6.0)
    assert profile.efficiency.z == pytest.approx(0.6)
    assert profile.efficiency.eta == pytest.approx(0.84)


@pytest.mark.parametrize(("liquidities", "code"), [([], "invalid_liquidity"), ([2, -1], "invalid_liquidity")])
def test_invalid_liquidity(liquidities, code):
    with pytest.raises(GameError) as excinfo:
        nash_baseline(10.0, 1.0, liquidities)
    assert excinfo.value.code == code


def test_tied_pivot_is_ambiguous_unless_allowed():
    with pytest.raises(GameError) as excinfo:
        nash_baseline(10.0, 1.0, [6, 6, 2])
    assert excinfo.value.code == "ambiguous_pivot"
    profile = nash_baseline(10.0, 1.0, [6, 6, 2], require_unique_max=False)
    assert profile.marginal_player == 0


def _random_roster(rng, regime: LiquidityRegime):
    beta = rng.uniform(0.01, 2.0)
    q_to = rng.uniform(5.0, 100.0)
    n = int(rng.integers(2, 8))
    raw = rng.uniform(0.5, 1.5, size=n)
    share, top = raw.sum(), raw.max()
    if regime is LiquidityRegime.HIGH:
        k = rng.uniform(1.05, min(3.0, 0.9 * share / top))
    elif regime is LiquidityRegime.INTERMEDIATE:
        k = rng.uniform(-0.95, 0.95)
    else:
        k = rng.uniform(-3.0, -1.05)
    scale = q_to / (share - k * top)
    return beta * q_to, beta, raw * scale


@pytest.mark.parametrize("regime", list(LiquidityRegime))
def test_random_equilibria_respect_regime_bounds_and_survive_the_oracle(regime):
    rng = np.random.default_rng({"High": 1, "Intermediate": 2, "Low": 3}[regime.value])
    for _ in range(200):
        alpha, beta, liquidities = _random_roster(rng, regime)
        profile = nash_baseline(alpha, beta, liquidities)
        assert profile.regime is regime
        eta = profile.efficiency.eta
        q_to = alpha / beta
        if regime is LiquidityRegime.HIGH:
            assert eta == pytest.approx(1.0, abs=1e-9)
        elif regime is LiquidityRegime.INTERMEDIATE:
            assert eta >= 0.75 - 1e-12
            m = profile.marginal_player
            others = liquidities.sum() - liquidities[m]
            for j, x in enumerate(profile.clearing.allocations_x):
                if j != m:
                    assert x == pytest.approx(liquidities[j], rel=1e-12)
            assert profile.clearing.allocations_x[m] == pytest.approx(0.5 * (q_to - others), rel=1e-8, abs=1e-8 * q_to)
        else:
            z = liquidities.sum() / q_to
            assert eta == pytest.approx(2 * z - z * z, rel=1e-9)

        bidders = [Bidder(id=f"b{i}", liquidity_b=float(b)) for i, b in enumerate(liquidities)]
        model = AffineSpread(alpha=alpha, beta=beta)
        verdict = verify_equilibrium(model, bidders, BidProfile(thetas=profile.thetas_ne))
        assert verdict.confirmed, verdict


def test_calibrated_intermediate_equilibrium_matches_reported_point():
    profile = nash_baseline(presets.CALIBRATED_ALPHA, presets.CALIBRATED_BETA, presets.INTERMEDIATE_LIQUIDITY)
    assert profile.marginal_player == 4
    assert profile.thetas_ne[4] == pytest.approx(presets.REPORTED_PIVOT_THETA, rel=1e-2)
    assert profile.clearing.q_cts == pytest.approx(presets.REPORTED_Q_CTS, rel=5e-3)


def test_existence_condition_holds_for_affine_and_fails_for_steep_cubic():
    assert check_existence_condition(MODEL, 11.0, np.linspace(0, 10, 11))
    cubic = GeneralConcaveSpread(
        spread=lambda q: 10.0 - q**3,
        derivative=lambda q: -3.0 * q * q,
        second_derivative=lambda q: -6.0 * q,
        probe_upper=2.0,
    )
    assert not check_existence_condition(cubic, 10.0, [0.0, 1.0, 2.0])


def test_best_response_recovers_pivot_bid():
    bidders = _roster(2, 3, 6)
    assert best_response(MODEL, bidders, BidProfile.zeros(3), 2) == pytest.approx(8.75)
    assert best_response(MODEL, bidders, BidProfile(thetas=(0.0, 0.0, 8.75)), 0) == 0.0


def test_best_response_with_costs_beats_neighbouring_bids():
    bidders = _roster(2, 3, 6, cost_c=0.2)
    profile = BidProfile(thetas=(0.4, 0.6, 5.0))
    theta = best_response(MODEL, bidders, profile, 2)
    best = payoff(MODEL, bidders, BidProfile(thetas=(0.4, 0.6, theta)), 2)
    for delta in (-0.5, -0.05, 0.05, 0.5):
        trial = max(1.2, theta + delta)
        assert best >= payoff(MODEL, bidders, BidProfile(thetas=(0.4, 0.6, trial)), 2) - 1e-9


# --- oracle ----------------------------------------------------------------


def test_oracle_confirms_equilibrium_and_flags_zero_profile():
    bidders = _roster(2, 3, 6)
    confirmed = verify_equilibrium(MODEL, bidders, BidProfile(thetas=(0.0, 0.0, 8.75)), grid_size=2001, radius=20.0)
    assert confirmed.confirmed
    assert confirmed.player is None

    violated = verify_equilibrium(MODEL, bidders, BidProfile.zeros(3), grid_size=2001, radius=20.0)
    assert violated.violated
    assert violated.player == 2
    assert violated.better_theta == pytest.approx(8.75, abs=0.02)
    assert violated.gain > 0


def test_default_oracle_radius_scales_with_each_bidders_liquidity():
    bidders = _roster(2, 3, 6)
    candidate = BidProfile(thetas=(5.0, 0.0, 8.75))
    # bidder 0 scans beta * 2**2 = 4 around its bid: {1, 5, 9}
    verdict = verify_equilibrium(MODEL, bidders, candidate, grid_size=3)
    assert verdict.player == 0
    assert verdict.better_theta == pytest.approx(1.0)
    assert verdict.gain == pytest.approx(math.sqrt(40.0) - math.sqrt(56.0) + 4.0, rel=1e-6)

    # a shared radius of beta * 6**2 reaches down to a zero bid instead
    wide = verify_equilibrium(MODEL, bidders, candidate, grid_size=3, radius=36.0)
    assert wide.player == 0
    assert wide.better_theta == pytest.approx(0.0)


def test_oracle_rejects_small_grids():
    with pytest.raises(GameError) as excinfo:
        verify_equilibrium(MODEL, _roster(2, 3), BidProfile.zeros(2), grid_size=2)
    assert excinfo.value.code == "invalid_grid"


# --- UTC-augmented game ----------------------------------------------------


def test_effective_budgets_example():
    position = UtcPosition(node_id="n1", megawatts_f=4.0, alpha_in=5.0, beta_in=0.5)
    bidders = _roster(10, 10)
    bidders[0] = bidders[0].model_copy(update={"utc": (position,)})
    assert effective_budgets(1.0, bidders) == pytest.approx([12.0, 10.0])

    profile = nash_utc(15.0, 1.0, bidders)
    assert profile.marginal_player == 0
    assert profile.thetas_ne[0] == pytest.approx((144.0 - 25.0) / 4.0)
    assert profile.clearing.q_cts == pytest.approx(11.5)


def test_negative_utc_position_is_rejected():
    position = UtcPosition(node_id="n1", megawatts_f=-1.0, alpha_in=5.0, beta_in=0.5)
    bidders = [Bidder(id="b0", liquidity_b=5.0, utc=(position,)), Bidder(id="b1", liquidity_b=3.0)]
    with pytest.raises(GameError) as excinfo:
        nash_utc(10.0, 1.0, bidders)
    assert excinfo.value.code == "negative_utc_position"


def test_utc_positions_never_raise_the_schedule():
    rng = np.random.default_rng(7)
    for regime in LiquidityRegime:
        for _ in range(100):
            alpha, beta, liquidities = _random_roster(rng, regime)
            bidders = [Bidder(id=f"b{i}", liquidity_b=float(b)) for i, b in enumerate(liquidities)]
            holder = int(rng.integers(len(bidders)))
            megawatts = rng.uniform(0.0, 0.5) * liquidities.sum()
            position = UtcPosition(node_id="n", megawatts_f=megawatts, alpha_in=1.0, beta_in=beta * rng.uniform(0, 1))
            bidders[holder] = bidders[holder].model_copy(update={"utc": (position,)})

            with_utc = nash_utc(alpha, beta, bidders)
            without = nash_baseline(alpha, beta, liquidities)
            assert with_utc.clearing.q_cts <= without.clearing.q_cts + 1e-9 * (alpha / beta)


def test_calibrated_utc_example_shifts_schedule_by_reported_amount():
    model = presets.calibrated_spread()
    baseline = nash_baseline(model.alpha, model.beta, presets.INTERMEDIATE_LIQUIDITY)
    implied = nash_utc(model.alpha, model.beta, presets.utc_example_roster("implied"))
    assert implied.marginal_player == 0
    assert implied.clearing.q_cts == pytest.approx(presets.UTC_REPORTED_Q_CTS, rel=5e-3)
    shift = baseline.clearing.q_cts - implied.clearing.q_cts
    assert shift == pytest.approx(presets.UTC_REPORTED_SHIFT, rel=0.1)


def test_stated_utc_slope_logs_its_residual(caplog):
    with caplog.at_level(logging.WARNING, logger="ctslab.presets"):
        bidders = presets.utc_example_roster("stated")
    assert "not the reported" in caplog.text
    assert effective_budgets(presets.CALIBRATED_BETA, bidders)[0] < presets.INTERMEDIATE_LIQUIDITY[-1] + 10


# --- conjectured-spread game -----------------------------------------------


def test_conjectured_example_without_fees():
    spec = _small_spec()
    profile = nash_conjectured(spec)
    assert profile.thetas_ne == pytest.approx((3.125, 3.125))
    assert profile.clearing.q_cts == pytest.approx(7.5)
    assert payoff_conjectured(spec, profile.thetas_ne, 0) == pytest.approx(9.375)
    assert conjectured_gradient(spec, profile.thetas_ne, 1) == pytest.approx(0.0, abs=1e-12)


def test_conjectured_example_with_fee():
    profile = nash_conjectured(_small_spec(cost_c=1.0))
    assert profile.thetas_ne[0] == pytest.approx(6.5**2 / 8.0)


def test_bid_below_cost_floor_is_logged(caplog):
    with caplog.at_level(logging.WARNING, logger="ctslab.game"):
        nash_conjectured(_small_spec(cost_c=8.0))
    assert "below the cost floor" in caplog.text


def test_correction_condition_examples():
    holds = correction_condition(_small_spec())
    assert holds.lhs == pytest.approx(25.0)
    assert holds.rhs == pytest.approx(144.0)
    assert holds.condition_holds
    assert holds.closer_directly

    fails = correction_condition(_small_spec(cost_c=8.0))
    assert fails.lhs == pytest.approx(289.0)
    assert not fails.condition_holds
    assert not fails.closer_directly


def test_correction_needs_realized_spread():
    with pytest.raises(GameError) as excinfo:
        correction_condition(_small_spec(star_alpha=None, star_beta=None))
    assert excinfo.value.code == "missing_star_parameters"


def test_inconsistent_liquidity_is_rejected():
    with pytest.raises(ValueError, match="inconsistent_liquidity"):
        _small_spec(liquidity_b=20.0)


def test_nonpositive_operator_slope_is_rejected():
    with pytest.raises(GameError) as excinfo:
        nash_conjectured(_small_spec(so_beta=0.0))
    assert excinfo.value.code == "nonpositive_so_slope"


def test_random_conjectured_equilibria_satisfy_first_order_conditions():
    rng = np.random.default_rng(99)
    for _ in range(200):
        n = int(rng.integers(3, 51))
        beta = rng.uniform(0.001, 1.0)
        liquidity = rng.uniform(1.0, 100.0)
        so_beta = beta * rng.uniform(1.0, 2.0)
        spec = ConjecturedGameSpec(
            n_players=n,
            liquidity_b=liquidity,
            cost_c=rng.uniform(0.0, beta * liquidity),
            bidder_alpha=beta * n * liquidity,
            bidder_beta=beta,
            so_alpha=so_beta * n * liquidity * rng.uniform(0.8, 1.4),
            so_beta=so_beta,
        )
        profile = nash_conjectured(spec)
        for i in (0, n - 1):
            assert abs(conjectured_gradient(spec, profile.thetas_ne, i)) <= 1e-8

        total = n * liquidity
        expected_q = 0.5 * (
            spec.q_to + total - math.sqrt((spec.q_to - total) ** 2 + spec.gamma**2 / (beta * so_beta))
        )
        assert profile.clearing.q_cts == pytest.approx(expected_q, rel=1e-10, abs=1e-9 * (spec.q_to + total))

        verdict = verify_equilibrium(
            spec.so_model(), [], BidProfile(thetas=profile.thetas_ne), payoff_kind="conjectured", conjecture=spec
        )
        assert verdict.confirmed, verdict


def test_cost_sweep_raises_bids_and_lowers_schedule():
    points = conjectured_cost_sweep(presets.forecast_error_spec(0.0), [0.0, 2.0, 4.0, 8.0])
    thetas = [point.theta_ne for point in points]
    schedules = [point.q_cts for point in points]
    assert thetas == sorted(thetas)
    assert schedules == sorted(schedules, reverse=True)


def test_forecast_error_presets_bracket_the_correction_condition():
    assert correction_condition(presets.forecast_error_spec(0.0)).condition_holds
    assert not correction_condition(presets.forecast_error_spec(8.0)).condition_holds


def test_conjectured_equilibrium_clears_on_operator_spread():
    spec = _small_spec(cost_c=1.0)
    profile = nash_conjectured(spec)
    direct = clear(spec.so_model(), spec.roster(), BidProfile(thetas=profile.thetas_ne))
    assert profile.clearing.q_cts == pytest.approx(direct.q_cts)
