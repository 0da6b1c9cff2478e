"""Run the repeated-play reproductions over several seeds and compare against the reported rates."""

from __future__ import annotations

import argparse
import time

import numpy as np

from ctslab import presets
from ctslab.env import configure_logging
from ctslab.game import nash_baseline, nash_conjectured
from ctslab.learning import (
    InitOrder,
    nash_selection_rates,
    run_repeated_game,
    trajectory_stats,
)
from ctslab.runtime_utils import run_in_threads

_BAND_POINTS = 5.0


def _liquidity_runs(liquidities, seeds: list[int], rounds: int, init_order: InitOrder):
    model = presets.calibrated_spread()
    bidders = presets.roster(liquidities)
    nash = nash_baseline(model.alpha, model.beta, liquidities, require_unique_max=False).thetas_ne
    grids = presets.learning_grids(bidders, nash)

    def replicate(seed: int):
        return run_repeated_game(model, model, bidders, grids, 2.0, rounds, seed, init_order=init_order)

    return run_in_threads(replicate, seeds)


def _report_nash_rates(label: str, runs, reported: tuple[float, ...]) -> None:
    print(f"\n{label}: reported {reported}")
    within = 0
    for index, records in enumerate(runs):
        rates = nash_selection_rates(records)
        ok = all(rate >= target - _BAND_POINTS for rate, target in zip(rates, reported))
        within += ok
        formatted = ", ".join(f"{rate:5.1f}" for rate in rates)
        print(f"  run {index:2d}: ({formatted}) {'within' if ok else 'below'} reported - {_BAND_POINTS:g} points")
    print(f"  {within}/{len(runs)} runs within the band")


def _report_contrast(intermediate, high) -> None:
    q_to = presets.CALIBRATED_Q_TO
    inter = [trajectory_stats(records, q_to) for records in intermediate]
    hi = [trajectory_stats(records, q_to) for records in high]
    print("\nschedule/spread contrast (medians over runs)")
    print(f"  high liquidity:         spread {np.median([s.median_spread for s in hi]):6.2f} $/MWh, "
          f"q ratio {np.median([s.median_q_ratio for s in hi]):.3f}")
    print(f"  intermediate liquidity: spread {np.median([s.median_spread for s in inter]):6.2f} $/MWh, "
          f"q ratio {np.median([s.median_q_ratio for s in inter]):.3f}")


def _report_forecast_error(seeds: list[int], rounds: int, init_order: InitOrder) -> None:
    print("\nforecast-error correction (share of rounds closer to Q_star than Q_TO)")
    for cost in (0.0, 8.0):
        spec = presets.forecast_error_spec(cost)
        bidders = spec.roster()
        grids = presets.learning_grids(bidders, nash_conjectured(spec).thetas_ne)

        def replicate(seed: int, spec=spec, bidders=bidders, grids=grids):
            return run_repeated_game(
                spec.star_model(), spec.so_model(), bidders, grids, 2.0, rounds, seed, init_order=init_order
            )

        q_to, q_star = spec.q_to, spec.q_star
        for index, records in enumerate(run_in_threads(replicate, seeds)):
            closer = np.mean([abs(r.q_cts - q_star) < abs(q_to - q_star) for r in records])
            print(f"  c={cost:g} run {index:2d}: {100 * closer:5.1f}%")


def _build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=10, help="Number of seeded replications per experiment.")
    parser.add_argument("--first-seed", type=int, default=2018)
    parser.add_argument("--rounds", type=int, default=presets.LEARNING_ROUNDS)
    parser.add_argument("--init-order", choices=["sequential", "index", "shuffled"], default="sequential")
    return parser


def main() -> None:
    parsed = _build_arg_parser().parse_args()
    configure_logging()
    seeds = list(range(parsed.first_seed, parsed.first_seed + parsed.seeds))
    started = time.monotonic()

    intermediate = _liquidity_runs(presets.INTERMEDIATE_LIQUIDITY, seeds, parsed.rounds, parsed.init_order)
    high = _liquidity_runs(presets.HIGH_LIQUIDITY, seeds, parsed.rounds, parsed.init_order)
    _report_nash_rates("intermediate liquidity", intermediate, presets.REPORTED_NASH_PCT_INTERMEDIATE)
    _report_nash_rates("high liquidity", high, presets.REPORTED_NASH_PCT_HIGH)
    _report_contrast(intermediate, high)
    _report_forecast_error(seeds, parsed.rounds, parsed.init_order)
    print(f"\ndone in {time.monotonic() - started:.1f}s")


if __name__ == "__main__":
    main()
