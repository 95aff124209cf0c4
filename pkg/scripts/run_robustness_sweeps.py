#!/usr/bin/env python3
"""End-to-end robustness demo on the synthetic fixtures.

Generates the fixture dataset, then runs all four robustness analyses
(event rate, tensor sparsity, reconstruction rate, temporal irregularity)
with the builtin baseline and writes their reports under --out.
"""

import argparse
from pathlib import Path

from evbench.config import config_from_dict
from evbench.fixtures import fixture_eval_config, make_fixture_dataset
from evbench.grouping import BetweenFrames
from evbench.harness import (
    bin_by_event_rate,
    run_standard_eval,
    sweep_discard,
    sweep_duration,
    sweep_event_count,
)
from evbench.report import emit_rate_report, emit_run_bundle, emit_sweep_bundle


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="sweep_demo")
    parser.add_argument("--seed", type=int, default=7)
    # full-size sweeps on the fixtures take a few minutes; trim by default
    parser.add_argument("--quick", action="store_true",
                        help="3 points per sweep instead of the full-size defaults")
    args = parser.parse_args()

    out = Path(args.out)
    fixtures = out / "fixtures"
    make_fixture_dataset(fixtures, seed=args.seed)
    config = config_from_dict(fixture_eval_config(fixtures), base_dir=fixtures)

    base = config.with_grouping(BetweenFrames())
    result = run_standard_eval(base)
    emit_run_bundle(result, out / "rate")
    emit_rate_report(bin_by_event_rate(result), out / "rate" / "rate_report.json")
    print("event-rate analysis done")

    counts = [5000, 25000, 45000] if args.quick else None
    emit_sweep_bundle(sweep_event_count(config, counts), out / "count")
    print("tensor-sparsity sweep done")

    durations = [10.0, 50.0, 100.0] if args.quick else None
    emit_sweep_bundle(sweep_duration(config, durations), out / "duration")
    print("reconstruction-rate sweep done")

    ratios = [0.0, 0.5, 0.9] if args.quick else None
    emit_sweep_bundle(sweep_discard(config, ratios), out / "discard")
    print("temporal-irregularity sweep done")


if __name__ == "__main__":
    main()
