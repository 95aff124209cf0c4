#!/usr/bin/env python3
"""Measure single-threaded voxel-grid construction throughput."""

import argparse

from evbench.bench import voxel_throughput
from evbench.events import SensorGeometry


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--events", type=int, default=2_000_000)
    parser.add_argument("--group-size", type=int, default=25_000)
    parser.add_argument("--bins", type=int, default=5)
    parser.add_argument("--geometry", default="240x180")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    w, h = (int(v) for v in args.geometry.lower().split("x"))
    rate = voxel_throughput(args.events, args.group_size, SensorGeometry(w, h),
                            args.bins, args.seed)
    print(f"voxel build: {rate:,.0f} events/s "
          f"({args.events} events, groups of {args.group_size}, B={args.bins}, {args.geometry})")


if __name__ == "__main__":
    main()
