"""Command-line entry points: convert, eval, sweep, report.

Exit codes: 0 success, 1 partial failure (some sequences failed but the
run completed), 2 configuration or usage error. Flags can be defaulted
from the environment with the ``EVB_`` prefix (EVB_SEED, EVB_PARALLEL,
EVB_OUT_DIR, EVB_MONTAGE_STRIDE); explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import load_config
from .errors import ConfigError, EvbenchError
from .events import (
    SensorGeometry,
    parse_binary_events,
    parse_text_events,
    write_binary_events,
    write_text_events,
)
from .harness import (
    bin_by_event_rate,
    run_standard_eval,
    sweep_discard,
    sweep_duration,
    sweep_event_count,
)
from .report import (
    MontageWriter,
    emit_rate_report,
    emit_run_bundle,
    emit_sweep_bundle,
    rerender_bundle,
)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _env(name: str, cast, fallback):
    raw = os.environ.get(f"EVB_{name}")
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"environment variable EVB_{name}={raw!r} is not a valid {cast.__name__}")


def _parse_geometry(text: str) -> SensorGeometry:
    try:
        w, h = text.lower().split("x")
        return SensorGeometry(int(w), int(h))
    except (ValueError, EvbenchError):
        raise ConfigError(f"--geometry must look like 240x180, got {text!r}")


def _values_list(text: str, cast=float) -> list:
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"could not parse values list {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evbench",
                                     description="Event-camera video reconstruction benchmark")
    parser.add_argument("--version", action="version", version=f"evbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_convert = sub.add_parser("convert", help="convert between text and EVT1 event files")
    p_convert.add_argument("input")
    p_convert.add_argument("output")
    p_convert.add_argument("--geometry", help="WxH, required for text input")
    p_convert.add_argument("--sort", action="store_true",
                           help="permit sorting of unsorted text input")

    def add_run_flags(p):
        env_out = _env("OUT_DIR", str, None)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out-dir", required=env_out is None, default=env_out)
        p.add_argument("--seed", type=int, default=_env("SEED", int, None))
        p.add_argument("--parallel", type=int, default=_env("PARALLEL", int, None))
        p.add_argument("--noise-rate", type=float, default=None,
                       help="inject noise events per pixel per second")
        p.add_argument("--drop-ratio", type=float, default=None,
                       help="drop each event with this probability")
        p.add_argument("--montage-stride", type=int,
                       default=_env("MONTAGE_STRIDE", int, 0),
                       help="write a montage strip every N scored rows (0 = off)")

    p_eval = sub.add_parser("eval", help="run a standard evaluation")
    add_run_flags(p_eval)

    p_sweep = sub.add_parser("sweep", help="run a robustness sweep")
    p_sweep.add_argument("kind", choices=["rate", "count", "duration", "discard"])
    add_run_flags(p_sweep)
    p_sweep.add_argument("--values", help="comma-separated sweep values (count sweep)")
    p_sweep.add_argument("--durations-ms", help="comma-separated durations in ms")
    p_sweep.add_argument("--ratios", help="comma-separated discard ratios")
    p_sweep.add_argument("--metric", help="metric to bin in the rate sweep")

    p_report = sub.add_parser("report", help="re-render emissions from stored raw results")
    p_report.add_argument("--out-dir", required=_env("OUT_DIR", str, None) is None,
                          default=_env("OUT_DIR", str, None),
                          help="directory containing results.json")
    return parser


def _load_config_with_overrides(args):
    config = load_config(args.config)
    echo = dict(config.echo)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
        echo["seed"] = args.seed
    if args.parallel is not None:
        if args.parallel < 1:
            raise ConfigError("--parallel must be >= 1")
        config = replace(config, parallelism=args.parallel)
        echo["parallelism"] = args.parallel
    pre_over = {}
    if args.noise_rate is not None:
        if args.noise_rate < 0:
            raise ConfigError("--noise-rate must be >= 0")
        config = replace(config, noise_rate=args.noise_rate)
        pre_over["noise_rate"] = args.noise_rate
    if args.drop_ratio is not None:
        if not 0.0 <= args.drop_ratio <= 1.0:
            raise ConfigError("--drop-ratio must be in [0, 1]")
        config = replace(config, drop_ratio=args.drop_ratio)
        pre_over["drop_ratio"] = args.drop_ratio
    if pre_over:
        echo["preprocess"] = {**echo.get("preprocess", {}), **pre_over}
    return replace(config, echo=echo)


def cmd_convert(args) -> int:
    in_path, out_path = Path(args.input), Path(args.output)
    if not in_path.is_file():
        raise ConfigError(f"input file not found: {in_path}")
    if in_path.suffix == ".evt1":
        stream = parse_binary_events(in_path)
    else:
        if not args.geometry:
            raise ConfigError("text event input requires --geometry WxH")
        stream = parse_text_events(in_path, _parse_geometry(args.geometry), sort=args.sort)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if out_path.suffix == ".evt1":
        write_binary_events(stream, out_path)
    else:
        write_text_events(stream, out_path)
    print(f"converted {len(stream)} events -> {out_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config_with_overrides(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sink = MontageWriter(out_dir, args.montage_stride) if args.montage_stride else None
    result = run_standard_eval(config, montage_sink=sink)
    emit_run_bundle(result, out_dir)
    failed = sum(1 for s in result.sequences if s.status == "failed")
    print(f"evaluated {len(result.sequences)} sequence runs, {failed} failed -> {out_dir}")
    return EXIT_PARTIAL if result.any_failed else EXIT_OK


def cmd_sweep(args) -> int:
    config = _load_config_with_overrides(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "rate":
        from .grouping import BetweenFrames

        cfg = config.with_grouping(BetweenFrames())
        result = run_standard_eval(cfg)
        emit_run_bundle(result, out_dir)
        report = bin_by_event_rate(result, args.metric)
        emit_rate_report(report, out_dir / "rate_report.json")
        print(f"rate report with {report.bin_count} bins -> {out_dir}")
        return EXIT_PARTIAL if result.any_failed else EXIT_OK
    if args.kind == "count":
        values = _values_list(args.values, int) if args.values else None
        report = sweep_event_count(config, values)
    elif args.kind == "duration":
        values = _values_list(args.durations_ms, float) if args.durations_ms else None
        report = sweep_duration(config, values)
    else:
        ratios = _values_list(args.ratios, float) if args.ratios else None
        report = sweep_discard(config, ratios)
    emit_sweep_bundle(report, out_dir)
    print(f"{args.kind} sweep with {len(report.points)} points -> {out_dir}")
    return EXIT_PARTIAL if report.any_failed else EXIT_OK


def cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    result = rerender_bundle(out_dir)
    print(f"re-rendered {len(result.sequences)} sequence runs in {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "convert":
            return cmd_convert(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "report":
            return cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except EvbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
