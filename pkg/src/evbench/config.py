"""Run configuration: JSON schema, validation, dataset resolution.

A run config is a single JSON document; relative paths inside it resolve
against the config file's directory. Schema (defaults in parentheses):

    {
      "seed": 0,
      "parallelism": 1,
      "datasets": [
        {"name": ..., "sequences": [
          {"name": ..., "events": "path.evt1 or .txt",
           "frames": "dir with timestamps.txt + PGMs"      (optional),
           "eval_window": [t_start, t_end]                 (optional)}
        ]}
      ],
      "grouping": {"mode": "between_frames"}               # or
                  {"mode": "fixed_number", "n_g": 25000}   # or
                  {"mode": "fixed_duration", "t_g_ms": 40.0},
      "match": {"tolerance_ms": 1.0},
      "preprocess": {"noise_rate": 0.0, "drop_ratio": 0.0},
      "representation": {"bins": 5, "normalize": "none", "pad_multiple": 1},
      "postproc": [{"step": "exponential"} |
                   {"step": "robust_minmax", "lo_pct": 1, "hi_pct": 99} |
                   {"step": "hist_eq"}],
      "reconstructors": [
        {"builtin": "voxel_collapse" | "leaky_integrator", "label": ...,
         "tau": 0.1, "gain": 0.1,
         "normalize": ..., "pad_multiple": ...}            # per-entry overrides
        | {"plugin": "cmdline", "label": ...}
      ],
      "metrics": [
        {"name": "mse"} | {"name": "ssim"} |
        {"name": ..., "plugin": "cmdline",
         "kind": "full_reference"|"no_reference",
         "direction": "lower_better"|"higher_better"}
      ]
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, ValidationError
from .grouping import BetweenFrames, FixedDuration, FixedNumber, GroupingSpec, MatchPolicy
from .metrics import FULL_REFERENCE, HIGHER_BETTER, LOWER_BETTER, NO_REFERENCE
from .reconstruct import (
    Exponential,
    HistogramEqualize,
    PostProcSpec,
    RepresentationSpec,
    RobustMinMax,
)
from .voxel import DEFAULT_BINS, NORM_MODES, NORM_NONE

BUILTIN_RECONSTRUCTORS = ("voxel_collapse", "leaky_integrator")


@dataclass(frozen=True)
class SequenceSpec:
    name: str
    events_path: Path
    frames_dir: Path | None = None
    eval_window: tuple[float, float] | None = None


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    sequences: tuple[SequenceSpec, ...]


@dataclass(frozen=True)
class ReconstructorSpec:
    label: str
    builtin: str | None = None
    plugin: str | None = None
    tau: float = 0.1
    gain: float = 0.1
    normalize: str | None = None      # falls back to the global representation spec
    pad_multiple: int | None = None


@dataclass(frozen=True)
class MetricSpec:
    name: str
    plugin: str | None = None
    kind: str = FULL_REFERENCE
    direction: str = LOWER_BETTER


@dataclass(frozen=True)
class EvalConfig:
    datasets: tuple[DatasetSpec, ...]
    grouping: GroupingSpec = BetweenFrames()
    match: MatchPolicy = MatchPolicy()
    noise_rate: float = 0.0
    drop_ratio: float = 0.0
    representation: RepresentationSpec = RepresentationSpec()
    postproc: PostProcSpec = PostProcSpec()
    reconstructors: tuple[ReconstructorSpec, ...] = ()
    metrics: tuple[MetricSpec, ...] = ()
    parallelism: int = 1
    seed: int = 0
    echo: dict = field(default_factory=dict, compare=False)

    def with_grouping(self, grouping: GroupingSpec, tolerance: float | None = None) -> "EvalConfig":
        cfg = replace(self, grouping=grouping)
        if tolerance is not None:
            cfg = replace(cfg, match=MatchPolicy(tolerance))
        return cfg


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def parse_grouping(obj: dict) -> GroupingSpec:
    mode = obj.get("mode")
    try:
        if mode == "fixed_number":
            _require("n_g" in obj, "fixed_number grouping requires n_g")
            return FixedNumber(int(obj["n_g"]))
        if mode == "fixed_duration":
            _require("t_g_ms" in obj, "fixed_duration grouping requires t_g_ms")
            return FixedDuration(float(obj["t_g_ms"]) / 1000.0)
        if mode == "between_frames":
            return BetweenFrames()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown grouping mode {mode!r}")


def parse_postproc(steps: list) -> PostProcSpec:
    parsed = []
    for obj in steps:
        step = obj.get("step")
        if step == "exponential":
            parsed.append(Exponential())
        elif step == "robust_minmax":
            parsed.append(RobustMinMax(float(obj.get("lo_pct", 1.0)), float(obj.get("hi_pct", 99.0))))
        elif step == "hist_eq":
            parsed.append(HistogramEqualize())
        else:
            raise ConfigError(f"unknown post-processing step {step!r}")
    return PostProcSpec(tuple(parsed))


def load_config(path) -> EvalConfig:
    """Load and validate a JSON run config; paths resolve against it."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(raw, base_dir=path.parent)


def config_from_dict(raw: dict, base_dir=None) -> EvalConfig:
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    _require(isinstance(raw, dict), "config root must be a JSON object")
    _require(bool(raw.get("datasets")), "config requires a non-empty datasets list")

    datasets = []
    for dobj in raw["datasets"]:
        _require(bool(dobj.get("name")), "each dataset requires a name")
        _require(bool(dobj.get("sequences")), f"dataset {dobj.get('name')!r} has no sequences")
        sequences = []
        for sobj in dobj["sequences"]:
            _require(bool(sobj.get("name")), "each sequence requires a name")
            _require(bool(sobj.get("events")), f"sequence {sobj.get('name')!r} requires an events path")
            events_path = (base_dir / sobj["events"]).resolve()
            _require(events_path.is_file(), f"events file not found: {events_path}")
            frames_dir = None
            if sobj.get("frames"):
                frames_dir = (base_dir / sobj["frames"]).resolve()
                _require(frames_dir.is_dir(), f"frames directory not found: {frames_dir}")
            window = None
            if sobj.get("eval_window") is not None:
                ew = sobj["eval_window"]
                _require(isinstance(ew, (list, tuple)) and len(ew) == 2, "eval_window must be [start, end]")
                window = (float(ew[0]), float(ew[1]))
                _require(window[0] <= window[1], "eval_window start must not exceed end")
            sequences.append(SequenceSpec(sobj["name"], events_path, frames_dir, window))
        datasets.append(DatasetSpec(dobj["name"], tuple(sequences)))

    grouping = parse_grouping(raw.get("grouping", {"mode": "between_frames"}))
    match_obj = raw.get("match", {})
    try:
        match = MatchPolicy(float(match_obj.get("tolerance_ms", 1.0)) / 1000.0)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None

    pre = raw.get("preprocess", {})
    noise_rate = float(pre.get("noise_rate", 0.0))
    drop_ratio = float(pre.get("drop_ratio", 0.0))
    _require(noise_rate >= 0.0, "noise_rate must be >= 0")
    _require(0.0 <= drop_ratio <= 1.0, "drop_ratio must be in [0, 1]")

    rep_obj = raw.get("representation", {})
    normalize = rep_obj.get("normalize", NORM_NONE)
    _require(normalize in NORM_MODES, f"unknown normalize mode {normalize!r}")
    representation = RepresentationSpec(
        bins=int(rep_obj.get("bins", DEFAULT_BINS)),
        normalize=normalize,
        pad_multiple=int(rep_obj.get("pad_multiple", 1)),
    )
    _require(representation.bins >= 2, "representation bins must be >= 2")
    _require(representation.pad_multiple >= 1, "pad_multiple must be >= 1")

    postproc = parse_postproc(raw.get("postproc", []))

    recon_specs = []
    for i, robj in enumerate(raw.get("reconstructors", [{"builtin": "voxel_collapse"}])):
        builtin = robj.get("builtin")
        plugin = robj.get("plugin")
        _require(bool(builtin) != bool(plugin),
                 "each reconstructor needs exactly one of 'builtin' or 'plugin'")
        if builtin:
            _require(builtin in BUILTIN_RECONSTRUCTORS, f"unknown builtin reconstructor {builtin!r}")
        label = robj.get("label") or (builtin if builtin else f"plugin{i}")
        norm_override = robj.get("normalize")
        if norm_override is not None:
            _require(norm_override in NORM_MODES, f"unknown normalize mode {norm_override!r}")
        recon_specs.append(ReconstructorSpec(
            label=label,
            builtin=builtin,
            plugin=plugin,
            tau=float(robj.get("tau", 0.1)),
            gain=float(robj.get("gain", 0.1)),
            normalize=norm_override,
            pad_multiple=int(robj["pad_multiple"]) if robj.get("pad_multiple") is not None else None,
        ))
    labels = [r.label for r in recon_specs]
    _require(len(labels) == len(set(labels)), "reconstructor labels must be unique")

    metric_specs = []
    for mobj in raw.get("metrics", [{"name": "mse"}, {"name": "ssim"}]):
        name = mobj.get("name")
        _require(bool(name), "each metric requires a name")
        plugin = mobj.get("plugin")
        if plugin is None:
            _require(name in ("mse", "ssim"),
                     f"metric {name!r} is not builtin; map it to a plugin cmdline")
            metric_specs.append(MetricSpec(name=name))
        else:
            kind = mobj.get("kind", FULL_REFERENCE)
            _require(kind in (FULL_REFERENCE, NO_REFERENCE), f"unknown metric kind {kind!r}")
            direction = mobj.get("direction", LOWER_BETTER)
            _require(direction in (LOWER_BETTER, HIGHER_BETTER),
                     f"unknown metric direction {direction!r}")
            metric_specs.append(MetricSpec(name=name, plugin=plugin, kind=kind, direction=direction))
    metric_names = [m.name for m in metric_specs]
    _require(len(metric_names) == len(set(metric_names)), "metric names must be unique")

    parallelism = int(raw.get("parallelism", 1))
    _require(parallelism >= 1, "parallelism must be >= 1")

    return EvalConfig(
        datasets=tuple(datasets),
        grouping=grouping,
        match=match,
        noise_rate=noise_rate,
        drop_ratio=drop_ratio,
        representation=representation,
        postproc=postproc,
        reconstructors=tuple(recon_specs),
        metrics=tuple(metric_specs),
        parallelism=parallelism,
        seed=int(raw.get("seed", 0)),
        echo=raw,
    )
