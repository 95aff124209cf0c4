"""Orchestration: standard evaluation runs, robustness sweeps, aggregation.

One evaluation crosses every (sequence, reconstructor) pair through the
pipeline preprocess -> group -> represent -> reconstruct -> post-process
-> match -> metrics. Per-sequence failures are recorded and the run
continues; dataset scores average sequence means (never pooled frames) so
long sequences cannot dominate. All randomness is derived from the config
seed plus stable string keys, making runs reproducible and sweep points
order-independent.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import __version__
from .config import EvalConfig, ReconstructorSpec, SequenceSpec
from .errors import EvbenchError, PluginError
from .events import FrameStream, SensorGeometry, SequenceDataset, load_frame_stream, \
    parse_binary_events, parse_text_events
from .grouping import BetweenFrames, EventGroup, FixedDuration, FixedNumber, GroupTimeline, \
    build_timeline, match_ground_truth
from .metrics import FULL_REFERENCE, MetricRegistry, MetricId
from .preprocess import DownsampleSpec, NoiseSpec, downsample_events, inject_noise
from .reconstruct import LeakyIntegrator, Reconstructor, RepresentationSpec, VoxelCollapse, \
    reconstruct_sequence
from .voxel import padded_dims
from .wire import init_session

DEFAULT_COUNT_VALUES = tuple(range(5000, 45001, 5000))          # 9 points
DEFAULT_DURATION_VALUES_MS = tuple(float(v) for v in range(10, 101, 10))  # 10 points
DEFAULT_DISCARD_RATIOS = tuple(i / 10 for i in range(10))       # 10 points
RATE_BIN_COUNT = 10

MATCH_TOLERANCE_SWEEP = 0.001

FrameDropper = Callable[[str, str, FrameStream], FrameStream]
MontageSink = Callable[[str, str, str, int, EventGroup, np.ndarray, np.ndarray | None], None]


def derive_seed(*parts) -> int:
    """Stable 63-bit sub-seed from the config seed plus string keys."""
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# --- results -------------------------------------------------------------------

@dataclass
class TimelineRow:
    """One scored reconstruction: metric values keyed by metric name."""

    timestamp: float
    group_index: int
    event_rate: float
    matched: bool
    values: dict[str, float | None]

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "group_index": self.group_index,
            "event_rate": self.event_rate,
            "matched": self.matched,
            "values": self.values,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TimelineRow":
        return cls(d["timestamp"], d["group_index"], d["event_rate"], d["matched"],
                   dict(d["values"]))


@dataclass
class SequenceResult:
    dataset: str
    sequence: str
    reconstructor: str
    status: str = "ok"               # ok | failed
    error: str | None = None
    counts: dict[str, int] = field(default_factory=dict)
    rows: list[TimelineRow] = field(default_factory=list)
    means: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "sequence": self.sequence,
            "reconstructor": self.reconstructor,
            "status": self.status,
            "error": self.error,
            "counts": self.counts,
            "rows": [r.to_dict() for r in self.rows],
            "means": self.means,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceResult":
        return cls(d["dataset"], d["sequence"], d["reconstructor"], d["status"], d["error"],
                   dict(d["counts"]), [TimelineRow.from_dict(r) for r in d["rows"]],
                   dict(d["means"]))


@dataclass
class RunResult:
    config_echo: dict
    metric_names: list[str]
    sequences: list[SequenceResult] = field(default_factory=list)
    version: str = __version__

    @property
    def any_failed(self) -> bool:
        return any(s.status == "failed" for s in self.sequences)

    def reconstructor_labels(self) -> list[str]:
        seen: list[str] = []
        for s in self.sequences:
            if s.reconstructor not in seen:
                seen.append(s.reconstructor)
        return seen

    def dataset_names(self) -> list[str]:
        seen: list[str] = []
        for s in self.sequences:
            if s.dataset not in seen:
                seen.append(s.dataset)
        return seen

    def dataset_means(self) -> dict[str, dict[str, dict[str, float | None]]]:
        """label -> dataset -> metric -> mean over sequence means."""
        out: dict[str, dict[str, dict[str, float | None]]] = {}
        for label in self.reconstructor_labels():
            out[label] = {}
            for dataset in self.dataset_names():
                seq_means = [
                    s.means for s in self.sequences
                    if s.reconstructor == label and s.dataset == dataset
                ]
                agg: dict[str, float | None] = {}
                for name in self.metric_names:
                    vals = [m[name] for m in seq_means if m.get(name) is not None]
                    agg[name] = float(np.mean(vals)) if vals else None
                out[label][dataset] = agg
        return out

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config_echo,
            "metric_names": self.metric_names,
            "sequences": [s.to_dict() for s in self.sequences],
            "dataset_means": self.dataset_means(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(d["config"], list(d["metric_names"]),
                   [SequenceResult.from_dict(s) for s in d["sequences"]],
                   d.get("version", __version__))


# --- pipeline pieces -------------------------------------------------------------

def load_sequence(spec: SequenceSpec) -> SequenceDataset:
    """Materialize a config sequence entry into streams."""
    frames = load_frame_stream(spec.frames_dir) if spec.frames_dir is not None else None
    if spec.events_path.suffix == ".evt1":
        stream = parse_binary_events(spec.events_path)
    else:
        if frames is None:
            raise EvbenchError(
                f"{spec.events_path}: text event files need a frames directory to fix the geometry"
            )
        stream = parse_text_events(spec.events_path, frames.geometry)
    return SequenceDataset(spec.name, stream, frames, spec.eval_window)


class PluginReconstructor(Reconstructor):
    """Reconstructor backed by a plugin session; negotiates padded dims."""

    stateful = True

    def __init__(self, cmdline: str, geometry: SensorGeometry, rep: RepresentationSpec):
        ph, pw = padded_dims(geometry.height, geometry.width, rep.pad_multiple)
        self.session = init_session(cmdline, SensorGeometry(pw, ph), rep.bins)
        if self.session.info.kind != "reconstructor":
            kind = self.session.info.kind
            self.session.shutdown()
            raise PluginError(f"plugin {cmdline!r} negotiated kind {kind!r}, need a reconstructor")
        self.name = self.session.info.name

    def reset(self) -> None:
        self.session.reset()

    def infer(self, group: EventGroup, grid) -> np.ndarray:
        return self.session.infer(grid.data.astype(np.float32))

    def close(self) -> None:
        self.session.shutdown()


def make_reconstructor(spec: ReconstructorSpec, geometry: SensorGeometry,
                       rep: RepresentationSpec) -> tuple[Reconstructor, RepresentationSpec]:
    """Instantiate a reconstructor and its effective representation spec."""
    effective = replace(
        rep,
        normalize=spec.normalize if spec.normalize is not None else rep.normalize,
        pad_multiple=spec.pad_multiple if spec.pad_multiple is not None else rep.pad_multiple,
    )
    if spec.builtin == "voxel_collapse":
        return VoxelCollapse(), effective
    if spec.builtin == "leaky_integrator":
        return LeakyIntegrator(geometry, tau=spec.tau, gain=spec.gain), effective
    if spec.plugin:
        return PluginReconstructor(spec.plugin, geometry, effective), effective
    raise EvbenchError(f"reconstructor spec {spec!r} names no backend")


class _PluginMetricQuery:
    """Lazy metric-plugin hook; a dead plugin fails queries, never the run."""

    def __init__(self, name: str, cmdline: str, geometry: SensorGeometry, bins: int):
        self.name = name
        self.cmdline = cmdline
        self.geometry = geometry
        self.bins = bins
        self._session = None
        self._dead: str | None = None

    def __call__(self, pred: np.ndarray, gt: np.ndarray | None) -> float:
        if self._dead is not None:
            raise PluginError(self._dead)
        if self._session is None:
            try:
                session = init_session(self.cmdline, self.geometry, self.bins)
            except PluginError as exc:
                self._dead = f"metric plugin {self.name!r} failed to start: {exc}"
                raise PluginError(self._dead) from None
            if session.info.kind != "metric":
                session.shutdown()
                self._dead = f"plugin {self.name!r} negotiated kind {session.info.kind!r}, need a metric"
                raise PluginError(self._dead)
            self._session = session
        try:
            return self._session.metric_query(pred, gt)
        except PluginError:
            self._session = None
            raise

    def close(self) -> None:
        if self._session is not None:
            self._session.shutdown()
            self._session = None


def build_registry(config: EvalConfig, geometry: SensorGeometry) -> tuple[MetricRegistry, list]:
    registry = MetricRegistry()
    closers = []
    for ms in config.metrics:
        if ms.plugin is None:
            registry.add_builtin(ms.name)
        else:
            query = _PluginMetricQuery(ms.name, ms.plugin, geometry, config.representation.bins)
            closers.append(query)
            registry.add_plugin(MetricId(ms.name, ms.kind, ms.direction, "plugin"), query)
    return registry, closers


def _sequence_means(rows: list[TimelineRow], metric_names: list[str]) -> dict[str, float | None]:
    means: dict[str, float | None] = {}
    for name in metric_names:
        vals = [r.values[name] for r in rows if r.values.get(name) is not None]
        means[name] = float(np.mean(vals)) if vals else None
    return means


def run_sequence(config: EvalConfig, dataset_name: str, seq_spec: SequenceSpec,
                 recon_spec: ReconstructorSpec, *, frame_dropper: FrameDropper | None = None,
                 montage_sink: MontageSink | None = None) -> SequenceResult:
    """Evaluate one (sequence, reconstructor) pair; never raises on failure."""
    metric_names = [m.name for m in config.metrics]
    result = SequenceResult(dataset_name, seq_spec.name, recon_spec.label)
    recon = None
    closers: list = []
    try:
        data = load_sequence(seq_spec)
        frames = data.ground_truth
        if frame_dropper is not None and frames is not None:
            frames = frame_dropper(dataset_name, seq_spec.name, frames)
        stream = data.events
        if config.noise_rate > 0:
            stream = inject_noise(stream, NoiseSpec(
                config.noise_rate, derive_seed(config.seed, "noise", dataset_name, seq_spec.name)))
        if config.drop_ratio > 0:
            stream = downsample_events(stream, DownsampleSpec(
                config.drop_ratio, derive_seed(config.seed, "drop", dataset_name, seq_spec.name)))
        timeline = build_timeline(stream, config.grouping, frames)
        if frames is not None:
            matches = match_ground_truth(timeline, frames, config.match)
        else:
            matches = [None] * len(timeline)
        recon, rep = make_reconstructor(recon_spec, stream.geometry, config.representation)
        registry, closers = build_registry(config, stream.geometry)
        run = reconstruct_sequence(timeline, recon, rep, config.postproc)
        window = data.eval_window
        matched_count = 0
        for r in run.reconstructions:
            if window is not None and not (window[0] <= r.timestamp <= window[1]):
                continue
            group = timeline.groups[r.group_index]
            frame_idx = matches[r.group_index]
            gt_img = frames.frames[frame_idx].pixels if frame_idx is not None else None
            samples = registry.evaluate_pair(r.image, gt_img, r.timestamp)
            sampled = {s.metric.name: s.value for s in samples}
            values = {name: sampled.get(name) for name in metric_names}
            matched = frame_idx is not None
            matched_count += int(matched)
            result.rows.append(TimelineRow(r.timestamp, r.group_index, group.event_rate,
                                           matched, values))
            if montage_sink is not None:
                montage_sink(dataset_name, seq_spec.name, recon_spec.label,
                             len(result.rows) - 1, group, r.image, gt_img)
        result.counts = {
            "groups": len(timeline),
            "matched": matched_count,
            "failed": len(timeline) - len(run.reconstructions),
        }
        result.means = _sequence_means(result.rows, metric_names)
        if run.failed:
            result.status = "failed"
            result.error = run.error
    except (EvbenchError, OSError) as exc:
        result.status = "failed"
        result.error = str(exc)
        result.counts = result.counts or {"groups": 0, "matched": 0, "failed": 0}
        result.means = result.means or {name: None for name in metric_names}
    finally:
        if recon is not None:
            recon.close()
        for closer in closers:
            closer.close()
    return result


def run_standard_eval(config: EvalConfig, *, frame_dropper: FrameDropper | None = None,
                      montage_sink: MontageSink | None = None) -> RunResult:
    """Run every (sequence, reconstructor) pair, optionally in parallel."""
    metric_names = [m.name for m in config.metrics]
    result = RunResult(config_echo=config.echo, metric_names=metric_names)
    tasks = [
        (recon_spec, dataset.name, seq_spec)
        for recon_spec in config.reconstructors
        for dataset in config.datasets
        for seq_spec in dataset.sequences
    ]
    if config.parallelism <= 1:
        outcomes = [
            run_sequence(config, ds, seq, recon,
                         frame_dropper=frame_dropper, montage_sink=montage_sink)
            for recon, ds, seq in tasks
        ]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            futures = [
                pool.submit(run_sequence, config, ds, seq, recon,
                            frame_dropper=frame_dropper, montage_sink=montage_sink)
                for recon, ds, seq in tasks
            ]
            outcomes = [f.result() for f in futures]
    result.sequences = outcomes
    return result


# --- robustness sweeps -----------------------------------------------------------

@dataclass
class SweepPoint:
    value: float
    label: str
    result: RunResult

    def to_dict(self) -> dict:
        return {"value": self.value, "label": self.label, "result": self.result.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepPoint":
        return cls(d["value"], d["label"], RunResult.from_dict(d["result"]))


@dataclass
class SweepReport:
    axis: str
    points: list[SweepPoint]

    @property
    def any_failed(self) -> bool:
        return any(p.result.any_failed for p in self.points)

    def to_dict(self) -> dict:
        return {"axis": self.axis, "points": [p.to_dict() for p in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepReport":
        return cls(d["axis"], [SweepPoint.from_dict(p) for p in d["points"]])


def _check_increasing(values, what: str) -> None:
    if not values:
        raise EvbenchError(f"{what} sweep needs at least one value")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise EvbenchError(f"{what} sweep values must be strictly increasing")


def sweep_event_count(config: EvalConfig, values=None) -> SweepReport:
    """Tensor-sparsity sweep: fixed-number grouping over the given counts."""
    values = list(values) if values is not None else list(DEFAULT_COUNT_VALUES)
    _check_increasing(values, "event-count")
    points = []
    for v in values:
        cfg = config.with_grouping(FixedNumber(int(v)), tolerance=MATCH_TOLERANCE_SWEEP)
        points.append(SweepPoint(float(v), str(int(v)), run_standard_eval(cfg)))
    return SweepReport("event_count", points)


def sweep_duration(config: EvalConfig, values_ms=None) -> SweepReport:
    """Reconstruction-rate sweep: fixed-duration grouping, labels in FPS."""
    values_ms = list(values_ms) if values_ms is not None else list(DEFAULT_DURATION_VALUES_MS)
    _check_increasing(values_ms, "duration")
    if values_ms[0] <= 0:
        raise EvbenchError("durations must be positive")
    points = []
    for ms in values_ms:
        cfg = config.with_grouping(FixedDuration(ms / 1000.0), tolerance=MATCH_TOLERANCE_SWEEP)
        points.append(SweepPoint(float(ms), f"{1000.0 / ms:g}fps", run_standard_eval(cfg)))
    return SweepReport("duration_ms", points)


def sweep_discard(config: EvalConfig, ratios=None) -> SweepReport:
    """Temporal-irregularity sweep: drop ground-truth frames, regroup, rescore.

    Each interior frame is dropped independently with the given ratio; the
    first and last frames always survive so the evaluation window holds.
    """
    ratios = list(ratios) if ratios is not None else list(DEFAULT_DISCARD_RATIOS)
    _check_increasing(ratios, "discard")
    if ratios[0] < 0.0 or ratios[-1] >= 1.0:
        raise EvbenchError("discard ratios must lie in [0, 1)")
    points = []
    for ratio in ratios:
        dropper = make_frame_dropper(config.seed, ratio)
        cfg = config.with_grouping(BetweenFrames())
        points.append(SweepPoint(float(ratio), f"{ratio:g}",
                                 run_standard_eval(cfg, frame_dropper=dropper)))
    return SweepReport("discard_ratio", points)


def make_frame_dropper(seed: int, ratio: float) -> FrameDropper:
    """Seeded i.i.d. interior-frame dropper keyed by sequence and ratio."""

    def dropper(dataset: str, sequence: str, frames: FrameStream) -> FrameStream:
        if ratio == 0.0 or len(frames) <= 2:
            return frames
        rng = np.random.default_rng(derive_seed(seed, "discard", dataset, sequence, f"{ratio:.6f}"))
        keep = rng.random(len(frames) - 2) >= ratio
        kept = [frames.frames[0]]
        kept += [f for f, k in zip(frames.frames[1:-1], keep) if k]
        kept.append(frames.frames[-1])
        return FrameStream(frames.geometry, tuple(kept))

    return dropper


# --- event-rate binning -----------------------------------------------------------

@dataclass
class RateBinReport:
    """Per-bin mean of one metric over equal-width event-rate bins."""

    metric: str
    edges: list[float]
    counts: dict[str, list[int]]
    means: dict[str, list[float | None]]

    @property
    def bin_count(self) -> int:
        return len(self.edges) - 1

    def to_dict(self) -> dict:
        return {"metric": self.metric, "edges": self.edges,
                "counts": self.counts, "means": self.means}


def bin_by_event_rate(result: RunResult, metric: str | None = None) -> RateBinReport:
    """Bin scored rows into 10 equal-width event-rate bins per reconstructor.

    Edges are global across the whole run (shared timeline) so methods are
    compared on identical bins. Fewer than two distinct rates degenerate to
    a single bin.
    """
    if metric is None:
        metric = result.metric_names[0] if result.metric_names else None
    if metric is None:
        raise EvbenchError("no metric available for rate binning")
    rates = np.array([row.event_rate for s in result.sequences for row in s.rows])
    if rates.size == 0:
        raise EvbenchError("run produced no scored rows to bin")
    lo, hi = float(rates.min()), float(rates.max())
    if hi - lo <= 0.0:
        edges = [lo, hi]
        nbins = 1
    else:
        edges = [lo + (hi - lo) * i / RATE_BIN_COUNT for i in range(RATE_BIN_COUNT + 1)]
        nbins = RATE_BIN_COUNT
    counts: dict[str, list[int]] = {}
    means: dict[str, list[float | None]] = {}
    for label in result.reconstructor_labels():
        acc = [[] for _ in range(nbins)]
        for s in result.sequences:
            if s.reconstructor != label:
                continue
            for row in s.rows:
                value = row.values.get(metric)
                if value is None:
                    continue
                if nbins == 1:
                    b = 0
                else:
                    b = min(int((row.event_rate - lo) / (hi - lo) * nbins), nbins - 1)
                acc[b].append(value)
        counts[label] = [len(a) for a in acc]
        means[label] = [float(np.mean(a)) if a else None for a in acc]
    return RateBinReport(metric, edges, counts, means)
