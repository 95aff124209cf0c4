"""Deterministic synthetic sequences standing in for real recordings.

Each sequence renders a drifting intensity pattern, samples ground-truth
frames on a fixed clock, and emits events from per-interval log-brightness
crossings with linearly interpolated timestamps. The generator is fully
seeded, so the bundled fixture dataset is reproducible byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .events import (
    EventStream,
    Frame,
    FrameStream,
    SensorGeometry,
    write_binary_events,
    write_frame_stream,
)

DEFAULT_GEOMETRY = SensorGeometry(240, 180)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic drifting-pattern sequence."""

    name: str
    seed: int
    duration: float = 4.0
    frame_rate: float = 25.0
    threshold: float = 0.35
    velocity: tuple[float, float] = (8.0, 3.0)     # pixels per second
    spatial_freq: tuple[float, float] = (3.0, 2.0)  # cycles over the sensor


def _render(spec: SceneSpec, geometry: SensorGeometry, t: float,
            phase: tuple[float, float]) -> np.ndarray:
    """Scene intensity in [0.1, 0.9] at time t."""
    h, w = geometry.shape
    yy, xx = np.mgrid[0:h, 0:w]
    fx, fy = spec.spatial_freq
    vx, vy = spec.velocity
    u = 2 * np.pi * fx * (xx - vx * t) / w + phase[0]
    v = 2 * np.pi * fy * (yy - vy * t) / h + phase[1]
    pattern = np.sin(u) * np.sin(v)
    # a slow-breathing blob adds local event-rate variation
    cx = w * (0.5 + 0.25 * np.sin(2 * np.pi * t / spec.duration + phase[0]))
    cy = h * (0.5 + 0.25 * np.cos(2 * np.pi * t / spec.duration + phase[1]))
    blob = np.exp(-(((xx - cx) / (0.15 * w)) ** 2 + ((yy - cy) / (0.15 * h)) ** 2))
    return 0.5 + 0.32 * pattern + 0.08 * blob * np.sin(2 * np.pi * 1.5 * t)


def generate_sequence(spec: SceneSpec,
                      geometry: SensorGeometry = DEFAULT_GEOMETRY,
                      substeps: int = 4) -> tuple[EventStream, FrameStream]:
    """Render a sequence and derive its event stream.

    Events fire when the per-pixel log intensity drifts a multiple of the
    contrast threshold away from its reference level; timestamps are
    linearly interpolated within each simulation interval.
    """
    rng = np.random.default_rng(spec.seed)
    phase = (float(rng.uniform(0, 2 * np.pi)), float(rng.uniform(0, 2 * np.pi)))
    n_frames = int(round(spec.duration * spec.frame_rate)) + 1
    frame_times = np.arange(n_frames) / spec.frame_rate

    h, w = geometry.shape
    frames = []
    ref_log = None
    events_t: list[np.ndarray] = []
    events_x: list[np.ndarray] = []
    events_y: list[np.ndarray] = []
    events_p: list[np.ndarray] = []

    sim_times = np.arange((n_frames - 1) * substeps + 1) / (spec.frame_rate * substeps)
    prev_log = None
    prev_t = 0.0
    for i, st in enumerate(sim_times):
        img = np.clip(_render(spec, geometry, float(st), phase), 0.01, 1.0)
        log_img = np.log(img)
        if ref_log is None:
            ref_log = log_img.copy()
        else:
            delta = log_img - ref_log
            count = np.floor(np.abs(delta) / spec.threshold).astype(np.int64)
            fired = count > 0
            if fired.any():
                ys, xs = np.nonzero(fired)
                n = count[ys, xs]
                pol = np.sign(delta[ys, xs]).astype(np.int8)
                total = int(n.sum())
                rep_x = np.repeat(xs, n).astype(np.uint16)
                rep_y = np.repeat(ys, n).astype(np.uint16)
                rep_p = np.repeat(pol, n)
                # j-th crossing of a pixel sits at the fraction of the
                # interval where the drift first exceeded j*threshold
                j = np.arange(total) - np.repeat(np.cumsum(n) - n, n) + 1
                denom = np.abs(log_img - prev_log)[rep_y, rep_x]
                start = np.abs(prev_log - ref_log)[rep_y, rep_x]
                frac = np.clip((j * spec.threshold - start) / np.maximum(denom, 1e-12), 0.0, 1.0)
                rep_t = prev_t + frac * (float(st) - prev_t)
                events_t.append(rep_t)
                events_x.append(rep_x)
                events_y.append(rep_y)
                events_p.append(rep_p)
                ref_log[ys, xs] += np.sign(delta[ys, xs]) * n * spec.threshold
        prev_log = log_img
        prev_t = float(st)
        if i % substeps == 0:
            frames.append(Frame(float(frame_times[i // substeps]), np.clip(img, 0.0, 1.0)))

    if events_t:
        t = np.concatenate(events_t)
        x = np.concatenate(events_x)
        y = np.concatenate(events_y)
        p = np.concatenate(events_p).astype(np.int8)
        order = np.argsort(t, kind="stable")
        stream = EventStream(geometry, t[order], x[order], y[order], p[order],
                             span=(0.0, float(spec.duration)))
    else:
        stream = EventStream.empty(geometry, span=(0.0, float(spec.duration)))
    return stream, FrameStream(geometry, tuple(frames))


def default_scene_specs(seed: int = 7) -> list[SceneSpec]:
    return [
        SceneSpec("drift_a", seed, velocity=(8.0, 3.0), spatial_freq=(3.0, 2.0)),
        SceneSpec("drift_b", seed + 1, velocity=(-6.0, 7.0), spatial_freq=(2.0, 3.0)),
        SceneSpec("drift_c", seed + 2, velocity=(10.0, -4.5), spatial_freq=(4.0, 1.5)),
    ]


def make_fixture_dataset(root, seed: int = 7,
                         geometry: SensorGeometry = DEFAULT_GEOMETRY) -> dict:
    """Write the bundled 3-sequence synthetic dataset under ``root``.

    Layout per sequence: ``<name>/events.evt1`` plus ``<name>/frames/``.
    Returns a manifest dict (also written as ``manifest.json``).
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"geometry": {"width": geometry.width, "height": geometry.height},
                "seed": seed, "sequences": []}
    for spec in default_scene_specs(seed):
        stream, frames = generate_sequence(spec, geometry)
        seq_dir = root / spec.name
        seq_dir.mkdir(parents=True, exist_ok=True)
        write_binary_events(stream, seq_dir / "events.evt1")
        write_frame_stream(seq_dir / "frames", frames)
        manifest["sequences"].append({
            "name": spec.name,
            "events": f"{spec.name}/events.evt1",
            "frames": f"{spec.name}/frames",
            "event_count": len(stream),
            "frame_count": len(frames),
            "duration": spec.duration,
        })
    with open(root / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def fixture_eval_config(root, *, grouping: dict | None = None, seed: int = 0) -> dict:
    """A ready-to-run eval config dict for a make_fixture_dataset tree."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    sequences = [
        {
            "name": s["name"],
            "events": s["events"],
            "frames": s["frames"],
            "eval_window": [0.5, s["duration"]],
        }
        for s in manifest["sequences"]
    ]
    return {
        "seed": seed,
        "datasets": [{"name": "synthetic", "sequences": sequences}],
        "grouping": grouping or {"mode": "between_frames"},
        "match": {"tolerance_ms": 1.0},
        "reconstructors": [{"builtin": "voxel_collapse"}],
        "metrics": [{"name": "mse"}, {"name": "ssim"}],
    }


def random_event_stream(rng: np.random.Generator, geometry: SensorGeometry,
                        count: int, duration: float = 1.0) -> EventStream:
    """Uniform random (but time-sorted) stream, for property tests and benches."""
    t = np.sort(rng.uniform(0.0, duration, count))
    x = rng.integers(0, geometry.width, count, dtype=np.uint16)
    y = rng.integers(0, geometry.height, count, dtype=np.uint16)
    p = (rng.integers(0, 2, count, dtype=np.int8) * 2 - 1).astype(np.int8)
    return EventStream(geometry, t, x, y, p)
