"""Emission of timelines, summaries, montages, and raw results.

Everything emitted is deterministic for fixed inputs: stable ordering,
floats at 9 significant digits in CSV, sorted keys in JSON, LF endings.
Plot rendering is left to downstream tools; these files are the plot-ready
data. Montage strips are written only during evaluation (raw results hold
no pixel data), so ``report`` re-renders timelines and summaries only.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import EvbenchError
from .events import write_pgm
from .grouping import EventGroup
from .harness import RateBinReport, RunResult, SequenceResult, SweepReport

RESULTS_NAME = "results.json"
SUMMARY_NAME = "summary.json"
TIMELINE_DIR = "timelines"
MONTAGE_DIR = "montage"


def fmt_float(value: float) -> str:
    return f"{value:.9g}"


def _slug(*parts: str) -> str:
    return "__".join(p.replace("/", "_").replace("\\", "_") for p in parts)


def timeline_filename(result: SequenceResult) -> str:
    return _slug(result.dataset, result.sequence, result.reconstructor) + ".csv"


def emit_timeline(result: SequenceResult, metric_names: list[str], path) -> None:
    """One CSV row per scored reconstruction; unmatched metrics left empty."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("timestamp,group_index,event_rate," + ",".join(metric_names) + ",matched\n")
        for row in result.rows:
            cells = [fmt_float(row.timestamp), str(row.group_index), fmt_float(row.event_rate)]
            for name in metric_names:
                value = row.values.get(name)
                cells.append("" if value is None else fmt_float(value))
            cells.append("1" if row.matched else "0")
            fh.write(",".join(cells) + "\n")


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_summary(result: RunResult) -> dict:
    ds_means = result.dataset_means()
    reconstructors = []
    for label in result.reconstructor_labels():
        datasets = []
        for ds in result.dataset_names():
            seqs = [
                {
                    "name": s.sequence,
                    "status": s.status,
                    "error": s.error,
                    "counts": s.counts,
                    "means": s.means,
                }
                for s in result.sequences
                if s.reconstructor == label and s.dataset == ds
            ]
            datasets.append({"name": ds, "means": ds_means[label][ds], "sequences": seqs})
        reconstructors.append({"label": label, "datasets": datasets})
    return {
        "version": result.version,
        "config": result.config_echo,
        "metrics": result.metric_names,
        "reconstructors": reconstructors,
        "failed_sequences": sum(1 for s in result.sequences if s.status == "failed"),
    }


def emit_summary(result: RunResult, path) -> None:
    _write_json(build_summary(result), path)


def emit_results(result: RunResult, path) -> None:
    """Raw machine-readable result, sufficient to re-render the bundle."""
    _write_json(result.to_dict(), path)


def load_results(path) -> RunResult:
    path = Path(path)
    if not path.is_file():
        raise EvbenchError(f"results file not found: {path}")
    return RunResult.from_dict(json.loads(path.read_text(encoding="utf-8")))


def emit_run_bundle(result: RunResult, out_dir) -> None:
    """Write results.json, summary.json, and one timeline CSV per sequence."""
    out_dir = Path(out_dir)
    (out_dir / TIMELINE_DIR).mkdir(parents=True, exist_ok=True)
    emit_results(result, out_dir / RESULTS_NAME)
    emit_summary(result, out_dir / SUMMARY_NAME)
    for seq in result.sequences:
        emit_timeline(seq, result.metric_names, out_dir / TIMELINE_DIR / timeline_filename(seq))


def rerender_bundle(out_dir) -> RunResult:
    """Re-emit summary and timelines from a stored results.json."""
    out_dir = Path(out_dir)
    result = load_results(out_dir / RESULTS_NAME)
    (out_dir / TIMELINE_DIR).mkdir(parents=True, exist_ok=True)
    emit_summary(result, out_dir / SUMMARY_NAME)
    for seq in result.sequences:
        emit_timeline(seq, result.metric_names, out_dir / TIMELINE_DIR / timeline_filename(seq))
    return result


# --- montage ---------------------------------------------------------------------

def event_count_image(group: EventGroup) -> np.ndarray:
    """Per-pixel event count, min/max normalized to [0, 1]."""
    h, w = group.geometry.shape
    counts = np.bincount(group.y.astype(np.int64) * w + group.x.astype(np.int64),
                         minlength=h * w).reshape(h, w).astype(np.float64)
    peak = counts.max()
    return counts / peak if peak > 0 else counts


def montage_strip(group: EventGroup, recon: np.ndarray,
                  gt: np.ndarray | None) -> np.ndarray:
    """Horizontal strip [event visualization | reconstruction | ground truth]."""
    panels = [event_count_image(group), recon]
    if gt is not None:
        panels.append(gt)
    strip = np.concatenate(panels, axis=1)
    return np.clip(np.round(strip * 255.0), 0, 255).astype(np.uint8)


class MontageWriter:
    """Montage sink for the harness: one PGM strip every ``stride`` rows."""

    def __init__(self, out_dir, stride: int = 10):
        if stride < 1:
            raise EvbenchError(f"montage stride must be >= 1, got {stride}")
        self.out_dir = Path(out_dir) / MONTAGE_DIR
        self.stride = stride
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def __call__(self, dataset: str, sequence: str, label: str, row_index: int,
                 group: EventGroup, recon: np.ndarray, gt: np.ndarray | None) -> None:
        if row_index % self.stride:
            return
        name = _slug(dataset, sequence, label) + f"__{row_index:06d}.pgm"
        write_pgm(self.out_dir / name, montage_strip(group, recon, gt))


# --- sweeps ------------------------------------------------------------------------

def point_dirname(point_label: str) -> str:
    return "point_" + point_label.replace("/", "_")


def emit_sweep_bundle(report: SweepReport, out_dir) -> None:
    """Per-point run bundles plus a compact sweep_summary.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_points = []
    for point in report.points:
        pdir = out_dir / point_dirname(point.label)
        emit_run_bundle(point.result, pdir)
        summary_points.append({
            "value": point.value,
            "label": point.label,
            "dataset_means": point.result.dataset_means(),
            "failed_sequences": sum(1 for s in point.result.sequences if s.status == "failed"),
        })
    _write_json({"axis": report.axis, "points": summary_points}, out_dir / "sweep_summary.json")


def emit_rate_report(report: RateBinReport, path) -> None:
    _write_json(report.to_dict(), path)
