"""Reconstructor abstraction, built-in baselines, image post-processing.

Reconstructors consume event groups (already rasterized to voxel grids)
and emit grayscale images in [0, 1]. The two baselines are deliberately
non-learned so the whole pipeline runs without any model weights: a
per-bin polarity collapse and a leaky per-pixel integrator that exercises
the stateful (recurrent) contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import PluginError, SequenceOrderError, ValidationError
from .events import SensorGeometry
from .grouping import EventGroup, GroupTimeline
from .voxel import (
    DEFAULT_BINS,
    NORM_NONE,
    PadSpec,
    VoxelGrid,
    build_voxel_grid,
    crop_image,
    normalize_tensor,
    pad_to_multiple,
)

RANGE_EPS = 1e-6
EXP_CLAMP = 80.0


# --- post-processing steps ---------------------------------------------------

def robust_minmax_normalize(image: np.ndarray, lo_pct: float = 1.0,
                            hi_pct: float = 99.0) -> np.ndarray:
    """Clamp to the [lo, hi] percentiles then map affinely to [0, 1].

    A degenerate percentile range (< 1e-6) maps the whole image to mid-gray
    0.5 so empty inputs flow through the pipeline instead of erroring.
    """
    if not (0.0 <= lo_pct < hi_pct <= 100.0):
        raise ValidationError(f"percentiles must satisfy 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})")
    lo, hi = np.percentile(image, [lo_pct, hi_pct])
    if hi - lo < RANGE_EPS:
        return np.full_like(image, 0.5, dtype=np.float64)
    return (np.clip(image, lo, hi) - lo) / (hi - lo)


def apply_exponential(image: np.ndarray) -> np.ndarray:
    """Elementwise e^v; inputs clamped to <= 80 to guard against overflow."""
    return np.exp(np.minimum(image, EXP_CLAMP))


def histogram_equalize(image: np.ndarray) -> np.ndarray:
    """Global 256-level equalization mapping each level to its empirical CDF."""
    levels = np.clip(np.round(image * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(hist) / levels.size
    return cdf[levels]


@dataclass(frozen=True)
class Exponential:
    pass


@dataclass(frozen=True)
class RobustMinMax:
    lo_pct: float = 1.0
    hi_pct: float = 99.0

    def __post_init__(self):
        if not (0.0 <= self.lo_pct < self.hi_pct <= 100.0):
            raise ValidationError(
                f"percentiles must satisfy 0 <= lo < hi <= 100, got ({self.lo_pct}, {self.hi_pct})"
            )


@dataclass(frozen=True)
class HistogramEqualize:
    pass


PostProcStep = Union[Exponential, RobustMinMax, HistogramEqualize]


@dataclass(frozen=True)
class PostProcSpec:
    """Ordered post-processing chain applied to every reconstructed image."""

    steps: tuple[PostProcStep, ...] = ()

    def apply(self, image: np.ndarray) -> np.ndarray:
        for step in self.steps:
            if isinstance(step, Exponential):
                image = apply_exponential(image)
            elif isinstance(step, RobustMinMax):
                image = robust_minmax_normalize(image, step.lo_pct, step.hi_pct)
            elif isinstance(step, HistogramEqualize):
                image = histogram_equalize(image)
            else:
                raise ValidationError(f"unknown post-processing step {step!r}")
        return np.clip(image, 0.0, 1.0)


# --- reconstructors -----------------------------------------------------------

@dataclass(frozen=True)
class RepresentationSpec:
    """How groups become tensors: bin count, normalization, padding."""

    bins: int = DEFAULT_BINS
    normalize: str = NORM_NONE
    pad_multiple: int = 1


class Reconstructor:
    """One reconstruction backend bound to a sequence geometry."""

    name = "base"
    stateful = False

    def reset(self) -> None:
        """Clear per-sequence state; must be called before each sequence."""

    def infer(self, group: EventGroup, grid: VoxelGrid) -> np.ndarray:
        raise NotImplementedError

    def close(self) -> None:
        """Release external resources (plugin sessions)."""


def baseline_voxel_collapse(grid: VoxelGrid) -> np.ndarray:
    """Sum the temporal bins and robust-normalize the result to [0, 1]."""
    return robust_minmax_normalize(grid.data.sum(axis=0), 1.0, 99.0)


class VoxelCollapse(Reconstructor):
    """Stateless collapse-the-bins baseline."""

    name = "voxel_collapse"
    stateful = False

    def infer(self, group: EventGroup, grid: VoxelGrid) -> np.ndarray:
        return baseline_voxel_collapse(grid)


class LeakyIntegrator(Reconstructor):
    """Per-pixel leaky accumulator sampled at each group's target time.

    State decays by exp(-dt/tau) between updates and each event adds
    gain * polarity; the decay is applied in closed form so the result is
    exact regardless of event spacing. tau=inf degenerates to pure
    accumulation.
    """

    name = "leaky_integrator"
    stateful = True

    def __init__(self, geometry: SensorGeometry, tau: float = 0.1, gain: float = 0.1):
        if tau <= 0:
            raise ValidationError(f"decay constant tau must be > 0, got {tau}")
        self.geometry = geometry
        self.tau = float(tau)
        self.gain = float(gain)
        self._state = np.zeros(geometry.shape)
        self._last_sample: float | None = None
        self._next_index = 0

    def reset(self) -> None:
        self._state = np.zeros(self.geometry.shape)
        self._last_sample = None
        self._next_index = 0

    def infer(self, group: EventGroup, grid: VoxelGrid) -> np.ndarray:
        if group.index != self._next_index:
            raise SequenceOrderError(
                f"stateful reconstructor fed group {group.index}, expected {self._next_index}"
            )
        self._next_index += 1
        sample_t = group.target_time
        if self._last_sample is not None:
            self._state *= np.exp(-(sample_t - self._last_sample) / self.tau)
        if len(group):
            weights = self.gain * group.p * np.exp(-(sample_t - group.t) / self.tau)
            h, w = self.geometry.shape
            pix = group.y.astype(np.int64) * w + group.x.astype(np.int64)
            self._state += np.bincount(pix, weights=weights, minlength=h * w).reshape(h, w)
        self._last_sample = sample_t
        return robust_minmax_normalize(self._state, 1.0, 99.0)


def baseline_leaky_integrator(timeline: GroupTimeline, tau: float = 0.1,
                              gain: float = 0.1) -> list[np.ndarray]:
    """Run the leaky integrator over a whole timeline, one image per group."""
    recon = LeakyIntegrator(timeline.geometry, tau=tau, gain=gain)
    recon.reset()
    images = []
    for group in timeline.groups:
        grid = build_voxel_grid(group)
        images.append(recon.infer(group, grid))
    return images


# --- sequence driver -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Reconstruction:
    """One reconstructed frame, stamped with its group's target time."""

    group_index: int
    timestamp: float
    image: np.ndarray  # (H, W) float64 in [0, 1]


@dataclass
class ReconstructionRun:
    """Reconstructions for one sequence plus failure status."""

    reconstructions: list[Reconstruction] = field(default_factory=list)
    failed: bool = False
    error: str | None = None


def reconstruct_sequence(timeline: GroupTimeline, handle: Reconstructor,
                         rep: RepresentationSpec = RepresentationSpec(),
                         postproc: PostProcSpec = PostProcSpec()) -> ReconstructionRun:
    """Feed every group through represent -> infer -> post-process, in order.

    Stateful handles are reset first and receive groups strictly in
    sequence. A plugin failure mid-sequence flags the run as failed and
    keeps the reconstructions produced so far.
    """
    run = ReconstructionRun()
    try:
        handle.reset()
    except PluginError as exc:
        run.failed = True
        run.error = str(exc)
        return run
    pad = PadSpec(rep.pad_multiple)
    for group in timeline.groups:
        grid = build_voxel_grid(group, rep.bins)
        grid = normalize_tensor(grid, rep.normalize)
        padded, crop = pad_to_multiple(grid, pad)
        try:
            raw = handle.infer(group, padded)
        except PluginError as exc:
            run.failed = True
            run.error = str(exc)
            break
        image = crop_image(np.asarray(raw, dtype=np.float64), crop)
        if image.shape != timeline.geometry.shape:
            run.failed = True
            run.error = (
                f"reconstructor returned shape {image.shape}, expected {timeline.geometry.shape}"
            )
            break
        image = postproc.apply(image)
        run.reconstructions.append(Reconstruction(group.index, group.target_time, image))
    return run
