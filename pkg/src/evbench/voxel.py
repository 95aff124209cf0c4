"""Voxel-grid event representation and tensor-level conditioning.

A group spanning [T0, T0+dT] is rasterized into B temporal bins: each
event's timestamp is normalized to t* = (B-1)(t - T0)/dT and its polarity
is shared between the two nearest integer bins with weights
max(0, 1 - |bin - t*|), i.e. bilinear interpolation along time. Data
layout is bins-major (B, H, W), row-major within a bin; accumulation runs
in float64 so polarity mass is conserved to well below 1e-9 per event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grouping import EventGroup

DEFAULT_BINS = 5

NORM_NONE = "none"
NORM_NONZERO_MEANSTD = "nonzero_meanstd"
NORM_MODES = (NORM_NONE, NORM_NONZERO_MEANSTD)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Dense (B, H, W) tensor of accumulated polarity mass."""

    data: np.ndarray
    window: tuple[float, float]

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] < 2:
            raise ValidationError("voxel grid must be (B, H, W) with B >= 2")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("voxel grid entries must be finite")

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class PadSpec:
    """Pad H and W up to the next multiple with zeros, bottom/right."""

    multiple: int = 1

    def __post_init__(self):
        if self.multiple < 1:
            raise ValidationError(f"pad multiple must be >= 1, got {self.multiple}")


@dataclass(frozen=True)
class CropRecord:
    """Original dims recorded by padding, used to invert it on output images."""

    height: int
    width: int


def build_voxel_grid(group: EventGroup, bins: int = DEFAULT_BINS) -> VoxelGrid:
    """Accumulate a group into a (bins, H, W) float64 voxel grid.

    An empty group yields an all-zero grid; a zero-length window assigns
    every event t* = 0 (all mass in the first bin).
    """
    if bins < 2:
        raise ValidationError(f"bins must be >= 2, got {bins}")
    h, w = group.geometry.height, group.geometry.width
    if len(group) == 0:
        return VoxelGrid(np.zeros((bins, h, w)), group.window)
    t0, t1 = group.window
    dt = t1 - t0
    if dt > 0:
        tstar = (bins - 1) * (group.t - t0) / dt
    else:
        tstar = np.zeros(len(group))
    left = np.floor(tstar)
    frac = tstar - left
    li = left.astype(np.int64)
    pol = group.p.astype(np.float64)
    pix = group.y.astype(np.int64) * w + group.x.astype(np.int64)
    plane = h * w
    flat = np.zeros(bins * plane)

    mask = (li >= 0) & (li < bins)
    if mask.any():
        flat += np.bincount(li[mask] * plane + pix[mask],
                            weights=(pol * (1.0 - frac))[mask], minlength=bins * plane)
    ri = li + 1
    mask = (ri >= 0) & (ri < bins)
    if mask.any():
        flat += np.bincount(ri[mask] * plane + pix[mask],
                            weights=(pol * frac)[mask], minlength=bins * plane)
    return VoxelGrid(flat.reshape(bins, h, w), group.window)


def normalize_tensor(grid: VoxelGrid, mode: str = NORM_NONE) -> VoxelGrid:
    """Standardize the nonzero entries to zero mean / unit std.

    Zeros stay zero, an all-zero grid passes through, and a sub-1e-6 std is
    treated as 1 to avoid blowing up near-constant grids.
    """
    if mode == NORM_NONE:
        return grid
    if mode != NORM_NONZERO_MEANSTD:
        raise ValidationError(f"unknown tensor normalization mode {mode!r}")
    mask = grid.data != 0
    if not mask.any():
        return grid
    values = grid.data[mask]
    mean = values.mean()
    std = values.std()
    if std < 1e-6:
        std = 1.0
    data = grid.data.copy()
    data[mask] = (values - mean) / std
    return VoxelGrid(data, grid.window)


def pad_to_multiple(grid: VoxelGrid, spec: PadSpec) -> tuple[VoxelGrid, CropRecord]:
    """Zero-pad H and W (bottom/right) to the least multiples >= originals."""
    b, h, w = grid.shape
    m = spec.multiple
    ph = -(-h // m) * m
    pw = -(-w // m) * m
    record = CropRecord(h, w)
    if (ph, pw) == (h, w):
        return grid, record
    data = np.zeros((b, ph, pw))
    data[:, :h, :w] = grid.data
    return VoxelGrid(data, grid.window), record


def crop_image(image: np.ndarray, record: CropRecord) -> np.ndarray:
    """Invert padding on a reconstructor's output image."""
    return image[: record.height, : record.width]


def padded_dims(height: int, width: int, multiple: int) -> tuple[int, int]:
    """Dims pad_to_multiple would produce for this geometry."""
    return (-(-height // multiple) * multiple, -(-width // multiple) * multiple)
