"""Full-reference image metrics with pinned settings, plus a registry.

MSE is the plain mean of squared differences on [0, 1] floats. SSIM uses
the Gaussian-weighted formulation: 11x11 window, sigma 1.5, K1=0.01,
K2=0.03, dynamic range L=1, population (weighted) statistics, and the
local map averaged over valid window positions only. Learned and
no-reference metrics are reached through metric plugins, never natively.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.signal import convolve2d

from .errors import MetricError

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0

FULL_REFERENCE = "full_reference"
NO_REFERENCE = "no_reference"
LOWER_BETTER = "lower_better"
HIGHER_BETTER = "higher_better"


@dataclass(frozen=True)
class MetricId:
    name: str
    kind: str          # full_reference | no_reference
    direction: str     # lower_better | higher_better
    source: str        # builtin | plugin


@dataclass(frozen=True)
class MetricSample:
    timestamp: float
    value: float
    metric: MetricId


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise MetricError(f"image shapes differ: {pred.shape} vs {gt.shape}")


def mse(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean squared error on [0, 1] pixel values; lower is better."""
    _check_pair(pred, gt)
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.mean(diff * diff))


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian window."""
    half = (size - 1) / 2
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _gaussian_filter_valid(image: np.ndarray) -> np.ndarray:
    """Separable valid-mode convolution with the SSIM Gaussian window."""
    half = (SSIM_WINDOW - 1) / 2
    g = np.exp(-((np.arange(SSIM_WINDOW) - half) ** 2) / (2 * SSIM_SIGMA ** 2))
    g = g / g.sum()
    return convolve2d(convolve2d(image, g[:, None], mode="valid"), g[None, :], mode="valid")


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Gaussian-weighted structural similarity; higher is better."""
    _check_pair(pred, gt)
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    if min(a.shape) < SSIM_WINDOW:
        raise MetricError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    mu_a = _gaussian_filter_valid(a)
    mu_b = _gaussian_filter_valid(b)
    var_a = _gaussian_filter_valid(a * a) - mu_a * mu_a
    var_b = _gaussian_filter_valid(b * b) - mu_b * mu_b
    cov = _gaussian_filter_valid(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


MSE_ID = MetricId("mse", FULL_REFERENCE, LOWER_BETTER, "builtin")
SSIM_ID = MetricId("ssim", FULL_REFERENCE, HIGHER_BETTER, "builtin")

BUILTIN_METRICS: dict[str, tuple[MetricId, Callable[[np.ndarray, np.ndarray], float]]] = {
    "mse": (MSE_ID, mse),
    "ssim": (SSIM_ID, ssim),
}


@dataclass
class MetricEntry:
    """One registered metric: a builtin function or a plugin query hook.

    For plugins ``fn`` takes (pred, gt_or_None) and returns a float; the
    registry supplies gt only for full-reference entries.
    """

    id: MetricId
    fn: Callable


@dataclass
class MetricRegistry:
    entries: list[MetricEntry] = field(default_factory=list)
    failures: int = 0

    def names(self) -> list[str]:
        return [e.id.name for e in self.entries]

    def first_full_reference(self) -> MetricId | None:
        for e in self.entries:
            if e.id.kind == FULL_REFERENCE:
                return e.id
        return None

    def add_builtin(self, name: str) -> None:
        if name not in BUILTIN_METRICS:
            raise MetricError(f"unknown builtin metric {name!r}")
        metric_id, fn = BUILTIN_METRICS[name]
        self.entries.append(MetricEntry(metric_id, lambda p, g, fn=fn: fn(p, g)))

    def add_plugin(self, metric_id: MetricId, query: Callable) -> None:
        self.entries.append(MetricEntry(metric_id, query))

    def evaluate_pair(self, pred: np.ndarray, gt: np.ndarray | None,
                      timestamp: float = 0.0) -> list[MetricSample]:
        """Run every applicable metric on one prediction.

        Full-reference entries are skipped when there is no matched ground
        truth; a plugin failure is logged and counted, never fatal.
        """
        samples = []
        for entry in self.entries:
            if entry.id.kind == FULL_REFERENCE and gt is None:
                continue
            try:
                if entry.id.kind == FULL_REFERENCE:
                    value = entry.fn(pred, gt)
                else:
                    value = entry.fn(pred, None)
            except Exception as exc:
                self.failures += 1
                log.warning("metric %s failed at t=%.6f: %s", entry.id.name, timestamp, exc)
                continue
            samples.append(MetricSample(timestamp, float(value), entry.id))
        return samples
