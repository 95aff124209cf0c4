"""Raw-event transformations applied before grouping.

Both operations are deterministic for a fixed seed. The RNG is numpy's
PCG64 (``np.random.default_rng``), chosen as a named, portable 64-bit
generator so runs replicate across machines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .events import EventStream


@dataclass(frozen=True)
class DownsampleSpec:
    """I.i.d. Bernoulli thinning: each event dropped with ``drop_ratio``."""

    drop_ratio: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.drop_ratio <= 1.0):
            raise ValidationError(f"drop_ratio must be in [0, 1], got {self.drop_ratio}")


@dataclass(frozen=True)
class NoiseSpec:
    """Uniform background-activity noise, ``rate`` events per pixel per second."""

    rate: float
    seed: int = 0

    def __post_init__(self):
        if self.rate < 0.0:
            raise ValidationError(f"noise rate must be >= 0, got {self.rate}")


def downsample_events(stream: EventStream, spec: DownsampleSpec) -> EventStream:
    """Retain each event independently with probability 1 - drop_ratio.

    Relative order of survivors is preserved; the stream span is kept so
    downstream fixed-duration grouping still covers the original interval.
    """
    if spec.drop_ratio == 0.0:
        return stream
    rng = np.random.default_rng(spec.seed)
    keep = rng.random(len(stream)) >= spec.drop_ratio
    return EventStream(
        stream.geometry,
        stream.t[keep],
        stream.x[keep],
        stream.y[keep],
        stream.p[keep],
        span=stream.span,
    )


def inject_noise(stream: EventStream, spec: NoiseSpec) -> EventStream:
    """Merge in synthetic events from a homogeneous Poisson process.

    The process has total rate rate*W*H over the stream span, uniform in
    x and y, fair-coin polarity. Original events keep their relative order
    (they sort ahead of synthetic ones at equal timestamps).
    """
    if spec.rate == 0.0:
        return stream
    t0, t1 = stream.span
    duration = t1 - t0
    if duration <= 0.0:
        raise ValidationError("cannot place noise on a zero-span stream")
    geom = stream.geometry
    rng = np.random.default_rng(spec.seed)
    count = int(rng.poisson(spec.rate * geom.width * geom.height * duration))
    nt = rng.uniform(t0, t1, count)
    nx = rng.integers(0, geom.width, count, dtype=np.uint16)
    ny = rng.integers(0, geom.height, count, dtype=np.uint16)
    np_ = (rng.integers(0, 2, count, dtype=np.int8) * 2 - 1).astype(np.int8)

    t = np.concatenate([stream.t, nt])
    x = np.concatenate([stream.x, nx])
    y = np.concatenate([stream.y, ny])
    p = np.concatenate([stream.p, np_])
    order = np.argsort(t, kind="stable")
    return EventStream(geom, t[order], x[order], y[order], p[order], span=stream.span)
