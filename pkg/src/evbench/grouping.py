"""Partition event streams into groups and match groups to ground truth.

Three schemes are supported: fixed event count, fixed window duration, and
between consecutive ground-truth frames. Every scheme stamps each group
with a target time (the window end) at which its reconstruction will be
compared against ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import GroupingError, ValidationError
from .events import EventStream, FrameStream, SensorGeometry


@dataclass(frozen=True)
class FixedNumber:
    """Group every ``count`` consecutive events; trailing remainder discarded."""

    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError(f"group event count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class FixedDuration:
    """Non-overlapping windows of ``duration`` seconds anchored at stream start."""

    duration: float

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValidationError(f"group duration must be > 0, got {self.duration}")


@dataclass(frozen=True)
class BetweenFrames:
    """One group per interval between consecutive ground-truth frames."""


GroupingSpec = Union[FixedNumber, FixedDuration, BetweenFrames]


@dataclass(frozen=True)
class MatchPolicy:
    """Maximum |timestamp difference| for pairing a group with a frame."""

    tolerance: float = 0.001

    def __post_init__(self):
        if self.tolerance < 0.0:
            raise ValidationError(f"tolerance must be >= 0, got {self.tolerance}")


@dataclass(frozen=True, eq=False)
class EventGroup:
    """A contiguous slice of the stream with its time window and target time."""

    index: int
    geometry: SensorGeometry
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    window: tuple[float, float]
    target_time: float

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return self.window[1] - self.window[0]

    @property
    def event_rate(self) -> float:
        """Events per second over the window; 0 for a zero-length window."""
        return len(self.t) / self.duration if self.duration > 0 else 0.0


@dataclass(frozen=True)
class GroupTimeline:
    """Ordered event groups produced by one grouping pass."""

    geometry: SensorGeometry
    groups: tuple[EventGroup, ...]

    def __len__(self) -> int:
        return len(self.groups)

    def event_rates(self) -> np.ndarray:
        return np.array([g.event_rate for g in self.groups], dtype=np.float64)

    def target_times(self) -> np.ndarray:
        return np.array([g.target_time for g in self.groups], dtype=np.float64)


def _slice_group(stream: EventStream, index: int, lo: int, hi: int,
                 window: tuple[float, float], target: float) -> EventGroup:
    return EventGroup(
        index=index,
        geometry=stream.geometry,
        t=stream.t[lo:hi],
        x=stream.x[lo:hi],
        y=stream.y[lo:hi],
        p=stream.p[lo:hi],
        window=window,
        target_time=target,
    )


def group_fixed_number(stream: EventStream, count: int) -> GroupTimeline:
    """Groups of exactly ``count`` events; fewer-than-count remainder dropped.

    The window is the [first, last] member timestamp pair (data dependent)
    and the target time is the last member's timestamp.
    """
    spec = FixedNumber(count)
    n_groups = len(stream) // spec.count
    groups = []
    for k in range(n_groups):
        lo, hi = k * spec.count, (k + 1) * spec.count
        window = (float(stream.t[lo]), float(stream.t[hi - 1]))
        groups.append(_slice_group(stream, k, lo, hi, window, window[1]))
    return GroupTimeline(stream.geometry, tuple(groups))


def fixed_duration_group_count(stream: EventStream, duration: float) -> int:
    """Number of windows a fixed-duration pass emits: ceil(span / duration).

    A zero-span stream degenerates to a single group when it holds any
    events (so none are lost) and to none when empty.
    """
    span = stream.duration
    if span <= 0.0:
        return 1 if len(stream) else 0
    return math.ceil(span / duration)


def group_fixed_duration(stream: EventStream, duration: float) -> GroupTimeline:
    """Half-open windows [k*T, (k+1)*T) anchored at the stream's span start.

    Empty windows are emitted as empty groups so the output frame rate is
    exactly 1/T. An event landing exactly on the final span boundary (span
    an exact multiple of T) is clamped into the last group so the partition
    stays total while the group count stays ceil(span/T).
    """
    spec = FixedDuration(duration)
    n_groups = fixed_duration_group_count(stream, spec.duration)
    t0 = stream.span[0]
    groups = []
    if len(stream):
        idx = np.floor((stream.t - t0) / spec.duration).astype(np.int64)
        np.clip(idx, 0, n_groups - 1, out=idx)
        starts = np.searchsorted(idx, np.arange(n_groups), side="left")
        ends = np.searchsorted(idx, np.arange(n_groups), side="right")
    else:
        starts = ends = np.zeros(n_groups, dtype=np.int64)
    for k in range(n_groups):
        window = (t0 + k * spec.duration, t0 + (k + 1) * spec.duration)
        groups.append(_slice_group(stream, k, int(starts[k]), int(ends[k]), window, window[1]))
    return GroupTimeline(stream.geometry, tuple(groups))


def group_between_frames(stream: EventStream, frames: FrameStream) -> GroupTimeline:
    """One group per [s_k, s_{k+1}) frame interval; N_frames - 1 groups.

    Events before the first frame or at/after the last are excluded.
    """
    if len(frames) < 2:
        raise GroupingError(f"between-frames grouping needs >= 2 frames, got {len(frames)}")
    s = frames.timestamps
    bounds = np.searchsorted(stream.t, s, side="left")
    groups = []
    for k in range(len(s) - 1):
        window = (float(s[k]), float(s[k + 1]))
        groups.append(_slice_group(stream, k, int(bounds[k]), int(bounds[k + 1]), window, window[1]))
    return GroupTimeline(stream.geometry, tuple(groups))


def build_timeline(stream: EventStream, spec: GroupingSpec,
                   frames: FrameStream | None = None) -> GroupTimeline:
    """Dispatch to the scheme selected by ``spec``."""
    if isinstance(spec, FixedNumber):
        return group_fixed_number(stream, spec.count)
    if isinstance(spec, FixedDuration):
        return group_fixed_duration(stream, spec.duration)
    if isinstance(spec, BetweenFrames):
        if frames is None:
            raise GroupingError("between-frames grouping requires a ground-truth frame stream")
        return group_between_frames(stream, frames)
    raise GroupingError(f"unknown grouping spec {spec!r}")


def match_ground_truth(timeline: GroupTimeline, frames: FrameStream,
                       policy: MatchPolicy = MatchPolicy()) -> list[int | None]:
    """Pair each group with the nearest frame within tolerance, injectively.

    Returns one optional frame index per group. When several groups claim
    the same frame, the nearest wins and an equal-distance tie goes to the
    earlier group; losers stay unmatched.
    """
    s = frames.timestamps
    result: list[int | None] = [None] * len(timeline)
    if len(s) == 0 or len(timeline) == 0:
        return result
    claims: dict[int, tuple[float, int]] = {}
    for k, group in enumerate(timeline.groups):
        target = group.target_time
        j = int(np.searchsorted(s, target))
        best, best_d = None, None
        for cand in (j - 1, j):
            if 0 <= cand < len(s):
                d = abs(float(s[cand]) - target)
                if best_d is None or d < best_d:
                    best, best_d = cand, d
        if best is None or best_d > policy.tolerance:
            continue
        held = claims.get(best)
        if held is None or best_d < held[0]:
            claims[best] = (best_d, k)
    for frame_idx, (_, group_idx) in claims.items():
        result[group_idx] = frame_idx
    return result
