"""Core event/frame domain types and bit-exact file ingestion.

Two event container formats are supported:

* Text: UTF-8 lines ``t x y p`` (t in decimal seconds, p in {0,1} or
  {-1,+1}), ``#``-prefixed comment lines ignored.
* "EVT1" binary: header of exactly 16 bytes (magic ``EVT1``, width u16 LE,
  height u16 LE, count u64 LE) followed by ``count`` records of
  {t: f64 LE, x: u16 LE, y: u16 LE, p: i8}, 13 bytes each.

Ground-truth frames live in a directory holding ``timestamps.txt`` (one
seconds value per line) plus 8-bit grayscale PGM (P5) files named
``%06d.pgm`` counting from zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError, ValidationError

EVT1_MAGIC = b"EVT1"
EVT1_HEADER = struct.Struct("<4sHHQ")
EVT1_RECORD_DTYPE = np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
EVT1_RECORD_SIZE = 13


@dataclass(frozen=True)
class SensorGeometry:
    """Pixel-array dimensions of the sensor."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"geometry must be at least 1x1, got {self.width}x{self.height}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class Event:
    """A single brightness-change event."""

    t: float
    x: int
    y: int
    p: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted events plus the sensor geometry that produced them.

    Events are stored as parallel numpy arrays for throughput. ``span`` is
    the covered time interval; it defaults to the first/last event
    timestamps but may be set explicitly (and wider), which is what gives
    an empty stream a well-defined duration.
    """

    geometry: SensorGeometry
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    span: tuple[float, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        t = _readonly(np.ascontiguousarray(self.t, dtype=np.float64))
        x = _readonly(np.ascontiguousarray(self.x, dtype=np.uint16))
        y = _readonly(np.ascontiguousarray(self.y, dtype=np.uint16))
        p = _readonly(np.ascontiguousarray(self.p, dtype=np.int8))
        n = len(t)
        if not (len(x) == len(y) == len(p) == n):
            raise ValidationError("event field arrays must have equal length")
        if n:
            if t[0] < 0:
                raise ValidationError("event timestamps must be non-negative")
            if np.any(np.diff(t) < 0):
                raise ValidationError("event timestamps must be non-decreasing")
            if int(x.max()) >= self.geometry.width or int(y.max()) >= self.geometry.height:
                raise ValidationError("event coordinates out of sensor bounds")
            if not np.all(np.abs(p) == 1):
                raise ValidationError("event polarity must be +1 or -1")
        span = self.span
        if span is None:
            span = (float(t[0]), float(t[-1])) if n else (0.0, 0.0)
        else:
            span = (float(span[0]), float(span[1]))
            if span[1] < span[0]:
                raise ValidationError("span end precedes span start")
            if n and (t[0] < span[0] or t[-1] > span[1]):
                raise ValidationError("span does not cover all events")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "span", span)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for i in range(len(self.t)):
            yield Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.span == other.span
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    @property
    def duration(self) -> float:
        return self.span[1] - self.span[0]

    @classmethod
    def empty(cls, geometry: SensorGeometry, span: tuple[float, float] = (0.0, 0.0)) -> "EventStream":
        z = np.zeros(0)
        return cls(geometry, z, z, z, z, span=span)


@dataclass(frozen=True, eq=False)
class Frame:
    """A grayscale intensity image stamped with a time instant."""

    timestamp: float
    pixels: np.ndarray  # (H, W) float64 in [0, 1]

    def __post_init__(self):
        px = _readonly(np.ascontiguousarray(self.pixels, dtype=np.float64))
        if px.ndim != 2:
            raise ValidationError("frame pixels must be a 2-D array")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValidationError("frame pixel values must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.timestamp == other.timestamp and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class FrameStream:
    """Strictly increasing sequence of frames sharing one geometry."""

    geometry: SensorGeometry
    frames: tuple[Frame, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        for f in frames:
            if f.pixels.shape != self.geometry.shape:
                raise ValidationError(
                    f"frame shape {f.pixels.shape} does not match geometry {self.geometry.shape}"
                )
        ts = [f.timestamp for f in frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("frame timestamps must be strictly increasing")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames], dtype=np.float64)


@dataclass(frozen=True)
class SequenceDataset:
    """One recorded sequence: events, optional ground truth, scoring window."""

    name: str
    events: EventStream
    ground_truth: FrameStream | None = None
    eval_window: tuple[float, float] | None = None

    def __post_init__(self):
        if self.ground_truth is not None and self.ground_truth.geometry != self.events.geometry:
            raise ValidationError("ground-truth geometry differs from event geometry")


# --- text event format ------------------------------------------------------

def parse_text_events(path, geometry: SensorGeometry, *, sort: bool = False) -> EventStream:
    """Parse ``t x y p`` lines into a validated stream.

    Polarity 0 maps to -1 and 1 to +1; -1 passes through. Unsorted input is
    rejected unless ``sort`` is set, on the grounds that silent reordering
    hides upstream corruption.
    """
    path = Path(path)
    ts: list[float] = []
    xs: list[int] = []
    ys: list[int] = []
    ps: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"expected 't x y p', got {line!r}", path, lineno)
            try:
                t = float(parts[0])
                x = int(parts[1])
                y = int(parts[2])
                p = int(parts[3])
            except ValueError as exc:
                raise ParseError(f"malformed field: {exc}", path, lineno) from None
            if t < 0:
                raise ParseError(f"negative timestamp {t}", path, lineno)
            if not (0 <= x < geometry.width):
                raise ParseError(f"x={x} out of bounds for width {geometry.width}", path, lineno)
            if not (0 <= y < geometry.height):
                raise ParseError(f"y={y} out of bounds for height {geometry.height}", path, lineno)
            if p == 0:
                p = -1
            elif p not in (-1, 1):
                raise ParseError(f"polarity must be in {{0,1}} or {{-1,+1}}, got {p}", path, lineno)
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(p)
    t_arr = np.array(ts, dtype=np.float64)
    x_arr = np.array(xs, dtype=np.uint16)
    y_arr = np.array(ys, dtype=np.uint16)
    p_arr = np.array(ps, dtype=np.int8)
    if len(t_arr) and np.any(np.diff(t_arr) < 0):
        if not sort:
            raise ParseError("timestamps are not non-decreasing (pass sort=True to permit sorting)", path)
        order = np.argsort(t_arr, kind="stable")
        t_arr, x_arr, y_arr, p_arr = t_arr[order], x_arr[order], y_arr[order], p_arr[order]
    return EventStream(geometry, t_arr, x_arr, y_arr, p_arr)


def write_text_events(stream: EventStream, path) -> None:
    """Write events as ``t x y p`` lines, t at 9 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i in range(len(stream)):
            fh.write(f"{stream.t[i]:.9g} {stream.x[i]} {stream.y[i]} {stream.p[i]}\n")


# --- EVT1 binary format -----------------------------------------------------

def write_binary_events(stream: EventStream, path) -> None:
    """Serialize a stream to the EVT1 container."""
    records = np.empty(len(stream), dtype=EVT1_RECORD_DTYPE)
    records["t"] = stream.t
    records["x"] = stream.x
    records["y"] = stream.y
    records["p"] = stream.p
    header = EVT1_HEADER.pack(EVT1_MAGIC, stream.geometry.width, stream.geometry.height, len(stream))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def parse_binary_events(path) -> EventStream:
    """Parse an EVT1 container; geometry comes from the header."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < EVT1_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, width, height, count = EVT1_HEADER.unpack_from(data)
    if magic != EVT1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    payload = data[EVT1_HEADER.size:]
    expected = count * EVT1_RECORD_SIZE
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}")
    if len(payload) > expected:
        raise FormatError(f"{path}: payload/count mismatch, {len(payload) - expected} trailing bytes")
    records = np.frombuffer(payload, dtype=EVT1_RECORD_DTYPE, count=count)
    geometry = SensorGeometry(width, height)
    try:
        return EventStream(geometry, records["t"].copy(), records["x"].copy(),
                           records["y"].copy(), records["p"].copy())
    except ValidationError as exc:
        raise FormatError(f"{path}: invalid event data: {exc}") from None


# --- PGM frame directories --------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5), returning a (H, W) uint8 array."""
    data = Path(path).read_bytes()
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            if data[pos:pos + 1].isspace():
                pos += 1
            elif data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] not in (0x0A, 0x0D):
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        return data[start:pos]

    if token() != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    pos += 1  # the single whitespace after maxval
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: PGM raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, image: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary PGM."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def frame_filename(index: int) -> str:
    return f"{index:06d}.pgm"


def load_frame_stream(directory) -> FrameStream:
    """Load ``timestamps.txt`` plus ``%06d.pgm`` frames; pixels map to v/255."""
    directory = Path(directory)
    ts_path = directory / "timestamps.txt"
    if not ts_path.is_file():
        raise FormatError(f"{directory}: missing timestamps.txt")
    timestamps: list[float] = []
    with open(ts_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                timestamps.append(float(line))
            except ValueError:
                raise ParseError("malformed timestamp", ts_path, lineno) from None
    pgm_count = len(list(directory.glob("*.pgm")))
    if pgm_count != len(timestamps):
        raise FormatError(
            f"{directory}: {pgm_count} PGM files but {len(timestamps)} timestamps"
        )
    frames = []
    geometry = None
    for i, ts in enumerate(timestamps):
        fp = directory / frame_filename(i)
        if not fp.is_file():
            raise FormatError(f"{directory}: missing frame file {fp.name}")
        raw = read_pgm(fp)
        if geometry is None:
            geometry = SensorGeometry(raw.shape[1], raw.shape[0])
        frames.append(Frame(ts, raw.astype(np.float64) / 255.0))
    if geometry is None:
        raise FormatError(f"{directory}: no frames")
    try:
        return FrameStream(geometry, tuple(frames))
    except ValidationError as exc:
        raise FormatError(f"{directory}: {exc}") from None


def write_frame_stream(directory, frames: FrameStream) -> None:
    """Write a frame stream in the directory layout read by load_frame_stream."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "timestamps.txt", "w", encoding="utf-8", newline="\n") as fh:
        for f in frames.frames:
            fh.write(f"{f.timestamp:.9g}\n")
    for i, f in enumerate(frames.frames):
        write_pgm(directory / frame_filename(i), np.round(f.pixels * 255.0).astype(np.uint8))
