"""Ingestion, validation, and round-trip behaviour of event/frame files."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evbench.errors import FormatError, ParseError, ValidationError
from evbench.events import (
    EventStream,
    Frame,
    FrameStream,
    SensorGeometry,
    load_frame_stream,
    parse_binary_events,
    parse_text_events,
    read_pgm,
    write_binary_events,
    write_frame_stream,
    write_pgm,
    write_text_events,
)
from evbench.fixtures import random_event_stream

from conftest import GEOMETRY


def make_stream(events, geometry=GEOMETRY, span=None):
    t, x, y, p = (np.array(c) for c in zip(*events)) if events else (np.zeros(0),) * 4
    return EventStream(geometry, t, x, y, p, span=span)


class TestDomainTypes:
    def test_geometry_requires_positive_dims(self):
        with pytest.raises(ValidationError):
            SensorGeometry(0, 10)
        with pytest.raises(ValidationError):
            SensorGeometry(10, 0)

    def test_stream_rejects_unsorted(self):
        with pytest.raises(ValidationError):
            make_stream([(1.0, 0, 0, 1), (0.5, 0, 0, 1)])

    def test_stream_rejects_out_of_bounds(self):
        with pytest.raises(ValidationError):
            make_stream([(0.0, 240, 0, 1)])
        with pytest.raises(ValidationError):
            make_stream([(0.0, 0, 180, 1)])

    def test_stream_rejects_bad_polarity(self):
        with pytest.raises(ValidationError):
            make_stream([(0.0, 0, 0, 2)])
        with pytest.raises(ValidationError):
            make_stream([(0.0, 0, 0, 0)])

    def test_stream_rejects_negative_time(self):
        with pytest.raises(ValidationError):
            make_stream([(-0.1, 0, 0, 1)])

    def test_span_defaults_to_event_extremes(self):
        s = make_stream([(0.25, 1, 1, 1), (0.75, 2, 2, -1)])
        assert s.span == (0.25, 0.75)

    def test_explicit_span_must_cover_events(self):
        make_stream([(0.25, 1, 1, 1)], span=(0.0, 1.0))
        with pytest.raises(ValidationError):
            make_stream([(0.25, 1, 1, 1)], span=(0.5, 1.0))

    def test_empty_stream_can_carry_span(self):
        s = EventStream.empty(GEOMETRY, span=(0.0, 0.35))
        assert len(s) == 0 and s.duration == 0.35

    def test_frame_pixel_range_enforced(self):
        with pytest.raises(ValidationError):
            Frame(0.0, np.full((4, 4), 1.5))

    def test_frame_stream_strictly_increasing(self):
        f = lambda ts: Frame(ts, np.zeros((180, 240)))
        with pytest.raises(ValidationError):
            FrameStream(GEOMETRY, (f(0.0), f(0.0)))


class TestTextFormat:
    def test_basic_lines_and_polarity_mapping(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.0 1 2 1\n0.5 3 2 0\n")
        stream = parse_text_events(path, GEOMETRY)
        assert len(stream) == 2
        assert list(stream.p) == [1, -1]
        assert list(stream.x) == [1, 3]

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("# header\n\n0.0 1 2 1\n")
        assert len(parse_text_events(path, GEOMETRY)) == 1

    def test_out_of_bounds_reports_line(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.0 1 2 1\n0.1 300 2 1\n")
        with pytest.raises(ParseError, match=r":2.*out of bounds"):
            parse_text_events(path, GEOMETRY)

    def test_malformed_line_reports_line(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.0 1 2\n")
        with pytest.raises(ParseError, match=":1"):
            parse_text_events(path, GEOMETRY)

    def test_unsorted_rejected_unless_sort_flag(self, tmp_path):
        path = tmp_path / "events.txt"
        path.write_text("0.5 1 1 1\n0.0 2 2 0\n")
        with pytest.raises(ParseError, match="not non-decreasing"):
            parse_text_events(path, GEOMETRY)
        stream = parse_text_events(path, GEOMETRY, sort=True)
        assert list(stream.t) == [0.0, 0.5]

    def test_10k_fixture_roundtrips_through_binary(self, tmp_path, rng):
        stream = random_event_stream(rng, GEOMETRY, 10_000)
        text_path = tmp_path / "events.txt"
        write_text_events(stream, text_path)
        parsed = parse_text_events(text_path, GEOMETRY)
        bin_path = tmp_path / "events.evt1"
        write_binary_events(parsed, bin_path)
        again = parse_binary_events(bin_path)
        assert again == parsed
        assert np.array_equal(again.x, stream.x)
        assert np.array_equal(again.y, stream.y)
        assert np.array_equal(again.p, stream.p)
        # t survives at 9 significant digits
        np.testing.assert_allclose(again.t, stream.t, rtol=1e-8, atol=0)


class TestBinaryFormat:
    def test_empty_stream_is_16_byte_header(self, tmp_path):
        path = tmp_path / "empty.evt1"
        write_binary_events(EventStream.empty(GEOMETRY), path)
        data = path.read_bytes()
        assert len(data) == 16
        assert data[:4] == b"EVT1"

    def test_single_event_layout(self, tmp_path):
        path = tmp_path / "one.evt1"
        stream = make_stream([(1.0, 5, 6, 1)])
        write_binary_events(stream, path)
        data = path.read_bytes()
        assert len(data) == 16 + 13
        import struct

        magic, width, height, count = struct.unpack("<4sHHQ", data[:16])
        assert (magic, width, height, count) == (b"EVT1", 240, 180, 1)
        t, x, y, p = struct.unpack("<dHHb", data[16:])
        assert (t, x, y, p) == (1.0, 5, 6, 1)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.evt1"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(FormatError, match="magic"):
            parse_binary_events(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.evt1"
        stream = make_stream([(1.0, 5, 6, 1)])
        write_binary_events(stream, path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="truncated"):
            parse_binary_events(path)

    def test_count_mismatch_trailing_bytes(self, tmp_path):
        path = tmp_path / "extra.evt1"
        write_binary_events(EventStream.empty(GEOMETRY), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="mismatch"):
            parse_binary_events(path)

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(min_value=0, max_value=300),
        seed=st.integers(min_value=0, max_value=2**31),
        w=st.integers(min_value=1, max_value=500),
        h=st.integers(min_value=1, max_value=400),
    )
    def test_roundtrip_property(self, tmp_path_factory, n, seed, w, h):
        geometry = SensorGeometry(w, h)
        stream = random_event_stream(np.random.default_rng(seed), geometry, n)
        path = tmp_path_factory.mktemp("rt") / "s.evt1"
        write_binary_events(stream, path)
        assert parse_binary_events(path) == stream


class TestFrameDirectories:
    def test_load_three_frames(self, tmp_path):
        geometry = SensorGeometry(8, 6)
        frames = FrameStream(geometry, tuple(
            Frame(ts, np.full((6, 8), v)) for ts, v in [(0.0, 0.0), (0.04, 0.5), (0.08, 1.0)]
        ))
        write_frame_stream(tmp_path / "frames", frames)
        loaded = load_frame_stream(tmp_path / "frames")
        assert len(loaded) == 3
        assert loaded.geometry == geometry
        assert list(loaded.timestamps) == [0.0, 0.04, 0.08]

    def test_pixel_mapping_is_v_over_255(self, tmp_path):
        write_pgm(tmp_path / "000000.pgm", np.array([[0, 128, 255]], dtype=np.uint8))
        (tmp_path / "timestamps.txt").write_text("0.0\n")
        loaded = load_frame_stream(tmp_path)
        np.testing.assert_allclose(loaded.frames[0].pixels, [[0.0, 128 / 255, 1.0]])

    def test_count_mismatch(self, tmp_path):
        write_pgm(tmp_path / "000000.pgm", np.zeros((2, 2), dtype=np.uint8))
        write_pgm(tmp_path / "000001.pgm", np.zeros((2, 2), dtype=np.uint8))
        (tmp_path / "timestamps.txt").write_text("0.0\n0.1\n0.2\n")
        with pytest.raises(FormatError, match="2 PGM files but 3 timestamps"):
            load_frame_stream(tmp_path)

    def test_non_increasing_timestamps(self, tmp_path):
        write_pgm(tmp_path / "000000.pgm", np.zeros((2, 2), dtype=np.uint8))
        write_pgm(tmp_path / "000001.pgm", np.zeros((2, 2), dtype=np.uint8))
        (tmp_path / "timestamps.txt").write_text("0.1\n0.1\n")
        with pytest.raises(FormatError, match="strictly increasing"):
            load_frame_stream(tmp_path)

    def test_non_pgm_payload(self, tmp_path):
        (tmp_path / "000000.pgm").write_bytes(b"JUNKJUNK")
        (tmp_path / "timestamps.txt").write_text("0.0\n")
        with pytest.raises(FormatError, match="P5"):
            load_frame_stream(tmp_path)

    def test_pgm_roundtrip_with_comment(self, tmp_path):
        img = np.arange(12, dtype=np.uint8).reshape(3, 4)
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n# a comment\n4 3\n255\n" + img.tobytes())
        assert np.array_equal(read_pgm(path), img)
