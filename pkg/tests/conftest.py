"""Shared fixtures: random streams, tiny datasets, a scriptable test plugin."""

from __future__ import annotations

import json
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

from evbench.events import (
    EventStream,
    Frame,
    FrameStream,
    SensorGeometry,
    write_binary_events,
    write_frame_stream,
)
from evbench.fixtures import random_event_stream

GEOMETRY = SensorGeometry(240, 180)
SMALL_GEOMETRY = SensorGeometry(32, 24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_stream(rng):
    return random_event_stream(rng, GEOMETRY, 5000, duration=2.0)


def make_frames(geometry: SensorGeometry, timestamps, seed: int = 0) -> FrameStream:
    """Deterministic smooth frames for tiny ground-truth streams."""
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi)
    h, w = geometry.shape
    yy, xx = np.mgrid[0:h, 0:w]
    frames = []
    for ts in timestamps:
        img = 0.5 + 0.4 * np.sin(2 * np.pi * (xx / w + 0.3 * ts) + phase) * np.cos(
            2 * np.pi * (yy / h - 0.2 * ts))
        frames.append(Frame(float(ts), np.clip(img, 0.0, 1.0)))
    return FrameStream(geometry, tuple(frames))


def write_tiny_dataset(root: Path, sequences) -> dict:
    """Write a dataset tree of small random sequences.

    ``sequences`` is a list of (name, n_events, n_frames, seed) tuples; all
    use SMALL_GEOMETRY over a 2-second span. Returns a config dict skeleton.
    """
    root = Path(root)
    entries = []
    for name, n_events, n_frames, seed in sequences:
        rng = np.random.default_rng(seed)
        stream = random_event_stream(rng, SMALL_GEOMETRY, n_events, duration=2.0)
        seq_dir = root / name
        seq_dir.mkdir(parents=True, exist_ok=True)
        write_binary_events(stream, seq_dir / "events.evt1")
        entry = {"name": name, "events": f"{name}/events.evt1"}
        if n_frames:
            timestamps = np.linspace(0.0, 2.0, n_frames)
            write_frame_stream(seq_dir / "frames", make_frames(SMALL_GEOMETRY, timestamps, seed))
            entry["frames"] = f"{name}/frames"
        entries.append(entry)
    return {
        "datasets": [{"name": "tiny", "sequences": entries}],
        "grouping": {"mode": "between_frames"},
        "metrics": [{"name": "mse"}],
        "seed": 0,
    }


@pytest.fixture(scope="session")
def fixture_dataset_dir(tmp_path_factory) -> Path:
    """The bundled synthetic 3-sequence dataset, built once per session."""
    from evbench.fixtures import make_fixture_dataset

    root = tmp_path_factory.mktemp("fixtures")
    make_fixture_dataset(root, seed=7)
    return root


# --- scriptable wire-protocol plugin -----------------------------------------------

PLUGIN_SOURCE = textwrap.dedent('''
    #!/usr/bin/env python3
    """Test plugin speaking the harness wire protocol. Modes via argv[1]:

    echo        reconstructor; replies constant 0.5 images
    counter     reconstructor; pixel [0,0] of reply i is i/1000
    mse         full-reference MSE metric
    v2          replies protocol_version=2 in the handshake
    sleep       never answers the handshake
    badshape    reconstructor replying (H+1, W) images
    badkind     negotiates kind=metric regardless
    crash-init  exits before answering INIT
    crash-infer exits on the first TENS
    crash-after-N  exits on the (N+1)-th TENS of the process
    """
    import struct
    import sys

    import numpy as np

    MODE = sys.argv[1] if len(sys.argv) > 1 else "echo"


    def read_exact(n):
        buf = b""
        while len(buf) < n:
            chunk = sys.stdin.buffer.read(n - len(buf))
            if not chunk:
                sys.exit(0)
            buf += chunk
        return buf


    def read_msg():
        head = read_exact(8)
        (length,) = struct.unpack("<I", head[4:8])
        return head[:4], read_exact(length)


    def send(tag, payload=b""):
        sys.stdout.buffer.write(tag + struct.pack("<I", len(payload)) + payload)
        sys.stdout.buffer.flush()


    def decode_tensor(data, offset=0):
        assert data[offset:offset + 4] == b"TEN1"
        dtype, ndim = struct.unpack_from("<BB", data, offset + 4)
        dims = struct.unpack_from("<%dI" % ndim, data, offset + 6)
        start = offset + 6 + 4 * ndim
        count = 1
        for d in dims:
            count *= d
        end = start + 4 * count
        arr = np.frombuffer(data[start:end], dtype="<f4").reshape(dims)
        return arr, end


    def encode_tensor(arr):
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        head = b"TEN1" + struct.pack("<BB", 1, arr.ndim)
        head += struct.pack("<%dI" % arr.ndim, *arr.shape)
        return head + arr.tobytes()


    def main():
        if MODE == "sleep":
            import time
            time.sleep(600)
            return
        tag, payload = read_msg()
        if MODE == "crash-init":
            sys.exit(3)
        fields = dict(line.split("=", 1) for line in payload.decode().splitlines() if line)
        width, height = int(fields["width"]), int(fields["height"])
        kind = "metric" if MODE in ("mse", "badkind") else "reconstructor"
        reply = "name=test-%s\\nkind=%s\\nversion=1\\n" % (MODE, kind)
        if MODE == "v2":
            reply += "protocol_version=2\\n"
        send(b"IRES", reply.encode())
        infer_count = 0
        crash_after = int(MODE.rsplit("-", 1)[1]) if MODE.startswith("crash-after-") else None
        while True:
            tag, payload = read_msg()
            if tag == b"QUIT":
                return
            if tag == b"RSET":
                continue
            if tag == b"TENS":
                if MODE == "crash-infer":
                    sys.exit(4)
                infer_count += 1
                if crash_after is not None and infer_count > crash_after:
                    sys.exit(5)
                h = height + 1 if MODE == "badshape" else height
                img = np.full((h, width), 0.5, dtype=np.float32)
                if MODE == "counter":
                    img[0, 0] = infer_count / 1000.0
                send(b"IMGR", encode_tensor(img))
            elif tag == b"METQ":
                a, end = decode_tensor(payload)
                if end == len(payload):
                    send(b"ERRS", b"full-reference metric needs two tensors")
                    continue
                b_, _ = decode_tensor(payload, end)
                value = float(np.mean((a.astype(np.float64) - b_.astype(np.float64)) ** 2))
                send(b"METR", struct.pack("<d", value))
            else:
                send(b"ERRS", b"unexpected tag " + tag)


    if __name__ == "__main__":
        main()
''').strip()


@pytest.fixture(scope="session")
def plugin_script(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("plugin") / "test_plugin.py"
    path.write_text(PLUGIN_SOURCE + "\n", encoding="utf-8")
    return path


def plugin_cmdline(script: Path, mode: str) -> str:
    return f"{sys.executable} {script} {mode}"


def write_config(path: Path, config: dict) -> Path:
    path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return path
