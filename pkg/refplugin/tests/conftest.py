"""Conformance-test fixtures: the plugin cmdline and tiny datasets.

The plugin itself never imports the harness; these tests do, because the
harness *is* the counterpart the plugin must conform to.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

from evbench.events import SensorGeometry, write_binary_events, write_frame_stream
from evbench.fixtures import random_event_stream

SCRIPT = Path(__file__).resolve().parent.parent / "refplugin.py"
GEOMETRY = SensorGeometry(64, 48)


def cmdline(mode: str, *extra: str) -> str:
    return " ".join([sys.executable, str(SCRIPT), mode, *extra])


@pytest.fixture
def rng():
    return np.random.default_rng(4321)


def write_dataset(root: Path, n_events: int = 3000, n_frames: int = 11, seed: int = 1) -> dict:
    """One small sequence with ground truth; returns an eval config dict."""
    from evbench.events import Frame, FrameStream

    rng = np.random.default_rng(seed)
    stream = random_event_stream(rng, GEOMETRY, n_events, duration=2.0)
    seq_dir = root / "seq"
    seq_dir.mkdir(parents=True, exist_ok=True)
    write_binary_events(stream, seq_dir / "events.evt1")
    h, w = GEOMETRY.shape
    yy, xx = np.mgrid[0:h, 0:w]
    frames = tuple(
        Frame(float(ts), np.clip(0.5 + 0.4 * np.sin(2 * np.pi * (xx / w + 0.2 * ts)), 0, 1))
        for ts in np.linspace(0.0, 2.0, n_frames)
    )
    write_frame_stream(seq_dir / "frames", FrameStream(GEOMETRY, frames))
    return {
        "datasets": [{"name": "tiny", "sequences": [
            {"name": "seq", "events": "seq/events.evt1", "frames": "seq/frames"}]}],
        "grouping": {"mode": "between_frames"},
        "metrics": [{"name": "mse"}, {"name": "ssim"}],
        "seed": 0,
    }
