"""evbench: benchmark harness for event-camera video reconstruction."""

__version__ = "0.1.0"

from .events import (  # noqa: F401
    Event,
    EventStream,
    Frame,
    FrameStream,
    SensorGeometry,
    SequenceDataset,
)
from .grouping import (  # noqa: F401
    BetweenFrames,
    EventGroup,
    FixedDuration,
    FixedNumber,
    GroupTimeline,
    MatchPolicy,
)
from .voxel import VoxelGrid  # noqa: F401
