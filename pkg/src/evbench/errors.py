"""Exception hierarchy shared across the harness."""


class EvbenchError(Exception):
    """Base class for all harness errors."""


class ValidationError(EvbenchError):
    """A domain-type invariant was violated."""


class ParseError(EvbenchError):
    """A text input could not be parsed."""

    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class FormatError(EvbenchError):
    """A binary container is malformed."""


class GroupingError(EvbenchError):
    """Grouping preconditions not met."""


class MetricError(EvbenchError):
    """Metric preconditions not met."""


class ProtocolError(EvbenchError):
    """A wire message violates the plugin protocol framing."""


class PluginError(EvbenchError):
    """A plugin session failed (spawn, handshake, crash, bad reply)."""


class SequenceOrderError(EvbenchError):
    """Groups were fed out of order to a stateful reconstructor."""


class ConfigError(EvbenchError):
    """Run configuration is missing or invalid."""
