"""Process-boundary protocol for external reconstructors and metrics.

Transport is the child's stdin/stdout in binary. Every message is framed
as tag(4 ASCII bytes) + length(u32 LE) + payload(length bytes). Tensor
payloads use the "TEN1" container: magic ``TEN1``, dtype u8 (1 = f32 LE),
ndim u8, ndim x u32 LE dims, then the row-major payload.

Message flow: INIT -> IRES handshake (UTF-8 key=value line payloads),
RSET to clear model state and open a sequence, TENS -> IMGR inference,
METQ -> METR metric queries (one tensor for no-reference, two for
full-reference, METR carries one f64 LE), ERRS for diagnostics from the
child, QUIT to shut down. Strictly one outstanding request at a time.
"""

from __future__ import annotations

import logging
import os
import select
import shlex
import struct
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from .errors import PluginError, ProtocolError
from .events import SensorGeometry

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
TENSOR_MAGIC = b"TEN1"
DTYPE_F32 = 1
MAX_NDIM = 4
MAX_ELEMENTS = 1 << 28          # 1 GiB of f32, guards dims-product overflow
MAX_PAYLOAD = 1 << 30

STATE_INIT = "Init"
STATE_READY = "Ready"
STATE_IN_SEQUENCE = "InSequence"
STATE_CLOSED = "Closed"

DEFAULT_HANDSHAKE_TIMEOUT = 30.0
DEFAULT_REQUEST_TIMEOUT = 120.0


# --- framing ------------------------------------------------------------------

def encode_message(tag: bytes, payload: bytes = b"") -> bytes:
    if len(tag) != 4:
        raise ProtocolError(f"tag must be 4 bytes, got {tag!r}")
    return tag + struct.pack("<I", len(payload)) + payload


def try_decode_stream(data: bytes) -> tuple[bytes, bytes, bytes] | None:
    """Decode one frame off a stream buffer, or None if more bytes are needed.

    Raises ProtocolError only for structurally bad prefixes (non-ASCII tag,
    oversized declared length), never for a merely incomplete one.
    """
    if len(data) < 8:
        return None
    tag = data[:4]
    if not all(0x20 <= c < 0x7F for c in tag):
        raise ProtocolError(f"tag is not printable ASCII: {tag!r}")
    (length,) = struct.unpack_from("<I", data, 4)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"declared payload length {length} exceeds cap")
    if len(data) < 8 + length:
        return None
    return tag, data[8:8 + length], data[8 + length:]


def decode_message(data: bytes) -> tuple[bytes, bytes, bytes]:
    """Split one framed message off ``data``; returns (tag, payload, rest).

    Raises ProtocolError on any malformed framing; never anything else, so
    arbitrary byte soup degrades to clean errors.
    """
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise ProtocolError("message buffer must be bytes")
    data = bytes(data)
    if len(data) < 8:
        raise ProtocolError(f"truncated frame header ({len(data)} bytes)")
    decoded = try_decode_stream(data)
    if decoded is None:
        (length,) = struct.unpack_from("<I", data, 4)
        raise ProtocolError(f"truncated payload: declared {length}, have {len(data) - 8}")
    return decoded


def encode_kv(pairs: dict[str, object]) -> bytes:
    return "".join(f"{k}={v}\n" for k, v in pairs.items()).encode("utf-8")


def decode_kv(payload: bytes) -> dict[str, str]:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"key=value payload is not UTF-8: {exc}") from None
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ProtocolError(f"malformed key=value line {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


# --- TEN1 tensor codec ----------------------------------------------------------

def encode_tensor(array: np.ndarray) -> bytes:
    """Serialize an f32 array (1..4 dims) into a TEN1 blob."""
    ndim = np.asarray(array).ndim
    if not (1 <= ndim <= MAX_NDIM):
        raise ProtocolError(f"tensor ndim must be in [1, {MAX_NDIM}], got {ndim}")
    array = np.ascontiguousarray(array, dtype=np.float32)
    if array.size > MAX_ELEMENTS:
        raise ProtocolError(f"tensor of {array.size} elements exceeds cap")
    header = TENSOR_MAGIC + struct.pack("<BB", DTYPE_F32, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes()


def decode_tensor_stream(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one TEN1 blob at ``offset``; returns (array, next offset)."""
    if len(data) - offset < 6:
        raise ProtocolError("truncated tensor header")
    if data[offset:offset + 4] != TENSOR_MAGIC:
        raise ProtocolError(f"bad tensor magic {data[offset:offset + 4]!r}")
    dtype, ndim = struct.unpack_from("<BB", data, offset + 4)
    if dtype != DTYPE_F32:
        raise ProtocolError(f"unsupported tensor dtype {dtype}")
    if not (1 <= ndim <= MAX_NDIM):
        raise ProtocolError(f"tensor ndim must be in [1, {MAX_NDIM}], got {ndim}")
    dims_end = offset + 6 + 4 * ndim
    if len(data) < dims_end:
        raise ProtocolError("truncated tensor dims")
    dims = struct.unpack_from(f"<{ndim}I", data, offset + 6)
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise ProtocolError(f"tensor dims {dims} overflow the element cap")
    payload_end = dims_end + 4 * count
    if len(data) < payload_end:
        raise ProtocolError(
            f"tensor payload truncated: need {4 * count} bytes, have {len(data) - dims_end}"
        )
    array = np.frombuffer(data[dims_end:payload_end], dtype="<f4").reshape(dims).copy()
    return array, payload_end


def decode_tensor(data: bytes) -> np.ndarray:
    """Decode a single TEN1 blob occupying the whole buffer."""
    array, end = decode_tensor_stream(data, 0)
    if end != len(data):
        raise ProtocolError(f"{len(data) - end} trailing bytes after tensor")
    return array


# --- session ---------------------------------------------------------------------

@dataclass(frozen=True)
class PluginInfo:
    name: str
    kind: str      # reconstructor | metric
    version: str


class PluginSession:
    """One child process speaking the wire protocol, strictly request/response."""

    def __init__(self, cmdline, geometry: SensorGeometry, bins: int, *,
                 handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
                 request_timeout: float = DEFAULT_REQUEST_TIMEOUT):
        self.geometry = geometry
        self.bins = bins
        self.request_timeout = request_timeout
        self.state = STATE_INIT
        self.info: PluginInfo | None = None
        argv = shlex.split(cmdline) if isinstance(cmdline, str) else list(cmdline)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=None, bufsize=0
            )
        except OSError as exc:
            self.state = STATE_CLOSED
            raise PluginError(f"failed to spawn plugin {argv!r}: {exc}") from None
        self._buffer = b""
        try:
            payload = encode_kv({
                "protocol_version": PROTOCOL_VERSION,
                "width": geometry.width,
                "height": geometry.height,
                "bins": bins,
            })
            self._send(b"INIT", payload)
            tag, reply = self._recv(handshake_timeout)
            if tag != b"IRES":
                raise PluginError(f"expected IRES handshake, got {tag!r}")
            fields = decode_kv(reply)
            if int(fields.get("protocol_version", PROTOCOL_VERSION)) != PROTOCOL_VERSION:
                raise PluginError(
                    f"protocol version mismatch: harness {PROTOCOL_VERSION}, "
                    f"plugin {fields.get('protocol_version')}"
                )
            self.info = PluginInfo(
                name=fields.get("name", "unknown"),
                kind=fields.get("kind", "unknown"),
                version=fields.get("version", "0"),
            )
            self.state = STATE_READY
        except (PluginError, ProtocolError):
            self._kill()
            raise
        except Exception as exc:
            self._kill()
            raise PluginError(f"handshake failed: {exc}") from None

    # -- low-level I/O --

    def _send(self, tag: bytes, payload: bytes = b"") -> None:
        try:
            self._proc.stdin.write(encode_message(tag, payload))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._kill()
            raise PluginError(f"plugin pipe closed while sending {tag!r}: {exc}") from None

    def _read_some(self, deadline: float) -> None:
        fd = self._proc.stdout.fileno()
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            self._kill()
            raise PluginError("plugin reply timed out")
        ready, _, _ = select.select([fd], [], [], remaining)
        if not ready:
            self._kill()
            raise PluginError("plugin reply timed out")
        chunk = os.read(fd, 1 << 20)
        if not chunk:
            code = self._proc.poll()
            self._kill()
            raise PluginError(f"plugin exited (code {code}) before replying")
        self._buffer += chunk

    def _recv(self, timeout: float) -> tuple[bytes, bytes]:
        deadline = time.monotonic() + timeout
        while True:
            try:
                decoded = try_decode_stream(self._buffer)
            except ProtocolError as exc:
                self._kill()
                raise PluginError(f"malformed frame from plugin: {exc}") from None
            if decoded is not None:
                tag, payload, rest = decoded
                self._buffer = rest
                return tag, payload
            self._read_some(deadline)

    def _kill(self) -> None:
        self.state = STATE_CLOSED
        proc = getattr(self, "_proc", None)
        if proc is None:
            return
        for stream in (proc.stdin, proc.stdout):
            try:
                if stream:
                    stream.close()
            except OSError:
                pass
        if proc.poll() is None:
            proc.kill()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass

    def _require_state(self, *allowed: str) -> None:
        if self.state not in allowed:
            raise PluginError(f"operation invalid in state {self.state}, needs {allowed}")

    def _request(self, tag: bytes, payload: bytes) -> tuple[bytes, bytes]:
        self._send(tag, payload)
        reply_tag, reply = self._recv(self.request_timeout)
        if reply_tag == b"ERRS":
            raise PluginError(f"plugin error: {reply.decode('utf-8', 'replace')}")
        return reply_tag, reply

    # -- protocol operations --

    @property
    def alive(self) -> bool:
        return self.state != STATE_CLOSED and self._proc.poll() is None

    def reset(self) -> None:
        """Clear model state and enter InSequence; idempotent."""
        self._require_state(STATE_READY, STATE_IN_SEQUENCE)
        self._send(b"RSET")
        self.state = STATE_IN_SEQUENCE

    def infer(self, voxel: np.ndarray) -> np.ndarray:
        """Send one voxel tensor, receive one (H, W) image clamped to [0, 1]."""
        self._require_state(STATE_IN_SEQUENCE)
        expected = (self.bins, self.geometry.height, self.geometry.width)
        voxel = np.ascontiguousarray(voxel, dtype=np.float32)
        if voxel.shape != expected:
            raise PluginError(f"voxel shape {voxel.shape} does not match negotiated {expected}")
        tag, reply = self._request(b"TENS", encode_tensor(voxel))
        if tag != b"IMGR":
            self._kill()
            raise PluginError(f"expected IMGR reply, got {tag!r}")
        try:
            image = decode_tensor(reply)
        except ProtocolError as exc:
            self._kill()
            raise PluginError(f"bad IMGR tensor: {exc}") from None
        if image.shape != (self.geometry.height, self.geometry.width):
            self._kill()
            raise PluginError(
                f"reply image shape {image.shape} does not match negotiated "
                f"{(self.geometry.height, self.geometry.width)}"
            )
        image = image.astype(np.float64)
        clamped = np.clip(image, 0.0, 1.0)
        moved = float(np.max(np.abs(clamped - image))) if image.size else 0.0
        if moved > 1e-3:
            log.warning("plugin %s image clamped to [0,1], max move %.3g",
                        self.info.name if self.info else "?", moved)
        return clamped

    def metric_query(self, image_a: np.ndarray, image_b: np.ndarray | None = None) -> float:
        """Query a metric plugin with one (no-reference) or two tensors."""
        self._require_state(STATE_READY, STATE_IN_SEQUENCE)
        payload = encode_tensor(np.ascontiguousarray(image_a, dtype=np.float32))
        if image_b is not None:
            payload += encode_tensor(np.ascontiguousarray(image_b, dtype=np.float32))
        tag, reply = self._request(b"METQ", payload)
        if tag != b"METR":
            self._kill()
            raise PluginError(f"expected METR reply, got {tag!r}")
        if len(reply) != 8:
            self._kill()
            raise PluginError(f"METR payload must be 8 bytes (f64 LE), got {len(reply)}")
        return struct.unpack("<d", reply)[0]

    def shutdown(self) -> None:
        """Send QUIT and reap the child; further calls fail with Closed."""
        if self.state == STATE_CLOSED:
            return
        try:
            self._send(b"QUIT")
        except PluginError:
            pass
        self._kill()

    def __enter__(self) -> "PluginSession":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    def __del__(self):
        try:
            self._kill()
        except Exception:
            pass


def init_session(cmdline, geometry: SensorGeometry, bins: int, *,
                 handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
                 request_timeout: float = DEFAULT_REQUEST_TIMEOUT) -> PluginSession:
    """Spawn a plugin and complete the INIT/IRES handshake."""
    return PluginSession(cmdline, geometry, bins,
                         handshake_timeout=handshake_timeout,
                         request_timeout=request_timeout)
