#!/usr/bin/env python3
"""Reference plugin for the evbench reconstructor/metric wire protocol.

A single executable with no model dependencies. It implements the protocol
end to end on stdin/stdout and serves one of three backends, selected by
the first argument:

    echo      reconstructor replying a constant 0.5 image for any voxel
    mse       full-reference metric replying the mean squared difference
    adapter   reconstructor stub that mounts a user model via --hook

The wire format (mirrored from the harness side, implemented independently
here so the two ends cross-check each other):

* frame:  tag(4 ASCII bytes) + length(u32 LE) + payload
* tags:   INIT, IRES, RSET, TENS, IMGR, METQ, METR, ERRS, QUIT
* tensor: "TEN1" + dtype u8 (1 = f32 LE) + ndim u8 + ndim*u32 LE dims +
          row-major f32 payload
* INIT/IRES payloads are UTF-8 key=value lines

Malformed but well-framed requests are answered with ERRS and the loop
continues; an unrecoverable stream (broken framing, EOF) ends the process
cleanly.

The adapter hook is ``--hook module:attr`` where ``attr`` is a callable
``factory(width, height, bins) -> model``; the model is called with a
(bins, H, W) float32 array and must return an (H, W) array in [0, 1]. If
the model object has a ``reset()`` method it is invoked on RSET.
"""

from __future__ import annotations

import argparse
import importlib
import struct
import sys

import numpy as np

PROTOCOL_VERSION = 1
TENSOR_MAGIC = b"TEN1"
DTYPE_F32 = 1
MAX_NDIM = 4
MAX_ELEMENTS = 1 << 28
MAX_PAYLOAD = 1 << 30
VERSION = "1.0"


class WireError(Exception):
    """Malformed but recoverable request; answered with ERRS."""


class StreamBroken(Exception):
    """Framing can no longer be trusted; the serve loop must stop."""


# --- framing ----------------------------------------------------------------

def read_exact(stdin, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stdin.read(remaining)
        if not chunk:
            raise EOFError
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_message(stdin) -> tuple[bytes, bytes]:
    header = read_exact(stdin, 8)
    tag = header[:4]
    if not all(0x20 <= c < 0x7F for c in tag):
        raise StreamBroken(f"tag is not printable ASCII: {tag!r}")
    (length,) = struct.unpack("<I", header[4:])
    if length > MAX_PAYLOAD:
        raise StreamBroken(f"declared payload length {length} exceeds cap")
    return tag, read_exact(stdin, length)


def send_message(stdout, tag: bytes, payload: bytes = b"") -> None:
    stdout.write(tag + struct.pack("<I", len(payload)) + payload)
    stdout.flush()


def parse_kv(payload: bytes) -> dict[str, str]:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise WireError(f"payload is not UTF-8: {exc}") from None
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise WireError(f"malformed key=value line {line!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    return fields


# --- tensors ------------------------------------------------------------------

def decode_tensor(payload: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(payload) - offset < 6:
        raise WireError("truncated tensor header")
    if payload[offset:offset + 4] != TENSOR_MAGIC:
        raise WireError(f"bad tensor magic {payload[offset:offset + 4]!r}")
    dtype, ndim = struct.unpack_from("<BB", payload, offset + 4)
    if dtype != DTYPE_F32:
        raise WireError(f"unsupported tensor dtype {dtype}")
    if not (1 <= ndim <= MAX_NDIM):
        raise WireError(f"tensor ndim must be in [1, {MAX_NDIM}], got {ndim}")
    dims_end = offset + 6 + 4 * ndim
    if len(payload) < dims_end:
        raise WireError("truncated tensor dims")
    dims = struct.unpack_from(f"<{ndim}I", payload, offset + 6)
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise WireError(f"tensor dims {dims} overflow the element cap")
    end = dims_end + 4 * count
    if len(payload) < end:
        raise WireError("truncated tensor payload")
    array = np.frombuffer(payload[dims_end:end], dtype="<f4").reshape(dims)
    return array, end


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype=np.float32)
    header = TENSOR_MAGIC + struct.pack("<BB", DTYPE_F32, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + array.tobytes()


# --- backends --------------------------------------------------------------------

class EchoReconstructor:
    """Replies a constant mid-gray image regardless of the voxel content."""

    name = "reference-echo"
    kind = "reconstructor"

    def __init__(self, width: int, height: int, bins: int):
        self.shape = (bins, height, width)
        self.image = np.full((height, width), 0.5, dtype=np.float32)

    def reset(self) -> None:
        pass

    def infer(self, voxel: np.ndarray) -> np.ndarray:
        if voxel.shape != self.shape:
            raise WireError(f"voxel shape {voxel.shape} does not match negotiated {self.shape}")
        return self.image


class MseMetric:
    """Full-reference mean squared error on [0, 1] float images."""

    name = "reference-mse"
    kind = "metric"

    def __init__(self, width: int, height: int, bins: int):
        pass

    def query(self, tensors: list[np.ndarray]) -> float:
        if len(tensors) != 2:
            raise WireError("full-reference metric needs two tensors")
        a, b = tensors
        if a.shape != b.shape:
            raise WireError(f"tensor shapes differ: {a.shape} vs {b.shape}")
        diff = a.astype(np.float64) - b.astype(np.float64)
        return float(np.mean(diff * diff))


class AdapterReconstructor:
    """Mounts a user model by import path; unconfigured inference is refused."""

    name = "reference-adapter"
    kind = "reconstructor"

    def __init__(self, width: int, height: int, bins: int, hook: str | None):
        self.shape = (bins, height, width)
        self.model = None
        if hook:
            module_name, _, attr = hook.partition(":")
            if not attr:
                raise WireError(f"hook must look like module:attr, got {hook!r}")
            factory = getattr(importlib.import_module(module_name), attr)
            self.model = factory(width, height, bins)

    def reset(self) -> None:
        if self.model is not None and hasattr(self.model, "reset"):
            self.model.reset()

    def infer(self, voxel: np.ndarray) -> np.ndarray:
        if self.model is None:
            raise WireError("not configured: pass --hook module:attr to mount a model")
        if voxel.shape != self.shape:
            raise WireError(f"voxel shape {voxel.shape} does not match negotiated {self.shape}")
        image = np.asarray(self.model(voxel), dtype=np.float32)
        expected = (self.shape[1], self.shape[2])
        if image.shape != expected:
            raise WireError(f"model returned shape {image.shape}, expected {expected}")
        return np.clip(image, 0.0, 1.0)


# --- serve loop --------------------------------------------------------------------

def handshake(stdin, stdout, make_backend):
    tag, payload = read_message(stdin)
    if tag != b"INIT":
        send_message(stdout, b"ERRS", f"expected INIT, got {tag.decode('ascii')}".encode())
        raise StreamBroken("handshake failed")
    fields = parse_kv(payload)
    try:
        version = int(fields.get("protocol_version", -1))
        width = int(fields["width"])
        height = int(fields["height"])
        bins = int(fields["bins"])
    except (KeyError, ValueError) as exc:
        send_message(stdout, b"ERRS", f"bad INIT payload: {exc}".encode())
        raise StreamBroken("handshake failed") from None
    if version != PROTOCOL_VERSION:
        send_message(stdout, b"ERRS",
                     f"unsupported protocol_version {version}, need {PROTOCOL_VERSION}".encode())
        raise StreamBroken("protocol version mismatch")
    backend = make_backend(width, height, bins)
    reply = (f"name={backend.name}\nkind={backend.kind}\nversion={VERSION}\n"
             f"protocol_version={PROTOCOL_VERSION}\n")
    send_message(stdout, b"IRES", reply.encode())
    return backend


def serve(stdin, stdout, make_backend) -> int:
    """Handshake, then answer requests until QUIT or EOF."""
    try:
        backend = handshake(stdin, stdout, make_backend)
    except (EOFError, StreamBroken):
        return 1
    in_sequence = False
    while True:
        try:
            tag, payload = read_message(stdin)
        except EOFError:
            return 0
        except StreamBroken as exc:
            try:
                send_message(stdout, b"ERRS", f"unrecoverable framing: {exc}".encode())
            except OSError:
                pass
            return 1
        try:
            if tag == b"QUIT":
                return 0
            if tag == b"RSET":
                if backend.kind != "reconstructor":
                    raise WireError("RSET is only valid for reconstructor plugins")
                backend.reset()
                in_sequence = True
            elif tag == b"TENS":
                if backend.kind != "reconstructor":
                    raise WireError("TENS sent to a metric plugin")
                if not in_sequence:
                    raise WireError("TENS before RSET")
                voxel, end = decode_tensor(payload)
                if end != len(payload):
                    raise WireError(f"{len(payload) - end} trailing bytes after voxel")
                send_message(stdout, b"IMGR", encode_tensor(backend.infer(voxel)))
            elif tag == b"METQ":
                if backend.kind != "metric":
                    raise WireError("METQ sent to a reconstructor plugin")
                tensors = []
                offset = 0
                while offset < len(payload):
                    tensor, offset = decode_tensor(payload, offset)
                    tensors.append(tensor)
                if not tensors:
                    raise WireError("METQ carried no tensors")
                send_message(stdout, b"METR", struct.pack("<d", backend.query(tensors)))
            else:
                raise WireError(f"unexpected tag {tag.decode('ascii')}")
        except WireError as exc:
            send_message(stdout, b"ERRS", str(exc).encode())
        except BrokenPipeError:
            return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="evbench reference plugin")
    parser.add_argument("mode", choices=["echo", "mse", "adapter"])
    parser.add_argument("--hook", help="adapter model factory as module:attr")
    args = parser.parse_args(argv)

    if args.mode == "echo":
        make = EchoReconstructor
    elif args.mode == "mse":
        make = MseMetric
    else:
        def make(width, height, bins):
            return AdapterReconstructor(width, height, bins, args.hook)

    return serve(sys.stdin.buffer, sys.stdout.buffer, make)


if __name__ == "__main__":
    sys.exit(main())
