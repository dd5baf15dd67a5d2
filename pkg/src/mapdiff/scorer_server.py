"""Reference scorer subprocess speaking the framed tensor protocol.

Reads length-prefixed request frames from stdin, each a 7-channel pair
tensor (old crop, new crop, mask), and answers every request in order
with a per-pixel matching probability map, or an error frame for
requests it cannot score.  Exits 0 on end of input.
"""

from __future__ import annotations

import struct
import sys

import numpy as np

from . import formats


def mock_probabilities(data: np.ndarray) -> np.ndarray:
    """Per-pixel probability both crops show the same ground: 1 - mean |diff|."""
    diff = np.abs(data[:, :, 3:6] - data[:, :, 0:3]).mean(axis=2)
    return np.clip(1.0 - diff, 0.0, 1.0)[:, :, None].astype(np.float32)


def handle_request(payload: bytes) -> bytes:
    try:
        data, _scale = formats.decode_ctns(payload)
    except Exception as exc:
        return formats.encode_error_frame(f"bad request: {exc}")
    if data.ndim != 3 or data.shape[2] != 7:
        return formats.encode_error_frame(
            f"expected a 7-channel pair tensor, got shape {tuple(data.shape)}")
    if not (data[:, :, 6] > 0).any():
        return formats.encode_error_frame("mask is empty")
    return formats.encode_ctns(mock_probabilities(data), scale_factor=1)


def serve(stdin, stdout) -> int:
    """Answer frames until end of input; malformed requests get error frames."""
    while True:
        header = stdin.read(8)
        if not header:
            return 0
        if len(header) < 8:
            formats.write_frame(stdout, formats.encode_error_frame("truncated frame header"))
            return 0
        (length,) = struct.unpack("<Q", header)
        if length > (1 << 32):
            formats.write_frame(stdout, formats.encode_error_frame(
                f"frame length {length} implausibly large"))
            return 0
        payload = b""
        while len(payload) < length:
            chunk = stdin.read(length - len(payload))
            if not chunk:
                formats.write_frame(stdout, formats.encode_error_frame("truncated frame payload"))
                return 0
            payload += chunk
        formats.write_frame(stdout, handle_request(payload))


def main(argv: list[str] | None = None) -> int:
    return serve(sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    sys.exit(main())
