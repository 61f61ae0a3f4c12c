"""Binary netpbm rasters: P6 (8-bit RGB images) and P5 (8-bit label maps).

Round-trips are bit-exact; parse errors report the byte offset at which the
file stopped making sense.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.offset = offset


def _parse_header(data: bytes, path) -> tuple[bytes, int, int, int, int]:
    """Returns (magic, width, height, maxval, payload_offset)."""
    if len(data) < 2 or data[:1] != b"P":
        raise NetpbmError(path, 0, "missing P5/P6 magic")
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(path, 0, f"unsupported magic {magic!r}")

    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and '#' comments between header tokens
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                nl = data.find(b"\n", pos)
                if nl < 0:
                    raise NetpbmError(path, pos, "unterminated comment")
                pos = nl + 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise NetpbmError(path, pos, "expected a decimal header field")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise NetpbmError(path, pos, "expected single whitespace before payload")
    pos += 1

    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise NetpbmError(path, 2, f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise NetpbmError(path, 2, f"only maxval 255 supported, got {maxval}")
    return magic, width, height, maxval, pos


def _read(path, magic_wanted: bytes, channels: int) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    magic, width, height, _, pos = _parse_header(data, path)
    if magic != magic_wanted:
        raise NetpbmError(path, 0, f"expected {magic_wanted.decode()}, got {magic.decode()}")
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise NetpbmError(path, pos + len(payload), f"payload truncated ({len(payload)}/{expected} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def read_pgm(path) -> np.ndarray:
    """8-bit grayscale P5 as a (H, W) uint8 array."""
    return _read(path, b"P5", 1)


def read_ppm(path) -> np.ndarray:
    """8-bit RGB P6 as a (H, W, 3) uint8 array."""
    return _read(path, b"P6", 3)


def write_pgm(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.ndim != 2:
        raise ValueError(f"P5 payload must be (H, W), got {labels.shape}")
    h, w = labels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + labels.tobytes())


def write_ppm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"P6 payload must be (H, W, 3), got {pixels.shape}")
    h, w = pixels.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def image_to_float(pixels: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [0, 1]."""
    return (pixels.astype(np.float32) / 255.0).transpose(2, 0, 1)


def float_to_image(image: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0, 1] -> (H, W, 3) uint8, quantized as round(v*255)."""
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
