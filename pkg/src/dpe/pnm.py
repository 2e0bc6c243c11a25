"""Binary PGM (P5) / PPM (P6) image I/O.

Values are scaled to [0, 1] on read (divided by maxval) and quantized
with round-to-nearest on write. maxval must be 255 or 65535; 16-bit
samples are big-endian per the netpbm convention, which bounds the
write/read round-trip error by 0.5/65535 per pixel.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError
from .plane import ImagePlane

_MAXVALS = (255, 65535)


def _next_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    n = len(blob)
    while pos < n:
        ch = blob[pos : pos + 1]
        if ch == b"#":
            while pos < n and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not blob[pos : pos + 1].isspace():
        pos += 1
    return blob[start:pos], pos


def read_image(path) -> ImagePlane:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 2:
        raise FormatError(f"{path}: file too short ({len(blob)} bytes)")
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r} (need P5/P6)")
    channels = 1 if magic == b"P5" else 3
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _next_token(blob, pos)
        try:
            fields.append(int(token))
        except ValueError as exc:
            raise FormatError(
                f"{path}: non-numeric header token {token!r} at byte {pos}"
            ) from exc
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval not in _MAXVALS:
        raise FormatError(f"{path}: maxval must be 255 or 65535, got {maxval}")
    pos += 1  # exactly one whitespace byte separates header and payload
    bytes_per = 1 if maxval == 255 else 2
    expected = width * height * channels * bytes_per
    payload = blob[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: truncated payload at byte {pos + len(payload)} "
            f"(expected {expected} bytes, found {len(payload)})"
        )
    dtype = np.uint8 if maxval == 255 else ">u2"
    raw = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    # Interleaved samples -> channel-planar (C,H,W).
    data = raw.reshape(height, width, channels).transpose(2, 0, 1) / maxval
    return ImagePlane(data.copy())


def write_image(plane: ImagePlane, path, maxval: int = 65535) -> None:
    if maxval not in _MAXVALS:
        raise FormatError(f"maxval must be 255 or 65535, got {maxval}")
    magic = b"P5" if plane.channels == 1 else b"P6"
    quant = np.clip(np.rint(plane.data * maxval), 0, maxval)
    interleaved = quant.transpose(1, 2, 0)
    dtype = np.uint8 if maxval == 255 else ">u2"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{plane.width} {plane.height}\n{maxval}\n".encode("ascii"))
        fh.write(interleaved.astype(dtype).tobytes())
