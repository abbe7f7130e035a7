"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""
import re

import numpy as np

from .errors import ParseError

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data, count):
    pos = 0
    out = []
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ParseError("truncated or malformed header", offset=pos)
        out.append((m.group(1), m.start(1)))
        pos = m.end()
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or data[pos:pos + 1] not in b" \t\r\n":
        raise ParseError("missing whitespace after header", offset=pos)
    return out, pos + 1


def decode_pnm(data):
    """Parse P5/P6 bytes into a uint8 array of shape (H, W) or (H, W, 3)."""
    if len(data) < 2:
        raise ParseError("file too short for a PNM header", offset=0)
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {magic!r}, expected b'P5' or b'P6'", offset=0)
    tokens, start = _header_tokens(data[2:], 3)
    start += 2
    vals = []
    for tok, off in tokens:
        if not tok.isdigit():
            raise ParseError(f"expected an integer in header, got {tok!r}", offset=off + 2)
        vals.append(int(tok))
    width, height, maxval = vals
    if not 0 < maxval < 256:
        raise ParseError(f"only 8-bit rasters are supported, maxval={maxval}", offset=tokens[2][1] + 2)
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    actual = len(data) - start
    if actual < expected:
        raise ParseError(
            f"truncated payload: expected {expected} bytes, got {actual}", offset=start + actual
        )
    raster = np.frombuffer(data, dtype=np.uint8, count=expected, offset=start)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raster.reshape(shape).copy()


def encode_pnm(arr):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError(f"PNM writer expects uint8, got {arr.dtype}")
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr).tobytes()


def read_pnm(path):
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def write_pnm(path, arr):
    with open(path, "wb") as fh:
        fh.write(encode_pnm(arr))


def read_ppm(path):
    img = read_pnm(path)
    if img.ndim != 3:
        raise ParseError(f"{path}: expected a P6 color image", offset=0)
    return img


def read_pgm(path):
    img = read_pnm(path)
    if img.ndim != 2:
        raise ParseError(f"{path}: expected a P5 gray image", offset=0)
    return img


def to_uint8(img):
    """Float image in [0, 1] to uint8 with rounding."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
