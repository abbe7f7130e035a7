"""Reader/writer for the "CFTN" named-tensor container.

Layout (little endian)::

    b"CFTN" | version u32 | count u32 |
    count x ( name_len u32 | name utf-8 | dims 4 x u32 | float32 payload )

Tensors with fewer than four dimensions are stored right-padded with ones;
``load_tensors`` returns them 4-D and callers reshape.
"""
import struct

import numpy as np

from ..errors import ParseError

MAGIC = b"CFTN"
VERSION = 1


def _as_4d_dims(shape):
    if len(shape) > 4:
        raise ValueError(f"CFTN stores at most 4 dims, got shape {shape}")
    return tuple(shape) + (1,) * (4 - len(shape))


def dumps_tensors(tensors):
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)))
        out.append(raw)
        out.append(struct.pack("<4I", *_as_4d_dims(np.shape(arr))))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_tensors(path, tensors):
    with open(path, "wb") as fh:
        fh.write(dumps_tensors(tensors))


def loads_tensors(data):
    if data[:4] != MAGIC:
        raise ParseError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    pos = 4

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise ParseError(f"truncated {what}: need {n} bytes, have {len(data) - pos}", offset=pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise ParseError(f"unsupported CFTN version {version}", offset=4)
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        dims = struct.unpack("<4I", take(16, f"dims of {name!r}"))
        size = int(np.prod(dims))
        payload = take(4 * size, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(data):
        raise ParseError(f"{len(data) - pos} trailing bytes after {count} tensors", offset=pos)
    return tensors


def load_tensors(path):
    with open(path, "rb") as fh:
        return loads_tensors(fh.read())
