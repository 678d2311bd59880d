"""``PTNW`` weight files.

Layout (little-endian)::

    b"PTNW" | u16 version | u32 count |
    count x ( u16 name_len | utf-8 name | u8 rank | rank x u32 dim | f32 values )
"""
import struct
from collections import OrderedDict

import numpy as np

from ..errors import BadMagicError, TruncatedPayloadError, VersionMismatchError

MAGIC = b"PTNW"
VERSION = 1


def dumps_params(params):
    """Serialize a name -> array (or Tensor) mapping; order is preserved."""
    out = [MAGIC, struct.pack("<HI", VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads_params(buf):
    """Inverse of :func:`dumps_params`; returns an OrderedDict of float32 arrays."""
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedPayloadError(f"PTNW payload truncated at byte {pos} (need {n} more)")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise BadMagicError("not a PTNW weight file")
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise VersionMismatchError(f"PTNW version {version}, expected {VERSION}")
    params = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape)) if rank else 1
        params[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(view):
        raise TruncatedPayloadError(f"{len(view) - pos} trailing bytes after PTNW payload")
    return params


def save_params(path, params):
    with open(path, "wb") as fh:
        fh.write(dumps_params(params))


def load_params(path):
    with open(path, "rb") as fh:
        return loads_params(fh.read())
