"""Binary container for named float64 arrays.

Layout (all integers little-endian, payload little-endian float64):

    magic          8 bytes  b"TSLFICKP"
    format version u32
    array count    u32
    per array:
        name length  u32
        name bytes   utf-8
        rank         u32
        dims         u64 * rank
        payload      float64 * prod(dims), C order

Writes are deterministic: arrays are emitted in the order given, so a
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"TSLFICKP"
FORMAT_VERSION = 1


def save_arrays(path, arrays):
    """Write an ordered ``name -> ndarray`` mapping to `path`."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(arrays)))
        for name, arr in arrays.items():
            data = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d rank
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def load_arrays(path):
    """Read a container written by :func:`save_arrays`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off = 16
    out = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        out[name] = arr.astype(np.float64)
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return out
