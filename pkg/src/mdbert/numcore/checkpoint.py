"""MDB1 checkpoint files.

Layout, all integers little-endian::

    b"MDB1"                      magic
    u32                          format version
    u32, bytes                   config text length, UTF-8 config text
    repeated until EOF:
      u32, bytes                 name length, UTF-8 name
      u32                        rank
      u64 * rank                 dims
      f32 * prod(dims)           data, row-major
"""

import os
import struct
import tempfile

import numpy as np

from ..errors import DataError
from .params import ParamStore

MAGIC = b"MDB1"
FORMAT_VERSION = 1


def atomic_write(path, payload):
    """Write ``payload`` (bytes or str) to ``path`` via a temp file and rename."""
    if isinstance(payload, str):
        payload = payload.encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(params, config_text=""):
    cfg = config_text.encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(cfg)), cfg]
    for name, t in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", t.data.ndim))
        parts.append(struct.pack(f"<{t.data.ndim}Q", *t.data.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(blob, dtype=np.float32):
    """Parse checkpoint bytes into ``(config_text, ParamStore)``."""
    view = memoryview(blob)
    if bytes(view[:4]) != MAGIC:
        raise DataError("not an MDB1 checkpoint (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise DataError("truncated checkpoint")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (n,) = take("<I")
    config_text = bytes(view[pos : pos + n]).decode("utf-8")
    pos += n
    store = ParamStore(dtype)
    while pos < len(view):
        (n,) = take("<I")
        name = bytes(view[pos : pos + n]).decode("utf-8")
        pos += n
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        count = int(np.prod(dims, dtype=np.int64))
        if pos + 4 * count > len(view):
            raise DataError(f"truncated data for parameter {name!r}")
        data = np.frombuffer(view, dtype="<f4", count=count, offset=pos).reshape(dims)
        pos += 4 * count
        store.add(name, data)
    return config_text, store


def save_checkpoint(path, params, config_text=""):
    atomic_write(path, dumps(params, config_text))


def load_checkpoint(path, dtype=np.float32):
    with open(path, "rb") as fh:
        return loads(fh.read(), dtype=dtype)
