"""Binary checkpoint files.

Layout (all integers little endian)::

    magic   b"GNCK"
    version u16
    kind    u16 length + utf-8
    meta    u32 length + utf-8 JSON
    count   u32
    count x { name u16 length + utf-8, rank u8, dims u32 * rank, payload f64 * prod(dims) }
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

MAGIC = b"GNCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _put_str(buf, s, fmt):
    raw = s.encode("utf-8")
    buf.write(struct.pack(fmt, len(raw)))
    buf.write(raw)


def _get(buf, fmt):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def _get_str(buf, fmt):
    (n,) = _get(buf, fmt)
    raw = buf.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint")
    return raw.decode("utf-8")


def dumps(kind, state, meta=None):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    _put_str(buf, kind, "<H")
    _put_str(buf, json.dumps(meta or {}, sort_keys=True), "<I")
    buf.write(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.asarray(state[name], dtype="<f8", order="C")   # ascontiguousarray would promote 0-d to 1-d
        _put_str(buf, name, "<H")
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob):
    buf = io.BytesIO(blob)
    if buf.read(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = _get(buf, "<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kind = _get_str(buf, "<H")
    meta = json.loads(_get_str(buf, "<I"))
    (count,) = _get(buf, "<I")
    state = {}
    for _ in range(count):
        name = _get_str(buf, "<H")
        (rank,) = _get(buf, "<B")
        dims = _get(buf, f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        raw = buf.read(8 * n)
        if len(raw) != 8 * n:
            raise CheckpointError("truncated checkpoint")
        state[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    return kind, meta, state


def save(path, kind, state, meta=None):
    with open(path, "wb") as fh:
        fh.write(dumps(kind, state, meta))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
