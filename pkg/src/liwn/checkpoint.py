"""Binary tensor container used for checkpoints and extracted features.

Layout (all integers little-endian)::

    b"LIWN"  u32 version  u32 tensor_count
    per tensor: u16 name_len, name (UTF-8), u8 rank, u32 extent * rank,
                f32 payload (row-major)
    u32 CRC32 of every preceding byte
"""
import os
import struct
import zlib

import numpy as np

MAGIC = b"LIWN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors):
    """Serialise an ordered mapping name -> array (stored as float32)."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        # tobytes() is row-major regardless of memory layout; asarray keeps rank 0
        arr = np.asarray(arr, dtype="<f4")
        if arr.ndim > 255:
            raise CheckpointError("rank above 255")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(blob):
    """Inverse of :func:`dumps`; returns a dict of float32 arrays in file order."""
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a LIWN tensor file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError("CRC mismatch: file is corrupt")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version}")
    pos, out = 12, {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(body):
                raise CheckpointError("truncated payload")
            if name in out:
                raise CheckpointError(f"duplicate tensor name {name!r}")
            out[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise CheckpointError("truncated header") from exc
    if pos != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save(path, tensors):
    """Write atomically: a partial file never replaces ``path``."""
    blob = dumps(tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
