"""Binary checkpoint format.

All integers little-endian::

    magic        4 bytes   b"GCRP"
    version      u32
    digest       32 bytes  sha256 of the model config text
    count        u32       number of entries
    entries      count x { name_len u16, name utf-8, dtype u8, rank u8,
                           dims rank x u32, raw little-endian values }
    checksum     8 bytes   blake2b-64 of every preceding byte

Entry names are the model's hierarchical parameter names; optimizer state
uses the ``optim/`` prefix and metadata (the config text, training step)
uses ``meta/``.
"""

from __future__ import annotations

import hashlib
import os
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"GCRP"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_TAGS = {np.dtype(v).str: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    """Malformed, corrupted or mismatched checkpoint."""


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def encode(entries: "OrderedDict[str, np.ndarray]", digest: bytes) -> bytes:
    if len(digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    parts = [MAGIC, struct.pack("<I", VERSION), digest, struct.pack("<I", len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tag = _TAGS.get(le.dtype.str)
        if tag is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(le).tobytes())
    body = b"".join(parts)
    return body + _checksum(body)


def decode(blob: bytes, expected_digest: bytes | None = None) -> tuple[bytes, "OrderedDict[str, np.ndarray]"]:
    if len(blob) < 4 + 4 + 32 + 4 + 8 or blob[:4] != MAGIC:
        raise CheckpointError("not a GCRP checkpoint")
    body, tail = blob[:-8], blob[-8:]
    if _checksum(body) != tail:
        raise CheckpointError("checksum mismatch; file is corrupted")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    digest = body[8:40]
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointError("checkpoint was written for a different model config")
    (count,) = struct.unpack_from("<I", body, 40)
    pos = 44
    entries: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode()
        pos += nlen
        tag, rank = struct.unpack_from("<BB", body, pos)
        pos += 2
        dims = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        dt = _DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        entries[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(body):
        raise CheckpointError("trailing bytes after last entry")
    return digest, entries


def save(path, entries: "OrderedDict[str, np.ndarray]", digest: bytes) -> None:
    """Write atomically (temp file + rename) so a crash never leaves a half file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(entries, digest))
    os.replace(tmp, path)


def load(path, expected_digest: bytes | None = None) -> tuple[bytes, "OrderedDict[str, np.ndarray]"]:
    return decode(Path(path).read_bytes(), expected_digest)


def text_entry(text: str) -> np.ndarray:
    return np.frombuffer(text.encode(), dtype=np.uint8).copy()


def entry_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode()
