"""Binary feature-cache file format (QVC1).

Layout, all integers little-endian:

    magic   4 bytes  b"QVC1"
    version u32
    count   u32      number of records
    height  u32
    width   u32
    channels u32
    digest  32 bytes preprocessing-config digest (sha256)

    per record:
    label   u8
    id_len  u16
    id      UTF-8 bytes
    values  height*width*channels IEEE-754 binary32, row-major (h, w, c)

Round-trips are bit-exact; any truncation or header mismatch raises
CacheError rather than yielding a partial read.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CacheError

MAGIC = b"QVC1"
VERSION = 1

_HEADER = struct.Struct("<4sIIIII")


@dataclass
class CacheRecord:
    """One preprocessed image: class label id, source id, feature tensor."""

    label: int
    image_id: str
    features: np.ndarray  # float32, shape (height, width, channels)


@dataclass
class CacheHeader:
    version: int
    count: int
    height: int
    width: int
    channels: int
    config_digest: bytes


def _record_payload(record: CacheRecord, shape: tuple[int, int, int]) -> bytes:
    feats = np.asarray(record.features, dtype="<f4")
    if feats.shape != shape:
        raise CacheError(f"record {record.image_id!r} has shape {feats.shape}, cache expects {shape}")
    ident = record.image_id.encode("utf-8")
    if len(ident) > 0xFFFF:
        raise CacheError(f"image id too long: {len(ident)} bytes")
    if not 0 <= record.label <= 0xFF:
        raise CacheError(f"label {record.label} does not fit in u8")
    return struct.pack("<BH", record.label, len(ident)) + ident + feats.tobytes()


def cache_checksum(records: list[CacheRecord], shape: tuple[int, int, int] = (14, 14, 4)) -> str:
    """Content checksum over the serialized record payloads."""
    h = hashlib.sha256()
    for r in records:
        h.update(_record_payload(r, shape))
    return h.hexdigest()


def write_cache(
    path: str | os.PathLike,
    records: list[CacheRecord],
    config_digest: bytes,
    shape: tuple[int, int, int] = (14, 14, 4),
) -> str:
    """Write records atomically (temp file + rename); returns the content checksum."""
    if len(config_digest) != 32:
        raise CacheError(f"config digest must be 32 bytes, got {len(config_digest)}")
    path = os.fspath(path)
    tmp = path + ".tmp"
    h = hashlib.sha256()
    try:
        with open(tmp, "wb") as f:
            f.write(_HEADER.pack(MAGIC, VERSION, len(records), *shape))
            f.write(config_digest)
            for r in records:
                payload = _record_payload(r, shape)
                h.update(payload)
                f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return h.hexdigest()


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CacheError(f"truncated cache file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_cache(path: str | os.PathLike) -> tuple[list[CacheRecord], CacheHeader]:
    """Read a full cache file, validating magic, version, and record sizes."""
    with open(path, "rb") as f:
        raw = _read_exact(f, _HEADER.size, "header")
        magic, version, count, height, width, channels = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise CacheError(f"bad magic {magic!r}; not a QVC1 cache")
        if version != VERSION:
            raise CacheError(f"unsupported cache version {version}")
        digest = _read_exact(f, 32, "config digest")
        header = CacheHeader(version, count, height, width, channels, digest)
        n_values = height * width * channels
        records = []
        for i in range(count):
            label, id_len = struct.unpack("<BH", _read_exact(f, 3, f"record {i} prefix"))
            ident = _read_exact(f, id_len, f"record {i} id").decode("utf-8")
            buf = _read_exact(f, 4 * n_values, f"record {i} values")
            feats = np.frombuffer(buf, dtype="<f4").reshape(height, width, channels).copy()
            records.append(CacheRecord(label, ident, feats))
        if f.read(1):
            raise CacheError("trailing bytes after final record")
    return records, header
