"""
Binary container shared by dataset and model files.

Layout (all integers little-endian)::

    magic            4 bytes   b"OPDS" for datasets, b"OPGP" for models
    version          u32
    manifest_length  u64
    manifest         UTF-8 JSON  {"arrays": [{name, shape, dtype, byte_offset}], "metadata": {...}}
    payload          packed little-endian float64 arrays, C order

``byte_offset`` is relative to the start of the payload. Writing is fully
deterministic (sorted JSON keys, no timestamps), so identical inputs give
identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import CorruptManifest, ShapeMismatch, UnsupportedVersion

DATASET_MAGIC = b"OPDS"
CONTAINER_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_F64 = np.dtype("<f8")


def encode_container(arrays: dict, metadata: dict, magic: bytes = DATASET_MAGIC,
                     version: int = CONTAINER_VERSION) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype=float), dtype=_F64)
        entries.append({"name": name, "shape": list(a.shape), "dtype": "f64", "byte_offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"arrays": entries, "metadata": metadata}, sort_keys=True,
                          separators=(",", ":"), allow_nan=True).encode("utf-8")
    return _HEADER.pack(magic, version, len(manifest)) + manifest + b"".join(chunks)


def decode_container(buf: bytes, magic: bytes = DATASET_MAGIC, supported_versions=(CONTAINER_VERSION,)):
    """Parse a container; returns ``(arrays, metadata)``.

    Raises
    ------
    CorruptManifest
        Bad magic, unreadable manifest or a payload that runs past the end of the data.
    UnsupportedVersion
        Version field not in ``supported_versions``.
    ShapeMismatch
        Entry shape inconsistent with its payload span.
    """
    if len(buf) < _HEADER.size:
        raise CorruptManifest(f"file is {len(buf)} bytes, shorter than the {_HEADER.size}-byte header")
    got, version, mlen = _HEADER.unpack_from(buf, 0)
    if got != magic:
        raise CorruptManifest(f"bad magic {got!r} at offset 0, expected {magic!r}")
    if version not in supported_versions:
        raise UnsupportedVersion(f"container version {version}; supported: {list(supported_versions)}")
    start = _HEADER.size
    if start + mlen > len(buf):
        raise CorruptManifest(
            f"manifest of {mlen} bytes at offset {start} runs past end of file ({len(buf)} bytes)"
        )
    try:
        manifest = json.loads(buf[start:start + mlen].decode("utf-8"))
        entries = manifest["arrays"]
        metadata = manifest.get("metadata", {})
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptManifest(f"unreadable manifest at offset {start}: {exc}") from exc
    base = start + mlen
    arrays = {}
    for e in entries:
        try:
            name, shape, dtype, off = e["name"], tuple(int(s) for s in e["shape"]), e["dtype"], int(e["byte_offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptManifest(f"malformed array entry {e!r}") from exc
        if dtype != "f64":
            raise CorruptManifest(f"array {name!r} has unsupported dtype {dtype!r}")
        if any(s < 0 for s in shape):
            raise ShapeMismatch(f"array {name!r} has negative extent in shape {shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        lo, hi = base + off, base + off + nbytes
        if off < 0 or hi > len(buf):
            raise CorruptManifest(
                f"array {name!r} spans bytes [{lo}, {hi}) but file ends at {len(buf)} "
                f"(payload truncated by {hi - len(buf)} bytes)"
            )
        arrays[name] = np.frombuffer(buf, dtype=_F64, count=nbytes // 8, offset=lo).reshape(shape).astype(float)
    return arrays, metadata


def write_container(path, arrays, metadata, magic=DATASET_MAGIC, version=CONTAINER_VERSION):
    data = encode_container(arrays, metadata, magic, version)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_container(path, magic=DATASET_MAGIC, supported_versions=(CONTAINER_VERSION,)):
    with open(path, "rb") as fh:
        return decode_container(fh.read(), magic, supported_versions)


def read_csv_array(path):
    """Headerless, comma-separated, row-major numeric array (always 2-D)."""
    return np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
