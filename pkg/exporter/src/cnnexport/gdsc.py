"""Standalone GDSC writer/reader.

The retrieval engine's portable descriptor format (all integers
little-endian):

    magic "GDSC" | u32 version=1 | u8 dtype=0 (float32 LE) | u32 dim |
    u64 count | u32 metadata length | metadata (key=value lines) |
    per record: u32 id length | id (UTF-8) | dim x float32

Implemented here from the format definition; the exporter talks to the
engine only through files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GDSC"
VERSION = 1
DTYPE_FLOAT32 = 0


def write_gdsc(
    path,
    dim: int,
    records: list[tuple[str, np.ndarray]],
    metadata: dict[str, str],
) -> None:
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    meta = "".join(f"{k}={v}\n" for k, v in metadata.items()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IB", VERSION, DTYPE_FLOAT32))
        fh.write(struct.pack("<IQ", dim, len(records)))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for image_id, vector in records:
            vector = np.ascontiguousarray(vector, dtype="<f4")
            if vector.shape != (dim,):
                raise ValueError(f"record {image_id!r} has shape {vector.shape}, want ({dim},)")
            raw = image_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(vector.tobytes())


def read_gdsc(path):
    """Minimal reader used by the exporter's own tests."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    version, dtype = struct.unpack_from("<IB", data, 4)
    if version != VERSION or dtype != DTYPE_FLOAT32:
        raise ValueError(f"{path}: unsupported version/dtype {version}/{dtype}")
    dim, count = struct.unpack_from("<IQ", data, 9)
    (meta_len,) = struct.unpack_from("<I", data, 21)
    off = 25
    metadata = {}
    for line in data[off : off + meta_len].decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    off += meta_len
    records = []
    for _ in range(count):
        (id_len,) = struct.unpack_from("<I", data, off)
        off += 4
        image_id = data[off : off + id_len].decode("utf-8")
        off += id_len
        vector = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
        records.append((image_id, vector))
    return dim, records, metadata
