"""Descriptor containers, the GDSC binary descriptor format, and manifests.

A ``DescriptorSet`` is the universal currency between modules: a named,
ordered collection of fixed-dimension float vectors keyed by image id.
Sets are serialized in the GDSC layout (all integers little-endian):

    magic "GDSC" | u32 version=1 | u8 dtype=0 (float32 LE) | u32 dim |
    u64 count | u32 metadata length | metadata (key=value lines) |
    per record: u32 id length | id (UTF-8) | dim x float32

Writes are deterministic: identical sets produce byte-identical files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GDSC_MAGIC = b"GDSC"
GDSC_VERSION = 1
DTYPE_FLOAT32 = 0


class FormatError(ValueError):
    """A binary file does not conform to the declared layout."""


class ValidationError(ValueError):
    """Parsed or constructed data violates a container invariant."""


@dataclass(eq=False)
class DescriptorSet:
    """Ordered collection of fixed-dimension vectors keyed by image id.

    ``vectors`` is a (count, dim) float32 array; rows align with ``ids``.
    Immutable by convention: share freely across threads, never mutate.
    """

    dim: int
    ids: tuple[str, ...]
    vectors: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"descriptor dimension must be >= 1, got {self.dim}")
        self.ids = tuple(self.ids)
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32).reshape(
            len(self.ids), self.dim
        )
        if len(set(self.ids)) != len(self.ids):
            seen = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise ValidationError(f"duplicate image id {dup!r}")
        if not np.isfinite(self.vectors).all():
            bad = int(np.argwhere(~np.isfinite(self.vectors).all(axis=1))[0, 0])
            raise ValidationError(
                f"non-finite component in record {bad} (id {self.ids[bad]!r})"
            )
        for key, value in self.metadata.items():
            if "=" in key or "\n" in key or "\n" in value:
                raise ValidationError(f"metadata key/value not encodable: {key!r}")

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DescriptorSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.ids == other.ids
            and np.array_equal(self.vectors, other.vectors)
            and self.metadata == other.metadata
        )

    def vector(self, image_id: str) -> np.ndarray:
        return self.vectors[self.ids.index(image_id)]


def _encode_metadata(metadata: dict[str, str]) -> bytes:
    return "".join(f"{k}={v}\n" for k, v in metadata.items()).encode("utf-8")


def _decode_metadata(blob: bytes) -> dict[str, str]:
    metadata: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"metadata line without '=': {line!r}")
        key, _, value = line.partition("=")
        metadata[key] = value
    return metadata


def write_descriptor_file(dset: DescriptorSet, path) -> None:
    """Write ``dset`` to ``path`` in the GDSC layout (bit-deterministic)."""
    if dset.dim < 1:
        raise ValidationError("cannot write a zero-dimension descriptor set")
    meta = _encode_metadata(dset.metadata)
    with open(path, "wb") as fh:
        fh.write(GDSC_MAGIC)
        fh.write(struct.pack("<IB", GDSC_VERSION, DTYPE_FLOAT32))
        fh.write(struct.pack("<IQ", dset.dim, len(dset.ids)))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        for i, image_id in enumerate(dset.ids):
            raw = image_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(dset.vectors[i].astype("<f4", copy=False).tobytes())


class _Cursor:
    """Byte cursor with truncation-aware reads."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"{self.path}: truncated while reading {what}")
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def done(self) -> bool:
        return self.off == len(self.data)


def read_descriptor_file(path) -> DescriptorSet:
    """Parse a GDSC file, enforcing every DescriptorSet invariant."""
    cur = _Cursor(Path(path).read_bytes(), path)
    magic = cur.take(4, "magic")
    if magic != GDSC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {GDSC_MAGIC!r}")
    version = cur.u32("version")
    if version != GDSC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dtype = cur.u8("dtype")
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    dim = cur.u32("dim")
    if dim < 1:
        raise FormatError(f"{path}: invalid dimension {dim}")
    count = cur.u64("record count")
    meta_len = cur.u32("metadata length")
    metadata = _decode_metadata(cur.take(meta_len, "metadata"))

    ids = []
    rows = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        id_len = cur.u32(f"record {i} id length")
        ids.append(cur.take(id_len, f"record {i} id").decode("utf-8"))
        raw = cur.take(4 * dim, f"record {i} values")
        rows[i] = np.frombuffer(raw, dtype="<f4")
    if not cur.done():
        raise FormatError(f"{path}: {len(cur.data) - cur.off} trailing bytes")
    if count and not np.isfinite(rows).all():
        bad = int(np.argwhere(~np.isfinite(rows).all(axis=1))[0, 0])
        raise ValidationError(
            f"{path}: non-finite component in record {bad} (id {ids[bad]!r})"
        )
    return DescriptorSet(dim=dim, ids=tuple(ids), vectors=rows, metadata=metadata)


def descriptor_file_size(dim: int, ids: Sequence[str], metadata: dict[str, str]) -> int:
    """Closed-form byte count of the GDSC encoding."""
    meta = _encode_metadata(metadata)
    body = sum(4 + len(i.encode("utf-8")) + 4 * dim for i in ids)
    return 4 + 4 + 1 + 4 + 8 + 4 + len(meta) + body


@dataclass(eq=False)
class LocalDescriptorSet:
    """Per-image local descriptors with their grid geometry.

    ``vectors`` is (count, 128) float32; positions are pixel coordinates
    within the image the descriptors were extracted from.
    """

    image_id: str
    width: int
    height: int
    xs: np.ndarray
    ys: np.ndarray
    scales: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32).reshape(
            len(self.xs), 128
        )
        n = len(self.xs)
        if not (len(self.ys) == len(self.scales) == n):
            raise ValidationError("positions, scales and vectors must align")
        if n == 0:
            return
        if (self.xs < 0).any() or (self.xs >= self.width).any():
            raise ValidationError("descriptor x outside image bounds")
        if (self.ys < 0).any() or (self.ys >= self.height).any():
            raise ValidationError("descriptor y outside image bounds")
        if (self.scales <= 0).any():
            raise ValidationError("descriptor scale must be positive")
        norms = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if (norms > 1.0 + 1e-6).any():
            raise ValidationError("descriptor L2 norm above 1")

    def __len__(self) -> int:
        return len(self.xs)


class Metric(Enum):
    MAP = "map"
    FOUR_TIMES_RECALL_AT_4 = "ukbench"


@dataclass(frozen=True)
class QuerySpec:
    query_id: str
    relevant_ids: tuple[str, ...]
    exclude_self: bool = False


@dataclass(frozen=True)
class DatasetManifest:
    metric: Metric
    database_ids: tuple[str, ...]
    queries: tuple[QuerySpec, ...]


def parse_manifest(path) -> DatasetManifest:
    """Parse and validate a plain-text dataset manifest.

    Layout: a ``metric map|ukbench`` header, ``db <id>`` lines, and
    ``query <id> [self] <relevant_id>+`` lines. Ids are whitespace-free.
    """
    metric: Metric | None = None
    database_ids: list[str] = []
    db_seen: set[str] = set()
    queries: list[QuerySpec] = []
    query_seen: set[str] = set()

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        kind = tokens[0]
        if kind == "metric":
            if metric is not None:
                raise ValidationError(f"{path}:{lineno}: duplicate metric line")
            if len(tokens) != 2 or tokens[1] not in ("map", "ukbench"):
                raise ValidationError(f"{path}:{lineno}: metric must be map or ukbench")
            metric = Metric(tokens[1])
        elif kind == "db":
            if len(tokens) != 2:
                raise ValidationError(f"{path}:{lineno}: expected 'db <id>'")
            if tokens[1] in db_seen:
                raise ValidationError(f"{path}:{lineno}: duplicate database id {tokens[1]!r}")
            db_seen.add(tokens[1])
            database_ids.append(tokens[1])
        elif kind == "query":
            if len(tokens) < 3:
                raise ValidationError(
                    f"{path}:{lineno}: expected 'query <id> [self] <relevant>+'"
                )
            query_id = tokens[1]
            rest = tokens[2:]
            exclude_self = rest[0] == "self"
            if exclude_self:
                rest = rest[1:]
            if not rest:
                raise ValidationError(f"{path}:{lineno}: query has no relevant ids")
            if query_id in query_seen:
                raise ValidationError(f"{path}:{lineno}: duplicate query line for {query_id!r}")
            query_seen.add(query_id)
            queries.append(QuerySpec(query_id, tuple(rest), exclude_self))
        else:
            raise ValidationError(f"{path}:{lineno}: unknown directive {kind!r}")

    if metric is None:
        raise ValidationError(f"{path}: missing 'metric' header line")
    for q in queries:
        for rid in q.relevant_ids:
            if rid not in db_seen:
                raise ValidationError(
                    f"{path}: query {q.query_id!r} references missing database entry {rid!r}"
                )
        if q.exclude_self and q.query_id in q.relevant_ids:
            raise ValidationError(
                f"{path}: query {q.query_id!r} marked self-excluding but lists itself as relevant"
            )
        if metric is Metric.FOUR_TIMES_RECALL_AT_4 and len(q.relevant_ids) != 4:
            raise ValidationError(
                f"{path}: query {q.query_id!r} has {len(q.relevant_ids)} relevant ids, "
                "ukbench metric requires exactly 4"
            )
    return DatasetManifest(metric, tuple(database_ids), tuple(queries))
