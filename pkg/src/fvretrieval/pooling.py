"""Database-side pooling and augmentation over transform grids.

A transform grid enumerates the rotated or rescaled versions of each
database image. Pooling either collapses the per-version descriptors into
one vector (component-wise max or average) or stores them all for
minimum-distance matching: plain nearest vertex, or nearest point on the
piece-wise linear polyline through the versions (which approximates the
continuous transformation manifold).

Index files use the GIDX layout (little-endian):

    magic "GIDX" | u32 version=1 | u8 kind | u32 p0 | u32 p1 |
    u8 strategy | u8 closed_loop | u32 dim | u64 count |
    per entry: u32 id length | id | u8 mode | u32 vector count |
               vectors (float32 LE, row-major)

For rotation grids (p0, p1) = (pool_limit, step); for scale grids
(extra_scales, 0).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .store import DescriptorSet, FormatError, ValidationError

GIDX_MAGIC = b"GIDX"
GIDX_VERSION = 1

# Query scale ratios used throughout the scale experiments; scale grids
# pool over the first extra_scales + 1 entries.
SCALE_RATIOS = (1.0, 0.75, 0.5, 0.375, 0.25, 0.2, 0.125)


class GridKind(Enum):
    ROTATION = 0
    SCALE = 1


class Strategy(Enum):
    NONE = 0
    MAX = 1
    AVG = 2
    MINDIST = 3
    PWL = 4


SINGLE_STRATEGIES = (Strategy.NONE, Strategy.MAX, Strategy.AVG)


class EntryMode(Enum):
    SINGLE = 0
    MULTI = 1


@dataclass(frozen=True)
class TransformGrid:
    """Enumeration of database-side perturbations to pool over."""

    kind: GridKind
    pool_limit: int = 0
    step: int = 10
    extra_scales: int = 0

    def __post_init__(self):
        if self.kind is GridKind.ROTATION:
            if not (0 <= self.pool_limit <= 180):
                raise ValidationError(f"pool limit must be in [0, 180], got {self.pool_limit}")
            if self.pool_limit > 0 and (self.step < 1 or (2 * self.pool_limit) % self.step != 0):
                raise ValidationError(
                    f"step {self.step} does not divide the 2x{self.pool_limit} angle range"
                )
        else:
            if not (0 <= self.extra_scales <= len(SCALE_RATIOS) - 1):
                raise ValidationError(
                    f"extra_scales must be in [0, {len(SCALE_RATIOS) - 1}], got {self.extra_scales}"
                )

    @classmethod
    def rotation(cls, pool_limit: int, step: int = 10) -> "TransformGrid":
        return cls(GridKind.ROTATION, pool_limit=pool_limit, step=step)

    @classmethod
    def scale(cls, extra_scales: int) -> "TransformGrid":
        return cls(GridKind.SCALE, extra_scales=extra_scales)

    @property
    def angles(self) -> tuple[int, ...]:
        if self.kind is not GridKind.ROTATION:
            raise ValidationError("angles are only defined for rotation grids")
        if self.pool_limit == 0:
            return (0,)
        return tuple(range(-self.pool_limit, self.pool_limit + 1, self.step))

    @property
    def ratios(self) -> tuple[float, ...]:
        if self.kind is not GridKind.SCALE:
            raise ValidationError("ratios are only defined for scale grids")
        return SCALE_RATIOS[: self.extra_scales + 1]

    @property
    def size(self) -> int:
        if self.kind is GridKind.ROTATION:
            return len(self.angles)
        return self.extra_scales + 1

    @property
    def closed_loop(self) -> bool:
        # A full-circle rotation grid wraps: its descriptor manifold is a loop.
        return self.kind is GridKind.ROTATION and self.pool_limit == 180


@dataclass(eq=False)
class IndexEntry:
    """Pooled or augmented representation of one database image."""

    image_id: str
    strategy: Strategy
    vectors: np.ndarray
    closed_loop: bool = False

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if self.strategy in SINGLE_STRATEGIES and self.vectors.shape[0] != 1:
            raise ValidationError(
                f"{self.strategy.name} entries store exactly one vector"
            )

    @property
    def mode(self) -> EntryMode:
        return EntryMode.SINGLE if self.strategy in SINGLE_STRATEGIES else EntryMode.MULTI

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def build_entry(
    vectors: Sequence[np.ndarray],
    strategy: Strategy,
    grid: TransformGrid,
    image_id: str = "",
    renormalize: bool = False,
) -> IndexEntry:
    """Pool one image's per-transform vectors into an index entry.

    ``vectors`` must follow the grid order. MAX/AVG collapse to a single
    vector (optionally re-L2-normalized); MINDIST/PWL store every vector.
    """
    stacked = np.asarray(vectors, dtype=np.float64)
    if stacked.ndim != 2:
        raise ValidationError("expected one vector per transform")
    if stacked.shape[0] != grid.size:
        raise ValidationError(
            f"got {stacked.shape[0]} vectors for a grid of size {grid.size}"
        )
    if strategy is Strategy.NONE:
        if grid.size != 1:
            raise ValidationError("strategy NONE requires a grid of size 1")
        pooled = stacked
    elif strategy is Strategy.MAX:
        pooled = stacked.max(axis=0, keepdims=True)
    elif strategy is Strategy.AVG:
        pooled = stacked.mean(axis=0, keepdims=True)
    else:
        pooled = stacked
    if renormalize and strategy in (Strategy.MAX, Strategy.AVG):
        norm = np.linalg.norm(pooled)
        if norm > 0:
            pooled = pooled / norm
    return IndexEntry(image_id, strategy, pooled, closed_loop=grid.closed_loop)


def _point_segment_distance(point: np.ndarray, start: np.ndarray, end: np.ndarray) -> float:
    direction = end - start
    length_sq = float(direction @ direction)
    if length_sq == 0.0:
        return float(np.linalg.norm(point - start))
    t = float((point - start) @ direction) / length_sq
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(point - (start + t * direction)))


def _polyline_distance(point: np.ndarray, vertices: np.ndarray, closed: bool) -> float:
    starts = vertices[:-1]
    ends = vertices[1:]
    if closed:
        starts = np.vstack([starts, vertices[-1]])
        ends = np.vstack([ends, vertices[0]])
    directions = ends - starts
    lengths_sq = (directions**2).sum(axis=1)
    safe = np.where(lengths_sq == 0.0, 1.0, lengths_sq)
    t = ((point[None, :] - starts) * directions).sum(axis=1) / safe
    t = np.clip(np.where(lengths_sq == 0.0, 0.0, t), 0.0, 1.0)
    closest = starts + t[:, None] * directions
    return float(np.sqrt(((point[None, :] - closest) ** 2).sum(axis=1).min()))


def entry_distance(query: np.ndarray, entry: IndexEntry) -> float:
    """Distance from a query vector to an index entry.

    SINGLE entries use plain L2. MINDIST takes the minimum L2 over stored
    vectors; PWL the exact minimum distance to the polyline through them
    (with a wrap segment for closed loops). Single-vector MULTI entries
    degenerate to plain L2 either way.
    """
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (entry.dim,):
        raise ValidationError(
            f"query dim {query.shape} does not match entry dim {entry.dim}"
        )
    if entry.vectors.shape[0] == 1:
        return float(np.linalg.norm(query - entry.vectors[0]))
    if entry.strategy is Strategy.MINDIST:
        return float(np.sqrt(((entry.vectors - query[None, :]) ** 2).sum(axis=1).min()))
    if entry.strategy is Strategy.PWL:
        return _polyline_distance(query, entry.vectors, entry.closed_loop)
    raise ValidationError(f"multi-vector entry with strategy {entry.strategy.name}")


def pooled_database(
    sets_per_transform: Sequence[DescriptorSet],
    strategy: Strategy,
    grid: TransformGrid,
    renormalize: bool = False,
) -> list[IndexEntry]:
    """Build one entry per image from per-transform descriptor sets.

    All sets must cover the same image ids at the same dimension; entry
    order follows the first set.
    """
    if len(sets_per_transform) != grid.size:
        raise ValidationError(
            f"got {len(sets_per_transform)} descriptor sets for a grid of size {grid.size}"
        )
    first = sets_per_transform[0]
    id_order = first.ids
    reference = set(id_order)
    lookups = []
    for i, dset in enumerate(sets_per_transform):
        if dset.dim != first.dim:
            raise ValidationError(f"descriptor set {i} has dim {dset.dim}, expected {first.dim}")
        if set(dset.ids) != reference:
            raise ValidationError(f"descriptor set {i} covers different image ids")
        lookups.append({img: row for img, row in zip(dset.ids, dset.vectors)})
    entries = []
    for image_id in id_order:
        vectors = [lookup[image_id] for lookup in lookups]
        entries.append(build_entry(vectors, strategy, grid, image_id, renormalize))
    return entries


def pwl_step_subsample(entry: IndexEntry, coarse_step_multiple: int) -> IndexEntry:
    """Keep every n-th stored vector of a MULTI entry, endpoints included."""
    if entry.mode is not EntryMode.MULTI:
        raise ValidationError("subsampling applies to MULTI entries only")
    if coarse_step_multiple < 1:
        raise ValidationError("step multiple must be >= 1")
    n = entry.vectors.shape[0]
    if n > 1 and (n - 1) % coarse_step_multiple != 0:
        raise ValidationError(
            f"step multiple {coarse_step_multiple} does not divide a {n}-vector grid"
        )
    kept = entry.vectors[::coarse_step_multiple].copy()
    return IndexEntry(entry.image_id, entry.strategy, kept, entry.closed_loop)


def write_index_file(
    path,
    entries: Sequence[IndexEntry],
    grid: TransformGrid,
    strategy: Strategy,
) -> None:
    """Write entries to ``path`` in the GIDX layout (bit-deterministic)."""
    if not entries:
        raise ValidationError("refusing to write an empty index")
    dim = entries[0].dim
    closed = entries[0].closed_loop
    for entry in entries:
        if entry.dim != dim:
            raise ValidationError("entries disagree on dimension")
        if entry.strategy is not strategy or entry.closed_loop != closed:
            raise ValidationError("entries disagree with the index-level strategy")
    if grid.kind is GridKind.ROTATION:
        p0, p1 = grid.pool_limit, grid.step
    else:
        p0, p1 = grid.extra_scales, 0
    with open(path, "wb") as fh:
        fh.write(GIDX_MAGIC)
        fh.write(struct.pack("<IBII", GIDX_VERSION, grid.kind.value, p0, p1))
        fh.write(struct.pack("<BBIQ", strategy.value, int(closed), dim, len(entries)))
        for entry in entries:
            raw = entry.image_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<BI", entry.mode.value, entry.vectors.shape[0]))
            fh.write(entry.vectors.astype("<f4").tobytes())


def read_index_file(path) -> tuple[list[IndexEntry], TransformGrid, Strategy]:
    data = Path(path).read_bytes()
    if data[:4] != GIDX_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {GIDX_MAGIC!r}")
    off = 4
    version, kind_code, p0, p1 = struct.unpack_from("<IBII", data, off)
    off += 13
    if version != GIDX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    strategy_code, closed, dim, count = struct.unpack_from("<BBIQ", data, off)
    off += 14
    try:
        kind = GridKind(kind_code)
        strategy = Strategy(strategy_code)
    except ValueError as exc:
        raise FormatError(f"{path}: unknown kind/strategy code") from exc
    if kind is GridKind.ROTATION:
        grid = TransformGrid.rotation(p0, p1 if p1 >= 1 else 10)
    else:
        grid = TransformGrid.scale(p0)
    entries = []
    for i in range(count):
        if off + 4 > len(data):
            raise FormatError(f"{path}: truncated in entry {i}")
        (id_len,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + id_len + 5 > len(data):
            raise FormatError(f"{path}: truncated in entry {i}")
        image_id = data[off : off + id_len].decode("utf-8")
        off += id_len
        mode_code, n_vec = struct.unpack_from("<BI", data, off)
        off += 5
        need = 4 * n_vec * dim
        if off + need > len(data):
            raise FormatError(f"{path}: truncated in entry {i} vectors")
        vectors = np.frombuffer(data, dtype="<f4", count=n_vec * dim, offset=off)
        off += need
        entry = IndexEntry(
            image_id, strategy, vectors.astype(np.float64).reshape(n_vec, dim),
            closed_loop=bool(closed),
        )
        if entry.mode.value != mode_code:
            raise FormatError(f"{path}: entry {i} mode disagrees with strategy")
        entries.append(entry)
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return entries, grid, strategy
