"""End-to-end encoding pipeline and the rotation/scale sweep drivers."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .densesift import DenseSiftParams, extract_dense_sift
from .fisher import (
    DEFAULT_POSTERIOR_FLOOR,
    GmmModel,
    PcaModel,
    apply_pca,
    encode_fv,
    normalize_fv,
)
from .image import DEFAULT_FILL, GrayImage, downscale, resize_max_side, rotation_query_protocol
from .pooling import IndexEntry, Strategy, TransformGrid, pooled_database
from .retrieval import EvalReport, RankedList, evaluate, rank
from .store import DatasetManifest, DescriptorSet

T = TypeVar("T")
U = TypeVar("U")

CANONICAL_MAX_SIDE = 640


def parallel_map(
    fn: Callable[[T], U], items: Sequence[T], threads: int = 1
) -> list[U]:
    """Order-preserving map; results are independent of the thread count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass(eq=False)
class EncodePipeline:
    """Image to normalized Fisher vector: dense SIFT, PCA, FV encoding.

    Geometry (canonical resizing, perturbation protocols) is applied by
    callers; this object only encodes what it is given.
    """

    sift: DenseSiftParams
    pca: PcaModel
    gmm: GmmModel
    power_alpha: float = 0.5
    posterior_floor: float | None = DEFAULT_POSTERIOR_FLOOR

    @property
    def output_dim(self) -> int:
        return 2 * self.gmm.n_components * self.gmm.dim

    def encode_image(self, img: GrayImage) -> np.ndarray:
        local = extract_dense_sift(img, self.sift)
        if len(local) == 0:
            return np.zeros(self.output_dim)
        reduced = apply_pca(self.pca, local.vectors)
        fv = encode_fv(self.gmm, reduced, posterior_floor=self.posterior_floor)
        return normalize_fv(fv, self.power_alpha).values

    def encode_images(
        self,
        images: Mapping[str, GrayImage],
        threads: int = 1,
        metadata: dict[str, str] | None = None,
    ) -> DescriptorSet:
        ids = tuple(images.keys())
        vectors = parallel_map(lambda i: self.encode_image(images[i]), ids, threads)
        return DescriptorSet(
            self.output_dim, ids, np.asarray(vectors), metadata or {"source": "fv"}
        )


def rotation_database_sets(
    images: Mapping[str, GrayImage],
    grid: TransformGrid,
    pipeline: EncodePipeline,
    fill: float = DEFAULT_FILL,
    threads: int = 1,
) -> list[DescriptorSet]:
    """Encode every database image at every grid angle (circularly cropped,
    as queries are) and return one descriptor set per angle, in grid order."""
    sets = []
    for angle in grid.angles:
        transformed = {
            image_id: rotation_query_protocol(img, angle, fill)
            for image_id, img in images.items()
        }
        sets.append(
            pipeline.encode_images(
                transformed, threads, {"source": "fv", "rotation": str(angle)}
            )
        )
    return sets


def scale_database_sets(
    images: Mapping[str, GrayImage],
    grid: TransformGrid,
    pipeline: EncodePipeline,
    canonical_side: int = CANONICAL_MAX_SIDE,
    threads: int = 1,
) -> list[DescriptorSet]:
    """Encode every database image at every grid ratio. Downscaled images
    are resized back to the canonical side before extraction, mirroring
    the query protocol."""
    sets = []
    for ratio in grid.ratios:
        transformed = {
            image_id: resize_max_side(downscale(img, ratio), canonical_side)
            for image_id, img in images.items()
        }
        sets.append(
            pipeline.encode_images(
                transformed, threads, {"source": "fv", "scale_ratio": f"{ratio:g}"}
            )
        )
    return sets


def build_index(
    sets_per_transform: Sequence[DescriptorSet],
    strategy: Strategy,
    grid: TransformGrid,
    renormalize: bool = False,
) -> list[IndexEntry]:
    return pooled_database(sets_per_transform, strategy, grid, renormalize)


def rank_all(
    queries: DescriptorSet,
    entries: Sequence[IndexEntry],
    manifest: DatasetManifest,
    threads: int = 1,
) -> dict[str, RankedList]:
    """Rank every manifest query found in ``queries`` against the index."""
    lookup = {image_id: row for image_id, row in zip(queries.ids, queries.vectors)}
    specs = []
    for query in manifest.queries:
        if query.query_id not in lookup:
            raise ValueError(f"query {query.query_id!r} missing from descriptor set")
        specs.append(query)

    def run(spec):
        exclude = spec.query_id if spec.exclude_self else None
        return rank(
            lookup[spec.query_id].astype(np.float64),
            entries,
            query_id=spec.query_id,
            exclude_id=exclude,
        )

    ranked = parallel_map(run, specs, threads)
    return {r.query_id: r for r in ranked}


def evaluate_index(
    queries: DescriptorSet,
    entries: Sequence[IndexEntry],
    manifest: DatasetManifest,
    threads: int = 1,
) -> EvalReport:
    return evaluate(manifest, rank_all(queries, entries, manifest, threads))


def sweep_rotation(
    query_images: Mapping[str, GrayImage],
    entries: Sequence[IndexEntry],
    manifest: DatasetManifest,
    pipeline: EncodePipeline,
    angles: Iterable[int],
    fill: float = DEFAULT_FILL,
    threads: int = 1,
) -> EvalReport:
    """Evaluate retrieval as queries are rotated through ``angles``.

    Every query image is perturbed with the rotation protocol (circular
    crop then rotation), re-encoded, and evaluated against the fixed
    database entries. Returns the report of the last angle with a sweep
    table covering all of them.
    """
    rows: list[tuple[float, float]] = []
    last: EvalReport | None = None
    for angle in angles:
        transformed = {
            image_id: rotation_query_protocol(img, angle, fill)
            for image_id, img in query_images.items()
        }
        encoded = pipeline.encode_images(transformed, threads)
        last = evaluate_index(encoded, entries, manifest, threads)
        rows.append((float(angle), last.aggregate))
    if last is None:
        raise ValueError("no angles requested")
    return EvalReport(last.metric, last.per_query, last.aggregate, sweep=rows)


def sweep_scale(
    query_images: Mapping[str, GrayImage],
    entries: Sequence[IndexEntry],
    manifest: DatasetManifest,
    pipeline: EncodePipeline,
    ratios: Iterable[float],
    canonical_side: int = CANONICAL_MAX_SIDE,
    threads: int = 1,
) -> EvalReport:
    """Evaluate retrieval as queries are downscaled through ``ratios`` and
    resized back to the canonical side before re-encoding."""
    rows: list[tuple[float, float]] = []
    last: EvalReport | None = None
    for ratio in ratios:
        transformed = {
            image_id: resize_max_side(downscale(img, ratio), canonical_side)
            for image_id, img in query_images.items()
        }
        encoded = pipeline.encode_images(transformed, threads)
        last = evaluate_index(encoded, entries, manifest, threads)
        rows.append((float(ratio), last.aggregate))
    if last is None:
        raise ValueError("no ratios requested")
    return EvalReport(last.metric, last.per_query, last.aggregate, sweep=rows)
