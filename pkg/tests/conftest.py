"""Shared synthetic-corpus fixtures.

Procedural seeded textures drive the end-to-end suites: every image is a
distinct mixture of fine and mid-frequency filtered noise, so identical
images match at distance zero while distinct ones stay well separated.
"""

import time

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from fvretrieval.densesift import DenseSiftParams, extract_dense_sift
from fvretrieval.fisher import apply_pca, train_gmm, train_pca
from fvretrieval.image import GrayImage
from fvretrieval.pipeline import EncodePipeline, evaluate_index, build_index
from fvretrieval.pooling import Strategy, TransformGrid
from fvretrieval.store import DatasetManifest, Metric, QuerySpec


def make_texture(seed: int, height: int, width: int) -> GrayImage:
    rng = np.random.default_rng(seed)
    fine = gaussian_filter(rng.standard_normal((height, width)), 1.0)
    mid = gaussian_filter(rng.standard_normal((height, width)), 4.0)
    img = fine + 1.5 * mid
    lo, hi = img.min(), img.max()
    return GrayImage.from_array(0.08 + 0.84 * (img - lo) / (hi - lo))


def build_corpus(count: int, side: int, seed0: int) -> dict:
    return {f"tex{i:03d}": make_texture(seed0 + i, side, side) for i in range(count)}


def self_retrieval_manifest(images) -> DatasetManifest:
    ids = tuple(images)
    return DatasetManifest(Metric.MAP, ids, tuple(QuerySpec(i, (i,)) for i in ids))


def train_encode_pipeline(
    images, sift_params, pca_dim, gmm_k, seed=0, budget=30000
) -> EncodePipeline:
    locals_ = [extract_dense_sift(img, sift_params) for img in images.values()]
    stacked = np.concatenate([l.vectors for l in locals_ if len(l)]).astype(np.float64)
    rng = np.random.default_rng(seed)
    if len(stacked) > budget:
        stacked = stacked[rng.choice(len(stacked), size=budget, replace=False)]
    pca = train_pca(stacked, pca_dim)
    gmm = train_gmm(apply_pca(pca, stacked), gmm_k, seed=seed)
    return EncodePipeline(sift=sift_params, pca=pca, gmm=gmm)


class SyntheticSuite:
    """Corpus, trained pipeline, plain encodings, and the build wall time."""

    def __init__(self, count, side, pca_dim, gmm_k, seed0, threads=2):
        start = time.perf_counter()
        self.side = side
        self.threads = threads
        self.images = build_corpus(count, side, seed0)
        self.sift = DenseSiftParams()
        self.pipeline = train_encode_pipeline(
            self.images, self.sift, pca_dim, gmm_k, seed=0
        )
        self.manifest = self_retrieval_manifest(self.images)
        self.plain = self.pipeline.encode_images(self.images, threads=threads)
        self.plain_entries = build_index(
            [self.plain], Strategy.NONE, TransformGrid.rotation(0)
        )
        self.plain_report = evaluate_index(
            self.plain, self.plain_entries, self.manifest, threads=threads
        )
        self.build_seconds = time.perf_counter() - start


@pytest.fixture(scope="session")
def mini_suite() -> SyntheticSuite:
    return SyntheticSuite(count=12, side=96, pca_dim=8, gmm_k=4, seed0=500)


@pytest.fixture(scope="session")
def acceptance_suite() -> SyntheticSuite:
    return SyntheticSuite(count=50, side=160, pca_dim=16, gmm_k=8, seed0=1000)
