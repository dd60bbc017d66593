"""Exact ranking, early fusion, and retrieval evaluation metrics.

Ranking is a brute-force scan: the datasets in scope are small enough
that correctness and determinism matter more than speed. Ties are always
broken by lexicographic image id so results are platform-stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .pooling import IndexEntry, entry_distance
from .store import DatasetManifest, Metric, ValidationError


@dataclass(eq=False)
class RankedList:
    """Ascending-distance ranking of database images for one query."""

    query_id: str
    ranked: list[tuple[str, float]]

    def ordering(self) -> tuple[str, ...]:
        return tuple(image_id for image_id, _ in self.ranked)


@dataclass(frozen=True)
class FusionConfig:
    """Early fusion weight: family a contributes ``alpha`` of the squared
    distance, family b the remainder."""

    alpha: float
    family_a: str = "a"
    family_b: str = "b"

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValidationError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(eq=False)
class EvalReport:
    metric: Metric
    per_query: list[tuple[str, float]]
    aggregate: float
    sweep: list[tuple[float, float]] | None = None


def rank(
    query_vector: np.ndarray,
    entries: Sequence[IndexEntry],
    query_id: str = "",
    exclude_id: str | None = None,
) -> RankedList:
    """Rank entries by ascending distance to the query vector."""
    scored = []
    for entry in entries:
        if exclude_id is not None and entry.image_id == exclude_id:
            continue
        scored.append((entry.image_id, entry_distance(query_vector, entry)))
    scored.sort(key=lambda pair: (pair[1], pair[0]))
    return RankedList(query_id, scored)


def fused_rank(
    query_a: np.ndarray,
    query_b: np.ndarray,
    entries_a: Sequence[IndexEntry],
    entries_b: Sequence[IndexEntry],
    config: FusionConfig,
    query_id: str = "",
    exclude_id: str | None = None,
) -> RankedList:
    """Rank by the fused distance alpha * d_a^2 + (1 - alpha) * d_b^2.

    Both families must cover the same image ids; each side contributes its
    own entry distance (squared), so pooled entries fuse transparently.
    """
    by_id_b = {entry.image_id: entry for entry in entries_b}
    if {e.image_id for e in entries_a} != set(by_id_b):
        raise ValidationError("fusion requires both families to cover the same ids")
    alpha = config.alpha
    scored = []
    for entry_a in entries_a:
        image_id = entry_a.image_id
        if exclude_id is not None and image_id == exclude_id:
            continue
        da = entry_distance(query_a, entry_a)
        db = entry_distance(query_b, by_id_b[image_id])
        scored.append((image_id, alpha * da * da + (1.0 - alpha) * db * db))
    scored.sort(key=lambda pair: (pair[1], pair[0]))
    return RankedList(query_id, scored)


def average_precision(ranked: RankedList, relevant: Iterable[str]) -> float:
    """Mean of precision-at-k over the ranks of the relevant items."""
    relevant = set(relevant)
    if not relevant:
        raise ValidationError("relevant set must be non-empty")
    hits = 0
    precision_sum = 0.0
    for position, (image_id, _) in enumerate(ranked.ranked, start=1):
        if image_id in relevant:
            hits += 1
            precision_sum += hits / position
    return precision_sum / len(relevant)


def four_times_recall_at_4(ranked: RankedList, relevant: Iterable[str]) -> float:
    """Count of the 4 ground-truth relatives retrieved in the top 4."""
    relevant = set(relevant)
    if len(relevant) != 4:
        raise ValidationError(f"expected exactly 4 relevant ids, got {len(relevant)}")
    top = {image_id for image_id, _ in ranked.ranked[:4]}
    return float(len(top & relevant))


def evaluate(
    manifest: DatasetManifest,
    ranked_lists: Mapping[str, RankedList],
) -> EvalReport:
    """Score every manifest query and average.

    Honors each query's ``exclude_self`` flag by dropping the query id
    from its ranked list before scoring, in case ranking did not.
    """
    per_query: list[tuple[str, float]] = []
    for query in manifest.queries:
        ranked = ranked_lists.get(query.query_id)
        if ranked is None:
            raise ValidationError(f"no ranked list for query {query.query_id!r}")
        if query.exclude_self and any(i == query.query_id for i, _ in ranked.ranked):
            ranked = RankedList(
                ranked.query_id,
                [pair for pair in ranked.ranked if pair[0] != query.query_id],
            )
        if manifest.metric is Metric.MAP:
            score = average_precision(ranked, query.relevant_ids)
        else:
            score = four_times_recall_at_4(ranked, query.relevant_ids)
        per_query.append((query.query_id, score))
    aggregate = float(np.mean([s for _, s in per_query])) if per_query else 0.0
    return EvalReport(manifest.metric, per_query, aggregate)
