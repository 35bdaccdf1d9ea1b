"""
Metrics
Mean top-K score, pairwise diversity and diversity-constrained top-K.

Identity between two objects is a number in [0, 1]:
- sequences: fraction of positions holding the same token (fixed length)
- grids: 1 - Euclidean distance / grid diagonal
Diversity is 1 - mean pairwise identity, so higher means more diverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist

from tools.environments import Payload
from tools.errors import EmptySetError, TooFewError

SELECT_KEYS = ("score", "acquisition")


@dataclass(frozen=True)
class ScoredItem:
    x: Payload
    score: float
    acquisition: float = 0.0


@dataclass
class ScoredSet:
    items: List[ScoredItem] = field(default_factory=list)
    k: int = 0

    @property
    def mean_score(self) -> float:
        if not self.items:
            raise EmptySetError("no items selected")
        return float(np.mean([item.score for item in self.items]))

    @property
    def objects(self) -> List[Payload]:
        return [item.x for item in self.items]


def rank(items: Sequence[ScoredItem], select_by: str = "score") -> List[ScoredItem]:
    """Items in decreasing order of the selection key; ties keep input order."""
    if select_by not in SELECT_KEYS:
        raise ValueError(f"select_by must be one of {SELECT_KEYS}, got {select_by!r}")
    return sorted(items, key=lambda item: -getattr(item, select_by))


def top_items(items: Sequence[ScoredItem], k: int, select_by: str = "score") -> ScoredSet:
    if not items:
        raise EmptySetError("top-K of an empty set")
    if k < 1:
        raise ValueError(f"K must be positive, got {k}")
    k = min(k, len(items))
    return ScoredSet(rank(items, select_by)[:k], k)


def mean_topk(items: Sequence[ScoredItem], k: int, select_by: str = "score") -> float:
    """
    Mean f_M score of the top-K items chosen by `select_by`.

    Example:
        >>> mean_topk([ScoredItem((0,), 1.0), ScoredItem((1,), 3.0)], 1)
        3.0
    """
    return top_items(items, k, select_by).mean_score


def _as_array(objects: Sequence[Payload]) -> np.ndarray:
    return np.asarray([list(x) for x in objects], dtype=float)


def identity(a: Payload, b: Payload, kind: str = "sequence", grid_length: Optional[int] = None) -> float:
    if kind == "sequence":
        if len(a) != len(b):
            raise ValueError("identity needs sequences of equal length")
        return float(np.mean(np.asarray(a) == np.asarray(b)))
    scale = max((grid_length or 2) - 1, 1)
    diff = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) / scale
    return 1.0 - float(np.linalg.norm(diff)) / math.sqrt(len(a))


def pairwise_diversity(
    objects: Sequence[Payload],
    kind: str = "sequence",
    grid_length: Optional[int] = None,
) -> float:
    """
    Mean pairwise distance of a set of objects, in [0, 1].

    Args:
        objects: at least two objects of one environment
        kind: "sequence" (normalised Hamming) or "grid" (diagonal-normalised Euclidean)
        grid_length: side length L of the grid, required for grids
    """
    if len(objects) < 2:
        raise TooFewError(f"diversity needs at least 2 objects, got {len(objects)}")
    array = _as_array(objects)
    if kind == "sequence":
        return float(np.mean(pdist(array, metric="hamming")))
    if grid_length is None:
        raise ValueError("grid diversity needs the grid side length")
    points = array / max(grid_length - 1, 1)
    return float(np.mean(pdist(points, metric="euclidean")) / math.sqrt(points.shape[1]))


def diverse_topk(
    items: Sequence[ScoredItem],
    k: int,
    threshold: float,
    kind: str = "sequence",
    grid_length: Optional[int] = None,
    select_by: str = "score",
) -> ScoredSet:
    """
    Greedy top-K in key order, skipping any item whose identity to an
    already selected item exceeds `threshold`. May return fewer than K.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    chosen: List[ScoredItem] = []
    for item in rank(items, select_by):
        if len(chosen) >= k:
            break
        if all(identity(item.x, other.x, kind, grid_length) <= threshold for other in chosen):
            chosen.append(item)
    return ScoredSet(chosen, k)


Row = Union[Mapping[str, float], object]


def _field(row: Row, name: str) -> float:
    if isinstance(row, Mapping):
        return float(row[name])
    return float(getattr(row, name))


def budget_to_threshold(rows: Sequence[Row], threshold: float, key: str = "mean_topk") -> Optional[float]:
    """First cumulative spend at which `key` reaches `threshold`, or None if never."""
    for row in rows:
        if _field(row, key) >= threshold:
            return _field(row, "spent")
    return None


def summarize(items: Sequence[ScoredItem], k: int, threshold: float, kind: str,
              grid_length: Optional[int] = None) -> Dict[str, float]:
    """Top-K mean, its diversity and the diverse top-K mean of one scored set."""
    top = top_items(items, k)
    diverse = diverse_topk(items, k, threshold, kind, grid_length)
    return {
        "mean_topk": top.mean_score,
        "diversity": pairwise_diversity(top.objects, kind, grid_length) if len(top.items) > 1 else 0.0,
        "diverse_topk": diverse.mean_score,
    }
