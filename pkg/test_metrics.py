"""
Tests for top-K, diversity and budget-to-threshold metrics
"""

import itertools

import numpy as np
import pytest

from tools.environments import SequenceSpace
from tools.errors import EmptySetError, TooFewError
from tools.metrics import (
    ScoredItem,
    budget_to_threshold,
    diverse_topk,
    identity,
    mean_topk,
    pairwise_diversity,
    top_items,
)


def random_items(n, seed=0):
    rng = np.random.default_rng(seed)
    cells = rng.integers(0, 100, size=(n, 2))
    return [ScoredItem(tuple(int(v) for v in c), float(s), float(a))
            for c, s, a in zip(cells, rng.normal(size=n), rng.random(n))]


def test_mean_topk_edge_cases():
    items = random_items(12)
    assert mean_topk(items, 12) == pytest.approx(np.mean([i.score for i in items]))
    assert mean_topk(items, 1) == max(i.score for i in items)
    assert mean_topk(items, 50) == pytest.approx(np.mean([i.score for i in items]))
    with pytest.raises(EmptySetError):
        mean_topk([], 3)


def test_mean_topk_matches_sort_reference():
    items = random_items(100, seed=4)
    by_score = sorted((i.score for i in items), reverse=True)[:50]
    assert mean_topk(items, 50) == pytest.approx(np.mean(by_score))
    by_acq = sorted(items, key=lambda i: i.acquisition, reverse=True)[:50]
    assert mean_topk(items, 50, select_by="acquisition") == pytest.approx(np.mean([i.score for i in by_acq]))
    with pytest.raises(ValueError):
        mean_topk(items, 5, select_by="cost")


def test_mean_topk_never_decreases_when_items_are_added():
    items = random_items(30, seed=2)
    for n in range(10, 30):
        assert mean_topk(items[: n + 1], 10) >= mean_topk(items[:n], 10)


def test_sequence_diversity_extremes():
    env = SequenceSpace(8)
    same = [env.from_string("ACGTACGT")] * 5
    assert pairwise_diversity(same) == 0.0
    opposite = [env.from_string("AAAAAAAA"), env.from_string("CCCCCCCC")]
    assert pairwise_diversity(opposite) == 1.0
    with pytest.raises(TooFewError):
        pairwise_diversity(same[:1])


def test_sequence_diversity_matches_pairwise_loop():
    rng = np.random.default_rng(8)
    objects = [tuple(int(v) for v in row) for row in rng.integers(0, 4, size=(20, 8))]
    pairs = list(itertools.combinations(objects, 2))
    reference = 1.0 - sum(sum(a == b for a, b in zip(x, y)) / 8 for x, y in pairs) / len(pairs)
    assert pairwise_diversity(objects) == pytest.approx(reference, abs=1e-12)
    shuffled = [objects[i] for i in rng.permutation(20)]
    assert pairwise_diversity(shuffled) == pytest.approx(pairwise_diversity(objects), abs=1e-12)


def test_grid_diversity_is_normalised_by_diagonal():
    assert pairwise_diversity([(0, 0), (10, 10)], kind="grid", grid_length=11) == pytest.approx(1.0)
    assert pairwise_diversity([(0, 0), (10, 0)], kind="grid", grid_length=11) == pytest.approx(1 / np.sqrt(2))
    value = pairwise_diversity([c.x for c in random_items(15)], kind="grid", grid_length=100)
    assert 0.0 <= value <= 1.0
    with pytest.raises(ValueError):
        pairwise_diversity([(0, 0), (1, 1)], kind="grid")


def test_diverse_topk_picks_one_per_cluster():
    env = SequenceSpace(8)
    fixture = [
        ("AAAAAAAA", 10), ("AAAAAAAC", 9), ("AAAAAACC", 8),
        ("CCCCCCCC", 7), ("CCCCCCCA", 6), ("CCCCCCAA", 5),
        ("GGGGGGGG", 4), ("TTTTTTTT", 3), ("GTGTGTGT", 2), ("TGTGTGTG", 1),
    ]
    items = [ScoredItem(env.from_string(s), float(score)) for s, score in fixture]
    chosen = diverse_topk(items, 4, 0.6)
    assert [item.score for item in chosen.items] == [10.0, 7.0, 4.0, 3.0]
    for a, b in itertools.combinations(chosen.items, 2):
        assert identity(a.x, b.x) <= 0.6


def test_diverse_topk_with_vacuous_threshold_is_plain_topk():
    items = random_items(40, seed=6)
    plain = top_items(items, 10)
    assert diverse_topk(items, 10, 1.0, kind="grid", grid_length=100).items == plain.items


def test_diverse_topk_may_return_fewer_items():
    env = SequenceSpace(4)
    items = [ScoredItem(env.from_string("AAAA"), 2.0), ScoredItem(env.from_string("AAAC"), 1.0)]
    chosen = diverse_topk(items, 5, 0.5)
    assert len(chosen.items) == 1
    with pytest.raises(ValueError):
        diverse_topk(items, 5, 1.5)


def test_budget_to_threshold():
    rows = [{"spent": 3.0, "mean_topk": 0.2}, {"spent": 7.5, "mean_topk": 0.8}, {"spent": 9.0, "mean_topk": 0.9}]
    assert budget_to_threshold(rows, 0.75) == 7.5
    assert budget_to_threshold(rows, 0.2) == 3.0
    assert budget_to_threshold(rows, 1.0) is None
    assert budget_to_threshold([], 0.0) is None
