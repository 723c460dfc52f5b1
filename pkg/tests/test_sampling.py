import io
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from convdysat.graph import graph_from_edges
from convdysat.sampling import (
    NegativeTable, WalkConfig, context_pairs, random_walks, sample_negatives, write_walks,
)


def brute_force_pairs(walk, window):
    out = []
    for i in range(len(walk)):
        for j in range(len(walk)):
            if i != j and abs(i - j) <= window and walk[i] != walk[j]:
                out.append((walk[i], walk[j]))
    return sorted(out)


class TestWalkConfig:
    def test_defaults(self):
        cfg = WalkConfig()
        assert (cfg.walks_per_node, cfg.walk_length, cfg.window) == (10, 40, 10)

    @pytest.mark.parametrize("kw", [dict(walk_length=0), dict(window=0), dict(window=50, walk_length=40)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            WalkConfig(**kw)


class TestRandomWalks:
    def test_isolated_node_stays(self):
        g = graph_from_edges([[(0, 1)]], 3)
        walks = random_walks(g.snapshot(1), WalkConfig(walks_per_node=3, walk_length=6, window=2))
        assert walks.shape == (9, 6)
        assert np.all(walks[6:] == 2)

    def test_two_node_transition_frequency(self):
        g = graph_from_edges([[(0, 1)]], 2)
        cfg = WalkConfig(walks_per_node=50, walk_length=101, window=1, seed=9)
        walks = random_walks(g.snapshot(1), cfg)
        moves = walks[:, 1:] != walks[:, :-1]
        n = moves.size
        assert n == 10000
        sigma = math.sqrt(n * 0.25)
        assert abs(moves.sum() - n / 2) < 3 * sigma

    def test_deterministic_and_thread_independent(self, toy_graph):
        snap = toy_graph.snapshot(3)
        cfg = WalkConfig(walks_per_node=2, walk_length=10, window=3, seed=5)
        a = random_walks(snap, cfg)
        assert np.array_equal(a, random_walks(snap, cfg))
        assert np.array_equal(a, random_walks(snap, cfg, threads=4))
        assert not np.array_equal(a, random_walks(snap, cfg, stream=1))

    def test_walks_follow_adjacency(self, toy_graph):
        snap = toy_graph.snapshot(2)
        walks = random_walks(snap, WalkConfig(walks_per_node=2, walk_length=15, window=3))
        nbrs = {v: {u for u, _ in row} for v, row in snap.adjacency.items()}
        for walk in walks:
            for a, b in zip(walk[:-1], walk[1:]):
                assert b in nbrs[a]

    def test_weighted_transitions(self):
        # from node 0: self weight 1, link to 1 weight 3 -> move with probability 3/4
        from convdysat.graph import build_snapshots, EdgeRecord
        g = build_snapshots([EdgeRecord("a", "b", 3.0, 0.0), EdgeRecord("a", "b", 0.0, 1.0)], 2, "binned")
        walks = random_walks(g.snapshot(1), WalkConfig(walks_per_node=200, walk_length=41, window=1, seed=2))
        src = walks[:200, :-1] == 0
        moved = (walks[:200, 1:] == 1) & src
        p = moved.sum() / src.sum()
        n = src.sum()
        assert abs(p - 0.75) < 3 * math.sqrt(0.75 * 0.25 / n)


class TestContextPairs:
    def test_window_one(self):
        c, x = context_pairs(np.array([[0, 1, 2]]), 1)
        assert sorted(zip(c.tolist(), x.tolist())) == [(0, 1), (1, 0), (1, 2), (2, 1)]

    def test_self_pairs_dropped(self):
        c, x = context_pairs(np.array([[4, 4, 4]]), 2)
        assert c.size == 0 and x.size == 0

    @pytest.mark.parametrize("length,window", [(5, 1), (8, 3), (40, 10), (6, 6)])
    def test_pair_count_distinct_nodes(self, length, window):
        walk = np.arange(length)
        c, _ = context_pairs(walk[None], window)
        w = min(window, length - 1)
        assert c.size == 2 * (length * w - w * (w + 1) // 2)
        assert c.size == len(brute_force_pairs(walk.tolist(), window))

    def test_matches_brute_force_with_repeats(self, rng):
        walks = rng.integers(0, 4, size=(5, 9))
        c, x = context_pairs(walks, 3)
        expected = sorted(p for w in walks.tolist() for p in brute_force_pairs(w, 3))
        assert sorted(zip(c.tolist(), x.tolist())) == expected

    def test_symmetric_counts(self, rng):
        c, x = context_pairs(rng.integers(0, 6, size=(8, 12)), 4)
        fwd = np.zeros((6, 6), int)
        np.add.at(fwd, (c, x), 1)
        assert np.array_equal(fwd, fwd.T)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            context_pairs(np.array([[0, 1]]), 0)


class TestNegatives:
    def test_uniform_when_degrees_equal(self):
        table = NegativeTable.from_degrees(np.full(10, 3.0))
        draws = sample_negatives(table, 100_000, np.random.default_rng(0))
        counts = np.bincount(draws, minlength=10)
        assert chisquare(counts).pvalue > 0.01

    def test_three_quarter_power_ratio(self):
        table = NegativeTable.from_degrees([1.0, 16.0])
        n = 90_000
        draws = sample_negatives(table, n, np.random.default_rng(1))
        p = 1.0 / 9.0
        k = int((draws == 0).sum())
        assert abs(k - n * p) < 3 * math.sqrt(n * p * (1 - p))

    def test_zero_count(self):
        table = NegativeTable.from_degrees([1.0, 2.0])
        assert sample_negatives(table, 0, np.random.default_rng(0)).size == 0

    def test_zero_degree_never_drawn(self):
        table = NegativeTable.from_degrees([0.0, 2.0, 0.0, 1.0])
        draws = sample_negatives(table, 5000, np.random.default_rng(0))
        assert set(np.unique(draws)) == {1, 3}

    def test_empty_table(self):
        with pytest.raises(ValueError):
            sample_negatives(NegativeTable.from_degrees([]), 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_negatives(NegativeTable.from_degrees([0.0, 0.0]), 3, np.random.default_rng(0))

    def test_deterministic(self):
        table = NegativeTable.from_degrees([1.0, 2.0, 3.0])
        a = sample_negatives(table, 50, np.random.default_rng(7))
        assert np.array_equal(a, sample_negatives(table, 50, np.random.default_rng(7)))

    def test_cumulative_nondecreasing(self):
        table = NegativeTable.from_degrees([3.0, 0.0, 1.0])
        assert np.all(np.diff(table.cumulative_weights) >= 0)


def test_write_walks():
    buf = io.StringIO()
    write_walks(np.array([[0, 1, 0]]), ("a", "b"), buf)
    assert buf.getvalue() == "a b a\n"
