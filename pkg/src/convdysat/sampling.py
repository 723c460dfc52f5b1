"""Random-walk contexts and the negative-sampling distribution."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .graph import Snapshot


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.walks_per_node, self.walk_length, self.window) < 1:
            raise ValueError("walk settings must be positive")
        if self.window > self.walk_length:
            raise ValueError("window cannot exceed walk_length")


def _transition_tables(snapshot: Snapshot):
    table = {}
    for v, row in snapshot.adjacency.items():
        nbrs = np.array([u for u, _ in row], dtype=np.int64)
        cum = np.cumsum([w for _, w in row])
        table[v] = (nbrs, cum)
    return table


def _walks_from(start: int, tables, cfg: WalkConfig, stream: tuple[int, ...]) -> np.ndarray:
    rng = np.random.default_rng(stream)
    walks = np.empty((cfg.walks_per_node, cfg.walk_length), dtype=np.int64)
    walks[:, 0] = start
    for i in range(cfg.walks_per_node):
        cur = start
        draws = rng.random(cfg.walk_length - 1)
        for step in range(1, cfg.walk_length):
            nbrs, cum = tables[cur]
            j = int(np.searchsorted(cum, draws[step - 1] * cum[-1], side="right"))
            cur = int(nbrs[min(j, nbrs.size - 1)])
            walks[i, step] = cur
    return walks


def random_walks(snapshot: Snapshot, cfg: WalkConfig, stream: int = 0, threads: int = 1) -> np.ndarray:
    """First-order weighted walks, ``walks_per_node`` starting at every node.

    Each start node draws from its own generator seeded by
    ``(cfg.seed, stream, snapshot.time_index, node)``, so the result does not
    depend on ``threads``.  Returns an int array ``[num_walks, walk_length]``
    ordered by start node.
    """
    tables = _transition_tables(snapshot)
    nodes = sorted(snapshot.adjacency)

    def work(v):
        return _walks_from(v, tables, cfg, (cfg.seed, stream, snapshot.time_index, v))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, nodes))
    else:
        parts = [work(v) for v in nodes]
    return np.concatenate(parts, axis=0)


def context_pairs(walks: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """All (center, context) pairs within ``window`` positions, self pairs dropped."""
    if window < 1:
        raise ValueError("window must be >= 1")
    walks = np.asarray(walks, dtype=np.int64)
    if walks.ndim == 1:
        walks = walks[None, :]
    centers, contexts = [], []
    for d in range(1, min(window, walks.shape[1] - 1) + 1):
        a, b = walks[:, :-d].ravel(), walks[:, d:].ravel()
        centers += [a, b]
        contexts += [b, a]
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    c, x = np.concatenate(centers), np.concatenate(contexts)
    keep = c != x
    return c[keep], x[keep]


@dataclass(frozen=True)
class NegativeTable:
    cumulative_weights: np.ndarray

    @classmethod
    def from_degrees(cls, degrees, power: float = 0.75) -> NegativeTable:
        w = np.power(np.asarray(degrees, dtype=np.float64), power)
        return cls(np.cumsum(w))

    def __len__(self) -> int:
        return self.cumulative_weights.size


def sample_negatives(table: NegativeTable, count: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. node draws proportional to the table weights."""
    cum = table.cumulative_weights
    if cum.size == 0 or cum[-1] <= 0:
        raise ValueError("negative table is empty")
    if count < 0:
        raise ValueError("count must be non-negative")
    u = rng.random(count) * cum[-1]
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, cum.size - 1).astype(np.int64)


def write_walks(walks: np.ndarray, labels, fh) -> None:
    for walk in walks:
        fh.write(" ".join(labels[v] for v in walk) + "\n")
