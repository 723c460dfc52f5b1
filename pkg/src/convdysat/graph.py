"""Snapshot-based dynamic graphs: edge-list parsing and snapshot construction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, TextIO

import numpy as np


class EdgeListError(ValueError):
    pass


class EdgeRecord(NamedTuple):
    u: str
    v: str
    weight: float
    timestamp: float


def parse_edge_list(stream: Iterable[str]) -> list[EdgeRecord]:
    """Parse ``u v [weight] timestamp`` lines; ``#`` starts a comment line."""
    records = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) == 3:
            u, v, ts = fields
            w = "1.0"
        elif len(fields) == 4:
            u, v, w, ts = fields
        else:
            raise EdgeListError(f"line {lineno}: expected 3 or 4 fields, got {len(fields)}")
        try:
            weight = float(w)
            timestamp = float(ts)
        except ValueError:
            raise EdgeListError(f"line {lineno}: weight and timestamp must be numeric") from None
        if not (math.isfinite(weight) and math.isfinite(timestamp)):
            raise EdgeListError(f"line {lineno}: non-finite value")
        if weight < 0:
            raise EdgeListError(f"line {lineno}: negative weight {weight}")
        records.append(EdgeRecord(u, v, weight, timestamp))
    return records


def read_edge_list(path: str | Path) -> list[EdgeRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_edge_list(fh)


@dataclass(frozen=True)
class Snapshot:
    """One static graph G_t.  Undirected, with a unit self-loop on every node.

    ``adjacency[v]`` lists ``(neighbor, weight)`` in ascending neighbor order
    and always contains ``(v, 1.0)``.  ``edges`` holds each undirected link
    once as ``(u, v, weight)`` with ``u < v``; injected self-loops are not in it.
    """

    time_index: int
    edges: tuple[tuple[int, int, float], ...]
    adjacency: dict[int, tuple[tuple[int, float], ...]]

    @property
    def num_links(self) -> int:
        return len(self.edges)

    def dense(self, num_nodes: int) -> np.ndarray:
        a = np.zeros((num_nodes, num_nodes))
        for v, row in self.adjacency.items():
            for u, w in row:
                a[v, u] = w
        return a

    def degrees(self, num_nodes: int) -> np.ndarray:
        """Weighted degree, excluding the injected self-loop."""
        deg = np.zeros(num_nodes)
        for u, v, w in self.edges:
            deg[u] += w
            deg[v] += w
        return deg


@dataclass(frozen=True)
class NeighborTable:
    """Padded neighbor lists for a run of snapshots.

    ``index[s, v, k]`` is the k-th neighbor of v in snapshot s (ascending,
    self-loop included) and ``weight`` its link weight.  Unused slots point
    at v itself with weight 0 and are masked out.
    """

    index: np.ndarray
    weight: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.weight > 0

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.index.shape

    @classmethod
    def from_snapshots(cls, snapshots, num_nodes: int) -> NeighborTable:
        width = max(len(row) for s in snapshots for row in s.adjacency.values())
        index = np.tile(np.arange(num_nodes)[None, :, None], (len(snapshots), 1, width))
        weight = np.zeros(index.shape)
        for i, snap in enumerate(snapshots):
            for v, row in snap.adjacency.items():
                for k, (u, w) in enumerate(row):
                    index[i, v, k] = u
                    weight[i, v, k] = w
        index.setflags(write=False)
        weight.setflags(write=False)
        return cls(index, weight)


@dataclass(frozen=True)
class DynamicGraph:
    node_count: int
    snapshots: tuple[Snapshot, ...]
    labels: tuple[str, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_steps(self) -> int:
        return len(self.snapshots)

    def node_id(self, label: str) -> int:
        return self.labels.index(label)

    def snapshot(self, t: int) -> Snapshot:
        if not 1 <= t <= self.num_steps:
            raise IndexError(f"time step {t} outside [1, {self.num_steps}]")
        return self.snapshots[t - 1]

    def adjacency_stack(self, up_to: int | None = None) -> np.ndarray:
        """Dense ``[t, N, N]`` weight matrices for steps 1..up_to."""
        up_to = self.num_steps if up_to is None else up_to
        return np.stack([s.dense(self.node_count) for s in self.snapshots[:up_to]])

    def neighbor_table(self, up_to: int | None = None) -> NeighborTable:
        """Padded neighbor lists for steps 1..up_to (cached; arrays are read-only)."""
        up_to = self.num_steps if up_to is None else up_to
        if up_to not in self._cache:
            self._cache[up_to] = NeighborTable.from_snapshots(self.snapshots[:up_to], self.node_count)
        return self._cache[up_to]


def neighbors(g: DynamicGraph, t: int, v: int) -> tuple[tuple[int, float], ...]:
    if not 0 <= v < g.node_count:
        raise IndexError(f"node {v} outside [0, {g.node_count})")
    return g.snapshot(t).adjacency[v]


def _make_snapshot(time_index: int, weights: dict[tuple[int, int], float], n: int) -> Snapshot:
    rows: dict[int, dict[int, float]] = {v: {v: 1.0} for v in range(n)}
    edges = []
    for (u, v), w in sorted(weights.items()):
        edges.append((u, v, w))
        rows[u][v] = w
        rows[v][u] = w
    adjacency = {v: tuple(sorted(row.items())) for v, row in rows.items()}
    return Snapshot(time_index, tuple(edges), adjacency)


def build_snapshots(records: list[EdgeRecord], num_steps: int, mode: str = "cumulative") -> DynamicGraph:
    """Bin records into ``num_steps`` equal-width time windows.

    Bins are half-open ``[lo, hi)`` except the last, which is closed.  In
    ``cumulative`` mode snapshot t holds every edge from bins 1..t.  Repeated
    links within a snapshot have their weights summed.  Records whose
    endpoints coincide carry no link and are dropped, but still register
    the node.
    """
    if num_steps < 2:
        raise ValueError("need at least 2 time steps")
    if mode not in ("binned", "cumulative"):
        raise ValueError(f"unknown snapshot mode {mode!r}")
    if not records:
        raise ValueError("no edge records")
    times = np.array([r.timestamp for r in records])
    lo, hi = float(times.min()), float(times.max())
    if hi == lo:
        raise ValueError("all timestamps are identical; cannot split into time steps")

    labels: dict[str, int] = {}
    for r in records:
        for name in (r.u, r.v):
            if name not in labels:
                labels[name] = len(labels)
    n = len(labels)

    bins = np.floor((times - lo) / (hi - lo) * num_steps).astype(np.int64)
    bins = np.minimum(bins, num_steps - 1)

    per_bin: list[dict[tuple[int, int], float]] = [{} for _ in range(num_steps)]
    for r, b in zip(records, bins):
        u, v = labels[r.u], labels[r.v]
        if u == v or r.weight == 0:
            continue
        key = (min(u, v), max(u, v))
        per_bin[b][key] = per_bin[b].get(key, 0.0) + r.weight

    snapshots = []
    running: dict[tuple[int, int], float] = {}
    for t in range(num_steps):
        if mode == "cumulative":
            for key, w in per_bin[t].items():
                running[key] = running.get(key, 0.0) + w
            current = dict(running)
        else:
            current = per_bin[t]
        snapshots.append(_make_snapshot(t + 1, current, n))
    ordered = tuple(sorted(labels, key=labels.__getitem__))
    return DynamicGraph(n, tuple(snapshots), ordered)


def graph_from_edges(steps: list[list[tuple[int, int]]], num_nodes: int) -> DynamicGraph:
    """Build a graph directly from per-step lists of integer links (unit weights)."""
    snaps = []
    for t, links in enumerate(steps):
        weights: dict[tuple[int, int], float] = {}
        for u, v in links:
            if u == v:
                continue
            key = (min(u, v), max(u, v))
            weights[key] = weights.get(key, 0.0) + 1.0
        snaps.append(_make_snapshot(t + 1, weights, num_nodes))
    return DynamicGraph(num_nodes, tuple(snaps), tuple(str(i) for i in range(num_nodes)))


def write_snapshot(snapshot: Snapshot, labels: tuple[str, ...], fh: TextIO) -> None:
    fh.write(f"# snapshot t={snapshot.time_index}\n")
    for u, v, w in snapshot.edges:
        fh.write(f"{labels[u]} {labels[v]} {w!r}\n")
