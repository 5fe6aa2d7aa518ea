"""Temporal graph and held-out mask containers."""
from dataclasses import dataclass, field

import numpy as np

__all__ = ["TemporalGraph", "HeldOutMask", "Observation", "cell_keys"]


def cell_keys(t, i, j, N):
    """Encode (t, i, j) cells as sortable int64 keys."""
    t = np.asarray(t, dtype=np.int64)
    return (t * N + np.asarray(i, dtype=np.int64)) * N + np.asarray(j, dtype=np.int64)


def _canonical_edges(pairs, N):
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if np.any(arr[:, 0] == arr[:, 1]):
        raise ValueError("self-loops are not allowed")
    if np.any(arr < 0) or np.any(arr >= N):
        raise ValueError("vertex index out of range")
    arr = np.sort(arr, axis=1)
    return np.unique(arr, axis=0)


@dataclass
class TemporalGraph:
    """T undirected binary snapshots over N vertices.

    ``edges[t]`` is an (E_t, 2) int array of unique pairs with i < j.
    """

    N: int
    T: int
    edges: list = field(default_factory=list)

    def __post_init__(self):
        if self.N < 1 or self.T < 1:
            raise ValueError("graph needs N >= 1 and T >= 1")
        edges = list(self.edges) + [()] * (self.T - len(self.edges))
        if len(edges) != self.T:
            raise ValueError("more edge sets than snapshots")
        self.edges = [_canonical_edges(e, self.N) for e in edges]

    @classmethod
    def from_cells(cls, N, T, cells):
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 3)
        return cls(N, T, [cells[cells[:, 0] == t, 1:] for t in range(T)])

    @classmethod
    def from_dense(cls, adj):
        adj = np.asarray(adj)
        T, N, _ = adj.shape
        edges = []
        for t in range(T):
            i, j = np.nonzero(np.triu(adj[t] | adj[t].T, 1))
            edges.append(np.stack([i, j], axis=1))
        return cls(N, T, edges)

    @property
    def n_edges(self):
        return sum(len(e) for e in self.edges)

    def cells(self):
        """All edges as an (E, 3) array of (t, i, j), sorted."""
        parts = [np.column_stack([np.full(len(e), t, dtype=np.int64), e])
                 for t, e in enumerate(self.edges)]
        if not parts:
            return np.zeros((0, 3), dtype=np.int64)
        return np.concatenate(parts).reshape(-1, 3)

    def keys(self):
        c = self.cells()
        return cell_keys(c[:, 0], c[:, 1], c[:, 2], self.N)

    def dense(self):
        adj = np.zeros((self.T, self.N, self.N), dtype=np.int8)
        c = self.cells()
        adj[c[:, 0], c[:, 1], c[:, 2]] = 1
        adj[c[:, 0], c[:, 2], c[:, 1]] = 1
        return adj

    def grid_size(self):
        return self.T * self.N * (self.N - 1) // 2

    def density(self):
        return self.n_edges / max(self.grid_size(), 1)

    def __eq__(self, other):
        if not isinstance(other, TemporalGraph):
            return NotImplemented
        return (self.N == other.N and self.T == other.T
                and all(np.array_equal(a, b) for a, b in zip(self.edges, other.edges)))


@dataclass
class HeldOutMask:
    """Held-out (t, i, j) cells with i < j, plus their true labels."""

    entries: np.ndarray
    labels: np.ndarray
    N: int
    fraction: float = 0.0
    seed: int = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if len(self.labels) != len(self.entries):
            raise ValueError("one label per held-out entry is required")
        if len(self.entries) and np.any(self.entries[:, 1] >= self.entries[:, 2]):
            raise ValueError("held-out entries must have i < j")
        order = np.argsort(self.keys(), kind="stable")
        self.entries = self.entries[order]
        self.labels = self.labels[order]

    @classmethod
    def empty(cls, N):
        return cls(np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int8), N)

    def __len__(self):
        return len(self.entries)

    def keys(self):
        e = self.entries
        return cell_keys(e[:, 0], e[:, 1], e[:, 2], self.N)

    def contains(self, t, i, j):
        keys = self.keys()
        q = cell_keys(t, i, j, self.N)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(len(keys) - 1, 0))
        return (keys[pos] == q) if len(keys) else np.zeros(np.shape(q), dtype=bool)


@dataclass
class Observation:
    """What the samplers see: training edges and the masked-cell keys."""

    N: int
    T: int
    edges: np.ndarray  # (E, 3) training edges
    masked_keys: np.ndarray  # sorted keys of held-out cells

    @classmethod
    def from_graph(cls, graph, mask=None):
        cells = graph.cells()
        if mask is None or len(mask) == 0:
            masked = np.zeros(0, dtype=np.int64)
        else:
            masked = mask.keys()
            keep = ~np.isin(cell_keys(cells[:, 0], cells[:, 1], cells[:, 2], graph.N), masked)
            cells = cells[keep]
        return cls(graph.N, graph.T, cells, masked)

    def is_masked(self, t, i, j):
        if len(self.masked_keys) == 0:
            return np.zeros(np.shape(t), dtype=bool)
        q = cell_keys(t, i, j, self.N)
        pos = np.minimum(np.searchsorted(self.masked_keys, q), len(self.masked_keys) - 1)
        return self.masked_keys[pos] == q
