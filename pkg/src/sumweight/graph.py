"""Undirected communication graphs for sensor networks.

Graphs are immutable: the adjacency array is marked read-only on construction
so a single instance can be shared between experiment workers.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np


class GraphError(ValueError):
    """Rejected graph input (bad index, self-loop, too few nodes)."""


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    adjacency: np.ndarray
    seed: Optional[int] = None
    r0: Optional[float] = None
    # sample positions for RGGs; kept for reproducibility dumps only
    points: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.int8)
        if self.n < 2:
            raise GraphError(f"need at least 2 nodes, got {self.n}")
        if a.shape != (self.n, self.n):
            raise GraphError(f"adjacency shape {a.shape} does not match n={self.n}")
        if not np.array_equal(a, a.T) or np.any(np.diag(a)) or np.any((a != 0) & (a != 1)):
            raise GraphError("adjacency must be symmetric 0/1 with zero diagonal")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        deg = a.sum(axis=1).astype(np.int64)
        deg.setflags(write=False)
        object.__setattr__(self, "_degrees", deg)

    @property
    def degrees(self) -> np.ndarray:
        return self._degrees

    @property
    def d_max(self) -> int:
        return int(self._degrees.max())

    @property
    def laplacian(self) -> np.ndarray:
        return np.diag(self._degrees).astype(float) - self.adjacency

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(i, j)`` with ``i < j``, lexicographically sorted."""
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(i), int(j)) for i, j in zip(iu, ju)]

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash((self.n, self.adjacency.tobytes()))

    def to_dict(self) -> dict:
        doc = {"n": self.n, "edges": [list(e) for e in self.edges()]}
        if self.seed is not None:
            doc["seed"] = self.seed
        if self.r0 is not None:
            doc["r0"] = self.r0
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "Graph":
        g = from_edge_list(doc["n"], [tuple(e) for e in doc["edges"]])
        return cls(g.n, g.adjacency, seed=doc.get("seed"), r0=doc.get("r0"))

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))


def rgg_radius(n: int, r0: float) -> float:
    """Connection radius ``sqrt(r0 * ln(n) / n)``."""
    return float(np.sqrt(r0 * np.log(n) / n))


def generate_rgg(n: int, r0: float, seed: int) -> Graph:
    """Random geometric graph on ``n`` uniform points in the unit square.

    Nodes ``i`` and ``j`` are joined when their distance is strictly below
    :func:`rgg_radius`. The result may be disconnected; check with
    :func:`is_connected`.
    """
    if n < 2:
        raise GraphError(f"need at least 2 nodes, got {n}")
    if not r0 > 0:
        raise GraphError(f"r0 must be positive, got {r0}")
    rng = np.random.default_rng(seed)
    points = rng.uniform(0.0, 1.0, size=(n, 2))
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    adj = dist < rgg_radius(n, r0)
    np.fill_diagonal(adj, False)
    points.setflags(write=False)
    return Graph(n, adj, seed=seed, r0=r0, points=points)


def from_edge_list(n: int, edges: Iterable[tuple[int, int]]) -> Graph:
    if n < 2:
        raise GraphError(f"need at least 2 nodes, got {n}")
    adj = np.zeros((n, n), dtype=np.int8)
    for e in edges:
        i, j = (int(v) for v in e)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        adj[i, j] = adj[j, i] = 1
    return Graph(n, adj)


def complete_graph(n: int) -> Graph:
    return Graph(n, np.ones((n, n), dtype=np.int8) - np.eye(n, dtype=np.int8))


def is_connected(g: Graph) -> bool:
    seen = np.zeros(g.n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return bool(seen.all())


def connected_rgg(n: int, r0: float, seed: int, max_tries: int = 1000) -> tuple[Graph, int]:
    """Draw RGGs with seeds ``seed, seed+1, ...`` until one is connected.

    Returns the graph and the number of rejected draws.
    """
    for k in range(max_tries):
        g = generate_rgg(n, r0, seed + k)
        if is_connected(g):
            return g, k
    raise GraphError(f"no connected RGG(n={n}, r0={r0}) in {max_tries} draws from seed {seed}")
