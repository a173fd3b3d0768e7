"""Weighted undirected interaction graphs."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import IndexOutOfRange, InvalidParameter


@dataclass(frozen=True)
class Graph:
    """Undirected graph on agents ``0..n_agents-1``.

    ``edges`` holds ``(i, j, weight)`` with ``i < j`` and ``weight > 0``;
    a zero weight is represented by leaving the edge out.
    """

    n_agents: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        if self.n_agents < 1:
            raise InvalidParameter("a graph needs at least one agent")
        seen = set()
        canon = []
        for i, j, w in self.edges:
            i, j, w = int(i), int(j), float(w)
            if i == j:
                raise InvalidParameter(f"self-loop at agent {i}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise InvalidParameter(f"edge ({i}, {j}) outside 0..{self.n_agents - 1}")
            if not (w > 0 and np.isfinite(w)):
                raise InvalidParameter(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidParameter(f"duplicate edge {key}")
            seen.add(key)
            canon.append((*key, w))
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_agents, self.n_agents))
        for i, j, w in self.edges:
            a[i, j] = a[j, i] = w
        a.setflags(write=False)
        return a

    @cached_property
    def laplacian(self) -> np.ndarray:
        """``D - A``; ``-(L @ x)[i]`` is ``sum_j a_ij (x_j - x_i)``."""
        a = self.adjacency
        lap = np.diag(a.sum(axis=1)) - a
        lap.setflags(write=False)
        return lap

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(i, j, w)`` as parallel arrays."""
        if not self.edges:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        i, j, w = zip(*self.edges)
        return np.array(i), np.array(j), np.array(w)

    def describe(self) -> dict:
        return {"n_agents": self.n_agents, "edges": [[i, j, w] for i, j, w in self.edges]}


def neighbors(g: Graph, i: int) -> list[tuple[int, float]]:
    if not 0 <= i < g.n_agents:
        raise IndexOutOfRange(f"agent {i} not in 0..{g.n_agents - 1}")
    out = []
    for a, b, w in g.edges:
        if a == i:
            out.append((b, w))
        elif b == i:
            out.append((a, w))
    return sorted(out)


def is_connected(g: Graph) -> bool:
    adj: list[list[int]] = [[] for _ in range(g.n_agents)]
    for i, j, _ in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        for k in adj[queue.popleft()]:
            if k not in seen:
                seen.add(k)
                queue.append(k)
    return len(seen) == g.n_agents


def complete(n: int) -> Graph:
    if n < 2:
        raise InvalidParameter("complete graph needs n >= 2")
    return Graph(n, tuple((i, j, 1.0) for i in range(n) for j in range(i + 1, n)))


def ring(n: int) -> Graph:
    if n < 3:
        raise InvalidParameter("ring needs n >= 3")
    return Graph(n, tuple((i, (i + 1) % n, 1.0) for i in range(n)))


def path(n: int) -> Graph:
    if n < 2:
        raise InvalidParameter("path needs n >= 2")
    return Graph(n, tuple((i, i + 1, 1.0) for i in range(n - 1)))


def star(n: int) -> Graph:
    if n < 2:
        raise InvalidParameter("star needs n >= 2")
    return Graph(n, tuple((0, i, 1.0) for i in range(1, n)))


def from_edge_list(edges: Iterable, n_agents: int | None = None) -> Graph:
    """Build a graph from ``(i, j)``, ``(i, j, w)`` or ``((i, j), w)`` items.

    ``n_agents`` defaults to one more than the largest index mentioned.
    """
    triples = []
    for item in edges:
        item = tuple(item)
        if len(item) == 2 and isinstance(item[0], (tuple, list, set, frozenset)):
            pair, w = item
            i, j = sorted(pair)
        elif len(item) == 2:
            (i, j), w = item, 1.0
        elif len(item) == 3:
            i, j, w = item
        else:
            raise InvalidParameter(f"cannot read edge {item!r}")
        triples.append((int(i), int(j), float(w)))
    if not triples and n_agents is None:
        raise InvalidParameter("empty edge list needs an explicit n_agents")
    inferred = 1 + max(max(i, j) for i, j, _ in triples) if triples else 0
    n = inferred if n_agents is None else n_agents
    if n < 2:
        raise InvalidParameter("a graph needs n >= 2 agents")
    return Graph(n, tuple(triples))


def build(kind: str, n: int | None = None, edges=None) -> Graph:
    """Dispatch used by the run-configuration ``graph`` block."""
    makers = {"complete": complete, "ring": ring, "path": path, "star": star}
    if kind in makers:
        if n is None:
            raise InvalidParameter(f"graph kind {kind!r} needs n")
        return makers[kind](n)
    if kind == "edges":
        return from_edge_list(edges or [], n_agents=n)
    raise InvalidParameter(f"unknown graph kind {kind!r}")
