"""Undirected topologies: random sparse graphs, rings of cliques, partitions."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

from .errors import InvalidDegreeError, InvalidNodeError, InvalidPartitionError, InvalidPlanError
from .seeds import rng_for

Clique = tuple[int, ...]


def _edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Topology:
    """Immutable undirected graph over node ids ``0..n-1``.

    Edges are stored canonically as ``(a, b)`` with ``a < b``.
    """

    n: int
    edges: frozenset[tuple[int, int]] = frozenset()
    cliques: tuple[Clique, ...] = field(default=(), compare=False)

    def __post_init__(self):
        canon = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop on node {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise InvalidNodeError(f"edge ({a}, {b}) outside [0, {self.n})")
            canon.add(_edge(a, b))
        object.__setattr__(self, "edges", frozenset(canon))
        object.__setattr__(self, "cliques", tuple(tuple(int(v) for v in c) for c in self.cliques))

    @cached_property
    def adjacency(self) -> tuple[frozenset[int], ...]:
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for a, b in self.edges:
            adj[a].add(b)
            adj[b].add(a)
        return tuple(frozenset(s) for s in adj)

    def degree(self, v: int) -> int:
        return len(neighbors(self, v))

    def nodes_with_edges(self) -> set[int]:
        return {v for e in self.edges for v in e}

    def to_json(self) -> str:
        doc = {
            "n": self.n,
            "edges": [list(e) for e in sorted(self.edges)],
            "cliques": [list(c) for c in self.cliques],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        doc = json.loads(text)
        return cls(
            n=int(doc["n"]),
            edges=frozenset(tuple(e) for e in doc["edges"]),
            cliques=tuple(tuple(c) for c in doc.get("cliques", [])),
        )


def neighbors(t: Topology, v: int) -> frozenset[int]:
    if not 0 <= v < t.n:
        raise InvalidNodeError(f"node {v} outside [0, {t.n})")
    return t.adjacency[v]


def is_connected(t: Topology, nodes: Iterable[int] | None = None) -> bool:
    """BFS connectivity over ``nodes`` (default: all nodes)."""
    members = set(range(t.n)) if nodes is None else set(nodes)
    if not members:
        return True
    start = min(members)
    seen = {start}
    frontier = deque([start])
    while frontier:
        v = frontier.popleft()
        for u in t.adjacency[v]:
            if u in members and u not in seen:
                seen.add(u)
                frontier.append(u)
    return seen == members


def random_regular_like(n: int, m: int, seed: int) -> Topology:
    """Random sparse graph with every degree in ``[1, m]``.

    Nodes are visited in ascending id; each draws its remaining quota
    uniformly without replacement from the non-adjacent nodes still under
    the degree cap. Nodes left isolated are spliced into an existing edge
    ``(a, b) -> (v, a), (v, b)``, which keeps the cap when ``m >= 2``.
    """
    if m < 1 or m >= n:
        raise InvalidDegreeError(f"degree m={m} must satisfy 1 <= m < n={n}")
    if m == 1 and n % 2:
        raise InvalidDegreeError("m=1 needs an even node count to avoid isolated nodes")
    rng = rng_for(seed)
    adj: list[set[int]] = [set() for _ in range(n)]
    for v in range(n):
        quota = m - len(adj[v])
        if quota <= 0:
            continue
        cand = [u for u in range(n) if u != v and u not in adj[v] and len(adj[u]) < m]
        if not cand:
            continue
        picks = rng.choice(len(cand), size=min(quota, len(cand)), replace=False)
        for i in sorted(picks):
            u = cand[i]
            adj[v].add(u)
            adj[u].add(v)
    for v in range(n):
        if adj[v]:
            continue
        edges = sorted(_edge(a, b) for a in range(n) for b in adj[a] if a < b)
        a, b = edges[int(rng.integers(len(edges)))]
        adj[a].discard(b)
        adj[b].discard(a)
        for u in (a, b):
            adj[v].add(u)
            adj[u].add(v)
    return Topology(n, frozenset(_edge(a, b) for a in range(n) for b in adj[a]))


def bridge_edges(cliques: Sequence[Clique]) -> list[tuple[int, int]]:
    """Bridge ``j``: member ``j mod |c_j|`` of clique ``j`` to member
    ``(j+1) mod |c_{j+1}|`` of the next clique around the ring."""
    k = len(cliques)
    out = []
    for j in range(k):
        nxt = (j + 1) % k
        a = cliques[j][j % len(cliques[j])]
        b = cliques[nxt][(j + 1) % len(cliques[nxt])]
        out.append(_edge(a, b))
    return out


def _check_cliques(cliques: Sequence[Sequence[int]], n: int | None) -> list[Clique]:
    if len(cliques) < 2:
        raise InvalidPlanError("a ring needs at least 2 cliques")
    seen: set[int] = set()
    out = []
    for c in cliques:
        c = tuple(int(v) for v in c)
        if not c:
            raise InvalidPlanError("empty clique")
        if len(set(c)) != len(c) or seen.intersection(c):
            raise InvalidPlanError(f"clique {c} overlaps another clique or repeats a member")
        seen.update(c)
        out.append(c)
    if n is not None and max(seen) >= n:
        raise InvalidNodeError(f"clique member {max(seen)} outside [0, {n})")
    return out


def ring_of_cliques(cliques: Sequence[Sequence[int]], n: int | None = None) -> Topology:
    """Complete each clique and chain the cliques into a ring.

    ``n`` defaults to one past the largest member id.
    """
    cl = _check_cliques(cliques, n)
    if n is None:
        n = max(max(c) for c in cl) + 1
    edges = {_edge(a, b) for c in cl for i, a in enumerate(c) for b in c[i + 1:]}
    edges.update(bridge_edges(cl))
    return Topology(n, frozenset(edges), tuple(cl))


def split_sizes(k: int, p: int) -> list[int]:
    return [k // p + (1 if i < k % p else 0) for i in range(p)]


def split_partitions(t: Topology, cliques: Sequence[Sequence[int]], p: int) -> list[Topology]:
    """Cut a ring of cliques into ``p`` chains of consecutive cliques.

    Chain sizes differ by at most one, larger chains first; the bridge
    leaving the last clique of every chain is removed.
    """
    cl = _check_cliques(cliques, t.n)
    k = len(cl)
    if p < 2 or p > k:
        raise InvalidPartitionError(f"need 2 <= p <= {k} cliques, got p={p}")
    bridges = bridge_edges(cl)
    if not set(bridges) <= t.edges:
        raise InvalidPartitionError("topology is not the ring of the given cliques")
    removed = set()
    parts = []
    start = 0
    for size in split_sizes(k, p):
        chain = cl[start:start + size]
        removed.add(bridges[start + size - 1])
        parts.append((start, chain))
        start += size
    out = []
    for _, chain in parts:
        members = {v for c in chain for v in c}
        edges = frozenset(e for e in t.edges - removed if e[0] in members and e[1] in members)
        out.append(Topology(t.n, edges, tuple(chain)))
    return out


def union(topologies: Sequence[Topology]) -> Topology:
    n = max(t.n for t in topologies)
    edges = frozenset().union(*(t.edges for t in topologies))
    cliques = tuple(c for t in topologies for c in t.cliques)
    return Topology(n, edges, cliques)
