"""Peer selection: cluster similarity rows, then build rings of cliques."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .bftm import SimilarityMatrix
from .errors import CannotBuildError, IncompleteMatrixError, InvalidKError, InvalidPlanError
from .graph import Clique, Topology, neighbors, ring_of_cliques
from .seeds import rng_for

KMEANS_TOL = 1e-6
KMEANS_MAX_ITER = 100


@dataclass
class ClusterAssignment:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1] if self.inertia_history else 0.0

    def members(self, c: int) -> list[int]:
        return np.flatnonzero(self.labels == c).tolist()


def _rows(matrix) -> np.ndarray:
    if isinstance(matrix, SimilarityMatrix):
        return matrix.dense(impute=True)
    return np.asarray(matrix, dtype=np.float64)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # every remaining point duplicates a centre; fall back to uniform
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def kmeans_rows(matrix, k: int, seed: int) -> ClusterAssignment:
    """Lloyd's k-means over the similarity rows, seeded with k-means++.

    Stops when no centroid moves more than 1e-6 or after 100 iterations.
    An empty cluster takes the point farthest from its own centroid.
    """
    x = _rows(matrix)
    n = len(x)
    if k < 1 or k > n:
        raise InvalidKError(f"k={k} must satisfy 1 <= k <= n={n}")
    rng = rng_for(seed)
    centroids = _kmeans_pp(x, k, rng)
    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        d2 = _sq_dists(x, centroids)
        labels = d2.argmin(axis=1)
        own = d2[np.arange(n), labels]
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            donors = counts[labels] > 1
            far = int(np.argmax(np.where(donors, own, -1.0)))
            counts[labels[far]] -= 1
            labels[far] = j
            counts[j] = 1
            centroids[j] = x[far]
            own[far] = 0.0
        history.append(float(own.sum()))
        updated = np.stack([x[labels == j].mean(axis=0) for j in range(k)])
        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if shift < KMEANS_TOL:
            break
    return ClusterAssignment(k, labels, centroids, history)


@dataclass
class CliquePlan:
    cliques: list[Clique]
    participants: frozenset[int]
    excluded: frozenset[int]
    mode: str
    k: int
    labels: list[int]
    mixed: list[int] = field(default_factory=list)

    def __post_init__(self):
        members = {v for c in self.cliques for v in c}
        if members != set(self.participants):
            raise InvalidPlanError("participants must equal the union of clique members")
        if self.participants & self.excluded:
            raise InvalidPlanError("a node cannot be both participant and excluded")

    def clique_sizes(self) -> list[int]:
        return [len(c) for c in self.cliques]

    def to_json(self) -> str:
        doc = {
            "k": self.k,
            "labels": [int(v) for v in self.labels],
            "cliques": [[int(v) for v in c] for c in self.cliques],
            "excluded": sorted(int(v) for v in self.excluded),
            "mode": self.mode,
            "mixed": list(self.mixed),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CliquePlan":
        doc = json.loads(text)
        cliques = [tuple(c) for c in doc["cliques"]]
        return cls(
            cliques=cliques,
            participants=frozenset(v for c in cliques for v in c),
            excluded=frozenset(doc["excluded"]),
            mode=doc["mode"],
            k=int(doc["k"]),
            labels=list(doc["labels"]),
            mixed=list(doc.get("mixed", [])),
        )

    def topology(self) -> Topology:
        return ring_of_cliques(self.cliques, n=len(self.labels))


def _finish(cliques: list[Clique], assignment: ClusterAssignment, mode: str, mixed=()) -> tuple[CliquePlan, Topology]:
    if len(cliques) < 2:
        raise CannotBuildError(f"only {len(cliques)} clique(s); a ring needs at least 2")
    participants = frozenset(v for c in cliques for v in c)
    plan = CliquePlan(
        cliques=cliques,
        participants=participants,
        excluded=frozenset(range(assignment.n)) - participants,
        mode=mode,
        k=assignment.k,
        labels=[int(v) for v in assignment.labels],
        mixed=list(mixed),
    )
    return plan, plan.topology()


def ccc_heterogeneous(assignment: ClusterAssignment, samples_per_cluster: int, seed: int) -> tuple[CliquePlan, Topology]:
    """Cross-cluster cliquing.

    Draws up to ``samples_per_cluster`` nodes from every cluster; clique
    ``j`` holds the ``j``-th draw of each cluster that still has one.
    """
    if samples_per_cluster < 1:
        raise ValueError("samples_per_cluster must be >= 1")
    rng = rng_for(seed)
    draws = []
    for c in range(assignment.k):
        members = assignment.members(c)
        take = min(samples_per_cluster, len(members))
        draws.append(rng.choice(members, size=take, replace=False).tolist() if take else [])
    if sum(1 for d in draws if d) < 1:
        raise CannotBuildError("no cluster has members")
    depth = max(len(d) for d in draws)
    cliques = [tuple(d[j] for d in draws if len(d) > j) for j in range(depth)]
    return _finish(cliques, assignment, "hetero")


def homogeneous_baseline(assignment: ClusterAssignment, plan: CliquePlan) -> tuple[CliquePlan, Topology]:
    """Same participants and clique sizes, but each clique from one cluster.

    Clusters are consumed in label order; a clique comes from the current
    cluster if it can hold it, else from the next cluster (round robin)
    that can. When no single cluster can fill a clique it is topped up
    across clusters and flagged in ``mixed``. Members keep the order in
    which the heterogeneous plan drew them.
    """
    labels = assignment.labels
    pools: list[list[int]] = [[] for _ in range(assignment.k)]
    for clique in plan.cliques:
        for v in clique:
            pools[int(labels[v])].append(v)
    k = assignment.k
    cur = 0
    cliques: list[Clique] = []
    mixed: list[int] = []
    for idx, size in enumerate(plan.clique_sizes()):
        order = [(cur + i) % k for i in range(k)]
        src = next((c for c in order if len(pools[c]) >= size), None)
        if src is not None:
            clique = pools[src][:size]
            del pools[src][:size]
            cur = src
        else:
            clique = []
            for c in order:
                take = pools[c][: size - len(clique)]
                del pools[c][: len(take)]
                clique.extend(take)
                if len(clique) == size:
                    break
            mixed.append(idx)
        cliques.append(tuple(clique))
    return _finish(cliques, assignment, "homo", mixed)


def _theta(matrix, x: int, y: int) -> float:
    if isinstance(matrix, SimilarityMatrix):
        return matrix.get(x, y)
    value = float(matrix[x, y])
    if np.isnan(value):
        raise IncompleteMatrixError(f"no similarity for pair ({x}, {y})")
    return value


def objective_score(plan: CliquePlan, t: Topology, matrix) -> float:
    """Sum over participants of the mean divergence to neighbours plus the
    total divergence among neighbour pairs."""
    total = 0.0
    for v in sorted(plan.participants):
        nb = sorted(neighbors(t, v))
        if not nb:
            continue
        total += sum(_theta(matrix, v, u) for u in nb) / len(nb)
        total += sum(_theta(matrix, a, b) for a, b in combinations(nb, 2))
    return total

