"""Breadth-first topology morphing.

Every round the pool of unfinished nodes is swept breadth first. A dequeued
node links to up to ``degree`` peers it has no similarity for yet, both
endpoints exchange proxies, and the node computes every still-unknown pair
among ``{itself} + cache`` x ``new neighbours`` and among the new neighbours
themselves. Each node's new tuples are broadcast as soon as it finishes, so
nodes dequeued later in the round already see them. Caches absorb the new
neighbours at the end of the round.

With ``proxies=None`` the same protocol runs in counting mode: only the
pair-known mask is tracked, similarities are never evaluated, and the
statistics (downloads, tuples, bytes) are identical to a full run.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AlreadyCompleteError, IncompleteMatrixError, InvalidNodeError
from .graph import Topology
from .proxy import Proxy, pair_similarity
from .seeds import rng_for

TUPLE_BYTES = 24
MATRIX_MAGIC = b"BFTM"
MATRIX_VERSION = 1
_TUPLE_WIRE = struct.Struct("<qqd")
_HEADER = struct.Struct("<4sIQ")

STATS_FIELDS = ("round", "proxy_downloads", "proxy_bytes", "broadcast_tuples", "broadcast_bytes", "matrix_fill")


def default_degree(n: int) -> int:
    """Per-round degree cap ``ceil(log2 n)`` (at least 1)."""
    return max(1, math.ceil(math.log2(n))) if n > 1 else 1


def expected_rounds(n: int) -> int:
    """Idealised round count ``ceil(sqrt(n) / log2(n))``."""
    if n < 2:
        raise ValueError("expected_rounds needs n >= 2")
    return math.ceil(math.sqrt(n) / math.log2(n))


@dataclass(frozen=True)
class SimilarityTuple:
    x: int
    y: int
    theta: float

    def __post_init__(self):
        if not self.x < self.y:
            raise ValueError(f"tuple ids must be canonical (x < y), got ({self.x}, {self.y})")
        if not (self.theta >= 0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be finite and >= 0, got {self.theta}")

    def to_bytes(self) -> bytes:
        return _TUPLE_WIRE.pack(self.x, self.y, self.theta)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SimilarityTuple":
        return cls(*_TUPLE_WIRE.unpack(blob))


class SimilarityMatrix:
    """Pairwise divergence table with fill tracking.

    ``store_values=False`` keeps only the known-pair mask (counting mode).
    """

    def __init__(self, n: int, store_values: bool = True):
        self.n = int(n)
        self._known = np.zeros((self.n, self.n), dtype=bool)
        self._values = np.full((self.n, self.n), np.nan) if store_values else None

    @property
    def stores_values(self) -> bool:
        return self._values is not None

    @property
    def known(self) -> np.ndarray:
        view = self._known.view()
        view.flags.writeable = False
        return view

    def _check(self, x: int, y: int):
        if not (0 <= x < self.n and 0 <= y < self.n):
            raise InvalidNodeError(f"pair ({x}, {y}) outside [0, {self.n})")
        if x == y:
            raise ValueError("the matrix has no diagonal entries")

    def has(self, x: int, y: int) -> bool:
        self._check(x, y)
        return bool(self._known[x, y])

    def get(self, x: int, y: int) -> float:
        self._check(x, y)
        if not self._known[x, y]:
            raise IncompleteMatrixError(f"no similarity for pair ({x}, {y})")
        if self._values is None:
            return 0.0
        return float(self._values[x, y])

    def set(self, x: int, y: int, theta: float):
        self._check(x, y)
        if self._known[x, y]:
            raise ValueError(f"pair ({x}, {y}) already has a value")
        self._known[x, y] = self._known[y, x] = True
        if self._values is not None:
            self._values[x, y] = self._values[y, x] = theta

    def absorb(self, tuples: Sequence[SimilarityTuple]):
        for t in sorted(tuples, key=lambda t: (t.x, t.y)):
            self.set(t.x, t.y, t.theta)

    def row_fill(self) -> np.ndarray:
        return self._known.sum(axis=1)

    @property
    def fill(self) -> int:
        return int(self._known.sum()) // 2

    @property
    def capacity(self) -> int:
        return self.n * (self.n - 1) // 2

    def is_complete(self) -> bool:
        return self.fill == self.capacity

    def dense(self, impute: bool = True) -> np.ndarray:
        """Rows ``theta[v, :]`` with a zero diagonal.

        Unknown off-diagonal entries become the mean of the known ones (0 if
        nothing is known) when ``impute`` is set, else NaN.
        """
        if self._values is None:
            raise IncompleteMatrixError("counting-mode matrix holds no values")
        out = self._values.copy()
        if impute and not self.is_complete():
            off = ~np.eye(self.n, dtype=bool)
            known = self._known & off
            mean = float(out[known].mean()) if known.any() else 0.0
            out[off & ~known] = mean
        np.fill_diagonal(out, 0.0)
        return out

    def pairs(self) -> np.ndarray:
        """Canonical pair order: row-major over ``x < y``."""
        return np.stack(np.triu_indices(self.n, 1), axis=1)

    def to_bytes(self) -> bytes:
        iu = np.triu_indices(self.n, 1)
        if self._values is None:
            body = np.where(self._known[iu], 0.0, np.nan)
        else:
            body = np.where(self._known[iu], self._values[iu], np.nan)
        return _HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, self.n) + body.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SimilarityMatrix":
        magic, version, n = _HEADER.unpack_from(blob)
        if magic != MATRIX_MAGIC or version != MATRIX_VERSION:
            raise ValueError("not a BFTM matrix dump")
        body = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size, count=n * (n - 1) // 2)
        m = cls(n)
        iu = np.triu_indices(n, 1)
        known = ~np.isnan(body)
        m._known[iu] = known
        m._known.T[iu] = known
        m._values[iu] = body
        m._values.T[iu] = body
        return m

    def dump(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SimilarityMatrix":
        return cls.from_bytes(Path(path).read_bytes())

    @classmethod
    def from_dense(cls, values: np.ndarray) -> "SimilarityMatrix":
        values = np.asarray(values, dtype=np.float64)
        m = cls(values.shape[0])
        off = ~np.eye(m.n, dtype=bool)
        m._known[off] = True
        m._values[off] = values[off]
        return m

    def equals(self, other: "SimilarityMatrix") -> bool:
        """Bitwise equality of the known mask and every known value."""
        if self.n != other.n or not np.array_equal(self._known, other._known):
            return False
        if self._values is None or other._values is None:
            return self._values is None and other._values is None
        a = self._values[self._known].view(np.uint64)
        b = other._values[other._known].view(np.uint64)
        return np.array_equal(a, b)


@dataclass
class RoundStats:
    round: int
    proxy_downloads: int = 0
    proxy_bytes: int = 0
    broadcast_tuples: int = 0
    broadcast_bytes: int = 0
    matrix_fill: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def total_stats(history: Sequence[RoundStats]) -> RoundStats:
    """Aggregate of a run: ``round`` is the round count, fill the final fill."""
    return RoundStats(
        round=len(history),
        proxy_downloads=sum(s.proxy_downloads for s in history),
        proxy_bytes=sum(s.proxy_bytes for s in history),
        broadcast_tuples=sum(s.broadcast_tuples for s in history),
        broadcast_bytes=sum(s.broadcast_bytes for s in history),
        matrix_fill=history[-1].matrix_fill if history else 0,
    )


def stats_to_csv(history: Sequence[RoundStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_FIELDS)
    for s in history:
        w.writerow([getattr(s, f) for f in STATS_FIELDS])
    return buf.getvalue()


def stats_to_json(history: Sequence[RoundStats]) -> str:
    return json.dumps([s.to_dict() for s in history], indent=1, sort_keys=True)


def stats_from_json(text: str) -> list[RoundStats]:
    return [RoundStats(**d) for d in json.loads(text)]


@dataclass(frozen=True)
class MorphConfig:
    degree: int | None = None
    max_rounds: int = 1000
    seed: int = 0
    proxy_bytes: int | None = None
    tuple_bytes: int = TUPLE_BYTES
    track_views: bool = False
    keep_topologies: bool = False


@dataclass(frozen=True)
class MorphNodeState:
    id: int
    proxy: Proxy | None
    cache: frozenset[int]
    missing: frozenset[int]


class RoundResult(NamedTuple):
    topology: Topology
    pairs: np.ndarray | None
    thetas: np.ndarray | None
    stats: RoundStats

    @property
    def tuples(self) -> list[SimilarityTuple]:
        if self.pairs is None:
            return []
        return [SimilarityTuple(int(x), int(y), float(t)) for (x, y), t in zip(self.pairs, self.thetas)]


class MorphState:
    """Protocol state for every node.

    The similarity matrix is replicated losslessly, so one shared copy stands
    in for all local views unless ``track_views`` asks for per-node copies.
    """

    MAX_TRACKED_VIEWS = 256

    def __init__(self, n: int, proxies: Sequence[Proxy] | None = None, config: MorphConfig = MorphConfig()):
        if n < 1:
            raise ValueError("need at least one node")
        if proxies is not None and len(proxies) != n:
            raise ValueError(f"got {len(proxies)} proxies for {n} nodes")
        self.n = n
        self.config = config
        self.proxies = list(proxies) if proxies is not None else None
        self.degree = config.degree or default_degree(n)
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        self.matrix = SimilarityMatrix(n, store_values=proxies is not None)
        self.cache = np.zeros((n, n), dtype=bool)
        self.pool = np.ones(n, dtype=bool) if n > 1 else np.zeros(n, dtype=bool)
        self.rounds_done = 0
        if config.track_views:
            if n > self.MAX_TRACKED_VIEWS:
                raise ValueError(f"per-node views are limited to n <= {self.MAX_TRACKED_VIEWS}")
            self.views = np.zeros((n, n, n), dtype=bool)
        else:
            self.views = None
        if config.proxy_bytes is not None:
            self.proxy_bytes = int(config.proxy_bytes)
        elif self.proxies:
            self.proxy_bytes = self.proxies[0].nbytes()
        else:
            self.proxy_bytes = 0

    def view(self, v: int) -> np.ndarray:
        return self.views[v] if self.views is not None else self.matrix._known

    def node(self, v: int) -> MorphNodeState:
        if not 0 <= v < self.n:
            raise InvalidNodeError(f"node {v} outside [0, {self.n})")
        missing = ~self.view(v)[v]
        missing[v] = False
        return MorphNodeState(
            id=v,
            proxy=self.proxies[v] if self.proxies else None,
            cache=frozenset(np.flatnonzero(self.cache[v]).tolist()),
            missing=frozenset(np.flatnonzero(missing).tolist()),
        )

    def nodes(self) -> list[MorphNodeState]:
        return [self.node(v) for v in range(self.n)]

    def is_complete(self) -> bool:
        return self.matrix.is_complete()

    def _theta(self, x: int, y: int) -> float:
        return pair_similarity(self.proxies[x], self.proxies[y])


def bftm_round(state: MorphState, seed: int | None = None) -> RoundResult:
    """Run one morphing round in place and return its graph, tuples and stats."""
    if state.is_complete():
        raise AlreadyCompleteError("similarity matrix is already complete")
    n, cap = state.n, state.degree
    rnd = state.rounds_done + 1
    rng = rng_for(state.config.seed if seed is None else seed, rnd)
    known = state.matrix._known
    values = state.proxies is not None

    deg = np.zeros(n, dtype=np.int64)
    linked: list[list[int]] = [[] for _ in range(n)]
    enqueued = np.zeros(n, dtype=bool)
    starts = iter(np.flatnonzero(state.pool).tolist())
    queue: deque[int] = deque()
    edges: list[tuple[int, int]] = []
    new_pairs: list[np.ndarray] = []
    tuple_count = 0

    while True:
        if not queue:
            v = next((s for s in starts if not enqueued[s]), None)
            if v is None:
                break
            enqueued[v] = True
            queue.append(v)
        v = queue.popleft()

        picks: list[int] = []
        quota = cap - deg[v]
        if quota > 0:
            cand = ~state.view(v)[v] & (deg < cap)
            cand[v] = False
            ids = np.flatnonzero(cand)
            if ids.size > quota:
                ids = np.sort(rng.choice(ids, size=quota, replace=False))
            picks = ids.tolist()
            for x in picks:
                linked[v].append(x)
                linked[x].append(v)
                edges.append((v, x) if v < x else (x, v))
            deg[v] += len(picks)
            deg[picks] += 1

        if linked[v]:
            fresh = np.asarray(linked[v], dtype=np.int64)
            held = np.concatenate(([v], np.flatnonzero(state.cache[v])))
            ia, ib = np.nonzero(~known[np.ix_(held, fresh)])
            xs, ys = held[ia], fresh[ib]
            iu, ju = np.nonzero(np.triu(~known[np.ix_(fresh, fresh)], 1))
            xs = np.concatenate((xs, fresh[iu]))
            ys = np.concatenate((ys, fresh[ju]))
            if xs.size:
                known[xs, ys] = True
                known[ys, xs] = True
                tuple_count += xs.size
                if values or state.views is not None:
                    delta = np.stack((np.minimum(xs, ys), np.maximum(xs, ys)), axis=1)
                    new_pairs.append(delta)
                    if state.views is not None:
                        # this node's broadcast reaches every replica
                        state.views[:, delta[:, 0], delta[:, 1]] = True
                        state.views[:, delta[:, 1], delta[:, 0]] = True

        for x in picks:
            if not enqueued[x]:
                enqueued[x] = True
                queue.append(x)

    for v in range(n):
        if linked[v]:
            state.cache[v, linked[v]] = True

    pairs = thetas = None
    if values:
        pairs = np.concatenate(new_pairs) if new_pairs else np.empty((0, 2), dtype=np.int64)
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        thetas = np.array([state._theta(int(x), int(y)) for x, y in pairs], dtype=np.float64)
        state.matrix._values[pairs[:, 0], pairs[:, 1]] = thetas
        state.matrix._values[pairs[:, 1], pairs[:, 0]] = thetas

    state.pool = state.matrix.row_fill() < n - 1
    state.rounds_done = rnd
    downloads = 2 * len(edges)
    stats = RoundStats(
        round=rnd,
        proxy_downloads=downloads,
        proxy_bytes=downloads * state.proxy_bytes,
        broadcast_tuples=tuple_count,
        broadcast_bytes=tuple_count * state.config.tuple_bytes,
        matrix_fill=state.matrix.fill,
    )
    return RoundResult(Topology(n, frozenset(edges)), pairs, thetas, stats)


@dataclass
class MorphResult:
    matrix: SimilarityMatrix
    stats: list[RoundStats]
    row_fill: list[np.ndarray] = field(default_factory=list)
    topologies: list[Topology] = field(default_factory=list)
    state: MorphState | None = None

    @property
    def rounds(self) -> int:
        return len(self.stats)

    @property
    def complete(self) -> bool:
        return self.matrix.is_complete()


def run_morphing(proxies: Sequence[Proxy] | None, n: int, config: MorphConfig = MorphConfig()) -> MorphResult:
    """Repeat ``bftm_round`` until the matrix is full or ``max_rounds`` ran."""
    if config.max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    state = MorphState(n, proxies, config)
    result = MorphResult(state.matrix, [], state=state)
    while not state.is_complete() and state.rounds_done < config.max_rounds:
        rr = bftm_round(state)
        result.stats.append(rr.stats)
        result.row_fill.append(state.matrix.row_fill())
        if config.keep_topologies:
            result.topologies.append(rr.topology)
    return result


class AccountingResult(NamedTuple):
    rounds: int
    totals: RoundStats
    per_round: list[RoundStats]


def accounting_run(n: int, m: int | None, proxy_bytes: int, tuple_bytes: int = TUPLE_BYTES,
                   seed: int = 0, max_rounds: int = 1000) -> AccountingResult:
    """Counting-only run: message counts and byte totals, no similarity values."""
    if n < 2:
        raise ValueError("accounting needs n >= 2")
    cfg = MorphConfig(degree=m, max_rounds=max_rounds, seed=seed, proxy_bytes=proxy_bytes, tuple_bytes=tuple_bytes)
    res = run_morphing(None, n, cfg)
    return AccountingResult(res.rounds, total_stats(res.stats), res.stats)


def encounter_counts(history: MorphResult, node: int) -> list[int]:
    """Peers with a known similarity to ``node`` after each round."""
    if not history.row_fill:
        raise ValueError("empty morphing history")
    n = history.matrix.n
    if not 0 <= node < n:
        raise InvalidNodeError(f"node {node} outside [0, {n})")
    return [int(r[node]) for r in history.row_fill]
