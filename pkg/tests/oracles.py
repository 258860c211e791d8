"""Independent reference computations used by the tests."""

from __future__ import annotations

from collections import Counter
from math import comb

import numpy as np
from mpmath import mp, mpf, exp, log

from topoprep.bftm import SimilarityMatrix
from topoprep.proxy import pair_similarity


def brute_force_matrix(proxies) -> SimilarityMatrix:
    n = len(proxies)
    m = SimilarityMatrix(n)
    for x in range(n):
        for y in range(x + 1, n):
            m.set(x, y, pair_similarity(proxies[x], proxies[y]))
    return m


def kl_direct(p_logits, q_logits, dps: int = 50) -> float:
    """Mean per-row KL(softmax(p) || softmax(q)) by direct summation in
    arbitrary precision."""
    mp.dps = dps
    total = mpf(0)
    rows = 0
    for pr, qr in zip(np.atleast_2d(p_logits), np.atleast_2d(q_logits)):
        pe = [exp(mpf(float(v))) for v in pr]
        qe = [exp(mpf(float(v))) for v in qr]
        ps, qs = sum(pe), sum(qe)
        total += sum((a / ps) * log((a / ps) / (b / qs)) for a, b in zip(pe, qe))
        rows += 1
    return float(total / rows)


def degree_counts(n: int, edges) -> list[int]:
    c = Counter()
    for a, b in edges:
        c[a] += 1
        c[b] += 1
    return [c[v] for v in range(n)]


def ring_edge_count(sizes) -> int:
    """Intra-clique edges plus one bridge per clique (K >= 3)."""
    return sum(comb(s, 2) for s in sizes) + len(sizes)


def balanced_chain_sizes(k: int, p: int) -> list[int]:
    """Brute force: of all compositions of k into p positive parts, the
    lexicographically largest with max - min <= 1."""
    best = None

    def rec(left, parts):
        nonlocal best
        if len(parts) == p:
            if left == 0 and max(parts) - min(parts) <= 1:
                if best is None or parts > best:
                    best = list(parts)
            return
        for s in range(1, left + 1):
            rec(left - s, parts + [s])

    rec(k, [])
    return best


def bfs_component(adj: dict[int, set[int]], start: int) -> set[int]:
    seen = {start}
    todo = [start]
    while todo:
        v = todo.pop()
        for u in adj.get(v, ()):
            if u not in seen:
                seen.add(u)
                todo.append(u)
    return seen


def adjacency(edges) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj


def finite_difference_grad(f, w: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(w)
    for i in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[i] += h
        wm[i] -= h
        g[i] = (f(wp) - f(wm)) / (2 * h)
    return g
