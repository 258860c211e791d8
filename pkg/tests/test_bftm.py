import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_matrix
from topoprep.bftm import (MorphConfig, MorphState, SimilarityMatrix, SimilarityTuple, accounting_run, bftm_round,
                           default_degree, encounter_counts, expected_rounds, run_morphing, stats_from_json,
                           stats_to_csv, stats_to_json, total_stats)
from topoprep.errors import AlreadyCompleteError, IncompleteMatrixError, InvalidNodeError
from topoprep.proxy import Proxy


def random_proxies(n, g=4, c=3, seed=0):
    rng = np.random.default_rng(seed)
    return [Proxy(rng.normal(size=(g, c))) for _ in range(n)]


class TestHelpers:
    @pytest.mark.parametrize("n,m", [(2, 1), (3, 2), (64, 6), (1024, 10), (10_000, 14), (2 ** 16, 16)])
    def test_default_degree(self, n, m):
        assert default_degree(n) == m

    @pytest.mark.parametrize("n,r", [(4, 1), (2 ** 16, 16), (10_000, 8)])
    def test_expected_rounds(self, n, r):
        assert expected_rounds(n) == r

    def test_expected_rounds_needs_two(self):
        with pytest.raises(ValueError):
            expected_rounds(1)


class TestSimilarityMatrix:
    def test_set_get_and_fill(self):
        m = SimilarityMatrix(4)
        m.set(2, 1, 0.5)
        assert m.has(1, 2) and m.get(1, 2) == 0.5
        assert m.fill == 1 and list(m.row_fill()) == [0, 1, 1, 0]
        with pytest.raises(ValueError):
            m.set(1, 2, 0.7)
        with pytest.raises(IncompleteMatrixError):
            m.get(0, 3)
        with pytest.raises(InvalidNodeError):
            m.has(0, 4)
        with pytest.raises(ValueError):
            m.set(1, 1, 0.0)

    def test_absorb_and_complete(self):
        m = SimilarityMatrix(3)
        m.absorb([SimilarityTuple(1, 2, 0.3), SimilarityTuple(0, 1, 0.1), SimilarityTuple(0, 2, 0.2)])
        assert m.is_complete()
        assert np.array_equal(m.dense(), [[0, 0.1, 0.2], [0.1, 0, 0.3], [0.2, 0.3, 0]])

    def test_dense_imputes_mean(self):
        m = SimilarityMatrix(3)
        m.set(0, 1, 1.0)
        m.set(0, 2, 3.0)
        d = m.dense(impute=True)
        assert d[1, 2] == d[2, 1] == 2.0
        assert np.isnan(m.dense(impute=False)[1, 2])

    def test_binary_round_trip(self, tmp_path):
        m = SimilarityMatrix(5)
        m.set(0, 3, 0.25)
        m.set(1, 4, 1e-300)
        path = tmp_path / "m.bin"
        m.dump(path)
        blob = path.read_bytes()
        assert blob[:4] == b"BFTM"
        assert len(blob) == 16 + 8 * 10
        back = SimilarityMatrix.load(path)
        assert back.equals(m)
        assert back.to_bytes() == blob

    def test_tuple_wire(self):
        t = SimilarityTuple(3, 9, 0.125)
        assert len(t.to_bytes()) == 24
        assert SimilarityTuple.from_bytes(t.to_bytes()) == t
        with pytest.raises(ValueError):
            SimilarityTuple(4, 2, 0.1)
        with pytest.raises(ValueError):
            SimilarityTuple(1, 2, -0.1)


class TestRound:
    def test_three_nodes_one_round(self):
        proxies = random_proxies(3)
        state = MorphState(3, proxies, MorphConfig(degree=2))
        rr = bftm_round(state)
        assert rr.topology.edges == {(0, 1), (0, 2)}
        assert state.matrix.is_complete()
        assert state.matrix.equals(brute_force_matrix(proxies))
        assert [(t.x, t.y) for t in rr.tuples] == [(0, 1), (0, 2), (1, 2)]
        assert rr.stats.proxy_downloads == 4 and rr.stats.broadcast_tuples == 3

    def test_single_node_is_complete(self):
        res = run_morphing(random_proxies(1), 1, MorphConfig(degree=3))
        assert res.rounds == 0 and res.complete

    def test_round_on_complete_matrix(self):
        state = MorphState(2, None, MorphConfig(degree=1))
        bftm_round(state)
        with pytest.raises(AlreadyCompleteError):
            bftm_round(state)

    def test_indirect_pairs_without_download(self):
        # six nodes, degree 2: after the first round some pairs are known
        # through a shared neighbour although no edge joins them
        proxies = random_proxies(6)
        state = MorphState(6, proxies, MorphConfig(degree=2, seed=3))
        rr = bftm_round(state)
        adj = rr.topology.adjacency
        known = {(int(x), int(y)) for x, y in rr.pairs}
        direct = {e for e in known if e in rr.topology.edges}
        indirect = known - direct
        assert rr.topology.edges <= known
        assert indirect
        for x, y in indirect:
            assert adj[x] & adj[y], f"pair {(x, y)} has no intermediate neighbour"
        assert rr.stats.proxy_downloads == 2 * len(rr.topology.edges)
        for t in rr.tuples:
            assert t.theta == brute_force_matrix(proxies).get(t.x, t.y)

    def test_degree_cap_respected(self):
        state = MorphState(200, None, MorphConfig(degree=5))
        while not state.is_complete():
            rr = bftm_round(state)
            assert max(len(a) for a in rr.topology.adjacency) <= 5


class TestRunMorphing:
    def test_small_n_matches_oracle_bitwise(self):
        proxies = random_proxies(64, seed=11)
        res = run_morphing(proxies, 64, MorphConfig(degree=6))
        assert res.complete
        assert res.matrix.equals(brute_force_matrix(proxies))

    def test_n64_rounds(self):
        res = run_morphing(None, 64, MorphConfig(degree=6))
        assert res.complete
        assert res.rounds <= 3

    @settings(max_examples=15, deadline=None)
    @given(n=st.integers(2, 40), seed=st.integers(0, 1000))
    def test_oracle_equivalence_property(self, n, seed):
        proxies = random_proxies(n, g=2, c=3, seed=seed)
        res = run_morphing(proxies, n, MorphConfig(seed=seed))
        assert res.matrix.equals(brute_force_matrix(proxies))

    def test_early_stop(self):
        res = run_morphing(None, 256, MorphConfig(max_rounds=1))
        assert res.rounds == 1 and not res.complete
        assert res.matrix.fill == res.stats[0].broadcast_tuples

    def test_deterministic(self):
        a = run_morphing(random_proxies(30), 30, MorphConfig(seed=4))
        b = run_morphing(random_proxies(30), 30, MorphConfig(seed=4))
        assert a.matrix.equals(b.matrix)
        assert a.stats == b.stats

    def test_max_rounds_validated(self):
        with pytest.raises(ValueError):
            run_morphing(None, 4, MorphConfig(max_rounds=0))

    @pytest.mark.parametrize("n,seed", [(50, 0), (97, 5), (128, 9)])
    def test_no_redundant_work(self, n, seed):
        state = MorphState(n, random_proxies(n, g=1, c=2), MorphConfig(seed=seed))
        seen = set()
        while not state.is_complete():
            rr = bftm_round(state)
            for x, y in rr.pairs.tolist():
                assert (x, y) not in seen
                seen.add((x, y))
        assert len(seen) == n * (n - 1) // 2

    @pytest.mark.parametrize("n,seed", [(20, 0), (45, 1)])
    def test_cache_monotone_and_views_consistent(self, n, seed):
        state = MorphState(n, None, MorphConfig(seed=seed, track_views=True))
        before = state.nodes()
        while not state.is_complete():
            bftm_round(state)
            after = state.nodes()
            for b, a in zip(before, after):
                assert b.cache <= a.cache
                assert a.missing <= b.missing
                assert not a.cache & a.missing
            for v in range(n):
                assert np.array_equal(state.view(v), state.matrix.known)
            before = after

    def test_stats_serialisation(self):
        res = run_morphing(None, 40, MorphConfig(proxy_bytes=100))
        assert stats_from_json(stats_to_json(res.stats)) == res.stats
        lines = stats_to_csv(res.stats).splitlines()
        assert lines[0] == "round,proxy_downloads,proxy_bytes,broadcast_tuples,broadcast_bytes,matrix_fill"
        assert len(lines) == res.rounds + 1
        fills = [s.matrix_fill for s in res.stats]
        assert fills == sorted(fills)
        for s in res.stats:
            assert s.proxy_bytes == 100 * s.proxy_downloads
            assert s.broadcast_bytes == 24 * s.broadcast_tuples


class TestAccounting:
    def test_two_nodes(self):
        acc = accounting_run(2, 1, proxy_bytes=70_000)
        assert acc.rounds == 1
        assert acc.totals.proxy_downloads == 2
        assert acc.totals.broadcast_tuples == 1

    def test_counting_matches_full_run(self):
        n = 60
        full = run_morphing(random_proxies(n, g=1, c=2), n, MorphConfig(seed=2, proxy_bytes=32))
        count = accounting_run(n, None, proxy_bytes=32, seed=2)
        assert count.per_round == full.stats

    def test_needs_two_nodes(self):
        with pytest.raises(ValueError):
            accounting_run(1, 1, 10)

    def test_n1024_download_bound(self):
        acc = accounting_run(1024, 10, proxy_bytes=1)
        assert acc.totals.proxy_downloads <= 2 * 1024 * math.sqrt(1024)


class TestEncounterCounts:
    def test_complete_gives_n_minus_one(self):
        res = run_morphing(None, 50, MorphConfig())
        for v in range(50):
            series = encounter_counts(res, v)
            assert series[-1] == 49
            assert series == sorted(series)

    def test_first_round_at_least_direct_edges(self):
        res = run_morphing(None, 100, MorphConfig(degree=7, keep_topologies=True))
        g1 = res.topologies[0]
        for v in range(100):
            assert encounter_counts(res, v)[0] >= g1.degree(v)
        assert encounter_counts(res, 0)[0] >= 7

    def test_unknown_node(self):
        res = run_morphing(None, 5, MorphConfig())
        with pytest.raises(InvalidNodeError):
            encounter_counts(res, 5)

    def test_empty_history(self):
        res = run_morphing(None, 1, MorphConfig())
        with pytest.raises(ValueError):
            encounter_counts(res, 0)

    def test_superlinear_growth(self):
        n = 4096
        res = run_morphing(None, n, MorphConfig(degree=12))
        beta = np.array([np.mean([r[v] for v in range(n)]) for r in res.row_fill])
        i = np.arange(1, len(beta) + 1, dtype=float)
        keep = beta < (n - 1) / 2
        x, y = i[keep], beta[keep]
        a = (x ** 2 @ y) / (x ** 2 @ x ** 2)
        r2 = 1 - ((y - a * x ** 2) ** 2).sum() / ((y - y.mean()) ** 2).sum()
        assert r2 > 0.9
        first = encounter_counts(res, 0)
        assert first == sorted(first) and first[-1] == n - 1


def test_total_stats():
    res = run_morphing(None, 30, MorphConfig(proxy_bytes=7))
    tot = total_stats(res.stats)
    assert tot.round == res.rounds
    assert tot.proxy_downloads == sum(s.proxy_downloads for s in res.stats)
    assert tot.matrix_fill == 435 == tot.broadcast_tuples
