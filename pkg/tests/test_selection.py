from itertools import combinations

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from topoprep.bftm import SimilarityMatrix
from topoprep.errors import CannotBuildError, IncompleteMatrixError, InvalidKError
from topoprep.graph import Topology
from topoprep.selection import (ClusterAssignment, CliquePlan, ccc_heterogeneous, homogeneous_baseline, kmeans_rows,
                                objective_score)


def block_matrix(sizes, within=0.01, cross=1.0, noise=0.0, seed=0):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    same = labels[:, None] == labels[None, :]
    theta = np.where(same, within, cross)
    if noise:
        rng = np.random.default_rng(seed)
        jitter = rng.uniform(0, noise, size=(n, n))
        theta = theta * (1 + np.triu(jitter, 1) + np.triu(jitter, 1).T)
    np.fill_diagonal(theta, 0.0)
    return theta, labels


def assignment_from(labels, k=None):
    labels = np.asarray(labels)
    k = k or int(labels.max()) + 1
    return ClusterAssignment(k, labels, np.zeros((k, 1)))


def same_partition(a, b):
    """Labels agree up to renaming of clusters."""
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


class TestKMeans:
    def test_two_blocks(self):
        theta, truth = block_matrix([4, 4])
        res = kmeans_rows(SimilarityMatrix.from_dense(theta), 2, seed=0)
        assert same_partition(res.labels, truth)

    def test_k1(self):
        theta, _ = block_matrix([3, 2], noise=0.5, seed=1)
        res = kmeans_rows(theta, 1, seed=0)
        assert np.all(res.labels == 0)
        assert np.allclose(res.centroids[0], theta.mean(axis=0))

    def test_k_equals_n(self):
        theta, _ = block_matrix([3, 3], noise=0.5, seed=2)
        res = kmeans_rows(theta, 6, seed=0)
        assert sorted(res.labels.tolist()) == list(range(6))
        assert res.inertia == pytest.approx(0.0, abs=1e-24)

    def test_invalid_k(self):
        theta, _ = block_matrix([2, 2])
        with pytest.raises(InvalidKError):
            kmeans_rows(theta, 5, seed=0)
        with pytest.raises(InvalidKError):
            kmeans_rows(theta, 0, seed=0)

    def test_duplicate_rows_no_empty_cluster(self):
        theta = np.zeros((6, 6))
        res = kmeans_rows(theta, 3, seed=0)
        assert sorted(set(res.labels.tolist())) == [0, 1, 2]

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), k=st.integers(1, 6))
    def test_deterministic_and_monotone(self, seed, k):
        theta, _ = block_matrix([5, 4, 6], noise=3.0, seed=seed)
        a = kmeans_rows(theta, k, seed)
        b = kmeans_rows(theta, k, seed)
        assert np.array_equal(a.labels, b.labels)
        hist = a.inertia_history
        assert all(y <= x + 1e-12 for x, y in zip(hist, hist[1:]))
        assert set(a.labels.tolist()) == set(range(k))


class TestCCC:
    def test_four_by_four(self):
        a = assignment_from(np.repeat(np.arange(4), 6))
        plan, topo = ccc_heterogeneous(a, 4, seed=0)
        assert plan.clique_sizes() == [4, 4, 4, 4]
        assert len(plan.participants) == 16
        assert len(plan.excluded) == 8
        assert topo == plan.topology()

    def test_exhaustion(self):
        a = assignment_from([0] * 5 + [1] * 3)
        plan, _ = ccc_heterogeneous(a, 5, seed=1)
        assert plan.clique_sizes() == [2, 2, 2, 1, 1]
        assert len(plan.participants) == 8

    def test_participant_scale(self):
        theta, truth = block_matrix([120] * 10, noise=0.2, seed=3)
        a = kmeans_rows(theta, 10, seed=3)
        assert same_partition(a.labels, truth)
        plan, _ = ccc_heterogeneous(a, 12, seed=3)
        assert len(plan.participants) == 120
        assert len(plan.participants) == pytest.approx(122, abs=10)

    def test_single_member_cannot_build(self):
        a = assignment_from([0, 1, 1], k=2)
        with pytest.raises(CannotBuildError):
            ccc_heterogeneous(a, 1, seed=0)

    def test_invalid_samples(self):
        with pytest.raises(ValueError):
            ccc_heterogeneous(assignment_from([0, 1]), 0, seed=0)

    @settings(max_examples=40, deadline=None)
    @given(sizes=st.lists(st.integers(1, 8), min_size=2, max_size=6), spc=st.integers(2, 6),
           seed=st.integers(0, 1000))
    def test_diversity(self, sizes, spc, seed):
        assume(min(max(sizes), spc) >= 2)
        labels = np.repeat(np.arange(len(sizes)), sizes)
        plan, _ = ccc_heterogeneous(assignment_from(labels), spc, seed)
        for c in plan.cliques:
            assert len({labels[v] for v in c}) == len(c)
        assert plan.participants | plan.excluded == set(range(len(labels)))
        assert not plan.participants & plan.excluded


class TestHomogeneous:
    def test_exhaustion_order(self):
        labels = np.array([0] * 4 + [1] * 4)
        a = assignment_from(labels)
        hetero, _ = ccc_heterogeneous(a, 4, seed=0)
        homo, _ = homogeneous_baseline(a, hetero)
        assert [sorted({int(labels[v]) for v in c}) for c in homo.cliques] == [[0], [0], [1], [1]]
        assert len(homo.participants) == 8 and len(homo.cliques) == 4
        assert homo.mixed == []

    def test_k1_identical(self):
        a = assignment_from([0] * 6)
        hetero, _ = ccc_heterogeneous(a, 4, seed=2)
        homo, _ = homogeneous_baseline(a, hetero)
        assert homo.cliques == hetero.cliques
        assert homo.participants == hetero.participants

    def test_size_match(self):
        a = assignment_from(np.repeat(np.arange(4), 6))
        hetero, _ = ccc_heterogeneous(a, 4, seed=0)
        homo, _ = homogeneous_baseline(a, hetero)
        assert len(homo.participants) == 16 and len(homo.cliques) == 4
        assert homo.clique_sizes() == hetero.clique_sizes()

    @settings(max_examples=60, deadline=None)
    @given(sizes=st.lists(st.integers(1, 9), min_size=2, max_size=6), spc=st.integers(2, 7),
           seed=st.integers(0, 1000))
    def test_purity_and_parity(self, sizes, spc, seed):
        assume(min(max(sizes), spc) >= 2)
        labels = np.repeat(np.arange(len(sizes)), sizes)
        a = assignment_from(labels)
        hetero, _ = ccc_heterogeneous(a, spc, seed)
        homo, _ = homogeneous_baseline(a, hetero)
        assert abs(len(hetero.participants) - len(homo.participants)) <= 1
        for i, c in enumerate(homo.cliques):
            if i not in homo.mixed:
                assert len({labels[v] for v in c}) == 1
        assert sorted(homo.clique_sizes()) == sorted(hetero.clique_sizes())


class TestObjective:
    def test_zero_matrix(self):
        a = assignment_from(np.repeat(np.arange(3), 3))
        plan, topo = ccc_heterogeneous(a, 3, seed=0)
        assert objective_score(plan, topo, np.zeros((9, 9))) == 0.0

    def test_single_triangle(self):
        plan = CliquePlan([(0, 1, 2)], frozenset({0, 1, 2}), frozenset(), "hetero", 1, [0, 0, 0])
        t = Topology(3, frozenset({(0, 1), (0, 2), (1, 2)}))
        theta = np.ones((3, 3)) - np.eye(3)
        # per node: (1 + 1) / 2 + 1
        expected = 3 * ((1 + 1) / 2 + 1)
        assert objective_score(plan, t, theta) == expected == 6.0
        assert objective_score(plan, t, SimilarityMatrix.from_dense(theta)) == 6.0

    def test_hand_evaluated_ring(self):
        rng = np.random.default_rng(4)
        n = 8
        theta = rng.uniform(0, 2, size=(n, n))
        theta = (theta + theta.T) / 2
        np.fill_diagonal(theta, 0)
        a = assignment_from(np.repeat(np.arange(2), 4))
        plan, topo = ccc_heterogeneous(a, 4, seed=0)
        expected = 0.0
        for v in plan.participants:
            nb = sorted(topo.adjacency[v])
            expected += sum(theta[v, u] for u in nb) / len(nb)
            expected += sum(theta[x, y] for x, y in combinations(nb, 2))
        assert objective_score(plan, topo, theta) == pytest.approx(expected, rel=1e-12)

    def test_missing_entry(self):
        m = SimilarityMatrix(3)
        m.set(0, 1, 0.5)
        plan = CliquePlan([(0, 1, 2)], frozenset({0, 1, 2}), frozenset(), "hetero", 1, [0, 0, 0])
        t = Topology(3, frozenset({(0, 1), (0, 2), (1, 2)}))
        with pytest.raises(IncompleteMatrixError):
            objective_score(plan, t, m)

    def test_hetero_beats_homo_on_blocks(self):
        theta, _ = block_matrix([4, 4])
        a = kmeans_rows(theta, 2, seed=0)
        # default sampling budget ceil(log2 8)
        hetero, ht = ccc_heterogeneous(a, 3, seed=0)
        homo, mt = homogeneous_baseline(a, hetero)
        assert objective_score(hetero, ht, theta) >= objective_score(homo, mt, theta)

    @pytest.mark.parametrize("seed", range(20))
    def test_dominance_property(self, seed):
        rng = np.random.default_rng(seed)
        sizes = rng.integers(3, 9, size=int(rng.integers(3, 7))).tolist()
        ratio = float(rng.uniform(10, 100))
        theta, _ = block_matrix(sizes, within=0.05, cross=0.05 * ratio, noise=0.3, seed=seed)
        a = kmeans_rows(theta, len(sizes), seed)
        spc = int(np.ceil(np.log2(sum(sizes))))
        hetero, ht = ccc_heterogeneous(a, spc, seed)
        homo, mt = homogeneous_baseline(a, hetero)
        assert objective_score(hetero, ht, theta) > objective_score(homo, mt, theta)


def test_plan_json_round_trip():
    a = assignment_from(np.repeat(np.arange(3), 4))
    plan, _ = ccc_heterogeneous(a, 3, seed=5)
    text = plan.to_json()
    back = CliquePlan.from_json(text)
    assert back.cliques == plan.cliques
    assert back.excluded == plan.excluded and back.mode == "hetero"
    assert back.to_json() == text
