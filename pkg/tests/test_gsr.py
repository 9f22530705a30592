import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srcd.errors import ShapeMismatch, StaleSet
from srcd.gradcheck import check_gsr, random_pool
from srcd.gsr import (
    MemoryPool,
    PrototypeSet,
    build_global_graph,
    compute_prototypes,
    fuse_global,
    gsr_loss,
    gsr_objective,
    push_memory,
    time_decayed_similarity,
)
from srcd.lsr import LinearHead, cross_entropy

from conftest import brute_matmul, plain_cos


def one_set(it, vec, cls=0):
    return PrototypeSet((cls,), np.atleast_2d(np.asarray(vec, dtype=float)), it)


class TestPrototypes:
    def test_single_sample(self):
        p = compute_prototypes([[1.0, 2.0, 3.0]], [4], 0)
        assert p.classes == (4,)
        assert np.array_equal(p.vectors, [[1.0, 2.0, 3.0]])

    def test_mean_of_two(self):
        p = compute_prototypes([[0.0, 2.0], [2.0, 0.0]], [1, 1], 3)
        assert np.array_equal(p.vectors, [[1.0, 1.0]])
        assert p.creation_iteration == 3

    def test_group_by_oracle(self, rng):
        X = rng.normal(size=(11, 5))
        y = rng.integers(0, 3, 11)
        groups = defaultdict(list)
        for row, label in zip(X, y):
            groups[int(label)].append(row)
        p = compute_prototypes(X, y, 0).as_dict()
        assert set(p) == set(groups)
        for q, rows in groups.items():
            assert np.allclose(p[q], np.mean(rows, axis=0), atol=1e-14)


class TestMemoryPool:
    def test_push_into_empty(self):
        pool = push_memory(MemoryPool(3), one_set(0, [1.0]))
        assert len(pool) == 1 and pool.ages == [0]

    def test_fifo_eviction(self):
        pool = MemoryPool(2)
        for it in range(4):
            pool.push(one_set(it, [float(it)]))
        assert pool.ages == [0, 1, 2]
        assert [s.creation_iteration for s in pool.sets] == [3, 2, 1]

    def test_stale(self):
        pool = MemoryPool(2).push(one_set(5, [1.0]))
        with pytest.raises(StaleSet):
            pool.push(one_set(5, [1.0]))
        with pytest.raises(StaleSet):
            pool.push(one_set(2, [1.0]))

    def test_tau_defaults_to_capacity(self):
        assert MemoryPool(10).tau == 10.0
        assert MemoryPool(4, tau=2.5).tau == 2.5

    @given(st.integers(0, 6), st.lists(st.integers(1, 3), min_size=1, max_size=25))
    @settings(max_examples=50)
    def test_invariants(self, capacity, gaps):
        pool = MemoryPool(capacity)
        it = 0
        for gap in gaps:
            it += gap
            pool.push(one_set(it, [1.0, 0.0]))
            ages = pool.ages
            assert ages.count(0) == 1 and ages[0] == 0
            assert all(b > a for a, b in zip(ages, ages[1:]))
            assert len(pool) - 1 <= capacity

    def test_json_round_trip(self, rng):
        pool = random_pool(rng, depth=4)
        back = MemoryPool.from_json(pool.to_json())
        assert back.ages == pool.ages and back.tau == pool.tau
        for a, b in zip(back.sets, pool.sets):
            assert a.classes == b.classes and np.array_equal(a.vectors, b.vectors)

    def test_from_json_rejects_bad_ages(self):
        state = {"capacity": 3, "tau": 3.0, "entries": [
            {"creation_iteration": 1, "age": 1, "classes": [0], "vectors": [[1.0]]}]}
        with pytest.raises(ValueError):
            MemoryPool.from_json(state)


class TestTimeDecay:
    def test_same_age_is_cosine(self, rng):
        a, b = rng.normal(size=6), rng.normal(size=6)
        assert time_decayed_similarity(a, b, 3, 3, 10) == pytest.approx(plain_cos(a, b))

    def test_one_temperature_apart(self):
        v = np.array([1.0, 2.0, 3.0])
        assert abs(time_decayed_similarity(v, v, 0, 10, 10) - math.exp(-1)) < 1e-12

    def test_orthogonal(self):
        assert time_decayed_similarity([1.0, 0], [0, 1.0], 0, 7, 10) == 0.0

    def test_zero_vector(self):
        assert time_decayed_similarity([0.0, 0.0], [1.0, 1.0], 0, 0, 1) == 0.0

    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=4),
           st.lists(st.floats(-5, 5), min_size=4, max_size=4),
           st.integers(0, 20), st.integers(0, 20), st.floats(0.5, 20))
    def test_bounded_and_monotone(self, a, b, t1, t2, tau):
        s = time_decayed_similarity(a, b, 0, abs(t1 - t2), tau)
        assert abs(s) <= 1 + 1e-12
        if plain_cos(a, b) >= 0:
            assert time_decayed_similarity(a, b, 0, abs(t1 - t2) + 1, tau) <= s + 1e-15


class TestGlobalGraph:
    def test_single_prototype(self):
        pool = MemoryPool(10).push(one_set(0, [0.5, -1.0]))
        assert np.allclose(build_global_graph(pool).adjacency, [[1.0]])

    def test_two_sets(self):
        pool = MemoryPool(10).push(one_set(0, [1.0, 2.0])).push(one_set(1, [1.0, 2.0]))
        A = build_global_graph(pool).adjacency
        assert np.allclose(A, [[1, math.exp(-0.1)], [math.exp(-0.1), 1]])

    def test_entries_match_pairwise_formula(self, rng):
        pool = random_pool(rng, depth=4)
        g = build_global_graph(pool)
        P = g.prototypes
        for a in range(len(P)):
            for b in range(len(P)):
                ref = time_decayed_similarity(P[a], P[b], g.ages[a], g.ages[b], pool.tau)
                assert g.adjacency[a, b] == pytest.approx(ref, abs=1e-12)

    def test_symmetric_unit_diagonal(self, rng):
        g = build_global_graph(random_pool(rng, depth=6))
        assert np.allclose(g.adjacency, g.adjacency.T)
        assert np.allclose(np.diag(g.adjacency), 1.0)

    def test_node_bookkeeping(self):
        pool = MemoryPool(5)
        pool.push(PrototypeSet((0, 2), np.eye(2, 3), 0))
        pool.push(PrototypeSet((1,), np.ones((1, 3)), 1))
        g = build_global_graph(pool)
        assert g.labels.tolist() == [1, 0, 2]
        assert g.ages.tolist() == [0, 1, 1]
        assert g.current_mask.tolist() == [True, False, False]


class TestGlobalFusion:
    def test_single(self):
        p = np.array([[3.0, 4.0]])
        assert np.allclose(fuse_global(np.array([[1.0]]), p), p)

    def test_two_identical(self):
        p = np.array([0.6, 0.8])
        pool = MemoryPool(3).push(PrototypeSet((0, 1), np.stack([p, p]), 0))
        g = build_global_graph(pool)
        assert np.allclose(fuse_global(g, g.prototypes), [2 * p, 2 * p])

    def test_brute_force(self, rng):
        g = build_global_graph(random_pool(rng, depth=3))
        ref = brute_matmul(g.adjacency, g.prototypes)
        assert np.max(np.abs(fuse_global(g, g.prototypes) - ref)) < 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            fuse_global(np.eye(2), np.ones((3, 2)))


class TestGsrLoss:
    def test_identical_logits(self, rng):
        o = rng.normal(size=(4, 3))
        parts, _, _ = gsr_loss(o, o, [0, 1, 2, 0])
        assert parts.kl == pytest.approx(0.0, abs=1e-15)

    def test_uniform_two_class(self):
        parts, _, _ = gsr_loss(np.zeros((3, 2)), np.zeros((3, 2)), [0, 1, 1])
        assert parts.cl == pytest.approx(2 * math.log(2))

    def test_additive(self, rng):
        pool = random_pool(rng)
        head = LinearHead(rng.normal(size=(3, 16)), rng.normal(size=3))
        res = gsr_objective(pool, head)
        assert res.loss == res.parts.cl + res.parts.kl
        g = res.graph
        o, og = head(g.prototypes), head(res.fused)
        assert res.parts.cl == pytest.approx(cross_entropy(o, g.labels) + cross_entropy(og, g.labels))

    def test_history_is_detached(self, rng):
        pool = random_pool(rng, depth=4)
        head = LinearHead(rng.normal(size=(3, 16)), rng.normal(size=3))
        res = gsr_objective(pool, head)
        assert res.grad_current.shape == pool.current.vectors.shape

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        assert check_gsr(np.random.default_rng(seed)) < 1e-4

    def test_gradients_single_set(self):
        assert check_gsr(np.random.default_rng(42), depth=1) < 1e-4
