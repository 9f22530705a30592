"""Global semantic reasoning over class prototypes and a memory of past ones.

Each iteration's per-class mean features form a prototype set. The pool
keeps the current set plus the latest ``Z`` historical sets, each tagged with
its storage age in iterations. All prototypes become nodes of one graph whose
edges are cosines damped by ``exp(-|age_i - age_j| / tau)``; fusion is the
plain product ``A @ P`` (the unit diagonal already carries the self term).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, StaleSet
from .lsr import (
    LinearHead,
    LossParts,
    cross_entropy,
    cross_entropy_grad,
    kl_div,
    kl_div_grad,
    segment_cosines,
    weighted_cosine_backward,
)


@dataclass(frozen=True)
class PrototypeSet:
    classes: tuple
    vectors: np.ndarray  # (len(classes), D)
    creation_iteration: int

    def as_dict(self) -> dict:
        return {q: self.vectors[i] for i, q in enumerate(self.classes)}


def compute_prototypes(features, labels, iteration: int) -> PrototypeSet:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels).astype(np.int64)
    if len(features) == 0 or features.size == 0:
        raise ValueError("cannot build prototypes from an empty batch")
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    sums = np.zeros((len(classes), features.shape[1]))
    np.add.at(sums, inverse, features)
    return PrototypeSet(tuple(int(q) for q in classes), sums / counts[:, None], int(iteration))


class MemoryPool:
    """FIFO of prototype sets; index 0 is the current set (age 0).

    Every push ages the stored sets by one iteration and evicts whatever
    exceeds `capacity` historical sets. `tau` defaults to the capacity (1 for
    a history-free pool, where every age is 0 and tau has no effect).
    """

    def __init__(self, capacity: int = 10, tau: float | None = None):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.tau = float((capacity or 1) if tau is None else tau)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        self._entries: deque = deque()

    def __len__(self):
        return len(self._entries)

    @property
    def sets(self) -> list:
        return [s for s, _ in self._entries]

    @property
    def ages(self) -> list:
        return [a for _, a in self._entries]

    @property
    def current(self) -> PrototypeSet:
        return self._entries[0][0]

    def push(self, pset: PrototypeSet) -> "MemoryPool":
        if self._entries and pset.creation_iteration <= max(
            s.creation_iteration for s, _ in self._entries
        ):
            raise StaleSet(
                f"set from iteration {pset.creation_iteration} is not newer than the pool"
            )
        self._entries = deque([(s, a + 1) for s, a in self._entries])
        self._entries.appendleft((pset, 0))
        while len(self._entries) > self.capacity + 1:
            self._entries.pop()
        return self

    def to_json(self) -> dict:
        return {
            "capacity": self.capacity,
            "tau": self.tau,
            "entries": [
                {
                    "creation_iteration": s.creation_iteration,
                    "age": a,
                    "classes": list(s.classes),
                    "vectors": s.vectors.tolist(),
                }
                for s, a in self._entries
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "MemoryPool":
        pool = cls(int(data["capacity"]), float(data["tau"]))
        entries = []
        for e in data["entries"]:
            pset = PrototypeSet(
                tuple(int(q) for q in e["classes"]),
                np.asarray(e["vectors"], dtype=np.float64).reshape(len(e["classes"]), -1),
                int(e["creation_iteration"]),
            )
            entries.append((pset, int(e["age"])))
        ages = [a for _, a in entries]
        if entries and (ages[0] != 0 or any(b <= a for a, b in zip(ages, ages[1:]))):
            raise ValueError("stored ages must start at 0 and strictly increase")
        if len(entries) > pool.capacity + 1:
            raise ValueError("pool state holds more sets than its capacity allows")
        pool._entries = deque(entries)
        return pool


def push_memory(pool: MemoryPool, pset: PrototypeSet) -> MemoryPool:
    return pool.push(pset)


def time_decayed_similarity(p_i, p_j, t_i, t_j, tau: float) -> float:
    if tau <= 0:
        raise ValueError("tau must be positive")
    cos = segment_cosines(np.atleast_2d(p_i), np.atleast_2d(p_j), 1)[0, 0, 0]
    return math.exp(-abs(t_i - t_j) / tau) * float(cos)


@dataclass(frozen=True)
class GlobalGraph:
    adjacency: np.ndarray
    prototypes: np.ndarray  # flattened superset, current set first
    labels: np.ndarray
    ages: np.ndarray
    set_index: np.ndarray  # which pool entry each node came from

    @property
    def current_mask(self) -> np.ndarray:
        return self.set_index == 0


def flatten_pool(pool: MemoryPool, current_vectors=None):
    """Stack every prototype of every set into ``(P_hat, labels, ages, set_index)``.

    `current_vectors` substitutes the current set's vectors (used to keep the
    live, differentiable prototypes in place of their stored copy).
    """
    if len(pool) == 0:
        raise ValueError("memory pool is empty")
    vecs, labels, ages, idx = [], [], [], []
    for i, (pset, age) in enumerate(zip(pool.sets, pool.ages)):
        v = pset.vectors if (i > 0 or current_vectors is None) else np.asarray(current_vectors)
        vecs.append(v)
        labels.extend(pset.classes)
        ages.extend([age] * len(pset.classes))
        idx.extend([i] * len(pset.classes))
    return np.vstack(vecs), np.array(labels, dtype=np.int64), np.array(ages, dtype=np.float64), np.array(idx)


def decay_matrix(ages: np.ndarray, tau: float) -> np.ndarray:
    return np.exp(-np.abs(ages[:, None] - ages[None, :]) / tau)


def build_global_graph(pool: MemoryPool, current_vectors=None) -> GlobalGraph:
    P, labels, ages, idx = flatten_pool(pool, current_vectors)
    A = decay_matrix(ages, pool.tau) * segment_cosines(P, P, 1)[..., 0]
    return GlobalGraph(A, P, labels, ages, idx)


def fuse_global(A, P) -> np.ndarray:
    A = A.adjacency if isinstance(A, GlobalGraph) else np.asarray(A, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[1] != len(P):
        raise ShapeMismatch(f"adjacency {A.shape} does not match {len(P)} prototypes")
    return A @ P


def gsr_loss(o, o_graph, y):
    """Returns ``(LossParts, d_o, d_o_graph)``.

    The classification term scores both raw and fused prototypes.
    """
    cl = cross_entropy(o, y) + cross_entropy(o_graph, y)
    kl = kl_div(o_graph, o)
    dkl_g, dkl_o = kl_div_grad(o_graph, o)
    d_o = cross_entropy_grad(o, y) + dkl_o
    d_graph = cross_entropy_grad(o_graph, y) + dkl_g
    return LossParts(kl, cl, kl + cl), d_o, d_graph


@dataclass
class GsrResult:
    parts: LossParts
    graph: GlobalGraph
    fused: np.ndarray
    grad_current: np.ndarray  # w.r.t. the current set's prototype vectors
    grad_weight: np.ndarray
    grad_bias: np.ndarray

    @property
    def loss(self) -> float:
        return self.parts.total


def gsr_objective(pool: MemoryPool, head: LinearHead, current_vectors=None) -> GsrResult:
    """Forward and backward pass of the global reasoning loss.

    Historical prototypes are constants; only the current set receives
    gradient, including through its similarities to historical nodes.
    """
    graph = build_global_graph(pool, current_vectors)
    P, A = graph.prototypes, graph.adjacency
    fused = A @ P
    o, o_graph = head(P), head(fused)
    parts, d_o, d_og = gsr_loss(o, o_graph, graph.labels)

    dP, dw_o, db_o = head.backward(P, d_o)
    d_fused, dw_g, db_g = head.backward(fused, d_og)
    dP = dP + A.T @ d_fused
    dA = d_fused @ P.T
    decay = decay_matrix(graph.ages, pool.tau)[..., None]
    dx, dy = weighted_cosine_backward(P, P, decay, dA, 1)
    dP = dP + dx + dy
    return GsrResult(parts, graph, fused, dP[graph.current_mask], dw_o + dw_g, db_o + db_g)
