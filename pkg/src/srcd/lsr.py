"""Local semantic reasoning over one weak/strong batch of instance features.

Features are flattened vectors split into ``k`` contiguous attribute
segments. Similarity between two instances is a weighted average of
per-segment cosines, the weights belonging to the class of the *row*
instance, so the measure is asymmetric. Weights are estimated from
intra-class segment agreement and smoothed across iterations.

The cross-domain relation graph fuses each feature with its neighbours,
``(A + I) @ V``, and a shared linear head scores both the raw and fused
features. The loss is ``KL(fused || raw) + CE(fused)``, with gradients
propagated through the head, the fusion, and the adjacency itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeights, EmptyDomain, IndivisibleDimension, ShapeMismatch


# ----------------------------------------------------------------------------
# attribute segments and cosines

def split_attributes(v: np.ndarray, k: int) -> np.ndarray:
    """View ``(..., D)`` features as ``(..., k, D // k)`` segments."""
    v = np.asarray(v, dtype=np.float64)
    dim = v.shape[-1]
    if k < 1 or dim % k:
        raise IndivisibleDimension(f"feature length {dim} is not divisible by k={k}")
    return v.reshape(v.shape[:-1] + (k, dim // k))


def _unit_segments(segs):
    # rescale by the largest entry first so tiny segments don't underflow
    peak = np.max(np.abs(segs), axis=-1, keepdims=True)
    live = peak[..., 0] > 0
    scaled = segs / np.where(peak > 0, peak, 1.0)
    snorm = np.linalg.norm(scaled, axis=-1)
    units = np.where(live[..., None], scaled / np.where(live, snorm, 1.0)[..., None], 0.0)
    norms = np.where(live, snorm * peak[..., 0], 0.0)
    safe = np.where(norms > 0, norms, 1.0)
    return units, norms, safe


def segment_cosines(X: np.ndarray, Y: np.ndarray, k: int) -> np.ndarray:
    """``(n_x, n_y, k)`` cosines between segment g of X[i] and of Y[j].

    A zero segment has cosine 0 with everything.
    """
    ux, _, _ = _unit_segments(split_attributes(X, k))
    uy, _, _ = _unit_segments(split_attributes(Y, k))
    return np.einsum("igs,jgs->ijg", ux, uy)


def weighted_cosine_backward(X, Y, pair_weights, grad_sim, k):
    """Gradients of ``S[i, j] = sum_g W[i, j, g] * cos_g(X[i], Y[j])``.

    `pair_weights` broadcasts to ``(n_x, n_y, k)`` and is held constant;
    `grad_sim` is dL/dS. Returns ``(dX, dY)`` in the flat feature layout.
    """
    ux, x_norm, nx = _unit_segments(split_attributes(X, k))
    uy, y_norm, ny = _unit_segments(split_attributes(Y, k))
    cos = np.einsum("igs,jgs->ijg", ux, uy)
    coef = grad_sim[:, :, None] * np.broadcast_to(pair_weights, cos.shape)
    cc = coef * cos
    dux = np.einsum("ijg,jgs->igs", coef, uy) - cc.sum(axis=1)[..., None] * ux
    duy = np.einsum("ijg,igs->jgs", coef, ux) - cc.sum(axis=0)[..., None] * uy
    # a zero segment has unit vector 0, hence no gradient
    dx = np.where((x_norm > 0)[..., None], dux / nx[..., None], 0.0)
    dy = np.where((y_norm > 0)[..., None], duy / ny[..., None], 0.0)
    return dx.reshape(np.shape(X)), dy.reshape(np.shape(Y))


# ----------------------------------------------------------------------------
# class attribute weights

@dataclass
class AttributeWeights:
    """Per-class attribute weights, smoothed by exponential moving average.

    Unseen classes read as all-ones (uniform attributes).
    """

    k: int
    gamma: float = 0.99
    weights: dict = field(default_factory=dict)
    iteration: int = 0

    def for_class(self, label) -> np.ndarray:
        w = self.weights.get(int(label))
        return np.ones(self.k) if w is None else w

    def row_weights(self, labels) -> np.ndarray:
        """Normalized weights, one row per label: ``eps / sum(eps)``."""
        rows = np.array([self.for_class(q) for q in labels], dtype=np.float64).reshape(-1, self.k)
        totals = rows.sum(axis=1)
        if np.any(totals == 0):
            bad = [int(q) for q, t in zip(labels, totals) if t == 0]
            raise DegenerateWeights(f"attribute weights sum to zero for classes {sorted(set(bad))}")
        return rows / totals[:, None]

    def copy(self) -> "AttributeWeights":
        return AttributeWeights(self.k, self.gamma,
                                {q: w.copy() for q, w in self.weights.items()},
                                self.iteration)


def weighted_similarity(v_i, label_i, v_j, weights: AttributeWeights) -> float:
    """Class-weighted segment cosine of `v_i` against `v_j`."""
    wn = weights.row_weights([label_i])[0]
    cos = segment_cosines(np.atleast_2d(v_i), np.atleast_2d(v_j), weights.k)[0, 0]
    return float(wn @ cos)


def estimate_attribute_weights(features, labels, k: int) -> dict:
    """Mean pairwise segment cosine within each class.

    Averaged over the ordered pairs i != j, so every observation lies in
    [-1, 1]. Classes with fewer than two members are skipped.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    obs = {}
    for q in np.unique(labels):
        members = features[labels == q]
        n = len(members)
        if n < 2:
            continue
        cos = segment_cosines(members, members, k)
        off_diag = cos.sum(axis=(0, 1)) - np.einsum("iig->g", cos)
        obs[int(q)] = off_diag / (n * (n - 1))
    return obs


def ema_update(store: AttributeWeights, obs: dict) -> AttributeWeights:
    """``eps_t = (1 - gamma) * eps_{t-1} + gamma * eps_obs`` for observed classes.

    Note the weighting: with gamma = 0.99 the fresh observation dominates.
    """
    out = store.copy()
    for q, w in obs.items():
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (store.k,):
            raise ShapeMismatch(f"observation for class {q} has shape {w.shape}, expected ({store.k},)")
        out.weights[int(q)] = (1.0 - store.gamma) * store.for_class(q) + store.gamma * w
    out.iteration += 1
    return out


# ----------------------------------------------------------------------------
# relation graph and fusion

@dataclass(frozen=True)
class RelationGraph:
    adjacency: np.ndarray
    m: int
    n: int


def similarity_block(X, x_labels, Y, weights: AttributeWeights) -> np.ndarray:
    wn = weights.row_weights(x_labels)
    return np.einsum("ig,ijg->ij", wn, segment_cosines(X, Y, weights.k))


def build_local_graph(V1, y1, V2, y2, weights: AttributeWeights) -> RelationGraph:
    V1 = np.atleast_2d(np.asarray(V1, dtype=np.float64))
    V2 = np.atleast_2d(np.asarray(V2, dtype=np.float64))
    m, n = len(V1), len(V2)
    if m == 0 or n == 0 or V1.size == 0 or V2.size == 0:
        raise EmptyDomain("both domains need at least one instance")
    A = np.zeros((m + n, m + n))
    A[:m, m:] = similarity_block(V1, y1, V2, weights)
    A[m:, :m] = similarity_block(V2, y2, V1, weights)
    return RelationGraph(A, m, n)


def fuse_local(A, V, row_normalize: bool = False) -> np.ndarray:
    """``(A + I) @ V``.

    With `row_normalize`, each row of A is first divided by the sum of its
    absolute values (rows summing to zero are left as is). Off by default;
    the training loss always uses the raw adjacency.
    """
    A = A.adjacency if isinstance(A, RelationGraph) else np.asarray(A, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != len(V):
        raise ShapeMismatch(f"adjacency {A.shape} does not match {len(V)} feature rows")
    if row_normalize:
        scale = np.abs(A).sum(axis=1, keepdims=True)
        A = A / np.where(scale > 0, scale, 1.0)
    return A @ V + V


# ----------------------------------------------------------------------------
# classification losses

def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def kl_div(p_logits, q_logits) -> float:
    """Mean over rows of ``KL(softmax(p) || softmax(q))``."""
    lp, lq = log_softmax(p_logits), log_softmax(q_logits)
    return float(np.mean(np.sum(np.exp(lp) * (lp - lq), axis=-1)))


def kl_div_grad(p_logits, q_logits):
    """Gradients of `kl_div` with respect to both logit arrays."""
    lp, lq = log_softmax(p_logits), log_softmax(q_logits)
    p, q = np.exp(lp), np.exp(lq)
    n = lp.shape[0]
    diff = lp - lq
    row_kl = np.sum(p * diff, axis=-1, keepdims=True)
    return p * (diff - row_kl) / n, (q - p) / n


def cross_entropy(logits, y) -> float:
    """Mean negative log-likelihood of integer labels `y`."""
    lp = log_softmax(np.atleast_2d(logits))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    return float(-np.mean(lp[np.arange(len(y)), y]))


def cross_entropy_grad(logits, y) -> np.ndarray:
    p = softmax(np.atleast_2d(logits))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    p[np.arange(len(y)), y] -= 1.0
    return p / len(y)


@dataclass
class LinearHead:
    """Shared classifier: ``logits = V @ weight.T + bias``."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def init(cls, num_classes, dim, rng, scale=0.01):
        return cls(rng.normal(0.0, scale, (num_classes, dim)), np.zeros(num_classes))

    def __call__(self, V):
        return np.asarray(V) @ self.weight.T + self.bias

    def backward(self, V, grad_logits):
        """Return ``(dV, dweight, dbias)``."""
        return grad_logits @ self.weight, grad_logits.T @ V, grad_logits.sum(axis=0)


@dataclass(frozen=True)
class LossParts:
    kl: float
    cl: float
    total: float


def lsr_loss(o_graph, o, y):
    """Loss terms on precomputed logits and their logit gradients.

    Returns ``(LossParts, d_o_graph, d_o)``.
    """
    kl = kl_div(o_graph, o)
    cl = cross_entropy(o_graph, y)
    dkl_g, dkl_o = kl_div_grad(o_graph, o)
    d_graph = dkl_g + cross_entropy_grad(o_graph, y)
    return LossParts(kl, cl, kl + cl), d_graph, dkl_o


@dataclass
class LsrResult:
    parts: LossParts
    graph: RelationGraph
    fused: np.ndarray
    grad_features: np.ndarray  # rows of V1 then V2
    grad_weight: np.ndarray
    grad_bias: np.ndarray

    @property
    def loss(self) -> float:
        return self.parts.total


def lsr_objective(V1, y1, V2, y2, weights: AttributeWeights, head: LinearHead) -> LsrResult:
    """Forward and backward pass of the local reasoning loss.

    Attribute weights are treated as constants; gradients do flow through
    the cosine similarities that populate the adjacency.
    """
    graph = build_local_graph(V1, y1, V2, y2, weights)
    V1 = np.atleast_2d(np.asarray(V1, dtype=np.float64))
    V2 = np.atleast_2d(np.asarray(V2, dtype=np.float64))
    m = graph.m
    V = np.vstack([V1, V2])
    y = np.concatenate([np.atleast_1d(y1), np.atleast_1d(y2)]).astype(np.int64)
    fused = fuse_local(graph.adjacency, V)

    o, o_graph = head(V), head(fused)
    parts, d_og, d_o = lsr_loss(o_graph, o, y)

    d_fused, dw_g, db_g = head.backward(fused, d_og)
    dV, dw_o, db_o = head.backward(V, d_o)
    dV = dV + fused_backward(graph.adjacency, d_fused)

    dA = d_fused @ V.T
    wn1 = weights.row_weights(y[:m])[:, None, :]
    wn2 = weights.row_weights(y[m:])[:, None, :]
    dx, dy = weighted_cosine_backward(V1, V2, wn1, dA[:m, m:], weights.k)
    dV[:m] += dx
    dV[m:] += dy
    dx, dy = weighted_cosine_backward(V2, V1, wn2, dA[m:, :m], weights.k)
    dV[m:] += dx
    dV[:m] += dy
    return LsrResult(parts, graph, fused, dV, dw_g + dw_o, db_g + db_o)


def fused_backward(A, d_fused):
    """dL/dV through ``(A + I) @ V`` at fixed A."""
    return A.T @ d_fused + d_fused
