"""Central-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np


def numerical_grad(loss_fn, params, index, step=1e-5):
    """Central differences of ``loss_fn(params)`` w.r.t. ``params[index]``.

    The array is perturbed in place and restored afterwards.
    """
    x = params[index]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        hi = loss_fn(params)
        x[i] = orig - step
        lo = loss_fn(params)
        x[i] = orig
        grad[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-6) -> float:
    """Worst elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries that are zero up to rounding from dominating.
    """
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def gradcheck(loss_fn, params, analytic, step=1e-5, floor=1e-6) -> float:
    """Worst relative error across all parameters.

    `params` is a list of float arrays that `loss_fn(params)` reads;
    `analytic` holds the matching gradients.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    worst = 0.0
    for i, grad in enumerate(analytic):
        num = numerical_grad(loss_fn, params, i, step)
        worst = max(worst, relative_error(grad, num, floor))
    return worst


# ----------------------------------------------------------------------------
# ready-made checks for the two reasoning losses

def random_lsr_instance(rng, m=4, n=4, dim=16, k=4, num_classes=3):
    from .lsr import AttributeWeights, LinearHead

    V1 = rng.normal(size=(m, dim))
    V2 = rng.normal(size=(n, dim))
    y1 = rng.integers(0, num_classes, m)
    y2 = rng.integers(0, num_classes, n)
    weights = AttributeWeights(k)
    for q in range(num_classes):
        weights.weights[q] = rng.uniform(0.2, 1.0, k)
    head = LinearHead(rng.normal(0, 0.5, (num_classes, dim)), rng.normal(0, 0.1, num_classes))
    return V1, y1, V2, y2, weights, head


def check_lsr(rng, step=1e-5, **kw) -> float:
    from .lsr import LinearHead, lsr_objective

    V1, y1, V2, y2, weights, head = random_lsr_instance(rng, **kw)
    res = lsr_objective(V1, y1, V2, y2, weights, head)
    m = len(V1)

    def loss(p):
        return lsr_objective(p[0][:m], y1, p[0][m:], y2, weights, LinearHead(p[1], p[2])).loss

    params = [np.vstack([V1, V2]), head.weight.copy(), head.bias.copy()]
    return gradcheck(loss, params, [res.grad_features, res.grad_weight, res.grad_bias], step)


def random_pool(rng, depth=3, dim=16, num_classes=3, capacity=10):
    from .gsr import MemoryPool, PrototypeSet

    pool = MemoryPool(capacity)
    for it in range(depth):
        r = int(rng.integers(1, num_classes + 1))
        classes = tuple(sorted(rng.choice(num_classes, r, replace=False).tolist()))
        pool.push(PrototypeSet(classes, rng.normal(size=(r, dim)), it))
    return pool


def check_gsr(rng, step=1e-5, depth=3, dim=16, num_classes=3) -> float:
    from .gsr import gsr_objective
    from .lsr import LinearHead

    pool = random_pool(rng, depth, dim, num_classes)
    head = LinearHead(rng.normal(0, 0.5, (num_classes, dim)), rng.normal(0, 0.1, num_classes))
    current = pool.current.vectors.copy()
    res = gsr_objective(pool, head, current)

    def loss(p):
        return gsr_objective(pool, LinearHead(p[1], p[2]), p[0]).loss

    params = [current, head.weight.copy(), head.bias.copy()]
    return gradcheck(loss, params, [res.grad_current, res.grad_weight, res.grad_bias], step)
