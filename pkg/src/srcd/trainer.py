"""Desk-scale training harness for the combined objective.

Instance features come from a synthetic generator instead of a detector:
Gaussian class blobs form the weak view, and the strong view is the same
instances pushed through a fixed "style" map (a rotation plus a bias). A
learnable linear projection stands in for the feature extractor and a linear
head for the classifier; both are trained by plain gradient descent on

    L_det + lambda * L_LSR + beta * L_GSR

where L_det is a cross-entropy surrogate over the raw features of both views.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigInvalid
from .gsr import MemoryPool, compute_prototypes, gsr_objective
from .lsr import (
    AttributeWeights,
    LinearHead,
    cross_entropy,
    cross_entropy_grad,
    ema_update,
    estimate_attribute_weights,
    lsr_objective,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    k: int = 4
    Z: int = 10
    gamma: float = 0.99
    lam: float = 0.1
    beta: float = 0.01
    lr: float = 0.02
    iterations: int = 500
    seed: int = 0
    num_classes: int = 3
    feature_dim: int = 64
    per_class: int = 2  # instances of each class in one view
    class_sep: float = 0.25
    noise: float = 1.0
    style_angle: float = 1.0  # max rotation angle per plane of the style map
    style_bias: float = 1.0
    test_shift: float = 1.5  # style strength of the held-out shifted domain
    test_per_class: int = 200

    def validate(self):
        problems = []
        if self.lam < 0 or self.beta < 0:
            problems.append("lambda and beta must be nonnegative")
        if self.k < 1 or self.feature_dim % self.k:
            problems.append(f"feature_dim={self.feature_dim} not divisible by k={self.k}")
        if self.feature_dim % 2:
            problems.append("feature_dim must be even (style rotations act on planes)")
        if self.num_classes < 2:
            problems.append("need at least 2 classes")
        if self.iterations < 1 or self.per_class < 1 or self.test_per_class < 1:
            problems.append("iterations, per_class and test_per_class must be >= 1")
        if self.Z < 0:
            problems.append("Z must be >= 0")
        if not 0 <= self.gamma <= 1:
            problems.append("gamma must lie in [0, 1]")
        if not self.lr > 0:
            problems.append("lr must be positive")
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return self


def total_loss(l_det, l_lsr, l_gsr, lam, beta) -> float:
    return l_det + lam * l_lsr + beta * l_gsr


# ----------------------------------------------------------------------------
# synthetic data

class SyntheticDomains:
    """Class blobs plus a one-parameter family of style maps.

    ``style(x, s) = R(s) x + s * b`` where R(s) rotates a fixed set of planes
    by ``s`` times their angles. The strong view uses s = 1; the shifted
    test domain uses ``cfg.test_shift``.
    """

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        d = cfg.feature_dim
        self.cfg = cfg
        self.means = rng.normal(0.0, cfg.class_sep, (cfg.num_classes, d))
        self.basis, _ = np.linalg.qr(rng.normal(size=(d, d)))
        self.angles = rng.uniform(0.5, 1.0, d // 2) * cfg.style_angle
        self.bias = rng.normal(0.0, cfg.style_bias, d)

    def rotation(self, s: float) -> np.ndarray:
        d = self.cfg.feature_dim
        block = np.zeros((d, d))
        c, sn = np.cos(s * self.angles), np.sin(s * self.angles)
        i = np.arange(0, d, 2)
        block[i, i], block[i, i + 1] = c, -sn
        block[i + 1, i], block[i + 1, i + 1] = sn, c
        return self.basis @ block @ self.basis.T

    def style(self, x, s: float) -> np.ndarray:
        return x @ self.rotation(s).T + s * self.bias

    def sample(self, per_class: int, rng: np.random.Generator):
        y = np.repeat(np.arange(self.cfg.num_classes), per_class)
        x = self.means[y] + rng.normal(0.0, self.cfg.noise, (len(y), self.cfg.feature_dim))
        return x, y

    def batch(self, rng):
        """Weak and strong views of one batch: ``(X1, X2, y)``."""
        x, y = self.sample(self.cfg.per_class, rng)
        return x, self.style(x, 1.0), y


# ----------------------------------------------------------------------------
# training loop

@dataclass
class TrainReport:
    config: dict
    loss_trace: list
    det_trace: list = field(default_factory=list)
    lsr_trace: list = field(default_factory=list)
    gsr_trace: list = field(default_factory=list)
    initial_loss: float = 0.0  # mean total loss over the first window
    final_loss: float = 0.0  # ... and over the last one
    source_acc: float = 0.0
    shifted_acc: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Model:
    projection: np.ndarray  # (D, D), features = x @ projection.T
    head: LinearHead

    def features(self, x):
        return x @ self.projection.T

    def predict(self, x):
        return np.argmax(self.head(self.features(x)), axis=1)


def train_step(model: Model, X1, X2, y, weights, pool, iteration, cfg: TrainConfig):
    """One forward/backward pass. Returns ``(losses, grads, weights)``.

    `pool` is updated in place with this iteration's prototypes.
    """
    V1, V2 = model.features(X1), model.features(X2)
    V = np.vstack([V1, V2])
    X = np.vstack([X1, X2])
    yy = np.concatenate([y, y])

    # L_det surrogate
    logits = model.head(V)
    l_det = cross_entropy(logits, yy)
    dV, dW, db = model.head.backward(V, cross_entropy_grad(logits, yy))

    weights = ema_update(weights, estimate_attribute_weights(V, yy, cfg.k))
    lsr = lsr_objective(V1, y, V2, y, weights, model.head)

    protos = compute_prototypes(V, yy, iteration)
    pool.push(protos)
    gsr = gsr_objective(pool, model.head, protos.vectors)
    # spread prototype gradients back over the features each one averages
    _, inverse, counts = np.unique(yy, return_inverse=True, return_counts=True)
    dV_gsr = gsr.grad_current[inverse] / counts[inverse][:, None]

    dV = dV + cfg.lam * lsr.grad_features + cfg.beta * dV_gsr
    dW = dW + cfg.lam * lsr.grad_weight + cfg.beta * gsr.grad_weight
    db = db + cfg.lam * lsr.grad_bias + cfg.beta * gsr.grad_bias
    dP = dV.T @ X

    losses = (total_loss(l_det, lsr.loss, gsr.loss, cfg.lam, cfg.beta), l_det, lsr.loss, gsr.loss)
    return losses, (dP, dW, db), weights


def accuracy(model: Model, x, y) -> float:
    return float(np.mean(model.predict(x) == y))


def run_demo(cfg: TrainConfig) -> TrainReport:
    return train(cfg)[0]


def train(cfg: TrainConfig):
    """Run the loop; returns ``(TrainReport, final MemoryPool)``."""
    cfg.validate()
    data_seed, init_seed, batch_seed, test_seed = np.random.SeedSequence(cfg.seed).spawn(4)
    domains = SyntheticDomains(cfg, np.random.default_rng(data_seed))
    init_rng = np.random.default_rng(init_seed)
    model = Model(np.eye(cfg.feature_dim),
                  LinearHead.init(cfg.num_classes, cfg.feature_dim, init_rng))
    weights = AttributeWeights(cfg.k, cfg.gamma)
    pool = MemoryPool(cfg.Z)
    batch_rng = np.random.default_rng(batch_seed)

    report = TrainReport(config=asdict(cfg), loss_trace=[])
    for it in range(cfg.iterations):
        X1, X2, y = domains.batch(batch_rng)
        (tot, det, l_lsr, l_gsr), (dP, dW, db), weights = train_step(
            model, X1, X2, y, weights, pool, it, cfg)
        if not all(math.isfinite(v) for v in (tot, det, l_lsr, l_gsr)):
            raise FloatingPointError(f"non-finite loss at iteration {it}")
        report.loss_trace.append(tot)
        report.det_trace.append(det)
        report.lsr_trace.append(l_lsr)
        report.gsr_trace.append(l_gsr)
        model.projection -= cfg.lr * dP
        model.head.weight -= cfg.lr * dW
        model.head.bias -= cfg.lr * db
        if it % 100 == 0:
            log.debug("iter %d total %.4f det %.4f lsr %.4f gsr %.4f", it, tot, det, l_lsr, l_gsr)

    # single-batch losses are noisy, so compare windowed means
    window = max(1, min(50, cfg.iterations // 10))
    report.initial_loss = float(np.mean(report.loss_trace[:window]))
    report.final_loss = float(np.mean(report.loss_trace[-window:]))

    test_rng = np.random.default_rng(test_seed)
    x, y = domains.sample(cfg.test_per_class, test_rng)
    report.source_acc = accuracy(model, x, y)
    x, y = domains.sample(cfg.test_per_class, test_rng)
    report.shifted_acc = accuracy(model, domains.style(x, cfg.test_shift), y)
    return report, pool
