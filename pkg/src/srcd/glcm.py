"""Gray-level co-occurrence matrices, their entropy, and entropy-gated patch
selection.

Offsets follow the usual image convention: theta=0 pairs each pixel with the
one `d` columns to its right; theta=90 pairs it with the one `d` rows below.
The matrix is an ordered (non-symmetric) count normalized to probabilities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateImage, ImageTooSmall
from .image_core import to_grayscale

MIN_IMAGE_SIDE = 8


@dataclass(frozen=True)
class GlcmConfig:
    levels: int = 32
    d: int = 1
    theta: int = 0

    def __post_init__(self):
        if not 2 <= self.levels <= 256:
            raise ValueError(f"levels must lie in [2, 256], got {self.levels}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.theta not in (0, 45, 90, 135):
            raise ValueError(f"theta must be one of 0/45/90/135, got {self.theta}")

    @property
    def offset(self) -> tuple[int, int]:
        """(row, col) displacement of the neighbour pixel."""
        rad = math.radians(self.theta)
        return round(self.d * math.sin(rad)), round(self.d * math.cos(rad))


@dataclass(frozen=True)
class Glcm:
    matrix: np.ndarray
    pair_count: int


@dataclass(frozen=True)
class PatchPolicy:
    min_frac: float = 0.125
    max_frac: float = 0.25
    max_retries: int = 10

    def __post_init__(self):
        if not 0 < self.min_frac <= self.max_frac <= 1:
            raise ValueError("need 0 < min_frac <= max_frac <= 1")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


@dataclass(frozen=True)
class Patch:
    image: np.ndarray
    bounds: tuple[int, int, int, int]  # top, left, height, width
    entropy: float
    image_entropy: float
    accepted: bool
    attempts: int


def quantize_levels(gray: np.ndarray, levels: int) -> np.ndarray:
    """Map [0, 255] onto `levels` equal-width bins."""
    g = np.clip(np.asarray(gray, dtype=np.float64), 0.0, 255.0)
    return np.minimum((g * levels / 256.0).astype(np.int64), levels - 1)


def compute_glcm(gray: np.ndarray, cfg: GlcmConfig = GlcmConfig()) -> Glcm:
    q = quantize_levels(gray, cfg.levels)
    h, w = q.shape
    dr, dc = cfg.offset
    rows = slice(max(0, -dr), h - max(0, dr))
    cols = slice(max(0, -dc), w - max(0, dc))
    ref = q[rows, cols]
    nbr = q[rows.start + dr : rows.stop + dr, cols.start + dc : cols.stop + dc]
    if ref.size == 0:
        raise DegenerateImage(
            f"{h}x{w} image has no pixel pair at offset {(dr, dc)}"
        )
    counts = np.bincount(
        (ref * cfg.levels + nbr).ravel(), minlength=cfg.levels * cfg.levels
    ).astype(np.float64)
    return Glcm(matrix=(counts / ref.size).reshape(cfg.levels, cfg.levels),
                pair_count=int(ref.size))


def glcm_entropy(g: Glcm) -> float:
    p = g.matrix[g.matrix > 0]
    # + 0.0 turns a negated empty sum (-0.0) into 0.0
    return float(-np.sum(p * np.log(p))) + 0.0


def image_entropy(img: np.ndarray, cfg: GlcmConfig = GlcmConfig()) -> float:
    """GLCM entropy of an RGB image's luma."""
    return glcm_entropy(compute_glcm(to_grayscale(img), cfg))


def _draw_bounds(h, w, policy, min_side, rng):
    ph = min(h, max(min_side, round(rng.uniform(policy.min_frac, policy.max_frac) * h)))
    pw = min(w, max(min_side, round(rng.uniform(policy.min_frac, policy.max_frac) * w)))
    top = int(rng.integers(0, h - ph + 1))
    left = int(rng.integers(0, w - pw + 1))
    return top, left, ph, pw


def select_patch(img, policy: PatchPolicy = PatchPolicy(), cfg: GlcmConfig = GlcmConfig(),
                 rng: np.random.Generator | None = None) -> Patch:
    """Draw random patches until one is at least as textured as the image.

    A candidate whose GLCM entropy falls below the whole image's is discarded.
    After `policy.max_retries` draws without an acceptance, the most textured
    candidate seen (first one on ties) is returned with ``accepted=False``.
    """
    if rng is None:
        rng = np.random.default_rng()
    h, w = img.shape[:2]
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ImageTooSmall(f"need at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {h}x{w}")
    # patch must contain at least one offset pair
    dr, dc = cfg.offset
    min_side = max(abs(dr), abs(dc)) + 1

    whole = image_entropy(img, cfg)
    best = None
    for attempt in range(1, policy.max_retries + 1):
        top, left, ph, pw = _draw_bounds(h, w, policy, min_side, rng)
        crop = img[top : top + ph, left : left + pw]
        ent = image_entropy(crop, cfg)
        if ent >= whole:
            return Patch(crop.copy(), (top, left, ph, pw), ent, whole, True, attempt)
        if best is None or ent > best[1]:
            best = ((top, left, ph, pw), ent)
    (top, left, ph, pw), ent = best
    crop = img[top : top + ph, left : left + pw]
    return Patch(crop.copy(), (top, left, ph, pw), ent, whole, False, policy.max_retries)
