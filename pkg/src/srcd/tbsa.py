"""Texture-based self-augmentation.

A patch picked by `select_patch` lends its amplitude spectrum to the whole
image: amplitudes are blended with ratio `phi`, the image's own phase is
kept, and the result is transformed back. Weak draws use phi in [0, 0.5);
strong draws use phi in [0.5, 1) and are then flipped horizontally.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .glcm import GlcmConfig, PatchPolicy, select_patch
from .image_core import Spectrum, fft2, hflip, ifft2, resize_bilinear


class AugMode(enum.Enum):
    WEAK = "weak"
    STRONG = "strong"

    @property
    def phi_range(self) -> tuple[float, float]:
        return (0.0, 0.5) if self is AugMode.WEAK else (0.5, 1.0)

    @property
    def flips(self) -> bool:
        return self is AugMode.STRONG


@dataclass(frozen=True)
class AugmentRecord:
    mode: str
    phi: float
    patch_bounds: tuple[int, int, int, int]
    patch_entropy: float
    image_entropy: float
    patch_accepted: bool
    flipped: bool

    def to_json(self) -> dict:
        out = asdict(self)
        out["patch_bounds"] = list(self.patch_bounds)
        return out


def draw_phi(mode: AugMode, rng: np.random.Generator) -> float:
    lo, hi = mode.phi_range
    phi = float(rng.uniform(lo, hi))
    # uniform() may round up to the open endpoint in float arithmetic
    return phi if phi < hi else float(np.nextafter(hi, lo))


def amplitude_mix(img: np.ndarray, patch: np.ndarray, phi: float, clamp: bool = True) -> np.ndarray:
    if not 0.0 <= phi < 1.0:
        raise ValueError(f"phi must lie in [0, 1), got {phi}")
    if patch.shape[0] < 1 or patch.shape[1] < 1:
        raise ValueError("patch is empty")
    h, w = img.shape[:2]
    patch = resize_bilinear(patch, h, w)
    out = np.empty(img.shape, dtype=np.float64)
    for c in range(img.shape[2]):
        src = fft2(img[..., c])
        tex = fft2(patch[..., c])
        mixed = (1.0 - phi) * src.amplitude + phi * tex.amplitude
        out[..., c] = ifft2(Spectrum(mixed, src.phase))
    return np.clip(out, 0.0, 255.0) if clamp else out


def augment(img: np.ndarray, mode: AugMode, policy: PatchPolicy = PatchPolicy(),
            cfg: GlcmConfig = GlcmConfig(), rng: np.random.Generator | None = None):
    """Return ``(augmented_image, AugmentRecord)``."""
    if rng is None:
        rng = np.random.default_rng()
    patch = select_patch(img, policy, cfg, rng)
    phi = draw_phi(mode, rng)
    out = amplitude_mix(img, patch.image, phi)
    if mode.flips:
        out = hflip(out)
    record = AugmentRecord(
        mode=mode.value,
        phi=phi,
        patch_bounds=patch.bounds,
        patch_entropy=patch.entropy,
        image_entropy=patch.image_entropy,
        patch_accepted=patch.accepted,
        flipped=mode.flips,
    )
    return out, record


def augment_pair(img: np.ndarray, policy: PatchPolicy = PatchPolicy(),
                 cfg: GlcmConfig = GlcmConfig(), rng: np.random.Generator | None = None):
    """Weak and strong views of one image, drawn in that order from `rng`.

    Returns ``((weak, strong), (weak_record, strong_record))``.
    """
    if rng is None:
        rng = np.random.default_rng()
    weak, weak_rec = augment(img, AugMode.WEAK, policy, cfg, rng)
    strong, strong_rec = augment(img, AugMode.STRONG, policy, cfg, rng)
    return (weak, strong), (weak_rec, strong_rec)
