"""Raster primitives and the 2-D Fourier machinery used by the augmenter.

Images are float64 arrays of shape (H, W, 3) holding values in [0, 255];
gray images are (H, W). Nothing is quantized until `save_png`.

The transform pair is the unnormalized forward DFT and the 1/(H*W)
normalized inverse (numpy's default convention). numpy's pocketfft backend
handles arbitrary sizes, so images are never padded.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Spectrum:
    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def shape(self):
        return self.amplitude.shape

    def to_complex(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)


def as_image(data) -> np.ndarray:
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB image."""
    return np.asarray(img, dtype=np.float64) @ LUMA_WEIGHTS


def fft2(plane: np.ndarray) -> Spectrum:
    coeffs = np.fft.fft2(np.asarray(plane, dtype=np.float64))
    return Spectrum(amplitude=np.abs(coeffs), phase=np.angle(coeffs))


def ifft2(spec: Spectrum) -> np.ndarray:
    return np.fft.ifft2(spec.to_complex()).real


def resize_bilinear(img: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling.

    Corner alignment keeps the first and last rows/columns of the source
    exactly, so a [0, 255] ramp stays anchored at 0 and 255.
    Works for (H, W) and (H, W, C) arrays.
    """
    if new_h < 1 or new_w < 1:
        raise ValueError("target size must be at least 1x1")
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape[:2]
    if (h, w) == (new_h, new_w):
        return src.copy()

    def axis_coords(n_in, n_out):
        if n_out == 1:
            pos = np.array([(n_in - 1) / 2.0])
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis_coords(h, new_h)
    c0, c1, fc = axis_coords(w, new_w)
    extra = (1,) * (src.ndim - 2)
    fr = fr.reshape((-1, 1) + extra)
    fc = fc.reshape((1, -1) + extra)

    top = src[r0][:, c0] * (1 - fc) + src[r0][:, c1] * fc
    bottom = src[r1][:, c0] * (1 - fc) + src[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def hflip(img: np.ndarray) -> np.ndarray:
    return np.asarray(img)[:, ::-1].copy()


def quantize(img: np.ndarray) -> np.ndarray:
    """Round half to even and clamp into uint8."""
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def load_png(path) -> np.ndarray:
    from PIL import Image as PILImage

    with PILImage.open(Path(path)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def save_png(img: np.ndarray, path) -> None:
    from PIL import Image as PILImage

    PILImage.fromarray(quantize(img)).save(Path(path), format="PNG")
