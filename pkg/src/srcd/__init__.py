"""Texture-based Fourier self-augmentation and local/global semantic
reasoning kernels for single-domain generalization."""

from .errors import (
    ConfigInvalid,
    DegenerateImage,
    DegenerateWeights,
    EmptyDomain,
    ImageTooSmall,
    IndivisibleDimension,
    ShapeMismatch,
    SrcdError,
    StaleSet,
)

__version__ = "0.1.0"
