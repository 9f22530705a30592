import json
import math
from pathlib import Path

import numpy as np
import pytest

DOCS = Path(__file__).resolve().parent.parent / "docs"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def load_schema(name):
    return json.loads((DOCS / f"{name}.schema.json").read_text())


# ----------------------------------------------------------------------------
# brute-force oracles, deliberately written without the package's code paths

def direct_dft(plane):
    """O((HW)^2) forward DFT straight from the definition."""
    h, w = plane.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for a in range(h):
                for b in range(w):
                    acc += plane[a, b] * complex(math.cos(-2 * math.pi * (u * a / h + v * b / w)),
                                                 math.sin(-2 * math.pi * (u * a / h + v * b / w)))
            out[u, v] = acc
    return out


def direct_idft(coeffs):
    h, w = coeffs.shape
    out = np.zeros((h, w), dtype=complex)
    for a in range(h):
        for b in range(w):
            acc = 0j
            for u in range(h):
                for v in range(w):
                    ang = 2 * math.pi * (u * a / h + v * b / w)
                    acc += coeffs[u, v] * complex(math.cos(ang), math.sin(ang))
            out[a, b] = acc / (h * w)
    return out


def brute_amplitude_mix(img, patch_resized, phi):
    """Reference amplitude mix on already-resized inputs (pre-clamp)."""
    out = np.zeros(img.shape)
    for c in range(img.shape[2]):
        X = direct_dft(img[..., c])
        P = direct_dft(patch_resized[..., c])
        mixed = ((1 - phi) * np.abs(X) + phi * np.abs(P)) * np.exp(1j * np.angle(X))
        out[..., c] = direct_idft(mixed).real
    return out


def brute_glcm(q, dr, dc, levels):
    """Count ordered level pairs by walking every pixel."""
    h, w = q.shape
    counts = np.zeros((levels, levels))
    total = 0
    for a in range(h):
        for b in range(w):
            a2, b2 = a + dr, b + dc
            if 0 <= a2 < h and 0 <= b2 < w:
                counts[q[a, b], q[a2, b2]] += 1
                total += 1
    return counts / total, total


def brute_matmul(A, V):
    n, k = A.shape
    d = V.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(k):
            for c in range(d):
                out[i, c] += A[i, j] * V[j, c]
    return out


def plain_cos(a, b):
    ma, mb = max(map(abs, a)), max(map(abs, b))
    if ma == 0 or mb == 0:
        return 0.0
    # rescale so extreme magnitudes neither underflow nor overflow
    a, b = [x / ma for x in a], [x / mb for x in b]
    na, nb = math.hypot(*a), math.hypot(*b)
    return sum(x * y for x, y in zip(a, b)) / (na * nb)
