"""Shared fixtures and independent oracle helpers.

The helpers here deliberately avoid the production code paths they are
used to check: dense circulant matrices are assembled with explicit
modular index loops, not FFTs, and brute-force evaluations use plain
Python loops.
"""

from __future__ import annotations

import numpy as np
import pytest

from dpe.plane import ImagePlane


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def circulant_matrix(kernel: np.ndarray, h: int, w: int) -> np.ndarray:
    """Dense matrix of circular 2-D convolution, by explicit indexing."""
    kh, kw = kernel.shape
    cy, cx = kh // 2, kw // 2
    mat = np.zeros((h * w, h * w))
    for oy in range(h):
        for ox in range(w):
            row = oy * w + ox
            for ky in range(kh):
                for kx in range(kw):
                    iy = (oy - (ky - cy)) % h
                    ix = (ox - (kx - cx)) % w
                    mat[row, iy * w + ix] += kernel[ky, kx]
    return mat


def probe_matrix(op) -> np.ndarray:
    """Operator as a dense matrix by probing apply() with basis vectors.

    Useful when the oracle is the dense *solve*, not the matrix itself.
    """
    n = int(np.prod(op.in_shape))
    m = int(np.prod(op.out_shape))
    mat = np.zeros((m, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        mat[:, j] = op.apply(ImagePlane(e.reshape(op.in_shape))).data.ravel()
    return mat


def random_plane(rng, shape=(1, 8, 8), lo=0.0, hi=1.0) -> ImagePlane:
    return ImagePlane(rng.uniform(lo, hi, shape))


def random_kernel(rng, size=3) -> np.ndarray:
    k = rng.uniform(0.0, 1.0, (size, size))
    return k / k.sum()
