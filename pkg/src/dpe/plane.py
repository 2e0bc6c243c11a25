"""Image planes: 2-D real grids with 1 or 3 channel-planar channels.

Data is stored as a float64 array of shape (channels, height, width),
i.e. channel-planar with row-major rows, matching the vectorized variable
the energy operates on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class ImagePlane:
    data: np.ndarray  # (channels, height, width), float64

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"plane data must be 3-D (C,H,W), got ndim={arr.ndim}")
        if arr.shape[0] not in (1, 3):
            raise DimensionError(f"channels must be 1 or 3, got {arr.shape[0]}")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImagePlane":
        """Accept (H,W) or (C,H,W) arrays."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        return cls(arr)

    @classmethod
    def full(cls, shape: tuple[int, int, int], value: float) -> "ImagePlane":
        return cls(np.full(shape, float(value)))

    def gray(self) -> np.ndarray:
        """(H,W) view for single-channel planes."""
        if self.channels != 1:
            raise DimensionError("gray() requires a single-channel plane")
        return self.data[0]

    def is_feasible(self, alpha: float, beta: float, tol: float = 0.0) -> bool:
        return bool(
            np.all(self.data >= alpha - tol) and np.all(self.data <= beta + tol)
        )


def norm(p: ImagePlane) -> float:
    return float(np.linalg.norm(p.data.ravel()))


def diff_norm(a: ImagePlane, b: ImagePlane) -> float:
    check_same_shape(a, b)
    return float(np.linalg.norm((a.data - b.data).ravel()))


def check_same_shape(a: ImagePlane, b: ImagePlane) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"plane shapes differ: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class GradientField:
    """Circular forward differences of a plane, per channel.

    dx[..., j] = x[..., j+1 mod W] - x[..., j]; dy analogous over rows.
    The last column/row differences wrap against the first, so the field
    has the same shape as its source plane.
    """

    dx: np.ndarray
    dy: np.ndarray


def forward_diff(x: np.ndarray) -> GradientField:
    dx = np.roll(x, -1, axis=-1) - x
    dy = np.roll(x, -1, axis=-2) - x
    return GradientField(dx=dx, dy=dy)


def forward_diff_adjoint(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Adjoint of forward_diff: negative circular backward divergence."""
    return (np.roll(dx, 1, axis=-1) - dx) + (np.roll(dy, 1, axis=-2) - dy)
