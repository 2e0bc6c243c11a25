"""Linear degradation operators and the fidelity warm-start solver.

Four operator kinds share one interface (apply / adjoint / warm_start):

  Identity      denoising-style tasks, A = I
  Convolution   circular 2-D convolution with a normalized odd kernel
  Mask          elementwise multiply by a binary plane
  Downsample    circular anti-alias blur followed by keeping every s-th
                row/column (output dims = ceil(input/s))

warm_start(x_prev, y, eta) returns argmin_x 1/2||A(x)-y||^2
+ (eta/2)||x - x_prev||^2, in closed form for Identity/Mask/Convolution
(frequency domain for the latter) and by conjugate gradients on the
normal equations (A^T A + eta I) x = A^T y + eta x_prev for Downsample.

All boundary handling is circular, so convolution diagonalizes under the
real-to-complex FFT and every closed form is exact.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, FormatError, SolverError
from .plane import ImagePlane

KERNEL_SUM_TOL = 1e-9
CG_TOL = 1e-8
CG_MAX_ITER = 500


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Odd, normalized 2-D Gaussian; radius max(1, ceil(3*sigma))."""
    if sigma <= 0:
        return np.array([[1.0]])
    radius = max(1, int(math.ceil(3.0 * sigma)))
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    k1 = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    k = np.outer(k1, k1)
    return k / k.sum()


def validate_kernel(kernel: np.ndarray) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise FormatError("kernel must be 2-D")
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise FormatError(f"kernel dims must be odd, got {kh}x{kw}")
    if np.any(kernel < -1e-12):
        raise FormatError("kernel has negative entries")
    if abs(kernel.sum() - 1.0) > KERNEL_SUM_TOL:
        raise FormatError(f"kernel sum {kernel.sum()!r} is not 1")
    return kernel


def load_kernel(path) -> np.ndarray:
    """Plain-text kernel: first line 'H W', then H rows of W reals.

    Values are normalized to sum 1; entries below -1e-12 are rejected.
    """
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise FormatError(f"{path}: missing kernel header")
    try:
        kh, kw = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise FormatError(f"{path}: bad kernel header") from exc
    if kh <= 0 or kw <= 0 or kh % 2 == 0 or kw % 2 == 0:
        raise FormatError(f"{path}: kernel dims must be positive odd, got {kh}x{kw}")
    values = tokens[2:]
    if len(values) != kh * kw:
        raise FormatError(
            f"{path}: expected {kh * kw} kernel values, got {len(values)}"
        )
    try:
        kernel = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric kernel value") from exc
    kernel = kernel.reshape(kh, kw)
    if np.any(kernel < -1e-12):
        raise FormatError(f"{path}: kernel has negative entries")
    total = kernel.sum()
    if total <= 0:
        raise FormatError(f"{path}: kernel sum must be positive")
    return kernel / total


def _psf_to_otf(kernel: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Embed the kernel circularly with its center at (0,0) and return
    the real-to-complex transfer function. Taps are accumulated modulo
    the plane size, so kernels larger than the plane wrap (the exact
    circular-convolution semantics)."""
    h, w = shape
    kh, kw = kernel.shape
    padded = np.zeros((h, w), dtype=np.float64)
    rows = (np.arange(kh) - kh // 2) % h
    cols = (np.arange(kw) - kw // 2) % w
    np.add.at(padded, (rows[:, None], cols[None, :]), kernel)
    return np.fft.rfft2(padded)


def _circular_filter(data: np.ndarray, otf: np.ndarray) -> np.ndarray:
    h, w = data.shape[-2], data.shape[-1]
    out = np.empty_like(data)
    for c in range(data.shape[0]):
        out[c] = np.fft.irfft2(np.fft.rfft2(data[c]) * otf, s=(h, w))
    return out


def circular_convolve(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Circular convolution of (C,H,W) data with an odd 2-D kernel."""
    return _circular_filter(data, _psf_to_otf(kernel, data.shape[-2:]))


class DegradationOperator:
    """Common interface; concrete kinds are immutable after construction."""

    kind: str
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]

    def apply(self, x: ImagePlane) -> ImagePlane:
        raise NotImplementedError

    def adjoint(self, r: ImagePlane) -> ImagePlane:
        raise NotImplementedError

    def warm_start(self, x_prev: ImagePlane, y: ImagePlane, eta: float) -> ImagePlane:
        raise NotImplementedError

    def _check_in(self, x: ImagePlane) -> None:
        if x.shape != self.in_shape:
            raise DimensionError(f"{self.kind}: input {x.shape} != {self.in_shape}")

    def _check_out(self, r: ImagePlane) -> None:
        if r.shape != self.out_shape:
            raise DimensionError(f"{self.kind}: output {r.shape} != {self.out_shape}")

    def _check_eta(self, eta: float) -> None:
        if eta <= 0:
            raise ValueError(f"eta must be > 0, got {eta}")


class Identity(DegradationOperator):
    kind = "identity"

    def __init__(self, shape: tuple[int, int, int]):
        self.in_shape = tuple(shape)
        self.out_shape = tuple(shape)

    def apply(self, x: ImagePlane) -> ImagePlane:
        self._check_in(x)
        return x

    def adjoint(self, r: ImagePlane) -> ImagePlane:
        self._check_out(r)
        return r

    def warm_start(self, x_prev: ImagePlane, y: ImagePlane, eta: float) -> ImagePlane:
        self._check_eta(eta)
        self._check_in(x_prev)
        self._check_out(y)
        return ImagePlane((y.data + eta * x_prev.data) / (1.0 + eta))


class Convolution(DegradationOperator):
    kind = "convolution"

    def __init__(self, kernel: np.ndarray, shape: tuple[int, int, int]):
        self.kernel = validate_kernel(kernel)
        self.in_shape = tuple(shape)
        self.out_shape = tuple(shape)
        self._otf = _psf_to_otf(self.kernel, (shape[1], shape[2]))

    def apply(self, x: ImagePlane) -> ImagePlane:
        self._check_in(x)
        return ImagePlane(_circular_filter(x.data, self._otf))

    def adjoint(self, r: ImagePlane) -> ImagePlane:
        self._check_out(r)
        return ImagePlane(_circular_filter(r.data, np.conj(self._otf)))

    def warm_start(self, x_prev: ImagePlane, y: ImagePlane, eta: float) -> ImagePlane:
        self._check_eta(eta)
        self._check_in(x_prev)
        self._check_out(y)
        h, w = self.in_shape[1], self.in_shape[2]
        denom = np.abs(self._otf) ** 2 + eta
        out = np.empty_like(x_prev.data)
        for c in range(x_prev.channels):
            num = np.conj(self._otf) * np.fft.rfft2(y.data[c])
            num += eta * np.fft.rfft2(x_prev.data[c])
            out[c] = np.fft.irfft2(num / denom, s=(h, w))
        return ImagePlane(out)


class Mask(DegradationOperator):
    kind = "mask"

    def __init__(self, mask: np.ndarray):
        mask = np.asarray(mask, dtype=np.float64)
        if mask.ndim == 2:
            mask = mask[None, :, :]
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise FormatError("mask values must be 0 or 1")
        self.mask = mask
        self.in_shape = mask.shape
        self.out_shape = mask.shape

    def apply(self, x: ImagePlane) -> ImagePlane:
        self._check_in(x)
        return ImagePlane(self.mask * x.data)

    def adjoint(self, r: ImagePlane) -> ImagePlane:
        self._check_out(r)
        return ImagePlane(self.mask * r.data)

    def warm_start(self, x_prev: ImagePlane, y: ImagePlane, eta: float) -> ImagePlane:
        self._check_eta(eta)
        self._check_in(x_prev)
        self._check_out(y)
        return ImagePlane(
            (self.mask * y.data + eta * x_prev.data) / (self.mask + eta)
        )


class Downsample(DegradationOperator):
    """Circular blur then keep rows/cols 0, s, 2s, ...; no clean frequency
    closed form with the subsampling, so warm_start runs CG."""

    kind = "downsample"

    def __init__(
        self,
        shape: tuple[int, int, int],
        scale: int,
        sigma: float | None = None,
    ):
        if scale < 2:
            raise ValueError(f"scale must be >= 2, got {scale}")
        self.scale = int(scale)
        self.sigma = 0.8 * scale / 2.0 if sigma is None else float(sigma)
        self.kernel = gaussian_kernel(self.sigma)
        self.in_shape = tuple(shape)
        c, h, w = shape
        self.out_shape = (c, -(-h // self.scale), -(-w // self.scale))
        self._otf = _psf_to_otf(self.kernel, (h, w))

    def apply(self, x: ImagePlane) -> ImagePlane:
        self._check_in(x)
        blurred = _circular_filter(x.data, self._otf)
        return ImagePlane(blurred[:, :: self.scale, :: self.scale])

    def adjoint(self, r: ImagePlane) -> ImagePlane:
        self._check_out(r)
        up = np.zeros(self.in_shape, dtype=np.float64)
        up[:, :: self.scale, :: self.scale] = r.data
        return ImagePlane(_circular_filter(up, np.conj(self._otf)))

    def warm_start(self, x_prev: ImagePlane, y: ImagePlane, eta: float) -> ImagePlane:
        self._check_eta(eta)
        self._check_in(x_prev)
        self._check_out(y)
        rhs = self.adjoint(y).data + eta * x_prev.data

        def matvec(v: np.ndarray) -> np.ndarray:
            p = ImagePlane(v)
            return self.adjoint(self.apply(p)).data + eta * v

        x = _conjugate_gradient(matvec, rhs, x0=x_prev.data)
        return ImagePlane(x)


def _conjugate_gradient(
    matvec,
    rhs: np.ndarray,
    x0: np.ndarray,
    tol: float = CG_TOL,
    max_iter: int = CG_MAX_ITER,
) -> np.ndarray:
    """CG for an SPD system, relative-residual stopping rule."""
    rhs_norm = float(np.linalg.norm(rhs.ravel()))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)
    x = x0.copy()
    r = rhs - matvec(x)
    p = r.copy()
    rs = float(np.sum(r * r))
    for _ in range(max_iter):
        if math.sqrt(rs) / rhs_norm < tol:
            return x
        ap = matvec(p)
        alpha = rs / float(np.sum(p * ap))
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    final = math.sqrt(rs) / rhs_norm
    if final < tol:
        return x
    raise SolverError(
        f"CG did not converge in {max_iter} iterations "
        f"(relative residual {final:.3e})",
        residual=final,
    )
