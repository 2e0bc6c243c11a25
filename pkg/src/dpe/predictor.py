"""Descent-direction estimators and the noise-level bank.

A predictor maps a plane x to a residual r(x); the descent step is
x - r(x). Two interchangeable kinds:

  ConvNetPredictor   stack of dilated 3x3 conv layers (ReLU between,
                     none after the last), zero padding, loaded from the
                     portable "DPEW" weight format. Batch norm is folded
                     into the weights at export time, so inference here
                     is affine + ReLU only.
  ClassicalPredictor r(x) = x - gaussian_blur(x, sigma) with circular
                     boundary; sigma == 0 is the exact identity map
                     (zero residual), used as the level-0 predictor.

A PredictorBank holds one predictor per noise level {0, 2, 4, ..., 20}
(8-bit scale). select_level() realizes the stage-to-level schedule:
level_k = round_to_grid(sigma0 * rho^k), floored at grid level 2.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError
from .operators import circular_convolve, gaussian_kernel
from .plane import ImagePlane

WEIGHT_MAGIC = b"DPEW"
WEIGHT_VERSION = 1

# 7-layer dilated stack: receptive-field-symmetric dilation pattern,
# 64 hidden channels, 3x3 kernels.
STANDARD_DILATIONS = (1, 2, 3, 4, 3, 2, 1)
STANDARD_HIDDEN = 64

# Spatial blur std for a classical predictor at 8-bit noise level sigma.
CLASSICAL_SIGMA_SCALE = 3.0 / 255.0

NOISE_GRID = tuple(range(2, 22, 2))


@dataclass(frozen=True)
class ConvLayer:
    weights: np.ndarray  # float32, (out, in, kh, kw)
    bias: np.ndarray  # float32, (out,)
    dilation: int

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


class ConvNetPredictor:
    """Affine conv stack with ReLU between layers (none after the last)."""

    kind = "convnet"

    def __init__(self, layers: list[ConvLayer]):
        if not layers:
            raise FormatError("predictor needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_channels != layers[i - 1].out_channels:
                raise FormatError(
                    f"layer {i} expects {layers[i].in_channels} input channels, "
                    f"layer {i - 1} emits {layers[i - 1].out_channels}"
                )
        if layers[0].in_channels != layers[-1].out_channels:
            raise FormatError("first input and last output channel counts differ")
        self.layers = list(layers)

    @property
    def channels(self) -> int:
        return self.layers[0].in_channels

    def predict_residual(self, x: ImagePlane) -> ImagePlane:
        if x.channels != self.channels:
            if self.channels == 1:
                # grayscale net on a color plane: map over channels
                parts = [
                    self.predict_residual(ImagePlane(x.data[c : c + 1])).data
                    for c in range(x.channels)
                ]
                return ImagePlane(np.concatenate(parts, axis=0))
            raise DimensionError(
                f"predictor expects {self.channels} channels, got {x.channels}"
            )
        act = x.data
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            act = _conv2d_same(act, layer.weights.astype(np.float64), layer.dilation)
            act += layer.bias.astype(np.float64)[:, None, None]
            if i != last:
                np.maximum(act, 0.0, out=act)
        return ImagePlane(act)


class ClassicalPredictor:
    """Residual against a circular Gaussian blur of the input."""

    kind = "classical"

    def __init__(self, sigma: float):
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        self.sigma = float(sigma)

    @property
    def channels(self) -> int | None:
        return None  # channel-agnostic

    def predict_residual(self, x: ImagePlane) -> ImagePlane:
        if self.sigma == 0.0:
            return ImagePlane(np.zeros_like(x.data))
        blurred = circular_convolve(x.data, gaussian_kernel(self.sigma))
        return ImagePlane(x.data - blurred)


Predictor = ConvNetPredictor | ClassicalPredictor


def identity_predictor() -> ClassicalPredictor:
    return ClassicalPredictor(0.0)


def predict_residual(p: Predictor, x: ImagePlane) -> ImagePlane:
    return p.predict_residual(x)


def descent_step(p: Predictor, x: ImagePlane) -> ImagePlane:
    return ImagePlane(x.data - p.predict_residual(x).data)


def _conv2d_same(data: np.ndarray, weights: np.ndarray, dilation: int) -> np.ndarray:
    """Zero-padded 'same' conv of (C,H,W) data; weights (O,C,kh,kw)."""
    out_ch, in_ch, kh, kw = weights.shape
    if data.shape[0] != in_ch:
        raise DimensionError(f"conv expects {in_ch} channels, got {data.shape[0]}")
    h, w = data.shape[1], data.shape[2]
    ph = dilation * (kh // 2)
    pw = dilation * (kw // 2)
    padded = np.pad(data, ((0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((out_ch, h, w), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            window = padded[:, dy * dilation : dy * dilation + h,
                            dx * dilation : dx * dilation + w]
            out += np.tensordot(weights[:, :, dy, dx], window, axes=([1], [0]))
    return out


def standard_convnet(channels: int, rng_fill=None) -> ConvNetPredictor:
    """The 7-layer dilated architecture; zero weights unless rng_fill is
    given (a callable shape -> array, for tests)."""
    widths = [channels] + [STANDARD_HIDDEN] * (len(STANDARD_DILATIONS) - 1) + [channels]
    layers = []
    for i, dil in enumerate(STANDARD_DILATIONS):
        shape = (widths[i + 1], widths[i], 3, 3)
        w = rng_fill(shape) if rng_fill is not None else np.zeros(shape)
        layers.append(
            ConvLayer(
                weights=np.asarray(w, dtype=np.float32),
                bias=np.zeros(widths[i + 1], dtype=np.float32),
                dilation=dil,
            )
        )
    return ConvNetPredictor(layers)


@dataclass(frozen=True)
class LevelSchedule:
    """Geometric noise-level decay with a floor on the grid."""

    sigma0: float = 20.0
    rho: float = 0.7
    floor: int = 2

    def level_for_stage(self, k: int) -> int:
        if k < 0:
            raise ValueError("stage index must be >= 0")
        target = self.sigma0 * self.rho**k
        level = 2 * int(math.floor(target / 2.0 + 0.5))
        return max(self.floor, min(level, NOISE_GRID[-1]))


@dataclass(frozen=True)
class PredictorBank:
    """Noise-level-indexed predictors: level 0 (identity) plus the grid."""

    levels: dict[int, Predictor] = field(default_factory=dict)

    def __post_init__(self):
        if not self.levels:
            raise FormatError("empty predictor bank")
        channel_counts = {
            p.channels
            for p in self.levels.values()
            if p.channels is not None  # classical predictors are agnostic
        }
        if len(channel_counts) > 1:
            raise FormatError(
                f"bank mixes channel counts {sorted(channel_counts)}"
            )

    def predictor_for_level(self, level: int) -> Predictor:
        if level not in self.levels:
            raise FormatError(f"bank has no level {level}")
        return self.levels[level]


def classical_bank() -> PredictorBank:
    """Zero-asset bank: level 0 identity, grid levels as decaying blurs."""
    levels: dict[int, Predictor] = {0: identity_predictor()}
    for level in NOISE_GRID:
        levels[level] = ClassicalPredictor(level * CLASSICAL_SIGMA_SCALE)
    return PredictorBank(levels)


def identity_bank() -> PredictorBank:
    levels: dict[int, Predictor] = {0: identity_predictor()}
    for level in NOISE_GRID:
        levels[level] = identity_predictor()
    return PredictorBank(levels)


def convnet_bank(weights_dir) -> PredictorBank:
    """Load level<NN>.dpew files from a directory; level 0 is identity."""
    from pathlib import Path

    root = Path(weights_dir)
    levels: dict[int, Predictor] = {0: identity_predictor()}
    for level in NOISE_GRID:
        path = root / f"level{level:02d}.dpew"
        if not path.exists():
            raise FormatError(f"missing weight file {path}")
        levels[level] = load_weights(path)
    return PredictorBank(levels)


def select_level(bank: PredictorBank, stage_k: int, schedule: LevelSchedule) -> Predictor:
    return bank.predictor_for_level(schedule.level_for_stage(stage_k))


def save_weights(p: ConvNetPredictor, path) -> None:
    """Binary little-endian weight file; see the package README for the
    byte layout."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<II", WEIGHT_VERSION, len(p.layers)))
        for layer in p.layers:
            out_ch, in_ch, kh, kw = layer.weights.shape
            fh.write(struct.pack("<IIIII", in_ch, out_ch, kh, kw, layer.dilation))
            fh.write(layer.weights.astype("<f4").tobytes())
            fh.write(layer.bias.astype("<f4").tobytes())


def load_weights(path) -> ConvNetPredictor:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    if blob[:4] != WEIGHT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, layer_count = struct.unpack_from("<II", blob, 4)
    if version != WEIGHT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if layer_count == 0:
        raise FormatError(f"{path}: zero layers")
    offset = 12
    layers = []
    for i in range(layer_count):
        if offset + 20 > len(blob):
            raise FormatError(f"{path}: truncated layer header at layer {i}")
        in_ch, out_ch, kh, kw, dilation = struct.unpack_from("<IIIII", blob, offset)
        offset += 20
        if min(in_ch, out_ch, kh, kw, dilation) == 0:
            raise FormatError(f"{path}: zero dimension in layer {i}")
        wn = out_ch * in_ch * kh * kw
        if offset + 4 * (wn + out_ch) > len(blob):
            raise FormatError(f"{path}: truncated tensor at layer {i}")
        weights = np.frombuffer(blob, dtype="<f4", count=wn, offset=offset)
        offset += 4 * wn
        bias = np.frombuffer(blob, dtype="<f4", count=out_ch, offset=offset)
        offset += 4 * out_ch
        if not np.all(np.isfinite(weights)) or not np.all(np.isfinite(bias)):
            raise FormatError(f"{path}: non-finite weight in layer {i}")
        layers.append(
            ConvLayer(
                weights=weights.reshape(out_ch, in_ch, kh, kw).copy(),
                bias=bias.copy(),
                dilation=int(dilation),
            )
        )
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return ConvNetPredictor(layers)
