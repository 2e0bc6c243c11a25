"""End-to-end restoration task pipelines and their synthesis.

Forward models:

  deconv    y = k (*) x + e          circular convolution, Gaussian noise
  inpaint   y = M . (x + e)          binary mask, masked pixels exactly 0
  sr        y = S H x + e            circular anti-alias blur + subsample
  dehaze    I = t.J + (1-t).A        atmospheric scattering; the variable
                                     propagated is the transmission t with
                                     identity fidelity against its initial
                                     estimate

All synthesis randomness flows from one 64-bit seed through the package
xoshiro stream (mask indices first, then noise), so instances are
bit-reproducible across platforms.

Restoration dispatches to the propagation engine with per-task default
parameters (overridable). SR restores the luminance channel and carries
chroma by bicubic upsampling; deconv/inpaint propagate all channels in
one run (the energy is separable across channels). Dehazing estimates
the atmospheric light, initializes the transmission from the dark
channel, refines it, and recovers the radiance J = (I - A)/max(t, floor) + A.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates, minimum_filter

from .energy import EnergyParams, project_box
from .errors import ConfigError, DimensionError, SolverError
from .metrics import l1_error, psnr, ssim
from .operators import Convolution, Downsample, Identity, Mask, gaussian_kernel
from .plane import ImagePlane
from .pnm import read_image
from .predictor import LevelSchedule, PredictorBank
from .propagation import PropagationConfig, Trace, run
from .rng import Xoshiro256StarStar

TASK_KINDS = ("deconv", "inpaint", "sr", "dehaze")

DEFAULT_DARK_PATCH = 9
DEFAULT_DARK_OMEGA = 0.95
DEFAULT_T_FLOOR = 0.1
DEFAULT_LIGHT_FRACTION = 0.001


# ---------------------------------------------------------------------------
# Task specs and instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeconvSpec:
    kernel_sigma: float = 1.5
    kernel_path: str | None = None  # overrides kernel_sigma when set
    noise_std: float = 0.01


@dataclass(frozen=True)
class InpaintSpec:
    missing_rate: float | None = 0.5
    text: str | None = None  # overrides missing_rate when set
    noise_std: float = 0.01


@dataclass(frozen=True)
class SRSpec:
    scale: int = 2
    noise_std: float = 0.01


@dataclass(frozen=True)
class DehazeSpec:
    airlight: tuple[float, float, float] = (0.85, 0.9, 0.95)
    t_pattern: str = "radial"  # radial | ramp
    t_min: float = 0.3
    t_max: float = 1.0


@dataclass(frozen=True)
class HazeScene:
    observed: ImagePlane  # I, RGB
    airlight: np.ndarray  # A, 3 values in [0,1]
    transmission: ImagePlane  # t, single channel, >= t_floor
    radiance: ImagePlane  # J, RGB


@dataclass
class TaskInstance:
    kind: str
    y: ImagePlane
    op: object
    truth: ImagePlane | None
    noise_std: float
    spec: object
    mask: ImagePlane | None = None
    scene: HazeScene | None = None


@dataclass(frozen=True)
class TaskConfig:
    energy: EnergyParams
    propagation: PropagationConfig
    schedule: LevelSchedule = LevelSchedule()
    dark_patch: int = DEFAULT_DARK_PATCH
    dark_omega: float = DEFAULT_DARK_OMEGA
    t_floor: float = DEFAULT_T_FLOOR
    light_fraction: float = DEFAULT_LIGHT_FRACTION


def default_task_config(kind: str) -> TaskConfig:
    """Per-task parameters; eta stays below 1 where ||A^T A|| = 1 so the
    inner projected-gradient refinement is a strict contraction."""
    if kind == "deconv":
        return TaskConfig(EnergyParams(), PropagationConfig())
    if kind == "inpaint":
        return TaskConfig(
            EnergyParams(lam=0.015, theta=2.0),
            PropagationConfig(eta=0.5, k_max=60),
        )
    if kind == "sr":
        return TaskConfig(EnergyParams(), PropagationConfig())
    if kind == "dehaze":
        return TaskConfig(
            EnergyParams(lam=0.03, theta=1.5),
            PropagationConfig(eta=0.25, k_max=20),
        )
    raise ConfigError(f"unknown task kind {kind!r}")


def test_card(n: int = 64) -> ImagePlane:
    """Deterministic single-channel test image: sinusoid + checker +
    disk, plenty of mid/high-frequency structure to restore."""
    yy, xx = np.mgrid[0:n, 0:n] / n
    img = 0.5 + 0.22 * np.sin(2 * np.pi * (xx * 4 + yy * 2))
    img += 0.18 * np.sign(np.sin(2 * np.pi * xx * 6) * np.sin(2 * np.pi * yy * 5))
    img += 0.12 * (((xx - 0.3) ** 2 + (yy - 0.6) ** 2) < 0.04)
    return ImagePlane(np.clip(img, 0.02, 0.98)[None])


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

# 5x7 stencil font for text masks; each glyph is 7 rows of 5-bit masks.
FONT_5X7 = {
    "A": (0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "B": (0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E),
    "C": (0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E),
    "D": (0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E),
    "E": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F),
    "F": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10),
    "G": (0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E),
    "H": (0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "I": (0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "J": (0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C),
    "K": (0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11),
    "L": (0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F),
    "M": (0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11),
    "N": (0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11),
    "O": (0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "P": (0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10),
    "Q": (0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D),
    "R": (0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11),
    "S": (0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E),
    "T": (0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04),
    "U": (0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "V": (0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "W": (0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11),
    "X": (0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11),
    "Y": (0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04),
    "Z": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F),
    "0": (0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E),
    "1": (0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "2": (0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F),
    "3": (0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E),
    "4": (0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02),
    "5": (0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E),
    "6": (0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E),
    "7": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08),
    "8": (0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E),
    "9": (0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C),
    " ": (0, 0, 0, 0, 0, 0, 0),
}


def text_mask(shape: tuple[int, int, int], text: str, scale: int = 2) -> np.ndarray:
    """Binary mask (1 = observed) with the text stencil zeroed, tiled in
    rows across the plane."""
    c, h, w = shape
    mask2d = np.ones((h, w))
    glyph_w, glyph_h = 6 * scale, 8 * scale  # glyph plus 1-cell spacing
    text = text.upper()
    row = 0
    ypos = scale
    while ypos + 7 * scale <= h - scale:
        xpos = scale + (row % 2) * 3 * scale
        for ch in text:
            rows = FONT_5X7.get(ch)
            if rows is None:
                raise ConfigError(f"text mask glyph {ch!r} not in the bundled font")
            if xpos + 5 * scale > w - scale:
                break
            for gy in range(7):
                for gx in range(5):
                    if rows[gy] >> (4 - gx) & 1:
                        mask2d[
                            ypos + gy * scale : ypos + (gy + 1) * scale,
                            xpos + gx * scale : xpos + (gx + 1) * scale,
                        ] = 0.0
            xpos += glyph_w
        ypos += glyph_h
        row += 1
    return np.broadcast_to(mask2d, shape).copy()


def random_mask(
    shape: tuple[int, int, int], missing_rate: float, stream: Xoshiro256StarStar
) -> np.ndarray:
    """Exactly floor(rate * H * W) zeroed pixel sites, same across channels."""
    if not 0.0 < missing_rate < 1.0:
        raise ConfigError(f"missing rate must lie in (0,1), got {missing_rate}")
    c, h, w = shape
    n_zero = int(missing_rate * h * w)
    idx = stream.choose(h * w, n_zero)
    flat = np.ones(h * w)
    flat[idx] = 0.0
    return np.broadcast_to(flat.reshape(h, w), shape).copy()


def _gaussian_noise(
    shape: tuple[int, ...], std: float, stream: Xoshiro256StarStar
) -> np.ndarray:
    if std == 0.0:
        return np.zeros(shape)
    return std * stream.gaussians(int(np.prod(shape))).reshape(shape)


def _transmission_pattern(spec: DehazeSpec, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if spec.t_pattern == "radial":
        r = np.hypot(xx / w - 0.5, yy / h - 0.55)
        t = spec.t_min + (spec.t_max - spec.t_min) * np.clip(r / 0.55, 0.0, 1.0)
    elif spec.t_pattern == "ramp":
        t = spec.t_min + (spec.t_max - spec.t_min) * (xx / max(w - 1, 1))
    else:
        raise ConfigError(f"unknown transmission pattern {spec.t_pattern!r}")
    return np.clip(t, spec.t_min, spec.t_max)[None]


def synthesize(kind: str, ground_truth: ImagePlane, spec, seed: int) -> TaskInstance:
    stream = Xoshiro256StarStar(seed)
    if kind == "deconv":
        if not isinstance(spec, DeconvSpec):
            raise ConfigError("deconv synthesis needs a DeconvSpec")
        if spec.kernel_path is not None:
            from .operators import load_kernel

            kernel = load_kernel(spec.kernel_path)
        else:
            kernel = gaussian_kernel(spec.kernel_sigma)
        op = Convolution(kernel, ground_truth.shape)
        noise = _gaussian_noise(ground_truth.shape, spec.noise_std, stream)
        y = ImagePlane(op.apply(ground_truth).data + noise)
        return TaskInstance(kind, y, op, ground_truth, spec.noise_std, spec)

    if kind == "inpaint":
        if not isinstance(spec, InpaintSpec):
            raise ConfigError("inpaint synthesis needs an InpaintSpec")
        if spec.text is not None:
            mask = text_mask(ground_truth.shape, spec.text)
        else:
            if spec.missing_rate is None:
                raise ConfigError("inpaint spec needs missing_rate or text")
            mask = random_mask(ground_truth.shape, spec.missing_rate, stream)
        op = Mask(mask)
        noise = _gaussian_noise(ground_truth.shape, spec.noise_std, stream)
        y = ImagePlane(mask * (ground_truth.data + noise))
        return TaskInstance(
            kind, y, op, ground_truth, spec.noise_std, spec, mask=ImagePlane(mask)
        )

    if kind == "sr":
        if not isinstance(spec, SRSpec):
            raise ConfigError("sr synthesis needs an SRSpec")
        op = Downsample(ground_truth.shape, spec.scale)
        low = op.apply(ground_truth)
        noise = _gaussian_noise(low.shape, spec.noise_std, stream)
        y = ImagePlane(low.data + noise)
        return TaskInstance(kind, y, op, ground_truth, spec.noise_std, spec)

    if kind == "dehaze":
        if not isinstance(spec, DehazeSpec):
            raise ConfigError("dehaze synthesis needs a DehazeSpec")
        if ground_truth.channels != 3:
            raise DimensionError("dehaze ground truth must be RGB")
        airlight = np.asarray(spec.airlight, dtype=np.float64)
        if airlight.shape != (3,) or np.any(airlight < 0) or np.any(airlight > 1):
            raise ConfigError("airlight must be 3 values in [0,1]")
        t = _transmission_pattern(spec, ground_truth.height, ground_truth.width)
        observed = t * ground_truth.data + (1.0 - t) * airlight[:, None, None]
        scene = HazeScene(
            observed=ImagePlane(observed),
            airlight=airlight,
            transmission=ImagePlane(t),
            radiance=ground_truth,
        )
        op = Identity((1, ground_truth.height, ground_truth.width))
        return TaskInstance(
            kind, scene.observed, op, ground_truth, 0.0, spec, scene=scene
        )

    raise ConfigError(f"unknown task kind {kind!r}")


# ---------------------------------------------------------------------------
# Dehazing pieces
# ---------------------------------------------------------------------------


def dark_channel(I: ImagePlane, airlight: np.ndarray, patch: int) -> np.ndarray:
    """Patch-and-channel minimum of I_c / A_c (2-D array)."""
    if patch < 1 or patch % 2 == 0:
        raise ConfigError(f"patch size must be odd, got {patch}")
    ratios = I.data / airlight[:, None, None]
    pointwise = ratios.min(axis=0)
    if patch == 1:
        return pointwise
    return minimum_filter(pointwise, size=patch, mode="nearest")


def dark_channel_transmission(
    I: ImagePlane,
    airlight: np.ndarray,
    patch: int = DEFAULT_DARK_PATCH,
    omega: float = DEFAULT_DARK_OMEGA,
    t_floor: float = DEFAULT_T_FLOOR,
) -> ImagePlane:
    airlight = np.asarray(airlight, dtype=np.float64)
    if np.any(airlight < 1e-3):
        raise SolverError(
            f"degenerate atmospheric light {airlight}: channel below 1e-3"
        )
    t = 1.0 - omega * dark_channel(I, airlight, patch)
    return ImagePlane(np.clip(t, t_floor, 1.0)[None])


def estimate_atmospheric_light(
    I: ImagePlane, fraction: float = DEFAULT_LIGHT_FRACTION
) -> np.ndarray:
    """Mean color of the brightest `fraction` of pixels ranked by the
    pointwise dark channel (min over channels)."""
    if not 0.0 < fraction <= 0.01:
        raise ConfigError(f"fraction must lie in (0, 0.01], got {fraction}")
    dark = I.data.min(axis=0).ravel()
    count = max(1, int(fraction * dark.size))
    order = np.argsort(dark, kind="stable")
    top = order[-count:]
    pixels = I.data.reshape(I.channels, -1)[:, top]
    return pixels.mean(axis=1)


def recover_radiance(
    I: ImagePlane, t: ImagePlane, airlight: np.ndarray, t_floor: float = DEFAULT_T_FLOOR
) -> ImagePlane:
    """J = (I - A)/max(t, t_floor) + A, clipped to [0,1]."""
    t_safe = np.maximum(t.data, t_floor)
    A = np.asarray(airlight, dtype=np.float64)[:, None, None]
    J = (I.data - A) / t_safe + A
    return ImagePlane(np.clip(J, 0.0, 1.0))


def dehaze_l1(
    scene: HazeScene,
    t_estimate: ImagePlane,
    airlight: np.ndarray | None = None,
    on_transmission: bool = False,
    t_floor: float = DEFAULT_T_FLOOR,
) -> float:
    """L1 error of a dehazing estimate against the synthetic scene,
    measured on radiance planes by default or directly on the
    transmission map with on_transmission=True."""
    if on_transmission:
        return l1_error(t_estimate, scene.transmission)
    A = scene.airlight if airlight is None else np.asarray(airlight)
    recovered = recover_radiance(scene.observed, t_estimate, A, t_floor)
    return l1_error(recovered, scene.radiance)


# ---------------------------------------------------------------------------
# Color helpers and bicubic upsampling
# ---------------------------------------------------------------------------

_YCBCR = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)


def rgb_to_ycbcr(p: ImagePlane) -> np.ndarray:
    ycc = np.tensordot(_YCBCR, p.data, axes=([1], [0]))
    ycc[1:] += 0.5
    return ycc


def ycbcr_to_rgb(ycc: np.ndarray) -> ImagePlane:
    ycc = ycc.copy()
    ycc[1:] -= 0.5
    rgb = np.tensordot(np.linalg.inv(_YCBCR), ycc, axes=([1], [0]))
    return ImagePlane(np.clip(rgb, 0.0, 1.0))


def bicubic_upsample(low: np.ndarray, scale: int, out_hw: tuple[int, int]) -> np.ndarray:
    """Cubic-spline upsampling on the circular grid; low-res sample j
    sits at full-res coordinate j*scale."""
    h, w = out_hw
    rows = np.arange(h, dtype=np.float64) / scale
    cols = np.arange(w, dtype=np.float64) / scale
    grid = np.meshgrid(rows, cols, indexing="ij")
    out = np.empty((low.shape[0], h, w))
    for c in range(low.shape[0]):
        out[c] = map_coordinates(low[c], grid, order=3, mode="grid-wrap")
    return out


# ---------------------------------------------------------------------------
# Restoration
# ---------------------------------------------------------------------------


def initial_estimate(instance: TaskInstance, config: TaskConfig) -> ImagePlane:
    """The pipeline's starting point in ground-truth space (used for the
    input-PSNR column and as x0 where applicable)."""
    if instance.kind in ("deconv", "inpaint"):
        return project_box(instance.y, config.energy)
    if instance.kind == "sr":
        up = bicubic_upsample(
            instance.y.data,
            instance.op.scale,
            (instance.op.in_shape[1], instance.op.in_shape[2]),
        )
        return project_box(ImagePlane(up), config.energy)
    if instance.kind == "dehaze":
        airlight = estimate_atmospheric_light(instance.y, config.light_fraction)
        t0 = dark_channel_transmission(
            instance.y, airlight, config.dark_patch, config.dark_omega, config.t_floor
        )
        return recover_radiance(instance.y, t0, airlight, config.t_floor)
    raise ConfigError(f"unknown task kind {instance.kind!r}")


def restore(
    instance: TaskInstance,
    bank: PredictorBank,
    config: TaskConfig | None = None,
) -> tuple[ImagePlane, Trace]:
    config = config or default_task_config(instance.kind)
    reference = instance.truth

    if instance.kind in ("deconv", "inpaint"):
        return run(
            instance.y,
            instance.op,
            config.energy,
            bank,
            config.propagation,
            schedule=config.schedule,
            reference=reference,
        )

    if instance.kind == "sr":
        scale = instance.op.scale
        hi_h, hi_w = instance.op.in_shape[1], instance.op.in_shape[2]
        if instance.y.channels == 1:
            x0 = ImagePlane(bicubic_upsample(instance.y.data, scale, (hi_h, hi_w)))
            x0 = project_box(x0, config.energy)
            return run(
                instance.y,
                instance.op,
                config.energy,
                bank,
                config.propagation,
                schedule=config.schedule,
                x0=x0,
                reference=reference,
            )
        # RGB: propagate luminance, carry chroma bicubically.
        ycc_low = rgb_to_ycbcr(instance.y)
        luma_op = Downsample((1, hi_h, hi_w), scale, sigma=instance.op.sigma)
        y_luma = ImagePlane(ycc_low[:1])
        x0 = project_box(
            ImagePlane(bicubic_upsample(ycc_low[:1], scale, (hi_h, hi_w))),
            config.energy,
        )
        ref_luma = (
            ImagePlane(rgb_to_ycbcr(reference)[:1]) if reference is not None else None
        )
        luma, trace = run(
            y_luma,
            luma_op,
            config.energy,
            bank,
            config.propagation,
            schedule=config.schedule,
            x0=x0,
            reference=ref_luma,
        )
        chroma = bicubic_upsample(ycc_low[1:], scale, (hi_h, hi_w))
        return ycbcr_to_rgb(np.concatenate([luma.data, chroma], axis=0)), trace

    if instance.kind == "dehaze":
        airlight = estimate_atmospheric_light(instance.y, config.light_fraction)
        t0 = dark_channel_transmission(
            instance.y, airlight, config.dark_patch, config.dark_omega, config.t_floor
        )
        t_refined, trace = run(
            t0,
            instance.op,
            config.energy,
            bank,
            config.propagation,
            schedule=config.schedule,
        )
        return recover_radiance(instance.y, t_refined, airlight, config.t_floor), trace

    raise ConfigError(f"unknown task kind {instance.kind!r}")


# ---------------------------------------------------------------------------
# Task spec strings and the benchmark runner
# ---------------------------------------------------------------------------


def parse_task_spec(kind: str, text: str):
    """Compact 'key=value,key=value' task spec (no spaces)."""
    pairs = {}
    if text.strip():
        for item in text.split(","):
            if "=" not in item:
                raise ConfigError(f"bad spec item {item!r} (need key=value)")
            key, value = item.split("=", 1)
            pairs[key.strip()] = value.strip()

    def take(name, conv, default):
        if name in pairs:
            raw = pairs.pop(name)
            try:
                return conv(raw)
            except ValueError as exc:
                raise ConfigError(f"spec key {name}: bad value {raw!r}") from exc
        return default

    if kind == "deconv":
        spec = DeconvSpec(
            kernel_sigma=take("ksigma", float, 1.5),
            kernel_path=take("kernel", str, None),
            noise_std=take("noise", float, 0.01),
        )
    elif kind == "inpaint":
        spec = InpaintSpec(
            missing_rate=take("rate", float, 0.5),
            text=take("text", str, None),
            noise_std=take("noise", float, 0.01),
        )
    elif kind == "sr":
        spec = SRSpec(scale=take("scale", int, 2), noise_std=take("noise", float, 0.01))
    elif kind == "dehaze":
        spec = DehazeSpec(
            airlight=(
                take("a_r", float, 0.85),
                take("a_g", float, 0.9),
                take("a_b", float, 0.95),
            ),
            t_pattern=take("t", str, "radial"),
            t_min=take("t_min", float, 0.3),
            t_max=take("t_max", float, 1.0),
        )
    else:
        raise ConfigError(f"unknown task kind {kind!r}")
    if pairs:
        raise ConfigError(f"unknown spec keys for {kind}: {sorted(pairs)}")
    return spec


@dataclass
class BenchRow:
    ident: str
    psnr_in: float
    psnr_out: float
    ssim_out: float
    l1_out: float
    stages: int
    seconds: float


def parse_manifest(path) -> list[tuple[str, str, str, int]]:
    """Lines: 'kind path_to_truth spec seed'; '#' comments allowed."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ConfigError(
                    f"{path}:{lineno}: need 'kind path spec seed', got {len(parts)} fields"
                )
            kind, truth_path, spec_text, seed_text = parts
            if kind not in TASK_KINDS:
                raise ConfigError(f"{path}:{lineno}: unknown kind {kind!r}")
            try:
                seed = int(seed_text)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad seed {seed_text!r}") from exc
            entries.append((kind, truth_path, spec_text, seed))
    return entries


def run_bench(
    manifest_path,
    bank: PredictorBank,
    config_overrides: dict[str, TaskConfig] | None = None,
) -> list[BenchRow]:
    rows = []
    base = Path(manifest_path).parent
    for i, (kind, truth_path, spec_text, seed) in enumerate(parse_manifest(manifest_path)):
        truth_file = Path(truth_path)
        if not truth_file.is_absolute():
            truth_file = base / truth_file
        truth = read_image(truth_file)
        spec = parse_task_spec(kind, spec_text)
        config = (config_overrides or {}).get(kind) or default_task_config(kind)
        instance = synthesize(kind, truth, spec, seed)
        start = time.perf_counter()
        restored, trace = restore(instance, bank, config)
        seconds = time.perf_counter() - start
        estimate = initial_estimate(instance, config)
        rows.append(
            BenchRow(
                ident=f"{i:03d}_{kind}_{truth_file.stem}",
                psnr_in=psnr(estimate, truth),
                psnr_out=psnr(restored, truth),
                ssim_out=ssim(restored, truth),
                l1_out=l1_error(restored, truth),
                stages=len(trace.records),
                seconds=seconds,
            )
        )
    return rows


def write_bench_csv(rows: list[BenchRow], path) -> None:
    lines = ["id,psnr_in,psnr_out,ssim_out,l1_out,stages,seconds"]
    for r in rows:
        lines.append(
            f"{r.ident},{r.psnr_in:.12g},{r.psnr_out:.12g},{r.ssim_out:.12g},"
            f"{r.l1_out:.12g},{r.stages},{r.seconds:.12g}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
