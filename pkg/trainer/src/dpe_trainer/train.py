"""Patch-based training of the denoiser bank.

For noise level s (8-bit scale) the trainer crops clean patches from a
corpus directory (PNG/PGM grayscale), adds Gaussian noise of std s/255,
and minimizes the mean squared error between the network output and the
injected noise (the network predicts the residual). Level 0 skips
training and emits the zero (identity) model.

Patch sizes follow the two task families: 35x35 for image propagation,
80x80 for transmission propagation.

Everything is seeded and single-threaded, so a fixed seed reproduces the
exported weight file bit for bit on one machine.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .export import export_weights, write_sidecar
from .fold import fold_batchnorm
from .model import ResidualDenoiser, zero_model

NOISE_GRID = tuple(range(2, 22, 2))
PATCH_IMAGE = 35
PATCH_TRANSMISSION = 80

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")


@dataclass(frozen=True)
class TrainSpec:
    domain: str = "image"  # image | transmission
    patch_count: int = 512
    epochs: int = 3
    batch_size: int = 16
    learning_rate: float = 2e-4
    seed: int = 0

    def __post_init__(self):
        if self.domain not in ("image", "transmission"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.patch_count < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("patch_count, epochs and batch_size must be >= 1")

    @property
    def patch_size(self) -> int:
        return PATCH_IMAGE if self.domain == "image" else PATCH_TRANSMISSION


class DivergedError(RuntimeError):
    """Training loss became non-finite."""


def _load_gray(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0


def load_corpus(corpus_dir) -> list[np.ndarray]:
    root = Path(corpus_dir)
    paths = sorted(
        p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    images = [_load_gray(p) for p in paths]
    if not images:
        raise FileNotFoundError(f"no corpus images (PNG/PGM) in {root}")
    return images


def sample_patches(
    images: list[np.ndarray], count: int, size: int, generator: torch.Generator
) -> torch.Tensor:
    usable = [img for img in images if img.shape[0] >= size and img.shape[1] >= size]
    if not usable:
        raise ValueError(f"no corpus image is at least {size}x{size}")
    patches = torch.empty(count, 1, size, size)
    for i in range(count):
        img = usable[int(torch.randint(len(usable), (1,), generator=generator))]
        r = int(torch.randint(img.shape[0] - size + 1, (1,), generator=generator))
        c = int(torch.randint(img.shape[1] - size + 1, (1,), generator=generator))
        patches[i, 0] = torch.from_numpy(img[r : r + size, c : c + size]).float()
    return patches


def _draw_training_set(
    spec: TrainSpec, level: int, corpus_dir
) -> tuple[torch.Tensor, torch.Tensor]:
    generator = torch.Generator().manual_seed(spec.seed + level)
    images = load_corpus(corpus_dir)
    clean = sample_patches(images, spec.patch_count, spec.patch_size, generator)
    noise = (level / 255.0) * torch.randn(clean.shape, generator=generator)
    return clean, noise


def _eval_loss(model: ResidualDenoiser, clean, noise, batch: int = 32) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, clean.shape[0], batch):
            sl = slice(start, start + batch)
            out = model(clean[sl] + noise[sl])
            total += float(((out - noise[sl]) ** 2).sum())
    return total / noise.numel()


def train_denoiser(
    spec: TrainSpec, level: int, corpus_dir
) -> tuple[ResidualDenoiser, float]:
    """Returns (trained model, final loss), where final loss is the
    eval-mode MSE over the full patch set after the last epoch. Level 0
    returns the identity model with loss 0."""
    if level != 0 and level not in NOISE_GRID:
        raise ValueError(f"level must be 0 or one of {NOISE_GRID}, got {level}")
    if level == 0:
        return zero_model(), 0.0

    torch.manual_seed(spec.seed + level)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    generator = torch.Generator().manual_seed(spec.seed + level)
    clean, noise = _draw_training_set(spec, level, corpus_dir)

    model = ResidualDenoiser()
    optimizer = torch.optim.Adam(model.parameters(), lr=spec.learning_rate)
    loss_fn = torch.nn.MSELoss()

    for _ in range(spec.epochs):
        model.train()
        order = torch.randperm(spec.patch_count, generator=generator)
        for start in range(0, spec.patch_count, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            noisy = clean[idx] + noise[idx]
            optimizer.zero_grad()
            loss = loss_fn(model(noisy), noise[idx])
            loss.backward()
            optimizer.step()
            if not np.isfinite(float(loss.detach())):
                raise DivergedError(f"loss diverged at level {level}")
    return model, _eval_loss(model, clean, noise)


def initial_loss(spec: TrainSpec, level: int, corpus_dir) -> float:
    """Eval-mode loss of an untrained model on the same patch draw; the
    zero-initialized last layer makes this exactly the noise energy."""
    torch.manual_seed(spec.seed + level)
    clean, noise = _draw_training_set(spec, level, corpus_dir)
    return _eval_loss(ResidualDenoiser(), clean, noise)


def train_and_export(
    spec: TrainSpec, level: int, corpus_dir, out_dir
) -> Path:
    """Full pipeline for one level: train, fold, export + sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, final_loss = train_denoiser(spec, level, corpus_dir)
    folded = fold_batchnorm(model)
    path = out_dir / f"level{level:02d}.dpew"
    export_weights(folded, path)
    write_sidecar(path, level, spec.epochs if level else 0, spec.seed, final_loss)
    return path


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        description="Train the residual denoiser bank and export DPEW files"
    )
    parser.add_argument("--corpus", required=True, help="directory of clean images")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--levels",
        default=",".join(str(level) for level in NOISE_GRID),
        help="comma-separated noise levels (default: the full grid)",
    )
    parser.add_argument("--domain", choices=("image", "transmission"), default="image")
    parser.add_argument("--patches", type=int, default=512)
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    spec = TrainSpec(
        domain=args.domain,
        patch_count=args.patches,
        epochs=args.epochs,
        seed=args.seed,
    )
    for level_text in args.levels.split(","):
        level = int(level_text)
        path = train_and_export(spec, level, args.corpus, args.out)
        print(f"level {level:2d} -> {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
