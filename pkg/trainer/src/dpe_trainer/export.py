"""Writer for the portable "DPEW" weight format plus a JSON sidecar.

Byte layout (little-endian): magic b"DPEW", u32 version=1, u32
layer_count; per layer u32 in_ch, out_ch, kh, kw, dilation, then f32
weights in [out][in][kh][kw] order, then f32 bias[out]. The model must be
folded first (no normalization layers left).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .model import ResidualDenoiser

MAGIC = b"DPEW"
VERSION = 1


def export_weights(model: ResidualDenoiser, path) -> None:
    for norm in model.norms:
        if not isinstance(norm, nn.Identity):
            raise ValueError("fold batch norm before exporting")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(model.convs)))
        for conv in model.convs:
            w = conv.weight.detach().numpy().astype("<f4")
            b = conv.bias.detach().numpy().astype("<f4")
            if not np.all(np.isfinite(w)) or not np.all(np.isfinite(b)):
                raise ValueError("refusing to export non-finite weights")
            out_ch, in_ch, kh, kw = w.shape
            fh.write(
                struct.pack("<IIIII", in_ch, out_ch, kh, kw, conv.dilation[0])
            )
            fh.write(w.tobytes())
            fh.write(b.tobytes())


def write_sidecar(path, level: int, epochs: int, seed: int, final_loss: float) -> None:
    sidecar = Path(path).with_suffix(".json")
    sidecar.write_text(
        json.dumps(
            {"level": level, "epochs": epochs, "seed": seed, "final_loss": final_loss},
            indent=2,
        )
        + "\n"
    )
