"""Fold batch normalization into the preceding convolution.

For BN with statistics (mu, var), scale gamma, shift beta and guard eps:

    W' = W * gamma / sqrt(var + eps)      (per output channel)
    b' = (b - mu) * gamma / sqrt(var + eps) + beta

The result is an affine-equivalent plain conv stack; inference never sees
normalization statistics afterwards.
"""

from __future__ import annotations

import torch
from torch import nn

from .model import ResidualDenoiser


def fold_batchnorm(model: ResidualDenoiser) -> ResidualDenoiser:
    model = model.eval()
    folded = ResidualDenoiser(
        channels=model.convs[0].in_channels, hidden=model.convs[1].in_channels
    )
    folded.eval()
    with torch.no_grad():
        for i, (conv, norm) in enumerate(zip(model.convs, model.norms)):
            w = conv.weight.detach().clone()
            b = conv.bias.detach().clone()
            if isinstance(norm, nn.BatchNorm2d):
                scale = norm.weight.detach() / torch.sqrt(
                    norm.running_var.detach() + norm.eps
                )
                w = w * scale[:, None, None, None]
                b = (b - norm.running_mean.detach()) * scale + norm.bias.detach()
            folded.convs[i].weight.copy_(w)
            folded.convs[i].bias.copy_(b)
            folded.norms[i] = nn.Identity()
    return folded
