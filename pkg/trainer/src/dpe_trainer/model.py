"""The residual denoiser: 7 dilated 3x3 conv layers, 64 hidden channels,
ReLU between layers, batch normalization on layers 2-6. The network
predicts the noise; the restoration side applies x - N(x)."""

from __future__ import annotations

import torch
from torch import nn

DILATIONS = (1, 2, 3, 4, 3, 2, 1)
HIDDEN = 64


class ResidualDenoiser(nn.Module):
    def __init__(self, channels: int = 1, hidden: int = HIDDEN):
        super().__init__()
        widths = [channels] + [hidden] * (len(DILATIONS) - 1) + [channels]
        convs = []
        norms = []
        for i, dilation in enumerate(DILATIONS):
            convs.append(
                nn.Conv2d(
                    widths[i],
                    widths[i + 1],
                    kernel_size=3,
                    padding=dilation,
                    dilation=dilation,
                    bias=True,
                )
            )
            # batch norm only on the 2nd..6th linear layers; cumulative
            # running stats (momentum=None) so eval-mode inference is
            # consistent with training after even a single short epoch
            norms.append(
                nn.BatchNorm2d(widths[i + 1], momentum=None)
                if 1 <= i <= 5
                else nn.Identity()
            )
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        # Zero the last layer: an untrained network predicts a zero
        # residual, so training starts at the identity-denoiser baseline
        # and can only move below it.
        with torch.no_grad():
            self.convs[-1].weight.zero_()
            self.convs[-1].bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        last = len(self.convs) - 1
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            x = norm(conv(x))
            if i != last:
                x = torch.relu(x)
        return x


def zero_model(channels: int = 1) -> ResidualDenoiser:
    """Identity (zero-residual) model for noise level 0."""
    model = ResidualDenoiser(channels)
    with torch.no_grad():
        for conv in model.convs:
            conv.weight.zero_()
            conv.bias.zero_()
        for norm in model.norms:
            if isinstance(norm, nn.BatchNorm2d):
                norm.weight.fill_(1.0)
                norm.bias.zero_()
                norm.running_mean.zero_()
                norm.running_var.fill_(1.0)
    model.eval()
    return model
