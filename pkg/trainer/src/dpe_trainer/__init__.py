"""Offline trainer for the residual denoiser bank.

Trains one small dilated conv net per Gaussian noise level on patches of
clean images, folds batch normalization into the conv weights, and
exports the portable little-endian "DPEW" weight files (plus a JSON
sidecar) that the restoration package loads for inference.
"""

__version__ = "0.1.0"
