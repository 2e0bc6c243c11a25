"""The restoration energy: quadratic fidelity, log-type gradient prior,
and a box constraint.

    E(x) = 1/2 ||A(x) - y||^2
         + lam * sum_i [ log(1 + theta*dx_i^2) + log(1 + theta*dy_i^2) ]
         + indicator of alpha <= x <= beta

dx/dy are circular forward differences (see dpe.plane). The prior is
smooth and non-convex; both it and the fidelity are differentiable, so
the only non-smooth piece is the box indicator.

The anchored smooth part used by one propagation stage is

    psi(x) = fidelity + prior + (eta/2) * ||x - x_anchor||^2

whose exact gradient grad_smooth() returns. Feasibility for the indicator
is checked with tolerance FEASIBLE_TOL on each bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .plane import ImagePlane, check_same_shape, forward_diff, forward_diff_adjoint

FEASIBLE_TOL = 1e-12


@dataclass(frozen=True)
class EnergyParams:
    """Weights and bounds of the energy, plus the stage proximal weight."""

    lam: float = 7.5e-4
    theta: float = 4.0
    alpha: float = 0.0
    beta: float = 1.0
    eta: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.theta <= 0:
            raise ConfigError(f"theta must be > 0, got {self.theta}")
        if not self.alpha < self.beta:
            raise ConfigError(f"need alpha < beta, got [{self.alpha}, {self.beta}]")
        if self.eta <= 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")

    def with_eta(self, eta: float) -> "EnergyParams":
        return EnergyParams(self.lam, self.theta, self.alpha, self.beta, eta)


def eval_fidelity(op, x: ImagePlane, y: ImagePlane) -> float:
    """1/2 ||A(x) - y||^2."""
    ax = op.apply(x)
    check_same_shape(ax, y)
    r = ax.data - y.data
    return 0.5 * float(np.sum(r * r))


def eval_prior(x: ImagePlane, params: EnergyParams) -> float:
    g = forward_diff(x.data)
    acc = np.sum(np.log1p(params.theta * g.dx * g.dx))
    acc += np.sum(np.log1p(params.theta * g.dy * g.dy))
    return params.lam * float(acc)


def prior_gradient(x: ImagePlane, params: EnergyParams) -> np.ndarray:
    """Exact gradient of the prior. Zero mean by construction (a
    divergence of difference fields)."""
    g = forward_diff(x.data)
    u = 2.0 * params.theta * g.dx / (1.0 + params.theta * g.dx * g.dx)
    v = 2.0 * params.theta * g.dy / (1.0 + params.theta * g.dy * g.dy)
    return params.lam * forward_diff_adjoint(u, v)


def grad_smooth(
    x: ImagePlane,
    y: ImagePlane,
    x_anchor: ImagePlane,
    op,
    params: EnergyParams,
) -> ImagePlane:
    """Gradient of fidelity + prior + (eta/2)||x - x_anchor||^2 at x."""
    check_same_shape(x, x_anchor)
    residual = op.apply(x)
    check_same_shape(residual, y)
    data_term = op.adjoint(
        ImagePlane(residual.data - y.data)
    ).data
    if data_term.shape != x.shape:
        raise DimensionError("adjoint output shape does not match x")
    grad = data_term + prior_gradient(x, params)
    grad += params.eta * (x.data - x_anchor.data)
    return ImagePlane(grad)


def is_feasible(x: ImagePlane, params: EnergyParams) -> bool:
    return x.is_feasible(params.alpha, params.beta, tol=FEASIBLE_TOL)


def eval_energy(x: ImagePlane, y: ImagePlane, op, params: EnergyParams) -> float:
    """fidelity + prior on the box, +inf outside it."""
    if not is_feasible(x, params):
        return math.inf
    return eval_fidelity(op, x, y) + eval_prior(x, params)


def project_box(x: ImagePlane, params: EnergyParams) -> ImagePlane:
    return ImagePlane(np.clip(x.data, params.alpha, params.beta))
