"""Built-in invariant suite for the `selftest` subcommand.

Each check recomputes its expectation with an independent method (finite
differences, dense linear algebra, inner-product probes, closed forms)
and fails loudly on violation. Runs in a few seconds on desk hardware.
"""

from __future__ import annotations

import math

import numpy as np

from .energy import EnergyParams, eval_fidelity, eval_prior, grad_smooth, project_box
from .metrics import l1_error, psnr, ssim
from .operators import Convolution, Downsample, Identity, Mask, gaussian_kernel
from .plane import ImagePlane, diff_norm, norm
from .predictor import classical_bank, identity_predictor
from .propagation import PropagationConfig, monitor, run
from .tasks import (
    DehazeSpec,
    dark_channel_transmission,
    default_task_config,
    estimate_atmospheric_light,
    recover_radiance,
    synthesize,
    test_card,
)

CHECKS: list[tuple[str, object]] = []


def check(name):
    def _register(fn):
        CHECKS.append((name, fn))
        return fn

    return _register


def _dense_matrix(op) -> np.ndarray:
    """Operator as a dense matrix by probing with basis vectors."""
    n = int(np.prod(op.in_shape))
    m = int(np.prod(op.out_shape))
    mat = np.zeros((m, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        mat[:, j] = op.apply(ImagePlane(e.reshape(op.in_shape))).data.ravel()
    return mat


def _operators(rng, shape=(1, 8, 8)):
    kern = rng.uniform(0.0, 1.0, (3, 3))
    kern /= kern.sum()
    mask = (rng.uniform(0.0, 1.0, shape) > 0.4).astype(float)
    return [
        Identity(shape),
        Convolution(kern, shape),
        Mask(mask),
        Downsample(shape, 2),
    ]


@check("gradient matches central finite differences")
def _check_gradient():
    rng = np.random.default_rng(101)
    params = EnergyParams(lam=2e-3, theta=4.0, eta=1.3)
    h = 1e-5
    for op in _operators(rng):
        x = ImagePlane(rng.uniform(0.05, 0.95, op.in_shape))
        anchor = ImagePlane(rng.uniform(0.0, 1.0, op.in_shape))
        y = ImagePlane(rng.uniform(0.0, 1.0, op.out_shape))
        analytic = grad_smooth(x, y, anchor, op, params).data
        fd = np.zeros_like(analytic)
        flat = x.data.ravel()
        for i in range(flat.size):
            for sign in (+1, -1):
                probe = flat.copy()
                probe[i] += sign * h
                p = ImagePlane(probe.reshape(op.in_shape))
                val = (
                    eval_fidelity(op, p, y)
                    + eval_prior(p, params)
                    + params.eta / 2.0 * float(np.sum((p.data - anchor.data) ** 2))
                )
                fd.ravel()[i] += sign * val / (2.0 * h)
        rel = np.max(np.abs(analytic - fd)) / (np.max(np.abs(fd)) + 1e-12)
        assert rel < 1e-5, f"{op.kind}: gradient rel err {rel:.3e}"


@check("adjoint identity <Au,v> == <u,A^T v>")
def _check_adjoint():
    rng = np.random.default_rng(102)
    for op in _operators(rng):
        for _ in range(20):
            u = ImagePlane(rng.standard_normal(op.in_shape))
            v = ImagePlane(rng.standard_normal(op.out_shape))
            lhs = float(np.sum(op.apply(u).data * v.data))
            rhs = float(np.sum(u.data * op.adjoint(v).data))
            assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs)), (
                f"{op.kind}: adjoint mismatch {lhs} vs {rhs}"
            )


@check("warm start matches dense normal equations")
def _check_warm_start():
    rng = np.random.default_rng(103)
    eta = 0.8
    for op in _operators(rng):
        x_prev = ImagePlane(rng.uniform(0.0, 1.0, op.in_shape))
        y = ImagePlane(rng.uniform(0.0, 1.0, op.out_shape))
        ws = op.warm_start(x_prev, y, eta)
        mat = _dense_matrix(op)
        n = mat.shape[1]
        dense = np.linalg.solve(
            mat.T @ mat + eta * np.eye(n),
            mat.T @ y.data.ravel() + eta * x_prev.data.ravel(),
        )
        rel = np.linalg.norm(ws.data.ravel() - dense) / np.linalg.norm(dense)
        assert rel < 1e-6, f"{op.kind}: warm start rel err {rel:.3e}"


@check("projection is an idempotent clamp")
def _check_projection():
    rng = np.random.default_rng(104)
    params = EnergyParams()
    for _ in range(50):
        z = ImagePlane(rng.uniform(-1.0, 2.0, (1, 6, 6)))
        p = project_box(z, params)
        assert p.is_feasible(params.alpha, params.beta)
        assert np.array_equal(p.data, project_box(p, params).data)


@check("fixed-point identity across a small propagation run")
def _check_fixed_point():
    truth = test_card(32)
    op = Convolution(gaussian_kernel(1.2), truth.shape)
    y = op.apply(truth)
    params = EnergyParams()
    config = PropagationConfig(k_max=8, stop_tol=0.0)
    residuals = []

    def on_stage(state, stage_params):
        grad = grad_smooth(state.x_next, y, state.x_k, op, stage_params)
        inner = ImagePlane(state.x_next.data - grad.data + state.m.data)
        proj = project_box(inner, stage_params)
        residuals.append(
            diff_norm(proj, state.x_next) / (1.0 + norm(state.x_next))
        )

    run(y, op, params, classical_bank(), config, on_stage=on_stage)
    worst = max(residuals)
    assert worst < 1e-10, f"fixed-point residual {worst:.3e}"


@check("monitored descent and error bound on an accepted run")
def _check_monitor():
    truth = test_card(32)
    op = Convolution(gaussian_kernel(1.2), truth.shape)
    y = op.apply(truth)
    config = PropagationConfig(k_max=10, stop_tol=0.0)
    _, trace = run(y, op, EnergyParams(), classical_bank(), config)
    report = monitor(trace, config)
    assert report.ok, report.to_text()
    assert report.acceptance_fraction >= 0.9, report.to_text()


@check("level-0 + t_max-equivalent reduction matches dense reference")
def _check_reduction():
    rng = np.random.default_rng(105)
    shape = (1, 8, 8)
    kern = rng.uniform(0.0, 1.0, (3, 3))
    kern /= kern.sum()
    op = Convolution(kern, shape)
    truth = ImagePlane(rng.uniform(0.1, 0.9, shape))
    y = ImagePlane(op.apply(truth).data + 0.01 * rng.standard_normal(shape))
    params = EnergyParams(lam=2e-3, theta=4.0)
    from .predictor import identity_bank

    config = PropagationConfig(t_max=1, k_max=25, stop_tol=0.0)
    out, _ = run(y, op, params, identity_bank(), config)

    from .energy import prior_gradient

    mat = _dense_matrix(op)
    n = mat.shape[1]
    eta = config.eta
    x = np.clip(y.data.ravel(), 0.0, 1.0)
    yv = y.data.ravel()
    for _ in range(25):
        ws = np.linalg.solve(
            mat.T @ mat + eta * np.eye(n), mat.T @ yv + eta * x
        )
        g = mat.T @ (mat @ ws - yv)
        g += prior_gradient(ImagePlane(ws.reshape(shape)), params).ravel()
        g += eta * (ws - x)
        x = np.clip(ws - g, 0.0, 1.0)
    err = np.linalg.norm(out.data.ravel() - x)
    assert err < 1e-10, f"reduction trajectory err {err:.3e}"


@check("metric closed forms")
def _check_metrics():
    a = test_card(32)
    assert psnr(a, a) == 99.0
    assert ssim(a, a) == 1.0
    assert l1_error(a, a) == 0.0
    b = ImagePlane(a.data + 16.0 / 255.0)
    expected = 10.0 * math.log10(255.0**2 / 256.0)
    assert abs(psnr(a, b) - expected) < 0.01


@check("dehaze round-trip and refinement direction")
def _check_dehaze():
    base = test_card(48)
    rgb = ImagePlane(
        np.clip(
            np.stack([base.data[0], np.roll(base.data[0], 3, 0), 0.5 * base.data[0] + 0.2]),
            0.0,
            1.0,
        )
    )
    instance = synthesize("dehaze", rgb, DehazeSpec(), 17)
    scene = instance.scene
    exact = recover_radiance(scene.observed, scene.transmission, scene.airlight)
    assert np.max(np.abs(exact.data - rgb.data)) < 1e-12
    cfg = default_task_config("dehaze")
    airlight = estimate_atmospheric_light(scene.observed, cfg.light_fraction)
    t0 = dark_channel_transmission(scene.observed, airlight, cfg.dark_patch)
    j_init = recover_radiance(scene.observed, t0, airlight)
    t_ref, _ = run(t0, instance.op, cfg.energy, classical_bank(), cfg.propagation)
    j_ref = recover_radiance(scene.observed, t_ref, airlight)
    assert l1_error(j_ref, rgb) < l1_error(j_init, rgb)


@check("identity predictor is exact")
def _check_identity_predictor():
    rng = np.random.default_rng(106)
    x = ImagePlane(rng.uniform(0.0, 1.0, (1, 9, 9)))
    p = identity_predictor()
    assert np.all(p.predict_residual(x).data == 0.0)


def run_selftest(verbose: bool = True) -> int:
    """Returns the number of failed checks; prints one line per check."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except AssertionError as exc:
            failures += 1
            if verbose:
                print(f"FAIL {name}: {exc}")
        except Exception as exc:  # noqa: BLE001 - report, keep going
            failures += 1
            if verbose:
                print(f"ERROR {name}: {exc!r}")
        else:
            if verbose:
                print(f"ok   {name}")
    return failures
