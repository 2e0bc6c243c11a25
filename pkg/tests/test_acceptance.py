"""Acceptance suite: one test per criterion, each at its stated
tolerance, printing one PASS line on success (run with -s to see them).

The 30-stage 64x64 deconvolution run with default parameters backs the
fixed-point, feedback-acceptance, and descent criteria; task-level
improvements use the seeded synthesis pipeline with the classical bank.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from dpe.energy import EnergyParams, grad_smooth, prior_gradient, project_box
from dpe.metrics import l1_error, psnr, ssim
from dpe.operators import Convolution, Downsample, Identity, Mask
from dpe.plane import ImagePlane, diff_norm, norm
from dpe.predictor import classical_bank, identity_bank
from dpe.propagation import (
    PropagationConfig,
    estimate_lipschitz,
    monitor,
    run,
    write_trace_csv,
)
from dpe.tasks import (
    DeconvSpec,
    DehazeSpec,
    InpaintSpec,
    dark_channel_transmission,
    default_task_config,
    estimate_atmospheric_light,
    initial_estimate,
    recover_radiance,
    restore,
    synthesize,
    test_card as make_card,
)

from conftest import probe_matrix, random_kernel, random_plane

SEED = 20260810
BANK = classical_bank()


def _ok(line: str) -> None:
    print(f"ACCEPTANCE PASS: {line}")


# ---------------------------------------------------------------------------
# Shared 30-stage 64x64 deconvolution run with default parameters
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def deconv_run(tmp_path_factory):
    truth = make_card(64)
    instance = synthesize("deconv", truth, DeconvSpec(), SEED)
    params = EnergyParams()
    config = PropagationConfig(k_max=30, stop_tol=0.0)
    states = []
    out, trace = run(
        instance.y,
        instance.op,
        params,
        BANK,
        config,
        reference=truth,
        on_stage=lambda s, p: states.append((s, p)),
    )
    csv_path = tmp_path_factory.mktemp("trace") / "deconv_trace.csv"
    write_trace_csv(trace, csv_path)
    return {
        "truth": truth,
        "instance": instance,
        "params": params,
        "config": config,
        "states": states,
        "out": out,
        "trace": trace,
        "csv": csv_path,
    }


def test_gradient_oracle_20_instances_all_kinds():
    started = time.perf_counter()
    rng = np.random.default_rng(SEED)
    params = EnergyParams(lam=2e-3, theta=4.0, eta=1.3)
    shape = (1, 8, 8)
    h = 1e-5
    worst = 0.0
    for i in range(20):
        kind = i % 4
        if kind == 0:
            op = Identity(shape)
        elif kind == 1:
            op = Convolution(random_kernel(rng), shape)
        elif kind == 2:
            op = Mask((rng.uniform(0, 1, shape) > 0.4).astype(float))
        else:
            op = Downsample(shape, 2)
        x = random_plane(rng, shape, 0.05, 0.95)
        anchor = random_plane(rng, shape)
        y = random_plane(rng, op.out_shape)
        analytic = grad_smooth(x, y, anchor, op, params).data
        fd = np.zeros_like(analytic)
        flat = x.data.ravel()
        from dpe.energy import eval_fidelity, eval_prior

        for j in range(flat.size):
            vals = []
            for sign in (+1, -1):
                probe = flat.copy()
                probe[j] += sign * h
                p = ImagePlane(probe.reshape(shape))
                vals.append(
                    eval_fidelity(op, p, y)
                    + eval_prior(p, params)
                    + params.eta / 2.0 * float(np.sum((p.data - anchor.data) ** 2))
                )
            fd.ravel()[j] = (vals[0] - vals[1]) / (2.0 * h)
        rel = np.max(np.abs(analytic - fd)) / (np.max(np.abs(fd)) + 1e-12)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - started
    assert worst < 1e-5, f"max rel err {worst:.3e}"
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    _ok(f"gradient oracle: 20 instances, max rel err {worst:.2e}, {elapsed:.1f}s")


def test_warm_start_oracle_dense_normal_equations():
    rng = np.random.default_rng(SEED + 1)
    shape = (1, 8, 8)
    operators = [
        Identity(shape),
        Convolution(random_kernel(rng), shape),
        Mask((rng.uniform(0, 1, shape) > 0.4).astype(float)),
        Downsample(shape, 2),
    ]
    worst = 0.0
    for op in operators:
        for eta in (0.5, 1.0, 3.0):
            x_prev = random_plane(rng, op.in_shape)
            y = random_plane(rng, op.out_shape)
            ws = op.warm_start(x_prev, y, eta)
            mat = probe_matrix(op)
            n = mat.shape[1]
            dense = np.linalg.solve(
                mat.T @ mat + eta * np.eye(n),
                mat.T @ y.data.ravel() + eta * x_prev.data.ravel(),
            )
            rel = np.linalg.norm(ws.data.ravel() - dense) / np.linalg.norm(dense)
            worst = max(worst, rel)
    assert worst < 1e-6, f"max rel err {worst:.3e}"
    _ok(f"warm-start oracle: closed forms + CG vs dense solves, max rel err {worst:.2e}")


def test_fixed_point_identity_every_stage(deconv_run):
    states = deconv_run["states"]
    instance = deconv_run["instance"]
    assert len(states) == 30
    worst = 0.0
    for state, stage_params in states:
        grad = grad_smooth(state.x_next, instance.y, state.x_k, instance.op, stage_params)
        inner = ImagePlane(state.x_next.data - grad.data + state.m.data)
        residual = diff_norm(project_box(inner, stage_params), state.x_next)
        bound = 1e-10 * (1.0 + norm(state.x_next))
        assert residual <= bound, f"stage {state.k}: {residual:.3e} > {bound:.3e}"
        worst = max(worst, residual)
    _ok(f"fixed-point identity: 30/30 stages, worst residual {worst:.2e}")


def test_condition_feedback_acceptance_rate_and_csv(deconv_run):
    trace = deconv_run["trace"]
    accepted = [r for r in trace.records if r.accepted]
    fraction = len(accepted) / len(trace.records)
    assert fraction >= 0.9, f"accepted only {fraction:.0%}"
    # the logged CSV must show ||m|| <= bound on every accepted stage
    lines = deconv_run["csv"].read_text().strip().split("\n")
    header = lines[0].split(",")
    idx = {name: i for i, name in enumerate(header)}
    checked = 0
    for line in lines[1:]:
        cells = line.split(",")
        if cells[idx["accepted"]] == "1":
            assert float(cells[idx["m_norm"]]) <= float(cells[idx["bound"]])
            checked += 1
    assert checked == len(accepted)
    _ok(
        f"error-bound feedback: {fraction:.0%} of stages accepted via the "
        f"condition; CSV-logged m <= bound on all {checked}"
    )


def test_sufficient_descent_and_finite_length(deconv_run):
    trace = deconv_run["trace"]
    prev_energy = trace.initial_energy
    for r in trace.records:
        if r.accepted:
            drop = prev_energy - r.energy
            alpha_k = r.eta / 4.0 - r.c * r.c / r.eta
            assert drop >= alpha_k * r.step_norm**2 - 1e-10, f"stage {r.k}"
        prev_energy = r.energy
    steps = [r.step_norm for r in trace.records]
    total = sum(steps)
    assert math.isfinite(total)
    tail = steps[-5:]
    assert all(tail[i + 1] <= tail[i] for i in range(4)), f"tail {tail}"
    report = monitor(trace, deconv_run["config"])
    assert report.ok
    _ok(
        f"sufficient descent on all accepted stages; cumulative step length "
        f"{total:.4g} with decreasing last-5 tail"
    )


def test_reduction_equivalence_pg_and_gd():
    rng = np.random.default_rng(SEED + 2)
    shape = (1, 8, 8)
    kernel = random_kernel(rng)
    op = Convolution(kernel, shape)
    truth = random_plane(rng, shape, 0.1, 0.9)
    y = ImagePlane(op.apply(truth).data + 0.01 * rng.standard_normal(shape))
    params = EnergyParams(lam=2e-3, theta=4.0)
    mat = probe_matrix(op)
    n = mat.shape[1]
    yv = y.data.ravel()

    # level-0 predictor + t_max = 1 vs an independently coded
    # warm-start/projected-gradient reference in dense arithmetic
    config = PropagationConfig(t_max=1, k_max=50, stop_tol=0.0)
    iterates = []
    run(y, op, params, identity_bank(), config,
        on_stage=lambda s, p: iterates.append(s.x_next.data.copy()))
    assert len(iterates) == 50
    x = np.clip(yv, 0.0, 1.0)
    worst_pg = 0.0
    for k in range(50):
        ws = np.linalg.solve(mat.T @ mat + config.eta * np.eye(n),
                             mat.T @ yv + config.eta * x)
        g = mat.T @ (mat @ ws - yv)
        g += prior_gradient(ImagePlane(ws.reshape(shape)), params).ravel()
        g += config.eta * (ws - x)
        x = np.clip(ws - g, 0.0, 1.0)
        err = float(np.linalg.norm(iterates[k].ravel() - x))
        assert err < 1e-10, f"PG iterate {k}: err {err:.2e}"
        worst_pg = max(worst_pg, err)

    # GD variant vs an independent smooth-model gradient descent
    config_gd = PropagationConfig(k_max=50, stop_tol=0.0, variant="gd")
    gd_iterates = []
    run(y, op, params, identity_bank(), config_gd,
        on_stage=lambda s, p: gd_iterates.append(s.x_next.data.copy()))
    step = 1.0 / estimate_lipschitz(op, params)
    x = np.clip(yv, 0.0, 1.0)
    worst_gd = 0.0
    for k in range(50):
        g = mat.T @ (mat @ x - yv)
        g += prior_gradient(ImagePlane(x.reshape(shape)), params).ravel()
        x = x - step * g
        err = float(np.linalg.norm(gd_iterates[k].ravel() - x))
        assert err < 1e-10, f"GD iterate {k}: err {err:.2e}"
        worst_gd = max(worst_gd, err)
    _ok(
        f"reduction equivalence: PG worst dev {worst_pg:.2e}, "
        f"GD worst dev {worst_gd:.2e} over 50 iterates"
    )


def test_task_improvement_deconv_and_inpaint():
    truth = make_card(64)

    started = time.perf_counter()
    inst = synthesize("deconv", truth, DeconvSpec(kernel_sigma=1.5, noise_std=0.01), SEED)
    cfg = default_task_config("deconv")
    out, _ = restore(inst, BANK, cfg)
    deconv_time = time.perf_counter() - started
    gain_deconv = psnr(out, truth) - psnr(initial_estimate(inst, cfg), truth)
    assert gain_deconv >= 2.0, f"deconv gain {gain_deconv:.2f} dB"
    assert deconv_time < 30.0

    started = time.perf_counter()
    inst = synthesize("inpaint", truth, InpaintSpec(missing_rate=0.5), SEED)
    cfg = default_task_config("inpaint")
    out, _ = restore(inst, BANK, cfg)
    inpaint_time = time.perf_counter() - started
    gain_inpaint = psnr(out, truth) - psnr(initial_estimate(inst, cfg), truth)
    assert gain_inpaint >= 5.0, f"inpaint gain {gain_inpaint:.2f} dB"
    assert inpaint_time < 30.0
    _ok(
        f"task improvement: deconv +{gain_deconv:.2f} dB in {deconv_time:.1f}s, "
        f"50%-mask inpaint +{gain_inpaint:.2f} dB in {inpaint_time:.1f}s"
    )


def test_dehaze_round_trip_and_refinement():
    base = make_card(64).data[0]
    truth = ImagePlane(
        np.clip(np.stack([base, np.roll(base, 3, 0), 0.5 * base + 0.2]), 0.0, 1.0)
    )
    inst = synthesize("dehaze", truth, DehazeSpec(), SEED)
    scene = inst.scene
    exact = recover_radiance(scene.observed, scene.transmission, scene.airlight)
    residual = float(np.max(np.abs(exact.data - truth.data)))
    assert residual < 1e-12, f"inversion residual {residual:.2e}"

    cfg = default_task_config("dehaze")
    airlight = estimate_atmospheric_light(scene.observed, cfg.light_fraction)
    t0 = dark_channel_transmission(scene.observed, airlight, cfg.dark_patch)
    j_init = recover_radiance(scene.observed, t0, airlight)
    out, _ = restore(inst, BANK, cfg)
    before = l1_error(j_init, truth)
    after = l1_error(out, truth)
    assert after < before, f"L1 {before:.5f} -> {after:.5f}"
    _ok(
        f"dehaze: inversion residual {residual:.1e}; radiance L1 "
        f"{before:.5f} -> {after:.5f} after transmission refinement"
    )


def test_metric_oracles():
    rng = np.random.default_rng(SEED + 3)
    a = ImagePlane(rng.uniform(0.2, 0.8, (1, 16, 16)))
    b = ImagePlane(a.data + 16.0 / 255.0)
    expected = 10.0 * math.log10(255.0**2 / 256.0)
    measured = psnr(a, b)
    assert abs(measured - expected) < 0.01
    assert ssim(a, a) == 1.0
    assert l1_error(a, a) == 0.0
    _ok(
        f"metric oracles: constant-offset PSNR {measured:.4f} dB "
        f"(closed form {expected:.4f}), ssim(a,a)=1, l1(a,a)=0"
    )
