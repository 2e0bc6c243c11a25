import math

import numpy as np
import pytest

from dpe.energy import EnergyParams, eval_energy, eval_fidelity, grad_smooth, prior_gradient, project_box
from dpe.errors import ConfigError
from dpe.operators import Convolution, Identity, gaussian_kernel
from dpe.plane import ImagePlane, diff_norm, norm
from dpe.predictor import ClassicalPredictor, classical_bank, identity_bank, identity_predictor
from dpe.propagation import (
    PropagationConfig,
    PropagationState,
    Trace,
    TraceRecord,
    check_condition,
    compute_error,
    dpe_stage,
    estimate_lipschitz,
    monitor,
    run,
    write_trace_csv,
)
from dpe.tasks import test_card as make_card

from conftest import probe_matrix, random_kernel, random_plane


class TestConfig:
    def test_defaults(self):
        cfg = PropagationConfig()
        assert cfg.eta == 1.0 and cfg.c_ratio == 0.4
        assert cfg.t_max == 10 and cfg.k_max == 30 and cfg.stop_tol == 1e-4
        assert cfg.variant == "c-dpe"

    def test_c_ratio_open_interval(self):
        with pytest.raises(ConfigError, match="open interval"):
            PropagationConfig(c_ratio=0.5)
        with pytest.raises(ConfigError):
            PropagationConfig(c_ratio=0.0)

    def test_eta_schedule(self):
        cfg = PropagationConfig(eta_schedule=(2.0, 1.0, 0.5))
        assert cfg.eta_for_stage(0) == 2.0
        assert cfg.eta_for_stage(2) == 0.5
        assert cfg.eta_for_stage(9) == 0.5  # last entry persists

    def test_bad_variant(self):
        with pytest.raises(ConfigError):
            PropagationConfig(variant="fista")


class TestComputeError:
    def test_equal_points_cancel_to_zero(self, rng):
        x = random_plane(rng)
        y = random_plane(rng)
        params = EnergyParams(eta=1.0)
        m = compute_error(x, x, x, y, Identity(x.shape), params)
        assert np.all(m.data == 0.0)

    def test_interior_subdifferential_reduces_to_grad(self, rng):
        # When the projection is inactive, x_next = x_ddot - grad(x_ddot),
        # so m collapses to grad at x_next (the box subgradient is 0).
        params = EnergyParams(lam=1e-3, theta=2.0, eta=1.0)
        op = Identity((1, 6, 6))
        x_k = ImagePlane(rng.uniform(0.4, 0.6, (1, 6, 6)))
        y = ImagePlane(rng.uniform(0.4, 0.6, (1, 6, 6)))
        x_ddot = ImagePlane(rng.uniform(0.45, 0.55, (1, 6, 6)))
        g = grad_smooth(x_ddot, y, x_k, op, params)
        x_next = ImagePlane(x_ddot.data - g.data)
        assert x_next.is_feasible(0.0, 1.0)  # interior: projection inactive
        m = compute_error(x_ddot, x_next, x_k, y, op, params)
        g_next = grad_smooth(x_next, y, x_k, op, params)
        assert np.max(np.abs(m.data - g_next.data)) < 1e-12

    def test_fixed_point_identity_random_instance(self, rng):
        shape = (1, 8, 8)
        params = EnergyParams(lam=2e-3, theta=4.0, eta=1.0)
        op = Convolution(random_kernel(rng), shape)
        x_k = random_plane(rng, shape)
        y = random_plane(rng, shape)
        x_ddot = ImagePlane(rng.uniform(-0.2, 1.2, shape))
        g = grad_smooth(x_ddot, y, x_k, op, params)
        x_next = project_box(ImagePlane(x_ddot.data - g.data), params)
        m = compute_error(x_ddot, x_next, x_k, y, op, params)
        inner = x_next.data - grad_smooth(x_next, y, x_k, op, params).data + m.data
        reproj = project_box(ImagePlane(inner), params)
        assert diff_norm(reproj, x_next) < 1e-10 * (1.0 + norm(x_next))


class TestCheckCondition:
    def test_zero_error_any_step(self, rng):
        x_k = random_plane(rng)
        x_next = ImagePlane(x_k.data + 0.1)
        zero = ImagePlane(np.zeros(x_k.shape))
        holds, margin = check_condition(zero, x_next, x_k, 0.4)
        assert holds and margin > 0.0

    def test_violated_margin_is_negative(self):
        shape = (1, 1, 4)
        m = ImagePlane(np.array([[[1.0, 0.0, 0.0, 0.0]]]))
        x_k = ImagePlane(np.zeros(shape))
        x_next = ImagePlane(np.array([[[0.5, 0.0, 0.0, 0.0]]]))
        holds, margin = check_condition(m, x_next, x_k, 1.0)
        assert not holds
        assert margin == pytest.approx(-0.5)

    def test_boundary_zero_zero_holds(self, rng):
        x = random_plane(rng)
        zero = ImagePlane(np.zeros(x.shape))
        holds, margin = check_condition(zero, x, x, 0.4)
        assert holds and margin == 0.0


class TestDpeStage:
    def test_degenerate_identity_case_energy_non_increasing(self, rng):
        # level-0 predictor, lam=0: one damped step toward y + projections
        shape = (1, 8, 8)
        params = EnergyParams(lam=1e-12, theta=1.0, eta=1.0)
        op = Identity(shape)
        y = random_plane(rng, shape)
        x_k = project_box(random_plane(rng, shape), params)
        config = PropagationConfig(t_max=20)
        state = dpe_stage(
            PropagationState(k=0, x_k=x_k), y, op, params, identity_predictor(), config
        )
        assert state.x_next.is_feasible(params.alpha, params.beta)
        assert eval_energy(state.x_next, y, op, params) <= eval_energy(
            x_k, y, op, params
        )

    def test_accepted_stage_satisfies_descent_inequality(self, rng):
        # synthetic 16x16 deconvolution stage with a classical predictor
        truth = make_card(16)
        params = EnergyParams()
        op = Convolution(gaussian_kernel(1.2), truth.shape)
        y = ImagePlane(op.apply(truth).data + 0.01 * rng.standard_normal(truth.shape))
        x_k = project_box(y, params)
        config = PropagationConfig()
        state = dpe_stage(
            PropagationState(k=0, x_k=x_k), y, op, params,
            ClassicalPredictor(20 * 3.0 / 255.0), config,
        )
        assert state.accepted
        c_k = config.c_ratio * params.eta
        delta2 = diff_norm(state.x_next, x_k) ** 2
        drop = eval_energy(x_k, y, op, params) - eval_energy(state.x_next, y, op, params)
        assert drop >= (params.eta / 4.0 - c_k**2 / params.eta) * delta2 - 1e-10

    def test_s_dpe_is_projection_of_descent_output(self, rng):
        truth = make_card(16)
        params = EnergyParams()
        op = Convolution(gaussian_kernel(1.2), truth.shape)
        y = ImagePlane(op.apply(truth).data)
        x_k = project_box(y, params)
        config = PropagationConfig(variant="s-dpe")
        predictor = ClassicalPredictor(0.2)
        state = dpe_stage(PropagationState(k=0, x_k=x_k), y, op, params, predictor, config)
        from dpe.predictor import descent_step

        expected = project_box(descent_step(predictor, op.warm_start(x_k, y, params.eta)), params)
        assert np.array_equal(state.x_next.data, expected.data)
        assert state.t_used == 0


class TestRun:
    def test_constant_feasible_fixed_point(self):
        y = ImagePlane.full((1, 8, 8), 0.5)
        params = EnergyParams(lam=0.0, theta=1.0)
        config = PropagationConfig()
        out, trace = run(y, Identity(y.shape), params, classical_bank(), config)
        assert len(trace.records) <= 2
        assert diff_norm(out, y) / max(norm(y), 1.0) < 1e-3

    def test_pg_matches_independent_reference(self, rng):
        shape = (1, 8, 8)
        kernel = random_kernel(rng)
        op = Convolution(kernel, shape)
        truth = random_plane(rng, shape, 0.1, 0.9)
        y = ImagePlane(op.apply(truth).data + 0.01 * rng.standard_normal(shape))
        params = EnergyParams(lam=2e-3, theta=4.0)
        config = PropagationConfig(t_max=1, k_max=50, stop_tol=0.0, variant="pg")
        iterates = []
        run(y, op, params, identity_bank(), config,
            on_stage=lambda s, p: iterates.append(s.x_next.data.copy()))

        mat = probe_matrix(op)
        n = mat.shape[1]
        eta = config.eta
        x = np.clip(y.data.ravel(), 0.0, 1.0)
        yv = y.data.ravel()
        for step in range(50):
            ws = np.linalg.solve(mat.T @ mat + eta * np.eye(n), mat.T @ yv + eta * x)
            g = mat.T @ (mat @ ws - yv)
            g += prior_gradient(ImagePlane(ws.reshape(shape)), params).ravel()
            g += eta * (ws - x)
            x = np.clip(ws - g, 0.0, 1.0)
            err = np.linalg.norm(iterates[step].ravel() - x)
            assert err < 1e-10, f"iterate {step}: err {err:.2e}"

    def test_c_dpe_level0_tmax1_equals_pg(self, rng):
        shape = (1, 8, 8)
        op = Convolution(random_kernel(rng), shape)
        y = random_plane(rng, shape)
        params = EnergyParams()
        pg_cfg = PropagationConfig(t_max=1, k_max=20, stop_tol=0.0, variant="pg")
        red_cfg = PropagationConfig(t_max=1, k_max=20, stop_tol=0.0, variant="c-dpe")
        out_pg, tr_pg = run(y, op, params, identity_bank(), pg_cfg)
        out_red, tr_red = run(y, op, params, identity_bank(), red_cfg)
        assert diff_norm(out_pg, out_red) < 1e-10
        for a, b in zip(tr_pg.records, tr_red.records):
            assert a.energy == pytest.approx(b.energy, abs=1e-12)

    def test_gd_matches_independent_reference(self, rng):
        shape = (1, 8, 8)
        kernel = random_kernel(rng)
        op = Convolution(kernel, shape)
        y = random_plane(rng, shape)
        params = EnergyParams(lam=2e-3, theta=4.0)
        config = PropagationConfig(k_max=50, stop_tol=0.0, variant="gd")
        iterates = []
        run(y, op, params, identity_bank(), config,
            on_stage=lambda s, p: iterates.append(s.x_next.data.copy()))

        step = 1.0 / estimate_lipschitz(op, params)
        mat = probe_matrix(op)
        x = np.clip(y.data.ravel(), 0.0, 1.0)
        yv = y.data.ravel()
        for k in range(50):
            g = mat.T @ (mat @ x - yv)
            g += prior_gradient(ImagePlane(x.reshape(shape)), params).ravel()
            x = x - step * g
            err = np.linalg.norm(iterates[k].ravel() - x)
            assert err < 1e-10, f"iterate {k}: err {err:.2e}"

    def test_every_iterate_feasible(self, rng):
        truth = make_card(16)
        op = Convolution(gaussian_kernel(1.0), truth.shape)
        y = ImagePlane(op.apply(truth).data + 0.02 * rng.standard_normal(truth.shape))
        params = EnergyParams()
        states = []
        run(y, op, params, classical_bank(), PropagationConfig(k_max=8, stop_tol=0.0),
            on_stage=lambda s, p: states.append(s))
        for s in states:
            assert s.x_next.is_feasible(params.alpha, params.beta)

    def test_determinism_identical_traces(self, rng):
        truth = make_card(16)
        op = Convolution(gaussian_kernel(1.0), truth.shape)
        y = ImagePlane(op.apply(truth).data + 0.01 * rng.standard_normal(truth.shape))
        cfg = PropagationConfig(k_max=6, stop_tol=0.0)
        out1, tr1 = run(y, op, EnergyParams(), classical_bank(), cfg)
        out2, tr2 = run(y, op, EnergyParams(), classical_bank(), cfg)
        assert np.array_equal(out1.data, out2.data)
        assert [r.energy for r in tr1.records] == [r.energy for r in tr2.records]
        assert [r.m_norm for r in tr1.records] == [r.m_norm for r in tr2.records]


class TestMonitor:
    def _trace_from_run(self, k_max=10):
        truth = make_card(32)
        op = Convolution(gaussian_kernel(1.2), truth.shape)
        y = op.apply(truth)
        cfg = PropagationConfig(k_max=k_max, stop_tol=0.0)
        _, trace = run(y, op, EnergyParams(), classical_bank(), cfg)
        return trace, cfg

    def test_all_accepted_run_passes(self):
        trace, cfg = self._trace_from_run()
        report = monitor(trace, cfg)
        assert report.ok
        assert report.n_accepted == report.n_stages
        assert not report.flagged_stages

    def test_tmax_exhausted_stage_flagged_not_failed(self):
        trace, cfg = self._trace_from_run()
        forced = TraceRecord(
            k=trace.records[-1].k + 1,
            energy=trace.records[-1].energy,
            step_norm=trace.records[-1].step_norm * 0.5,
            m_norm=1.0,
            bound=0.1,
            descent_margin=-1.0,
            t_used=cfg.t_max,
            accepted=False,
            psnr=math.nan,
            eta=1.0,
            c=0.4,
        )
        trace.records.append(forced)
        report = monitor(trace, cfg)
        assert forced.k in report.flagged_stages
        assert report.ok  # flagged, but not a failure

    def test_single_stage_trace_vacuous_cauchy(self):
        trace, cfg = self._trace_from_run(k_max=1)
        report = monitor(trace, cfg)
        assert report.tail_ok and report.ok

    def test_descent_violation_detected(self):
        trace, cfg = self._trace_from_run()
        bad = trace.records[0]
        trace.records[0] = TraceRecord(
            k=bad.k, energy=bad.energy, step_norm=bad.step_norm, m_norm=bad.m_norm,
            bound=bad.bound, descent_margin=-1.0, t_used=bad.t_used, accepted=True,
            psnr=bad.psnr, eta=bad.eta, c=bad.c,
        )
        report = monitor(trace, cfg)
        assert not report.ok and 0 in report.descent_violations


class TestTraceCsv:
    def test_header_and_row_count(self, tmp_path, rng):
        truth = make_card(16)
        op = Convolution(gaussian_kernel(1.0), truth.shape)
        y = ImagePlane(op.apply(truth).data)
        cfg = PropagationConfig(k_max=5, stop_tol=0.0)
        _, trace = run(y, op, EnergyParams(), classical_bank(), cfg, reference=truth)
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "k,energy,step_norm,m_norm,bound,descent_margin,t_used,accepted,psnr"
        assert len(lines) == 1 + len(trace.records)
        first = lines[1].split(",")
        assert first[0] == "0" and first[7] in ("0", "1")

    def test_bit_stable_across_runs(self, tmp_path):
        truth = make_card(16)
        op = Convolution(gaussian_kernel(1.0), truth.shape)
        y = ImagePlane(op.apply(truth).data)
        cfg = PropagationConfig(k_max=5, stop_tol=0.0)
        paths = []
        for name in ("a.csv", "b.csv"):
            _, trace = run(y, op, EnergyParams(), classical_bank(), cfg)
            p = tmp_path / name
            write_trace_csv(trace, p)
            paths.append(p.read_bytes())
        assert paths[0] == paths[1]
