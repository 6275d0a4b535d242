import numpy as np
import pytest
import scipy.linalg

from masobs.errors import (ConnectivityError, DomainError, NonFiniteError)
from masobs.graphs import DirectedGraph
from masobs.mas import MasModel, plant_derivative, plant_output
from masobs.observer import (assemble_error_dynamics, fit_decay_envelope,
                             observer_derivative, pack_observer_state,
                             unpack_observer_state)
from masobs.scenarios import (coupled_triple_model,
                              coupled_triple_scenario, plugin_base_model,
                              plugin_join_scenario, plugin_leave_scenario,
                              plugin_policy, ring_localization_scenario)
from masobs.sim import (ConstantInput, GainPolicy, JoinEvent, LeaveEvent,
                        NoiseSpec, PiecewiseInput, ScenarioConfig, SinusoidInput,
                        apply_event, check_exponential_envelope, error_norms,
                        integrate_step, read_trace_csv, resolve_gains,
                        run_scenario, scenario_from_json, scenario_to_json,
                        trace_columns, trace_matrix, write_metadata,
                        write_trace_csv)


def _short_triple(t_end=3.0, **kwargs):
    defaults = dict(noise=False, t_end=t_end, dt=1e-3)
    defaults.update(kwargs)
    return coupled_triple_scenario(**defaults)


class TestIntegrateStep:
    def test_constant_state(self):
        out = integrate_step(lambda t, x: np.zeros_like(x), np.array([1.0, -2.0]),
                             0.0, 0.1)
        assert np.array_equal(out, [1.0, -2.0])

    def test_scalar_decay_matches_closed_form(self):
        x = np.array([1.0])
        for k in range(100):
            x = integrate_step(lambda t, v: -v, x, k * 0.1, 0.1)
        assert abs(x[0] - np.exp(-10.0)) < 1e-8

    def test_linear_system_matches_matrix_exponential(self):
        a = np.array([[1.2, 1.0], [0.0, 0.8]])
        x = np.array([0.5, -0.5])
        dt = 1e-3
        for k in range(1000):
            x = integrate_step(lambda t, v: a @ v, x, k * dt, dt)
        expected = scipy.linalg.expm(a) @ np.array([0.5, -0.5])
        assert np.max(np.abs(x - expected)) < 1e-10 * np.max(np.abs(expected)) + 1e-12

    def test_nonfinite_detected(self):
        with pytest.raises(NonFiniteError):
            integrate_step(lambda t, v: v * np.inf, np.ones(2), 0.0, 0.1)

    def test_bad_dt(self):
        with pytest.raises(DomainError):
            integrate_step(lambda t, v: v, np.ones(1), 0.0, 0.0)


class TestSignals:
    def test_constant(self):
        assert np.array_equal(ConstantInput((1.0, 2.0)).evaluate(5.0), [1.0, 2.0])

    def test_sinusoid_phase(self):
        sig = SinusoidInput(amplitude=(-0.1, 0.1), frequency=0.01,
                            phase=(0.0, np.pi / 2))
        t = 12.3
        got = sig.evaluate(t)
        assert got[0] == pytest.approx(-0.1 * np.sin(0.01 * t))
        assert got[1] == pytest.approx(0.1 * np.cos(0.01 * t))

    def test_piecewise_hold(self):
        sig = PiecewiseInput(times=(0.0, 1.0, 2.0),
                             values=((0.0,), (1.0,), (3.0,)))
        assert sig.evaluate(0.5) == pytest.approx([0.0])
        assert sig.evaluate(1.0) == pytest.approx([1.0])
        assert sig.evaluate(99.0) == pytest.approx([3.0])


class TestRunScenario:
    def test_equilibrium_stays_put(self):
        cfg = _short_triple()
        x0 = np.asarray(cfg.initial_state)
        model = cfg.model
        estimates = {"xbar": {i: x0[model.state_slice(i)] for i in model.agents},
                     "xhat": {i: x0 for i in model.agents}}
        cfg = ScenarioConfig(model=model, policy=cfg.policy, t_end=2.0, dt=1e-3,
                             initial_state=cfg.initial_state,
                             initial_estimates=estimates)
        trace = run_scenario(cfg)
        assert np.all(trace.total_error <= 1e-9)

    def test_linearity_in_initial_error(self):
        base = _short_triple()
        model = base.model
        x0 = np.asarray(base.initial_state)

        def run_with_scaled_error(scale):
            estimates = {"xbar": {i: (1 - scale) * x0[model.state_slice(i)]
                                  for i in model.agents},
                         "xhat": {i: (1 - scale) * x0 for i in model.agents}}
            cfg = ScenarioConfig(model=model, policy=base.policy, t_end=2.0,
                                 dt=1e-3, initial_state=base.initial_state,
                                 initial_estimates=estimates)
            return run_scenario(cfg)

        one = run_with_scaled_error(1.0)
        two = run_with_scaled_error(2.0)
        mask = one.total_error > 1e-8
        ratio = two.total_error[mask] / one.total_error[mask]
        assert np.allclose(ratio, 2.0, rtol=1e-9)

    def test_linearized_dynamics_match_blockwise_equations(self):
        cfg = _short_triple(t_end=0.2)
        model = cfg.model
        gains, _ = resolve_gains(model, cfg.policy)
        from masobs.sim import _linearize_segment
        m_mat, g_u, g_w, g_v = _linearize_segment(model, gains)
        rng = np.random.default_rng(91)
        z = rng.standard_normal(m_mat.shape[0])
        x = z[:model.n]
        state = unpack_observer_state(model, z[model.n:])
        y = plant_output(model, x)
        ds = observer_derivative(model, gains, state, None, y)
        expected = np.concatenate([plant_derivative(model, x, None),
                                   pack_observer_state(model, ds)])
        assert np.allclose(m_mat @ z, expected, atol=1e-9)

    def test_envelope_on_short_run(self):
        cfg = _short_triple(t_end=5.0)
        trace = run_scenario(cfg)
        gains, _ = resolve_gains(cfg.model, cfg.policy)
        kappa, eta = fit_decay_envelope(assemble_error_dynamics(cfg.model, gains).r)
        ok, worst = check_exponential_envelope(trace, kappa, eta)
        assert ok, f"envelope violated by {worst}"

    def test_dt_refinement_on_short_horizon(self):
        coarse = run_scenario(_short_triple(t_end=5.0, dt=1e-3))
        fine = run_scenario(_short_triple(t_end=5.0, dt=5e-4))
        assert abs(coarse.total_error[-1] - fine.total_error[-1]) < 1e-6

    def test_dt_refinement_on_localization_ring(self):
        coarse = run_scenario(ring_localization_scenario(t_end=50.0, dt=1e-2))
        fine = run_scenario(ring_localization_scenario(t_end=50.0, dt=5e-3))
        assert abs(coarse.total_error[-1] - fine.total_error[-1]) < 1e-6

    def test_noise_draws_respect_bounds_and_seed(self):
        cfg = coupled_triple_scenario(noise=True, t_end=1.0)
        t1 = run_scenario(cfg)
        t2 = run_scenario(cfg)
        assert np.array_equal(trace_matrix(t1), trace_matrix(t2))
        reseeded = ScenarioConfig(model=cfg.model, policy=cfg.policy,
                                  noise=cfg.noise, t_end=1.0, dt=cfg.dt,
                                  seed=cfg.seed + 1, record_every=cfg.record_every,
                                  initial_state=cfg.initial_state)
        t3 = run_scenario(reseeded)
        assert not np.array_equal(trace_matrix(t1), trace_matrix(t3))

    def test_disconnected_communication_rejected(self):
        model = MasModel.build(
            a_diag=[[[0.1]], [[0.2]]], c_diag=[[[1.0]], [[1.0]]],
            communication=DirectedGraph.from_edges(2, [(1, 2)]))
        cfg = ScenarioConfig(model=model, policy=GainPolicy(mu=1.0), t_end=1.0)
        with pytest.raises(ConnectivityError):
            run_scenario(cfg)


class TestEvents:
    def test_join_expands_and_reconverges(self):
        cfg = plugin_join_scenario(mu=572, t_end=18.0, event_time=15.0)
        trace = run_scenario(cfg)
        assert trace.labels == (1, 2, 3, 4)
        idx = np.searchsorted(trace.times, 15.0)
        assert np.isnan(trace.x[idx - 1, trace.label_slice(4)]).all()
        assert not np.isnan(trace.x[idx, trace.label_slice(4)]).any()
        assert trace.events[0]["kind"] == "join"
        assert len(trace.gain_log) == 2

    def test_leave_drops_estimates(self):
        cfg = plugin_leave_scenario(mu=572, t_end=18.0, event_time=15.0)
        trace = run_scenario(cfg)
        idx = np.searchsorted(trace.times, 15.0)
        assert not np.isnan(trace.x[idx - 1, trace.label_slice(2)]).any()
        assert np.isnan(trace.x[idx, trace.label_slice(2)]).all()
        assert np.isnan(trace.pair_errors[(2, 1)][idx])

    def test_join_that_disconnects_rejected(self):
        model = plugin_base_model()
        policy = plugin_policy(mu=572)
        gains, _ = resolve_gains(model, policy)
        from masobs.observer import zero_observer_state
        bad = JoinEvent(time=1.0, label=4,
                        a_block=((1.2, 1.0), (0.0, 0.8)), c_block=np.eye(2),
                        initial_state=(0.0, 0.0),
                        communication=((1, 2, 1.0), (2, 3, 1.0), (3, 1, 1.0),
                                       (4, 1, 1.0)),
                        luenberger=((4.2, 0.0), (0.0, 4.8)))
        with pytest.raises(ConnectivityError):
            apply_event(model, policy, zero_observer_state(model),
                        np.zeros(model.n), bad, (1, 2, 3))

    def test_mu_recomputed_under_global_policy(self):
        model = plugin_base_model()
        policy = GainPolicy(luenberger="auto", weights="binary", mu="global")
        gains, _ = resolve_gains(model, policy)
        from masobs.observer import zero_observer_state
        leave = LeaveEvent(time=1.0, label=2,
                           communication=((1, 3, 1.0), (3, 1, 1.0)))
        _, _, new_gains, _, _, labels, _ = apply_event(
            model, policy, zero_observer_state(model), np.zeros(model.n),
            leave, (1, 2, 3))
        assert labels == (1, 3)
        assert new_gains.mu != gains.mu  # re-evaluated on the smaller graph


class TestTraceOutput:
    def test_error_norms_recompute_from_stored_states(self):
        trace = run_scenario(_short_triple(t_end=2.0))
        j = 1
        sl = trace.label_slice(j)
        recomputed = np.linalg.norm(trace.xhat[2][:, sl] - trace.x[:, sl], axis=1)
        assert np.allclose(recomputed, trace.pair_errors[(2, j)], atol=1e-12)
        total = np.zeros(len(trace.times))
        for jj in trace.labels:
            total += trace.bar_errors[jj] ** 2
            for ii in trace.labels:
                total += trace.pair_errors[(ii, jj)] ** 2
        assert np.allclose(np.sqrt(total), trace.total_error, atol=1e-12)

    def test_csv_roundtrip_and_metadata(self, tmp_path):
        trace = run_scenario(_short_triple(t_end=1.0))
        csv_path = tmp_path / "trace.csv"
        write_trace_csv(trace, csv_path)
        header, data = read_trace_csv(csv_path)
        assert header == trace_columns(trace)
        assert np.allclose(data, trace_matrix(trace), equal_nan=True)
        # recomputing the stacked norm from the file matches the stored column
        idx = {name: k for k, name in enumerate(header)}
        err_cols = [idx[c] for c in header if c.startswith(("err[", "errbar["))]
        recomputed = np.sqrt(np.nansum(data[:, err_cols] ** 2, axis=1))
        assert np.allclose(recomputed, data[:, idx["E_norm"]], atol=1e-9)
        write_metadata(tmp_path / "meta.json", trace)
        import json
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert meta["summary"]["total_final"] == pytest.approx(trace.total_error[-1])

    def test_subsample_keeps_final_row(self, tmp_path):
        trace = run_scenario(_short_triple(t_end=1.0))
        path = tmp_path / "sub.csv"
        write_trace_csv(trace, path, subsample=7)
        _, data = read_trace_csv(path)
        assert data[-1, 0] == pytest.approx(trace.times[-1])

    def test_summary_settling_times(self):
        trace = run_scenario(_short_triple(t_end=10.0))
        summary = error_norms(trace, settle_threshold=1e-2)
        assert all(t is not None for t in summary.settling_times.values())
        assert summary.total_final < summary.total_sup


class TestScenarioSerialization:
    def test_roundtrip_preserves_run(self, tmp_path):
        cfg = coupled_triple_scenario(noise=True, t_end=1.0)
        payload = scenario_to_json(cfg)
        again = scenario_from_json(payload)
        t1 = run_scenario(cfg)
        t2 = run_scenario(again)
        assert np.array_equal(trace_matrix(t1), trace_matrix(t2))

    def test_event_roundtrip(self):
        cfg = plugin_join_scenario(mu=572, t_end=18.0)
        again = scenario_from_json(scenario_to_json(cfg))
        assert again.events[0].label == 4
        assert again.events[0].communication == cfg.events[0].communication

    def test_config_validation(self):
        model = coupled_triple_model()
        with pytest.raises(DomainError):
            ScenarioConfig(model=model, t_end=1.0, dt=2.0)
        with pytest.raises(DomainError):
            ScenarioConfig(model=model, t_end=1.0, dt=0.1,
                           events=(LeaveEvent(time=2.0, label=1),))
