import numpy as np
import pytest

from ccfluid.model import (
    BbrFlowState,
    CubicFlowState,
    NetworkConfig,
    SystemState,
    bbr_strengths,
    bbrv2_strengths,
)
from ccfluid.dynamics import (
    AdaptationPolicy,
    IntegratorSettings,
    default_initial_state,
    derivative,
    frozen_policy,
    probe_step,
    simulate,
    step,
    write_trace_csv,
)
from ccfluid.equilibrium import equilibrium_delay, solve_short_term

from conftest import PAPER_BUFFER, PAPER_CAPACITY


def _equilibrium_state(eq, cfg, queue=None):
    tau_bar = equilibrium_delay(cfg)
    return SystemState(
        t=0.0,
        bbr=(BbrFlowState(x_btl=eq.x_btl_eq, tau_min=eq.alpha * tau_bar / 2.0),),
        cubic=(CubicFlowState(w_max=eq.w_max_eq, s=eq.s_eq),),
        queue=cfg.buffer if queue is None else queue,
    )


class TestDerivative:
    @pytest.mark.parametrize("alpha", [0.8, 1.02, 1.25])
    def test_zero_at_short_term_equilibrium(self, default_cfg, alpha):
        eq = solve_short_term(alpha, default_cfg)
        state = _equilibrium_state(eq, default_cfg)
        d = derivative(state, default_cfg)
        scale = max(1.0, eq.x_btl_eq)
        assert abs(d.d_x_btl[0]) / scale < 1e-9
        assert abs(d.d_w_max[0]) / max(1.0, eq.w_max_eq) < 1e-9
        assert abs(d.d_s[0]) < 1e-9
        assert d.d_queue == 0.0

    def test_no_loss_freezes_w_max_and_grows_s(self, default_cfg):
        state = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=default_cfg.chi, tau_min=0.04),),
            cubic=(CubicFlowState(w_max=100.0, s=1.0),),
            queue=0.0,
        )
        d = derivative(state, default_cfg)
        assert d.d_w_max[0] == 0.0
        assert d.d_s[0] == 1.0

    def test_uncongested_probe_growth(self, default_cfg):
        # below capacity the estimate grows at rate (alpha - 1) * x_btl
        policy = frozen_policy(1.25, 1.0)
        state = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=1000.0, tau_min=0.04),),
            cubic=(CubicFlowState(w_max=10.0, s=0.0),),
            queue=0.0,
        )
        d = derivative(state, default_cfg, policy)
        assert d.d_x_btl[0] == pytest.approx(0.25 * 1000.0, rel=1e-12)

    def test_estimate_floor_clamps_negative_drift(self, default_cfg):
        eq = solve_short_term(0.6, default_cfg)
        assert eq.x_btl_eq == default_cfg.chi
        state = _equilibrium_state(eq, default_cfg)
        d = derivative(state, default_cfg)
        assert d.d_x_btl[0] == 0.0


class TestStep:
    def test_equilibrium_is_stationary(self, default_cfg):
        eq = solve_short_term(1.1, default_cfg)
        state = _equilibrium_state(eq, default_cfg)
        policy = frozen_policy(1.1)
        nxt = step(state, default_cfg, policy, 1e-3)
        assert nxt.t == pytest.approx(1e-3)
        assert nxt.bbr[0].probe_clock == state.bbr[0].probe_clock - 1e-3
        assert nxt.bbr[0].x_btl == pytest.approx(eq.x_btl_eq, rel=1e-12)
        assert nxt.cubic[0].w_max == pytest.approx(eq.w_max_eq, rel=1e-12)
        assert nxt.cubic[0].s == pytest.approx(eq.s_eq, rel=1e-12)
        assert nxt.queue == default_cfg.buffer

    def test_growth_duration_advances_exactly_without_loss(self):
        cfg = NetworkConfig(
            capacity=PAPER_CAPACITY, path_prop_delay=0.04, btl_prop_delay=0.01,
            buffer=PAPER_BUFFER, n_bbr=0, n_cubic=1,
        )
        state = SystemState(
            t=0.0, bbr=(), cubic=(CubicFlowState(w_max=10.0, s=0.0),), queue=0.0
        )
        dt = 1e-3
        for i in range(100):
            state = step(state, cfg, AdaptationPolicy(), dt)
        # with zero loss the duration derivative is the constant 1
        assert state.cubic[0].s == pytest.approx(100 * dt, rel=1e-12)
        assert state.cubic[0].w_max == 10.0

    def test_richardson_halved_step(self, default_cfg):
        def endpoint(dt):
            trace = simulate(
                default_cfg, AdaptationPolicy(),
                IntegratorSettings(dt=dt, horizon=10.0), decimate=10**9,
            )
            return np.array(
                [trace.x_bbr_total[-1], trace.x_cubic_total[-1],
                 trace.queue[-1], trace.w[-1][0]]
            )

        coarse, fine = endpoint(1e-3), endpoint(5e-4)
        rel = np.abs(coarse - fine) / np.abs(fine)
        assert rel.max() < 1e-6

    def test_domain_invariants_along_trajectory(self, vanilla_trace_120, default_cfg):
        tr = vanilla_trace_120
        assert all(0.0 <= q <= default_cfg.buffer for q in tr.queue)
        assert all(w > 0.0 for row in tr.w for w in row)
        assert all(0.0 <= p < 1.0 for p in tr.loss)
        assert all(0.0 <= phi <= 1.0 for phi in tr.phi_bbr)

    def test_settings_validation(self, default_cfg):
        with pytest.raises(ValueError):
            IntegratorSettings(dt=0.0)
        with pytest.raises(ValueError):
            # above path_prop_delay / 10
            IntegratorSettings(dt=0.02).resolve_dt(default_cfg)
        assert IntegratorSettings().resolve_dt(default_cfg) == pytest.approx(1e-3)


class TestProbeStep:
    def test_empty_pipe_recovers_propagation_delay(self):
        cfg = NetworkConfig(
            capacity=PAPER_CAPACITY, path_prop_delay=0.04, btl_prop_delay=0.01,
            buffer=PAPER_BUFFER, n_bbr=1, n_cubic=0,
        )
        state = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=cfg.capacity, tau_min=0.09, probe_clock=0.0),),
            cubic=(), queue=300.0,
        )
        nxt = probe_step(state, cfg, AdaptationPolicy())
        assert nxt.bbr[0].tau_min == 0.04
        assert nxt.queue == 0.0

    def test_smoothed_with_unit_weight_is_vanilla(self, default_cfg):
        state = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=3000.0, tau_min=0.07, probe_clock=0.0),),
            cubic=(CubicFlowState(w_max=300.0, s=2.0),),
            queue=default_cfg.buffer,
        )
        a = probe_step(state, default_cfg, AdaptationPolicy("vanilla"))
        b = probe_step(state, default_cfg, AdaptationPolicy("smoothed", theta=1.0))
        assert a.bbr[0].tau_min == b.bbr[0].tau_min
        assert a.queue == b.queue

    def test_default_config_inflation(self, default_cfg):
        cfg = default_cfg
        s = (cfg.cubic_b * 300.0 / cfg.cubic_c) ** (1.0 / 3.0)
        state = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=cfg.chi, tau_min=0.1, probe_clock=0.0),),
            cubic=(CubicFlowState(w_max=300.0, s=s),),
            queue=cfg.buffer,
        )
        nxt = probe_step(state, cfg, AdaptationPolicy())
        q_minus = 4.0 + 0.7 * 300.0 - 0.01 * cfg.capacity
        assert nxt.bbr[0].tau_min == pytest.approx(0.04 + q_minus / cfg.capacity,
                                                   rel=1e-12)
        assert nxt.bbr[0].tau_min == pytest.approx(0.0557, abs=2e-4)
        assert nxt.queue == pytest.approx(q_minus, rel=1e-12)

    def test_detect_freeze_behavior(self, default_cfg):
        policy = AdaptationPolicy("detect_freeze", kappa=0.1, history_len=5)
        state = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=3000.0, tau_min=0.05, probe_clock=0.0,
                              probe_history=(0.05, 0.09, 0.05, 0.09)),),
            cubic=(CubicFlowState(w_max=300.0, s=2.0),),
            queue=default_cfg.buffer,
        )
        nxt = probe_step(state, default_cfg, policy)
        # history spread is far above kappa * mean -> freeze to the mean
        hist = nxt.bbr[0].probe_history
        assert len(hist) == 5
        assert nxt.bbr[0].tau_min == pytest.approx(np.mean(hist), rel=1e-12)


class TestSimulate:
    def test_sole_bbr_takes_everything(self):
        cfg = NetworkConfig(
            capacity=PAPER_CAPACITY, path_prop_delay=0.04, btl_prop_delay=0.01,
            buffer=PAPER_BUFFER, n_bbr=1, n_cubic=0,
        )
        trace = simulate(
            cfg, AdaptationPolicy(), IntegratorSettings(dt=0.004, horizon=30.0)
        )
        assert all(phi == 1.0 for phi in trace.phi_bbr)

    def test_deterministic_bytes(self, default_cfg, tmp_path):
        settings = IntegratorSettings(dt=0.002, horizon=15.0)
        paths = []
        for name in ("a.csv", "b.csv"):
            trace = simulate(
                default_cfg, AdaptationPolicy("randomized", seed=5), settings
            )
            p = tmp_path / name
            write_trace_csv(trace, str(p))
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_vanilla_oscillates_at_defaults(self, vanilla_trace_120):
        # the min-RTT series keeps taking distinct recurring values
        from ccfluid.stability import probe_series_spread, recurring_values

        series = vanilla_trace_120.probe_tau_min_series()
        assert len(series) == 12
        assert probe_series_spread(series) > 0.02
        assert len(recurring_values(series, rel_tol=0.01, min_count=3)) >= 2

    def test_bbrv2_damps_oscillation_at_defaults(
        self, vanilla_trace_120, bbrv2_trace_120
    ):
        # Under the primed strengths the sustained min-RTT swing collapses
        # into a damped alternation.  The series settles into a ~2% residual
        # band rather than full 1%-agreement; see the acceptance suite for
        # the strict criterion and its measured outcome.
        from ccfluid.stability import probe_series_spread

        vanilla = vanilla_trace_120.probe_tau_min_series()
        damped = bbrv2_trace_120.probe_tau_min_series()
        spread_vanilla = probe_series_spread(vanilla[-6:])
        spread_damped = probe_series_spread(damped[-6:])
        assert spread_vanilla > 0.3
        assert spread_damped < 0.1
        assert spread_damped < 0.2 * spread_vanilla
        # amplitude decays monotonically over probe pairs after the transient
        swings = [abs(a - b) for a, b in zip(damped[2:], damped[3:])]
        assert swings[-1] < swings[0]

    def test_policy_ordering_along_trajectory(self, vanilla_trace_120, default_cfg):
        for row, q in zip(vanilla_trace_120.tau_min, vanilla_trace_120.queue):
            tau = default_cfg.path_prop_delay + q / default_cfg.capacity
            a1, b1 = bbr_strengths(row[0], tau)
            a2, b2 = bbrv2_strengths(row[0], tau)
            assert a2 <= a1 + 1e-15 and b2 <= b1 + 1e-15

    def test_randomized_probe_spacing_and_determinism(self, default_cfg):
        settings = IntegratorSettings(dt=0.004, horizon=60.0)
        t1 = simulate(default_cfg, AdaptationPolicy("randomized", seed=7), settings)
        t2 = simulate(default_cfg, AdaptationPolicy("randomized", seed=7), settings)
        assert t1.probe_events == t2.probe_events
        times = t1.probe_times()
        gaps = np.diff([0.0] + times)
        assert all(5.0 - 0.01 <= g <= 15.0 + 0.01 for g in gaps)
        t3 = simulate(default_cfg, AdaptationPolicy("randomized", seed=8), settings)
        assert t3.probe_events != t1.probe_events

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            AdaptationPolicy("smoothed", theta=0.0)
        with pytest.raises(ValueError):
            AdaptationPolicy("smoothed", theta=1.2)
        with pytest.raises(ValueError):
            AdaptationPolicy("detect_freeze", history_len=1)
        with pytest.raises(ValueError):
            AdaptationPolicy("bbrv3", gain=0.9)
        with pytest.raises(ValueError):
            AdaptationPolicy("nonsense")

    def test_multiflow_shared_probe_clock(self):
        cfg = NetworkConfig(
            capacity=2 * PAPER_CAPACITY, path_prop_delay=0.04, btl_prop_delay=0.01,
            buffer=2 * PAPER_BUFFER, n_bbr=2, n_cubic=2,
        )
        trace = simulate(
            cfg, AdaptationPolicy(), IntegratorSettings(dt=0.004, horizon=25.0)
        )
        by_time = {}
        for t, idx, _ in trace.probe_events:
            by_time.setdefault(t, []).append(idx)
        assert by_time  # probes happened
        for flows in by_time.values():
            assert sorted(flows) == [0, 1]  # synchronized probing

    def test_contraction_toward_short_term_equilibrium(self, default_cfg):
        # smoke version of the stability property: natural-units distance
        # shrinks from t=0 to t=10 and again to t=100
        for alpha in (1.15, 0.75):
            eq = solve_short_term(alpha, default_cfg)
            ref = np.array([eq.x_btl_eq, eq.w_max_eq, eq.s_eq])
            vals = ref * np.array([1.05, 0.95, 1.05])
            vals[0] = max(vals[0], default_cfg.chi)
            state = SystemState(
                t=0.0,
                bbr=(BbrFlowState(x_btl=vals[0], tau_min=0.05, probe_clock=1e9),),
                cubic=(CubicFlowState(w_max=vals[1], s=vals[2]),),
                queue=default_cfg.buffer,
            )
            policy = frozen_policy(alpha)
            dt = default_cfg.path_prop_delay / 10

            def dist(st):
                v = np.array([st.bbr[0].x_btl, st.cubic[0].w_max, st.cubic[0].s])
                return float(np.linalg.norm(v - ref))

            d0 = dist(state)
            d10 = None
            for i in range(round(100.0 / dt)):
                state = step(state, default_cfg, policy, dt)
                if i + 1 == round(10.0 / dt):
                    d10 = dist(state)
            assert d10 < d0
            assert dist(state) < d10

    def test_trace_time_strictly_increasing(self, vanilla_trace_120):
        t = vanilla_trace_120.t
        assert all(a < b for a, b in zip(t, t[1:]))

    def test_nonzero_start_time_preserved(self, default_cfg):
        init = default_initial_state(default_cfg)
        shifted = SystemState(t=7.5, bbr=init.bbr, cubic=init.cubic, queue=init.queue)
        trace = simulate(
            default_cfg, AdaptationPolicy(),
            IntegratorSettings(dt=0.004, horizon=1.0), init=shifted, decimate=50,
        )
        assert trace.t[0] == 7.5
        assert trace.t[-1] == pytest.approx(8.5, abs=1e-9)

    def test_jsonl_round_trip(self, default_cfg, tmp_path):
        import json
        from ccfluid.dynamics import write_trace_jsonl

        trace = simulate(
            default_cfg, AdaptationPolicy(),
            IntegratorSettings(dt=0.004, horizon=1.0), decimate=50,
        )
        path = tmp_path / "trace.jsonl"
        write_trace_jsonl(trace, str(path))
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(rows) == len(trace.t)
        assert rows[0]["t"] == trace.t[0]
        assert rows[-1]["w_0"] == trace.w[-1][0]
        assert set(rows[0]) == set(trace.csv_header())

    def test_state_validation_rejects_bad_states(self, default_cfg):
        over_full = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=1000.0, tau_min=0.05),),
            cubic=(CubicFlowState(w_max=10.0, s=0.0),),
            queue=2 * default_cfg.buffer,
        )
        with pytest.raises(ValueError):
            over_full.validate(default_cfg)
        low_estimate = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=0.5 * default_cfg.chi, tau_min=0.05),),
            cubic=(CubicFlowState(w_max=10.0, s=0.0),),
            queue=0.0,
        )
        with pytest.raises(ValueError):
            low_estimate.validate(default_cfg)
        undercut_delay = SystemState(
            t=0.0,
            bbr=(BbrFlowState(x_btl=1000.0, tau_min=0.01),),
            cubic=(CubicFlowState(w_max=10.0, s=0.0),),
            queue=0.0,
        )
        with pytest.raises(ValueError):
            undercut_delay.validate(default_cfg)
        wrong_counts = SystemState(t=0.0, bbr=(), cubic=(), queue=0.0)
        with pytest.raises(ValueError):
            wrong_counts.validate(default_cfg)

    def test_integration_failure_reports_time(self, default_cfg):
        from ccfluid.dynamics import IntegrationError

        state = SystemState(
            t=3.0,
            bbr=(BbrFlowState(x_btl=1e308, tau_min=0.04),),
            cubic=(CubicFlowState(w_max=100.0, s=1.0),),
            queue=0.0,
        )
        with pytest.raises(IntegrationError) as err:
            step(state, default_cfg, AdaptationPolicy(), 1e-3)
        assert err.value.t == pytest.approx(3.001)

    def test_default_initial_state(self, default_cfg):
        state = default_initial_state(default_cfg)
        assert state.bbr[0].x_btl == pytest.approx(default_cfg.capacity / 2)
        assert state.bbr[0].tau_min == default_cfg.path_prop_delay
        assert state.cubic[0].w_max == pytest.approx(
            default_cfg.path_prop_delay * default_cfg.capacity / 2
        )
        assert state.queue == 0.0
        state.validate(default_cfg)
