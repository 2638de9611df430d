"""
tests/test_dynamics.py
======================
Unit tests for the controlled Duffing integrator.

Run:  pytest tests/test_dynamics.py -v
"""
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from attractor_platform import oracle
from attractor_platform.dynamics import (
    advance_control_step,
    derivative,
    integrate_arrays,
    max_abs_position,
    simulate,
    simulate_frame,
    step_rk4,
)
from attractor_platform.errors import IntegrationDivergenceError
from attractor_platform.types import TWO_PI, DuffingParams, IntegratorConfig, SimState


# ─── Types ────────────────────────────────────────────────────────────────────

class TestTypes:
    def test_phase_must_be_wrapped(self):
        with pytest.raises(ValueError):
            SimState(0.0, 0.0, TWO_PI)

    def test_wrapped_folds_phase(self):
        s = SimState.wrapped(1.0, 2.0, -0.5)
        assert s.phi == pytest.approx(TWO_PI - 0.5)

    def test_nonfinite_state_rejected(self):
        with pytest.raises(ValueError):
            SimState(float("nan"), 0.0, 0.0)

    def test_omega_positive(self):
        with pytest.raises(ValueError):
            DuffingParams(omega=0.0)

    def test_control_step_multiple(self):
        assert IntegratorConfig().inner_steps == 25
        with pytest.raises(ValueError):
            IntegratorConfig(dt_inner=0.01, dt_control=0.255)


# ─── Right-hand side ──────────────────────────────────────────────────────────

class TestDerivative:
    def test_rest_at_zero_phase(self):
        dx, dv, dphi = derivative(SimState(0.0, 0.0, 0.0), 0.0, DuffingParams())
        assert dx == 0.0
        assert dv == pytest.approx(1.0)
        assert dphi == pytest.approx(1.4)

    def test_stiffness_terms(self):
        _, dv, _ = derivative(SimState(1.0, 0.0, 0.0), 0.0, DuffingParams())
        assert dv == pytest.approx(-0.04)

    def test_action_adds_force(self):
        _, dv, _ = derivative(SimState(1.0, 0.0, 0.0), 2.0, DuffingParams())
        assert dv == pytest.approx(1.96)

    def test_velocity_is_dx(self):
        dx, _, _ = derivative(SimState(0.3, -2.5, 1.0), 0.0, DuffingParams())
        assert dx == -2.5


# ─── Stepping ─────────────────────────────────────────────────────────────────

class TestStepRK4:
    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            step_rk4(SimState(0.0, 0.0, 0.0), 0.0, 0.0, DuffingParams())

    def test_phase_stays_wrapped(self):
        s = SimState(0.0, 0.0, TWO_PI - 1e-3)
        out = step_rk4(s, 0.0, 0.01, DuffingParams())
        assert 0.0 <= out.phi < TWO_PI
        assert out.phi == pytest.approx((TWO_PI - 1e-3 + 0.014) % TWO_PI)

    def test_fourth_order_convergence(self):
        params = DuffingParams()
        start = SimState(1.0, 0.5, 0.3)
        horizon = 2.0

        def rhs(t, y):
            phi = start.phi + params.omega * t
            return [y[1], params.gamma_f * math.cos(phi + params.phi0) - params.delta * y[1]
                    - params.alpha * y[0] - params.beta * y[0] ** 3]

        ref = solve_ivp(rhs, (0.0, horizon), [start.x, start.v], method="DOP853", rtol=1e-13, atol=1e-13)
        exact = ref.y[:, -1]

        errors = []
        dts = [0.2, 0.1, 0.05]
        for dt in dts:
            s = start
            for _ in range(int(round(horizon / dt))):
                s = step_rk4(s, 0.0, dt, params)
            errors.append(math.hypot(s.x - exact[0], s.v - exact[1]))
        orders = [math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
        for p in orders:
            assert 3.5 <= p <= 4.5

    def test_control_step_equals_inner_steps(self):
        params, cfg = DuffingParams(), IntegratorConfig()
        s0 = SimState(0.5, -1.0, 2.0)
        a = advance_control_step(s0, 1.5, cfg, params)
        b = s0
        for _ in range(cfg.inner_steps):
            b = step_rk4(b, 1.5, cfg.dt_inner, params)
        assert a.x == pytest.approx(b.x, abs=1e-12)
        assert a.v == pytest.approx(b.v, abs=1e-12)
        assert a.phi == pytest.approx(b.phi, abs=1e-12)

    def test_deterministic(self):
        params, cfg = DuffingParams(), IntegratorConfig()
        s0 = SimState(2.0, 1.0, 0.5)
        assert advance_control_step(s0, -0.7, cfg, params) == advance_control_step(s0, -0.7, cfg, params)

    def test_divergence_raises_with_state(self):
        params = DuffingParams()
        with np.errstate(all="ignore"):
            with pytest.raises(IntegrationDivergenceError) as info:
                integrate_arrays(np.array([1e6]), np.array([0.0]), np.array([0.0]), 0.0, 50, 0.01, params)
        assert info.value.state is not None
        assert len(info.value.state) == 3


# ─── Simulation ───────────────────────────────────────────────────────────────

class TestSimulate:
    def test_samples_at_control_rate(self):
        samples = simulate(SimState(0.0, 0.0, 0.0), None, 1.0, IntegratorConfig(), DuffingParams())
        assert [t for t, _ in samples] == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])

    def test_constant_and_callable_action_agree(self):
        cfg, params = IntegratorConfig(), DuffingParams()
        s0 = SimState(0.1, 0.2, 0.3)
        a = simulate(s0, 0.8, 2.0, cfg, params)
        b = simulate(s0, lambda s: 0.8, 2.0, cfg, params)
        assert a[-1][1] == b[-1][1]

    def test_frame_columns(self):
        df = simulate_frame(SimState(0.0, 0.0, 0.0), 0.5, 0.5, IntegratorConfig(), DuffingParams())
        assert list(df.columns) == ["t", "x", "v", "phi", "a"]
        assert len(df) == 3
        assert df["a"].iloc[0] == 0.5

    def test_max_abs_position_window(self):
        params = DuffingParams()
        samples = simulate(SimState(3.0, 0.0, 0.0), None, 10.0, IntegratorConfig(), params)
        overall = max_abs_position(samples, None, params)
        assert overall >= 3.0
        assert max_abs_position(samples, 1.0, params) <= overall

    def test_zero_duration_returns_initial_state(self):
        s0 = SimState(1.0, -2.0, 0.4)
        samples = simulate(s0, 0.3, 0.0, IntegratorConfig(), DuffingParams())
        assert samples == [(0.0, s0)]


class TestLongRun:
    def test_uncontrolled_run_ends_on_an_attractor(self, catalog):
        params, cfg = DuffingParams(), IntegratorConfig()
        samples = simulate(SimState(0.0, 0.0, 0.0), None, 200.0, cfg, params)
        assert samples[-1][0] == pytest.approx(200.0)
        assert max_abs_position(samples, 10, params) < 20.0

        end = samples[-1][1]
        lab = oracle.label(end, catalog, cfg, params)
        # control-rate samples can miss the peak slightly
        amplitude = max_abs_position(samples, catalog.measure_periods, params)
        assert amplitude == pytest.approx(catalog.amplitudes[lab], rel=0.05)

    def test_bounded_steady_state_from_grid_corners(self):
        params, cfg = DuffingParams(), IntegratorConfig()
        for x0, v0 in ((-10.0, -15.0), (10.0, 15.0), (-10.0, 15.0)):
            samples = simulate(SimState(x0, v0, 0.0), None, 200.0, cfg, params)
            assert max_abs_position(samples, 10, params) < 20.0
