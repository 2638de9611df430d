"""
attractor_platform/dynamics.py
==============================
Fixed-step integration of the forced Duffing oscillator with an additive
actuation term:

    x'' + δx' + αx + βx³ = Γcos(φ + φ₀) + a,    φ = ωt mod 2π

The state is carried as (x, v, φ) with the forcing phase wrapped into
[0, 2π). Integration is classical 4th-order Runge–Kutta at a fixed step so
trajectories are bit-reproducible; the action is held constant (zero-order
hold) over every control step.

The array kernels (``rk4_arrays``, ``integrate_arrays``) operate element-wise
on equally-shaped float64 arrays, so one call advances a whole batch of
independent oscillators. The SimState-level operations are thin wrappers
over the same kernels.
"""
from __future__ import annotations
import logging
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .errors import IntegrationDivergenceError
from .types import TWO_PI, DuffingParams, IntegratorConfig, SimState

logger = logging.getLogger(__name__)

ActionSource = Union[None, float, Callable[[SimState], float]]


# ─── Right-hand side ──────────────────────────────────────────────────────────

def derivative(state: SimState, action: float, params: DuffingParams) -> Tuple[float, float, float]:
    """Time derivative (ẋ, v̇, φ̇) of the controlled oscillator."""
    dx, dv = _rhs(state.x, state.v, state.phi, action, params)
    return float(dx), float(dv), params.omega


def _rhs(x, v, phi, a, params: DuffingParams):
    dv = (params.gamma_f * np.cos(phi + params.phi0)
          - params.delta * v - params.alpha * x - params.beta * x * x * x + a)
    return v, dv


# ─── Array kernels ────────────────────────────────────────────────────────────

def rk4_arrays(x: np.ndarray, v: np.ndarray, phi: np.ndarray, a, dt: float,
               params: DuffingParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One RK4 step for a batch of states. ``a`` is a scalar or per-row array."""
    half = 0.5 * dt
    w = params.omega
    k1x, k1v = _rhs(x, v, phi, a, params)
    k2x, k2v = _rhs(x + half * k1x, v + half * k1v, phi + w * half, a, params)
    k3x, k3v = _rhs(x + half * k2x, v + half * k2v, phi + w * half, a, params)
    k4x, k4v = _rhs(x + dt * k3x, v + dt * k3v, phi + w * dt, a, params)
    x_new = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    v_new = v + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    phi_new = np.mod(phi + w * dt, TWO_PI)
    return x_new, v_new, phi_new


def _check_finite(x: np.ndarray, v: np.ndarray, phi: np.ndarray) -> None:
    ok = np.isfinite(x) & np.isfinite(v)
    if not np.all(ok):
        bad = int(np.flatnonzero(~np.ravel(ok))[0])
        offending = (float(np.ravel(x)[bad]), float(np.ravel(v)[bad]), float(np.ravel(phi)[bad]))
        raise IntegrationDivergenceError(
            f"integration diverged at batch row {bad}: (x, v, phi) = {offending}", state=offending
        )


def integrate_arrays(x: np.ndarray, v: np.ndarray, phi: np.ndarray, a, n_steps: int, dt: float,
                     params: DuffingParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance a batch by ``n_steps`` RK4 steps with the action held constant."""
    for _ in range(n_steps):
        x, v, phi = rk4_arrays(x, v, phi, a, dt, params)
    # non-finite values never recover, so one check at the end is enough
    _check_finite(x, v, phi)
    return x, v, phi


def integrate_path(x: np.ndarray, v: np.ndarray, phi: np.ndarray, a, n_steps: int, dt: float,
                   params: DuffingParams) -> np.ndarray:
    """Like ``integrate_arrays`` for a single row but keeps every step: (n_steps + 1, 3)."""
    path = np.empty((n_steps + 1, 3), dtype=np.float64)
    path[0] = (x[0], v[0], phi[0])
    for k in range(1, n_steps + 1):
        x, v, phi = rk4_arrays(x, v, phi, a, dt, params)
        path[k] = (x[0], v[0], phi[0])
    _check_finite(x, v, phi)
    return path


def _as_rows(state: SimState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return (np.array([state.x], dtype=np.float64),
            np.array([state.v], dtype=np.float64),
            np.array([state.phi], dtype=np.float64))


def _from_rows(x: np.ndarray, v: np.ndarray, phi: np.ndarray, row: int = 0) -> SimState:
    return SimState.wrapped(float(x[row]), float(v[row]), float(phi[row]))


# ─── State-level operations ───────────────────────────────────────────────────

def step_rk4(state: SimState, action: float, dt: float, params: DuffingParams) -> SimState:
    """Advance one state by ``dt`` with ``action`` held constant."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    x, v, phi = rk4_arrays(*_as_rows(state), float(action), dt, params)
    _check_finite(x, v, phi)
    return _from_rows(x, v, phi)


def advance_control_step(state: SimState, action: float, cfg: IntegratorConfig,
                         params: DuffingParams) -> SimState:
    """Apply ``cfg.inner_steps`` RK4 steps (25 by default) with a constant action."""
    x, v, phi = integrate_arrays(*_as_rows(state), float(action), cfg.inner_steps, cfg.dt_inner, params)
    return _from_rows(x, v, phi)


def _resolve_action(source: ActionSource, state: SimState) -> float:
    if source is None:
        return 0.0
    if callable(source):
        return float(source(state))
    return float(source)


def _simulate(state: SimState, action_source: ActionSource, duration: float, cfg: IntegratorConfig,
              params: DuffingParams) -> Tuple[List[float], List[SimState], List[float]]:
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    total_inner = int(round(duration / cfg.dt_inner))
    times = [0.0]
    states = [state]
    actions: List[float] = []
    done = 0
    current = state
    while done < total_inner:
        n = min(cfg.inner_steps, total_inner - done)
        a = _resolve_action(action_source, current)
        x, v, phi = integrate_arrays(*_as_rows(current), a, n, cfg.dt_inner, params)
        current = _from_rows(x, v, phi)
        done += n
        actions.append(a)
        times.append(done * cfg.dt_inner)
        states.append(current)
    return times, states, actions


def simulate(state: SimState, action_source: ActionSource, duration: float, cfg: IntegratorConfig,
             params: DuffingParams) -> List[Tuple[float, SimState]]:
    """
    Integrate for ``duration`` and return (t, state) samples every control step.
    ``action_source`` is None (uncontrolled), a constant, or a state → action
    callable evaluated at the start of each control step.
    """
    times, states, _ = _simulate(state, action_source, duration, cfg, params)
    return list(zip(times, states))


def simulate_frame(state: SimState, action_source: ActionSource, duration: float, cfg: IntegratorConfig,
                   params: DuffingParams) -> pd.DataFrame:
    """``simulate`` as a ``t,x,v,phi,a`` frame; ``a`` is the action applied from that sample on."""
    times, states, actions = _simulate(state, action_source, duration, cfg, params)
    held = actions + [0.0]
    return pd.DataFrame({
        "t": times,
        "x": [s.x for s in states],
        "v": [s.v for s in states],
        "phi": [s.phi for s in states],
        "a": held[: len(states)],
    })


def max_abs_position(samples: List[Tuple[float, SimState]], last_periods: Optional[float],
                     params: DuffingParams) -> float:
    """Max |x| over the trailing ``last_periods`` forcing periods of a simulate() result."""
    if not samples:
        return 0.0
    t_end = samples[-1][0]
    t_from = -np.inf if last_periods is None else t_end - last_periods * params.forcing_period
    return max(abs(s.x) for t, s in samples if t >= t_from)
