"""
attractor_platform/environment.py
=================================
The attractor-switching episode shared by both trainers and the evaluator.

Phase 1: the oscillator runs uncontrolled from a fixed source-basin state s₀
for T₁′ = T₁ + U(0, 2π/ω), which spreads the Phase-2 start states over the
source orbit. Phase 2: up to T₂/dt_control control steps with the action
held over each step; the episode ends as soon as the basin classifier puts
the state in the target basin.

Reward per control step: r = −dt_control·|a| (+ r_end on reaching the target).

``run_rollouts`` advances a batch of independent episodes together
(integration vectorised across rows); ``SwitchingEnv`` is the one-episode
reset/step interface the actor-critic loop drives.
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boa_classifier import BoaModel, featurize_batch, predict_batch
from .dynamics import integrate_arrays, integrate_path, step_rk4
from .errors import SourceBasinError
from .neural import DenseNet, policy_forward
from .oracle import label
from .types import (
    AttractorCatalog, AttractorLabel, DuffingParams, EpisodeConfig, IntegratorConfig,
    RolloutRecord, SimState, direction_labels,
)

logger = logging.getLogger(__name__)


def reward(action: float, reached: bool, dt_control: float = 0.25, r_end: float = 100.0) -> float:
    """Control cost plus terminal bonus for one control step."""
    return -dt_control * abs(action) + (r_end if reached else 0.0)


# ─── Exploration noise ────────────────────────────────────────────────────────

class GaussianNoise:
    """Independent N(0, σ²) per control step."""

    def __init__(self, sigma: float):
        self.sigma = float(sigma)

    def reset(self) -> None:
        pass

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.normal(0.0, self.sigma)) if self.sigma > 0 else 0.0


class OrnsteinUhlenbeckNoise:
    """dx = −θx·dt + σ√dt·N(0, 1), restarted at 0 every episode."""

    def __init__(self, theta: float, sigma: float, dt: float):
        self.theta = float(theta)
        self.sigma = float(sigma)
        self.dt = float(dt)
        self.x = 0.0

    def reset(self) -> None:
        self.x = 0.0

    def sample(self, rng: np.random.Generator) -> float:
        self.x += -self.theta * self.x * self.dt + self.sigma * math.sqrt(self.dt) * float(rng.normal())
        return self.x


# ─── Bundle ───────────────────────────────────────────────────────────────────

@dataclass
class EnvBundle:
    params: DuffingParams
    integrator: IntegratorConfig
    episode: EpisodeConfig
    catalog: AttractorCatalog
    model: BoaModel
    initial_states: Dict[AttractorLabel, SimState]
    _free_runs: Dict[AttractorLabel, np.ndarray] = field(default_factory=dict, repr=False)

    def free_run(self, source: AttractorLabel) -> np.ndarray:
        """Uncontrolled path from s₀ at dt_inner, long enough for any Phase-1 duration."""
        path = self._free_runs.get(source)
        if path is None:
            s0 = self.initial_states[source]
            horizon = self.episode.t1 + self.params.forcing_period
            n = int(math.ceil(horizon / self.integrator.dt_inner)) + 1
            path = integrate_path(np.array([s0.x]), np.array([s0.v]), np.array([s0.phi]),
                                  0.0, n, self.integrator.dt_inner, self.params)
            self._free_runs[source] = path
        return path

    def state_after(self, source: AttractorLabel, duration: float) -> SimState:
        """Free-run state ``duration`` after s₀: whole steps from the cached path plus one partial step."""
        dt = self.integrator.dt_inner
        path = self.free_run(source)
        k = int(math.floor(duration / dt + 1e-9))
        if k >= len(path):
            raise ValueError(f"duration {duration} exceeds the cached free run")
        row = path[k]
        state = SimState.wrapped(row[0], row[1], row[2])
        rest = duration - k * dt
        if rest > 1e-12:
            state = step_rk4(state, 0.0, rest, self.params)
        return state


def build_env(
    catalog: AttractorCatalog,
    model: BoaModel,
    params: DuffingParams,
    integrator: IntegratorConfig,
    episode: EpisodeConfig,
) -> EnvBundle:
    """
    Pick s₀ per source basin: the origin for whichever basin the oracle puts
    it in, the catalog orbit's start point for the other one.
    """
    origin = SimState(0.0, 0.0, 0.0)
    origin_label = label(origin, catalog, integrator, params)
    other = AttractorLabel.LA if origin_label is AttractorLabel.SA else AttractorLabel.SA
    initial = {origin_label: origin, other: catalog.orbit_state(other, 0)}
    logger.info("initial states: %s",
                ", ".join(f"{k.value}=({s.x:.3f}, {s.v:.3f}, {s.phi:.3f})" for k, s in initial.items()))
    return EnvBundle(params, integrator, episode, catalog, model, initial)


# ─── Phase 1 ──────────────────────────────────────────────────────────────────

def phase1(env: EnvBundle, source: AttractorLabel, rng: np.random.Generator) -> Tuple[SimState, float]:
    """
    Free run for T₁′ = T₁ + U(0, forcing period). Returns (state, T₁′).
    Raises SourceBasinError if the classifier does not place the end state
    in ``source``.
    """
    t1_prime = env.episode.t1 + float(rng.uniform(0.0, env.params.forcing_period))
    state = env.state_after(source, t1_prime)
    predicted = predict_batch(env.model, state.as_array()[None, :])[0]
    if predicted is not source:
        raise SourceBasinError(
            f"Phase 1 ended in {predicted.value}, not the source basin {source.value} "
            f"(T1'={t1_prime:.3f}, state=({state.x:.3f}, {state.v:.3f}, {state.phi:.3f})); "
            f"choose another initial state"
        )
    return state, t1_prime


# ─── Batched rollouts ─────────────────────────────────────────────────────────

@dataclass
class Rollout:
    record: RolloutRecord
    actions: np.ndarray                     # executed actions, one per control step taken
    features: Optional[np.ndarray] = None   # (steps, 4) features of the states the actions were taken in
    start_state: Optional[SimState] = None


def run_rollouts(
    env: EnvBundle,
    policy: DenseNet,
    action_bound: float,
    direction: str,
    rngs: Sequence[np.random.Generator],
    noise_sigma: float = 0.0,
    record_features: bool = False,
) -> List[Rollout]:
    """
    One Phase 1 + Phase 2 episode per generator. Each rollout draws its
    Phase-1 duration and then its exploration noise from its own generator,
    so a rollout's outcome depends only on that generator.
    """
    source, target = direction_labels(direction)
    target_code = 1 if target is AttractorLabel.LA else 0
    n = len(rngs)
    cfg = env.integrator
    dt_c = cfg.dt_control
    r_end = env.episode.r_end
    n_steps = env.episode.control_steps(cfg)

    starts, t1s = [], []
    for rng in rngs:
        s, t1p = phase1(env, source, rng)
        starts.append(s)
        t1s.append(t1p)
    X = np.array([s.as_array() for s in starts], dtype=np.float64).reshape(n, 3)

    active = np.ones(n, dtype=bool)
    success = np.zeros(n, dtype=bool)
    steps = np.zeros(n, dtype=np.int64)
    abs_sum = np.zeros(n)
    total = np.zeros(n)
    actions: List[List[float]] = [[] for _ in range(n)]
    feats: List[List[np.ndarray]] = [[] for _ in range(n)]

    for _ in range(n_steps):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        F = featurize_batch(X[idx])
        a = np.empty(len(idx))
        for j, i in enumerate(idx):
            raw = action_bound * policy_forward(policy, F[j])
            if noise_sigma > 0:
                raw += float(rngs[i].normal(0.0, noise_sigma))
            a[j] = min(max(raw, -action_bound), action_bound)
            actions[i].append(a[j])
            if record_features:
                feats[i].append(F[j])
        x, v, phi = integrate_arrays(X[idx, 0], X[idx, 1], X[idx, 2], a, cfg.inner_steps, cfg.dt_inner, env.params)
        X[idx] = np.column_stack([x, v, phi])
        reached = env.model.predict_codes(X[idx]) == target_code
        total[idx] += -dt_c * np.abs(a) + np.where(reached, r_end, 0.0)
        abs_sum[idx] += np.abs(a)
        steps[idx] += 1
        success[idx[reached]] = True
        active[idx[reached]] = False

    out: List[Rollout] = []
    for i in range(n):
        rec = RolloutRecord(
            index=i,
            t1_prime=t1s[i],
            success=bool(success[i]),
            reward=float(total[i]),
            steps=int(steps[i]),
            abs_action_sum=float(abs_sum[i]),
            control_duration=float(steps[i] * dt_c),
            final_state=SimState.wrapped(*X[i]),
        )
        out.append(Rollout(
            record=rec,
            actions=np.array(actions[i], dtype=np.float64),
            features=np.array(feats[i], dtype=np.float64).reshape(-1, 4) if record_features else None,
            start_state=starts[i],
        ))
    return out


# ─── Single-episode interface ─────────────────────────────────────────────────

class SwitchingEnv:
    """reset()/step() view of one episode, as the actor-critic loop consumes it."""

    def __init__(self, env: EnvBundle, direction: str, action_bound: float):
        self.env = env
        self.direction = direction
        self.source, self.target = direction_labels(direction)
        self.action_bound = float(action_bound)
        self.max_steps = env.episode.control_steps(env.integrator)
        self.state: Optional[SimState] = None
        self.t1_prime = 0.0
        self.steps = 0

    def reset(self, rng: np.random.Generator) -> SimState:
        self.state, self.t1_prime = phase1(self.env, self.source, rng)
        self.steps = 0
        return self.state

    def step(self, action: float) -> Tuple[SimState, float, bool, bool]:
        """Returns (next_state, reward, terminal, done); ``done`` also covers the T₂ timeout."""
        if self.state is None:
            raise RuntimeError("step() before reset()")
        if abs(action) > self.action_bound + 1e-12:
            raise ValueError(f"|action| {abs(action)} exceeds the bound {self.action_bound}")
        cfg = self.env.integrator
        row = self.state.as_array()
        x, v, phi = integrate_arrays(row[:1], row[1:2], row[2:3], float(action),
                                     cfg.inner_steps, cfg.dt_inner, self.env.params)
        self.state = SimState.wrapped(x[0], v[0], phi[0])
        self.steps += 1
        code = self.env.model.predict_codes(np.array([[x[0], v[0], phi[0]]]))[0]
        terminal = (code == 1) == (self.target is AttractorLabel.LA)
        r = reward(action, terminal, cfg.dt_control, self.env.episode.r_end)
        done = terminal or self.steps >= self.max_steps
        return self.state, r, bool(terminal), bool(done)
