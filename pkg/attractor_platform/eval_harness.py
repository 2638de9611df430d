"""
attractor_platform/eval_harness.py
==================================
Policy evaluation, trajectory export and the warm-started action-bound sweep.

``evaluate`` runs noise-free rollouts whose Phase-1 durations come from
per-rollout generators derived from (seed, rollout index), so repeated calls
with the same seed give identical reports. A fraction of the rollouts can be
audited against the oracle: the classifier's verdict on each audited final
state is compared with the long-integration label.
"""
from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .artifacts import write_frame
from .boa_classifier import featurize_batch
from .config import CemConfig, DdpgConfig
from .dynamics import integrate_path
from .environment import EnvBundle, phase1, run_rollouts
from .neural import DenseNet, policy_forward
from .oracle import CODE_AMBIGUOUS, DEFAULT_SETTLE_PERIODS, label_batch
from .seeding import derive_rng
from .types import AttractorLabel, EvalReport, direction_labels

logger = logging.getLogger(__name__)

Algorithm = Literal["cem", "ddpg"]

_AUDIT_COUNTER = 1_000_000


def _summarise(records, audit_size: int = 0, audit_agreement: Optional[float] = None) -> EvalReport:
    rewards = np.array([r.reward for r in records], dtype=np.float64)
    durations = [r.control_duration for r in records if r.success]
    return EvalReport(
        n=len(records),
        success_rate=float(np.mean([r.success for r in records])) if records else 0.0,
        reward_mean=float(rewards.mean()) if len(rewards) else float("nan"),
        reward_std=float(rewards.std()) if len(rewards) else float("nan"),
        mean_control_duration=float(np.mean(durations)) if durations else None,
        records=list(records),
        audit_size=audit_size,
        audit_agreement=audit_agreement,
    )


def evaluate(
    policy: DenseNet,
    direction: str,
    env: EnvBundle,
    action_bound: float,
    n: int = 100,
    seed: int = 0,
    audit_fraction: float = 0.0,
) -> EvalReport:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rngs = [derive_rng(seed, "eval", i) for i in range(n)]
    rollouts = run_rollouts(env, policy, action_bound, direction, rngs, noise_sigma=0.0)
    records = [r.record for r in rollouts]

    audit_size, agreement = 0, None
    if audit_fraction > 0:
        audit_size = max(1, int(math.ceil(audit_fraction * n)))
        pick = np.sort(derive_rng(seed, "eval", _AUDIT_COUNTER).permutation(n)[:audit_size])
        finals = np.array([records[i].final_state.as_array() for i in pick])
        oracle_codes, _ = label_batch(finals, env.catalog, env.integrator, env.params)
        model_codes = env.model.predict_codes(finals)
        agree = (oracle_codes == model_codes) & (oracle_codes != CODE_AMBIGUOUS)
        agreement = float(np.mean(agree))
        if agreement < 0.95:
            logger.warning("oracle audit agreement %.3f on %d rollouts is below 0.95", agreement, audit_size)
    report = _summarise(records, audit_size, agreement)
    logger.debug("evaluate %s F=%g: success %.3f reward %.2f ± %.2f", direction, action_bound,
                 report.success_rate, report.reward_mean, report.reward_std)
    return report


# ─── Trajectory export ────────────────────────────────────────────────────────

def jaggedness(actions: Sequence[float]) -> float:
    """Mean |Δa| between successive control steps (0 for fewer than two)."""
    a = np.asarray(actions, dtype=np.float64)
    if len(a) < 2:
        return 0.0
    return float(np.mean(np.abs(np.diff(a))))


@dataclass
class ExportSummary:
    success: bool
    reward: float
    control_duration: float
    jaggedness: float
    settle_amplitude: float
    target_amplitude: float

    @property
    def amplitude_error(self) -> float:
        return abs(self.settle_amplitude - self.target_amplitude) / self.target_amplitude


def rollout_trajectory(
    policy: DenseNet,
    direction: str,
    env: EnvBundle,
    action_bound: float,
    seed: int = 0,
    settle_periods: int = DEFAULT_SETTLE_PERIODS,
) -> Tuple[pd.DataFrame, ExportSummary]:
    """
    Full time series at dt_inner: Phase 1 (``free``), Phase 2 (``control``)
    and a free settling run of ``settle_periods`` forcing periods
    (``settle``). Each row's ``a`` is the action held from that sample on.
    Uses the same Phase-1 draw as rollout 0 of ``evaluate`` with this seed.
    """
    source, target = direction_labels(direction)
    cfg = env.integrator
    dt = cfg.dt_inner
    target_code = 1 if target is AttractorLabel.LA else 0
    start, t1_prime = phase1(env, source, derive_rng(seed, "eval", 0))

    free = env.free_run(source)
    # free samples strictly before T1'
    n_free = int(math.ceil(t1_prime / dt - 1e-9))
    blocks: List[np.ndarray] = []
    acts: List[np.ndarray] = []
    tags: List[str] = []
    times: List[np.ndarray] = []
    blocks.append(free[:n_free])
    times.append(np.arange(n_free) * dt)
    acts.append(np.zeros(n_free))
    tags += ["free"] * n_free

    # Phase 2 begins at exactly T1'
    state = start.as_array()
    t = t1_prime
    actions: List[float] = []
    total_reward = 0.0
    reached = False
    for _ in range(env.episode.control_steps(cfg)):
        a = policy_forward(policy, featurize_batch(state[None, :])[0]) * action_bound
        a = min(max(a, -action_bound), action_bound)
        path = integrate_path(state[:1], state[1:2], state[2:3], a, cfg.inner_steps, dt, env.params)
        blocks.append(path[:-1])
        times.append(t + np.arange(cfg.inner_steps) * dt)
        acts.append(np.full(cfg.inner_steps, a))
        tags += ["control"] * cfg.inner_steps
        state = path[-1]
        t += cfg.dt_control
        actions.append(a)
        reached = env.model.predict_codes(state[None, :])[0] == target_code
        total_reward += -cfg.dt_control * abs(a) + (env.episode.r_end if reached else 0.0)
        if reached:
            break

    n_settle = int(math.ceil(settle_periods * env.params.forcing_period / dt))
    settle = integrate_path(state[:1], state[1:2], state[2:3], 0.0, n_settle, dt, env.params)
    blocks.append(settle)
    times.append(t + np.arange(n_settle + 1) * dt)
    acts.append(np.zeros(n_settle + 1))
    tags += ["settle"] * (n_settle + 1)

    rows = np.vstack(blocks)
    df = pd.DataFrame({
        "t": np.concatenate(times),
        "x": rows[:, 0],
        "v": rows[:, 1],
        "phi": rows[:, 2],
        "a": np.concatenate(acts),
        "phase_tag": tags,
    })
    n_measure = int(math.ceil(env.catalog.measure_periods * env.params.forcing_period / dt))
    summary = ExportSummary(
        success=bool(reached),
        reward=total_reward,
        control_duration=len(actions) * cfg.dt_control,
        jaggedness=jaggedness(actions),
        settle_amplitude=float(np.max(np.abs(settle[-n_measure:, 0]))),
        target_amplitude=env.catalog.amplitudes[target],
    )
    return df, summary


def rollout_export(
    policy: DenseNet,
    direction: str,
    path: str,
    env: EnvBundle,
    action_bound: float,
    seed: int = 0,
    settle_periods: int = DEFAULT_SETTLE_PERIODS,
) -> ExportSummary:
    df, summary = rollout_trajectory(policy, direction, env, action_bound, seed, settle_periods)
    write_frame(df, path)
    logger.info("exported %s rollout at F=%g to %s (success=%s, jaggedness %.3f)",
                direction, action_bound, path, summary.success, summary.jaggedness)
    return summary


# ─── Action-bound sweep ───────────────────────────────────────────────────────

@dataclass
class SweepResult:
    reports: Dict[float, EvalReport]
    curve: pd.DataFrame
    policies: Dict[float, DenseNet] = field(default_factory=dict)
    critics: Dict[float, DenseNet] = field(default_factory=dict)


def sweep_bounds(
    algorithm: Algorithm,
    env: EnvBundle,
    bounds: Sequence[float] = (4.0, 2.0, 1.0),
    episodes_per_bound: int = 100,
    direction: str = "sa2la",
    seed: int = 0,
    cem_config: Optional[CemConfig] = None,
    ddpg_config: Optional[DdpgConfig] = None,
    eval_rollouts: int = 100,
    eval_stride: int = 1,
    audit_fraction: float = 0.0,
    checkpoint_dir: Optional[str] = None,
) -> SweepResult:
    """
    Train at bounds[0] from scratch, then warm-start each smaller bound from
    the previous bound's final networks (weights copied, Adam state reset).
    The concatenated curve carries a ``bound`` column; its episode and
    sample counters keep counting across bounds.
    """
    from . import cem_trainer, ddpg_trainer

    bounds = [float(b) for b in bounds]
    if not bounds or any(a <= b for a, b in zip(bounds, bounds[1:])):
        raise ValueError(f"bounds must be strictly decreasing, got {bounds}")
    if algorithm not in ("cem", "ddpg"):
        raise ValueError(f"unknown algorithm {algorithm!r}")

    result = SweepResult(reports={}, curve=pd.DataFrame())
    frames: List[pd.DataFrame] = []
    policy: Optional[DenseNet] = None
    critic: Optional[DenseNet] = None
    episode_offset = 0
    sample_offset = 0
    for i, bound in enumerate(bounds):
        ckpt = None if checkpoint_dir is None else f"{checkpoint_dir}/{algorithm}_{direction}_F{bound:g}"
        if policy is not None:
            policy = policy.clone()
            policy.reset_optimizer()
        if critic is not None:
            critic = critic.clone()
            critic.reset_optimizer()
        if algorithm == "cem":
            cfg = replace(cem_config or CemConfig(), action_bound=bound,
                          episodes=episodes_per_bound, direction=direction)
            run = cem_trainer.train_cem(cfg, env, seed=seed, run_index=i, policy=policy,
                                        eval_rollouts=eval_rollouts, eval_stride=eval_stride,
                                        checkpoint_dir=ckpt)
        else:
            cfg = replace(ddpg_config or DdpgConfig(), action_bound=bound,
                          episodes=episodes_per_bound, direction=direction)
            run = ddpg_trainer.train_ddpg(cfg, env, seed=seed, run_index=i, actor=policy, critic=critic,
                                          eval_rollouts=eval_rollouts, eval_stride=eval_stride,
                                          checkpoint_dir=ckpt)
        policy, critic = run.policy, run.critic
        result.policies[bound] = policy
        if critic is not None:
            result.critics[bound] = critic

        curve = run.curve.copy()
        curve.insert(0, "bound", bound)
        curve["episode"] += episode_offset
        curve["samples_total"] += sample_offset
        if len(curve):
            episode_offset = int(curve["episode"].iloc[-1]) + 1
            sample_offset = int(curve["samples_total"].iloc[-1])
        frames.append(curve)

        report = evaluate(policy, direction, env, bound, eval_rollouts, seed, audit_fraction)
        result.reports[bound] = report
        logger.info("sweep %s F=%g: success %.3f, mean control duration %s",
                    algorithm, bound, report.success_rate, report.mean_control_duration)
    result.curve = pd.concat(frames, ignore_index=True)
    return result
