"""
attractor_platform/cem_trainer.py
=================================
Cross-entropy method in action space. Each episode:

  1. N noisy rollouts (Phase 1 + Phase 2), aₜ = clip(F·π(sₜ) + 𝒩ₜ, −F, F)
  2. keep the executed state-action pairs of the rollouts that reached the
     target basin, grouped by trajectory with their reward R
  3. elite = pairs of successful trajectories with R ≥ ρ, ρ the linear
     (1 − p)-quantile of successful rewards
  4. one pass of minibatch Adam steps on L = mean((F·π(s) − a)²) over the elite

Exploration noise is N(0, (σ₀F·decayᵏ)²) in episode k. Episodes without a
single success skip the update.
"""
from __future__ import annotations
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .artifacts import curve_frame, curve_row
from .config import CemConfig
from .environment import EnvBundle, phase1, run_rollouts
from .eval_harness import evaluate
from .neural import AdamConfig, DenseNet, adam_step, backward, build_policy, forward, save_net
from .seeding import derive_rng
from .types import EvalReport, direction_labels

logger = logging.getLogger(__name__)

__all__ = [
    "CemReplayBuffer", "TrainingRun", "phase1", "collect_trajectory",
    "select_elite", "update_policy", "train_cem",
]


@dataclass
class CemReplayBuffer:
    """State-action pairs of successful trajectories from the current episode."""
    features: List[np.ndarray] = field(default_factory=list)   # per trajectory (k, 4)
    actions: List[np.ndarray] = field(default_factory=list)    # per trajectory (k,)
    rewards: List[float] = field(default_factory=list)

    def add(self, features: np.ndarray, actions: np.ndarray, trajectory_reward: float) -> None:
        features = np.asarray(features, dtype=np.float64).reshape(-1, 4)
        actions = np.asarray(actions, dtype=np.float64).reshape(-1)
        if len(features) != len(actions):
            raise ValueError(f"{len(features)} states but {len(actions)} actions")
        self.features.append(features)
        self.actions.append(actions)
        self.rewards.append(float(trajectory_reward))

    def clear(self) -> None:
        self.features.clear()
        self.actions.clear()
        self.rewards.clear()

    @property
    def trajectories(self) -> int:
        return len(self.rewards)

    def __len__(self) -> int:
        return sum(len(a) for a in self.actions)


@dataclass
class TrainingRun:
    policy: DenseNet
    curve: pd.DataFrame
    critic: Optional[DenseNet] = None
    reports: List[EvalReport] = field(default_factory=list)


def collect_trajectory(
    env: EnvBundle,
    policy: DenseNet,
    action_bound: float,
    direction: str,
    rng: np.random.Generator,
    noise_sigma: float,
) -> Tuple[bool, float, np.ndarray, np.ndarray]:
    """One noisy rollout → (success, R, features (k, 4), executed actions (k,))."""
    r = run_rollouts(env, policy, action_bound, direction, [rng], noise_sigma, record_features=True)[0]
    return r.record.success, r.record.reward, r.features, r.actions


def select_elite(buffer: CemReplayBuffer, p: float) -> Tuple[np.ndarray, np.ndarray]:
    """Pairs from trajectories with R ≥ the linear (1 − p)-quantile; ties are kept."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"elite fraction must lie in (0, 1], got {p}")
    if buffer.trajectories == 0:
        return np.empty((0, 4)), np.empty(0)
    rewards = np.asarray(buffer.rewards)
    rho = float(np.quantile(rewards, 1.0 - p))
    keep = [i for i, r in enumerate(rewards) if r >= rho]
    return (np.concatenate([buffer.features[i] for i in keep]),
            np.concatenate([buffer.actions[i] for i in keep]))


def regression_loss(policy: DenseNet, features: np.ndarray, actions: np.ndarray, action_bound: float) -> float:
    pred = action_bound * forward(policy, features, keep_cache=False)[:, 0]
    return float(np.mean((pred - actions) ** 2))


def update_policy(
    policy: DenseNet,
    features: np.ndarray,
    actions: np.ndarray,
    action_bound: float,
    adam: AdamConfig,
    minibatch: int,
    rng: np.random.Generator,
) -> float:
    """One shuffled pass of Adam steps regressing F·π(s) onto a; returns the mean minibatch loss."""
    n = len(actions)
    if n == 0:
        raise ValueError("update_policy needs at least one elite pair")
    order = rng.permutation(n)
    losses = []
    for start in range(0, n, minibatch):
        idx = order[start:start + minibatch]
        s, a = features[idx], actions[idx]
        out = forward(policy, s)[:, 0]
        err = action_bound * out - a
        losses.append(float(np.mean(err * err)))
        upstream = (2.0 / len(idx)) * err * action_bound
        grads, _, _ = backward(policy, upstream[:, None])
        adam_step(policy, grads, adam)
    return float(np.mean(losses))


def train_cem(
    cfg: CemConfig,
    env: EnvBundle,
    seed: int = 0,
    run_index: int = 0,
    policy: Optional[DenseNet] = None,
    eval_rollouts: int = 100,
    eval_stride: int = 1,
    checkpoint_dir: Optional[str] = None,
) -> TrainingRun:
    """
    Run ``cfg.episodes`` CEM episodes. ``policy`` warm-starts training
    (used as given, Adam state included). The curve gets one row per
    episode; evaluation columns are filled every ``eval_stride`` episodes
    and on the last one.
    """
    direction_labels(cfg.direction)
    if policy is None:
        policy = build_policy(cfg.hidden, derive_rng(seed, "policy_init", run_index))
    adam = AdamConfig(lr=cfg.lr)
    F = cfg.action_bound
    N = cfg.samples_per_episode
    buffer = CemReplayBuffer()
    rows, reports = [], []

    for k in range(cfg.episodes):
        sigma = cfg.noise_scale * F * cfg.noise_decay ** k
        rngs = [derive_rng(seed, "cem", run_index, k, i) for i in range(N)]
        rollouts = run_rollouts(env, policy, F, cfg.direction, rngs, sigma, record_features=True)

        buffer.clear()
        for r in rollouts:
            if r.record.success:
                buffer.add(r.features, r.actions, r.record.reward)
        train_success = buffer.trajectories / N

        elite_s, elite_a = select_elite(buffer, cfg.elite_fraction)
        if len(elite_a) == 0:
            logger.warning("CEM episode %d: no rollout reached the target basin; skipping the update", k)
            loss = float("nan")
        else:
            loss = update_policy(policy, elite_s, elite_a, F, adam, cfg.minibatch,
                                 derive_rng(seed, "cem_update", run_index, k))

        report = None
        if k % eval_stride == 0 or k == cfg.episodes - 1:
            report = evaluate(policy, cfg.direction, env, F, eval_rollouts, seed)
            reports.append(report)
        rows.append(curve_row(k, (k + 1) * N, report))

        if checkpoint_dir:
            save_net(policy, os.path.join(checkpoint_dir, "policy.net"))
        logger.info(
            "CEM F=%g ep %d: train success %d/%d (%.2f), elite %d pairs, loss %.4g%s",
            F, k, buffer.trajectories, N, train_success, len(elite_a), loss,
            f", eval success {report.success_rate:.2f}" if report else "",
        )

    return TrainingRun(policy=policy, curve=curve_frame(rows), reports=reports)
