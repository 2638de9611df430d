"""
attractor_platform/ddpg_trainer.py
==================================
Deep deterministic policy gradient with a ring replay buffer and Polyak
target networks. Per control step of Phase 2:

  aₜ = clip(F·π(sₜ) + 𝒩ₜ, −F, F);  store (sₜ, aₜ, rₜ, sₜ₊₁, terminal)
  once the buffer holds ``warmup`` transitions:
    yᵢ = rᵢ + γ·(1 − terminalᵢ)·Q′(sᵢ₊₁, F·π′(sᵢ₊₁))
    critic: Adam on mean((yᵢ − Q(sᵢ, aᵢ))²)
    actor:  Adam along mean ∇ₐQ(s, a)|ₐ₌F·π(s) · F · ∇π(s)
    targets: p′ ← τp + (1 − τ)p′

Reaching the target basin is terminal (no bootstrap); running out of
control time is not.
"""
from __future__ import annotations
import logging
import os
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from .artifacts import curve_frame, curve_row, read_curve_csv, write_frame
from .boa_classifier import featurize_batch
from .cem_trainer import TrainingRun
from .config import DdpgConfig
from .environment import EnvBundle, GaussianNoise, OrnsteinUhlenbeckNoise, SwitchingEnv
from .errors import ConfigError, FormatError, InsufficientDataError, PreconditionError
from .eval_harness import evaluate
from .neural import (
    AdamConfig, DenseNet, adam_step, backward, build_critic, build_policy,
    forward, load_net, policy_forward, save_net, soft_update,
)
from .seeding import derive_rng
from .types import Transition

logger = logging.getLogger(__name__)

BUFFER_MAGIC = b"RPB1"
_HEADER = struct.Struct("<4sqqqq")   # magic, capacity, cursor, size, feature width


# ─── Replay buffer ────────────────────────────────────────────────────────────

class DdpgReplayBuffer:
    """
    Fixed-capacity ring of transitions, stored column-wise. Storage grows
    geometrically up to ``capacity``; once full the oldest entry is
    overwritten first.
    """

    def __init__(self, capacity: int = 1_000_000, feature_size: int = 4, initial_alloc: int = 4096):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.feature_size = int(feature_size)
        self.cursor = 0
        self.size = 0
        self._alloc(min(self.capacity, initial_alloc))

    def _alloc(self, n: int) -> None:
        old = getattr(self, "states", None)
        fields = {
            "states": np.zeros((n, self.feature_size)),
            "actions": np.zeros(n),
            "rewards": np.zeros(n),
            "next_states": np.zeros((n, self.feature_size)),
            "terminals": np.zeros(n, dtype=bool),
        }
        if old is not None:
            for name, arr in fields.items():
                arr[: self.size] = getattr(self, name)[: self.size]
        for name, arr in fields.items():
            setattr(self, name, arr)

    def __len__(self) -> int:
        return self.size

    def store(self, t: Transition) -> None:
        if self.size < self.capacity and self.size == len(self.actions):
            self._alloc(min(self.capacity, 2 * len(self.actions)))
        i = self.cursor
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.terminals[i] = t.terminal
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _transition(self, i: int) -> Transition:
        return Transition(self.states[i].copy(), float(self.actions[i]), float(self.rewards[i]),
                          self.next_states[i].copy(), bool(self.terminals[i]))

    def ordered(self) -> List[Transition]:
        """Contents from oldest to newest."""
        start = self.cursor if self.size == self.capacity else 0
        return [self._transition((start + k) % self.capacity) for k in range(self.size)]

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < n:
            raise InsufficientDataError(f"buffer holds {self.size} transitions, {n} requested")
        return rng.integers(0, self.size, size=n)

    def sample_arrays(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, ...]:
        idx = self.sample_indices(n, rng)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.terminals[idx])

    # ── persistence ──
    def save(self, path: str) -> None:
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        n = self.size
        with open(path, "wb") as f:
            f.write(_HEADER.pack(BUFFER_MAGIC, self.capacity, self.cursor, n, self.feature_size))
            for arr in (self.states[:n], self.actions[:n], self.rewards[:n], self.next_states[:n]):
                f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(self.terminals[:n], dtype=np.uint8).tobytes())

    @classmethod
    def load(cls, path: str) -> "DdpgReplayBuffer":
        with open(path, "rb") as f:
            blob = f.read()
        if len(blob) < _HEADER.size:
            raise FormatError(f"{path}: truncated replay buffer header")
        magic, capacity, cursor, size, width = _HEADER.unpack_from(blob)
        if magic != BUFFER_MAGIC:
            raise FormatError(f"{path}: not an {BUFFER_MAGIC.decode()} replay buffer")
        expected = _HEADER.size + size * (8 * (2 * width + 2) + 1)
        if len(blob) != expected or size > capacity or not 0 <= cursor < capacity:
            raise FormatError(f"{path}: replay buffer body does not match its header")
        buf = cls(capacity, width, initial_alloc=max(size, 1))
        pos = _HEADER.size

        def take(count: int, dtype) -> np.ndarray:
            nonlocal pos
            nbytes = count * np.dtype(dtype).itemsize
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).copy()
            pos += nbytes
            return arr

        buf.states[:size] = take(size * width, "<f8").reshape(size, width)
        buf.actions[:size] = take(size, "<f8")
        buf.rewards[:size] = take(size, "<f8")
        buf.next_states[:size] = take(size * width, "<f8").reshape(size, width)
        buf.terminals[:size] = take(size, np.uint8).astype(bool)
        buf.size = int(size)
        buf.cursor = int(cursor)
        return buf


def store(buffer: DdpgReplayBuffer, transition: Transition) -> None:
    buffer.store(transition)


def sample_minibatch(buffer: DdpgReplayBuffer, n: int, rng: np.random.Generator) -> List[Transition]:
    """Uniform with replacement; InsufficientDataError while the buffer holds fewer than ``n``."""
    return [buffer._transition(int(i)) for i in buffer.sample_indices(n, rng)]


# ─── Targets and updates ──────────────────────────────────────────────────────

def td_targets(rewards: np.ndarray, next_states: np.ndarray, terminals: np.ndarray,
               target_actor: DenseNet, target_critic: DenseNet, gamma: float, action_bound: float) -> np.ndarray:
    next_a = action_bound * forward(target_actor, next_states, keep_cache=False)
    q_next = forward(target_critic, next_states, next_a, keep_cache=False)[:, 0]
    return rewards + gamma * np.where(terminals, 0.0, q_next)


def td_target(transition: Transition, target_actor: DenseNet, target_critic: DenseNet,
              gamma: float, action_bound: float) -> float:
    """y = r at terminal transitions, r + γ·Q′(s′, F·π′(s′)) otherwise."""
    if transition.terminal:
        return float(transition.reward)
    y = td_targets(np.array([transition.reward]), np.asarray(transition.next_state)[None, :],
                   np.array([False]), target_actor, target_critic, gamma, action_bound)
    return float(y[0])


@dataclass
class UpdateStats:
    critic_loss: float
    mean_q: float


def update_networks(
    actor: DenseNet,
    critic: DenseNet,
    target_actor: DenseNet,
    target_critic: DenseNet,
    batch: Tuple[np.ndarray, ...],
    cfg: DdpgConfig,
) -> UpdateStats:
    """Critic step, actor step, then soft updates of both targets (in place)."""
    s, a, r, s_next, term = batch
    B = len(a)
    F = cfg.action_bound
    y = td_targets(r, s_next, term, target_actor, target_critic, cfg.gamma, F)

    q = forward(critic, s, a[:, None])[:, 0]
    err = q - y
    c_grads, _, _ = backward(critic, ((2.0 / B) * err)[:, None])
    adam_step(critic, c_grads, AdamConfig(lr=cfg.critic_lr))

    pi = forward(actor, s)
    q_pi = forward(critic, s, F * pi)[:, 0]
    _, _, dq_da = backward(critic, np.full((B, 1), -1.0 / B))
    a_grads, _, _ = backward(actor, dq_da * F)
    adam_step(actor, a_grads, AdamConfig(lr=cfg.actor_lr))

    soft_update(target_critic, critic, cfg.tau)
    soft_update(target_actor, actor, cfg.tau)
    return UpdateStats(critic_loss=float(np.mean(err * err)), mean_q=float(np.mean(q_pi)))


# ─── Checkpoints ──────────────────────────────────────────────────────────────

PROGRESS_FILE = "progress.yaml"
_CHECKPOINT_NETS = ("actor", "critic", "target_actor", "target_critic")


@dataclass
class DdpgCheckpoint:
    """Everything a run needs to continue after episode ``episodes_done - 1``."""
    actor: DenseNet
    critic: DenseNet
    target_actor: DenseNet
    target_critic: DenseNet
    buffer: DdpgReplayBuffer
    episodes_done: int
    updates: int
    curve: pd.DataFrame
    direction: str
    action_bound: float


def save_checkpoint(ckpt: DdpgCheckpoint, checkpoint_dir: str) -> None:
    for name in _CHECKPOINT_NETS:
        save_net(getattr(ckpt, name), os.path.join(checkpoint_dir, f"{name}.net"))
    ckpt.buffer.save(os.path.join(checkpoint_dir, "buffer.rpb"))
    write_frame(ckpt.curve, os.path.join(checkpoint_dir, "curve.csv"))
    progress = {
        "episodes_done": ckpt.episodes_done,
        "updates": ckpt.updates,
        "direction": ckpt.direction,
        "action_bound": float(ckpt.action_bound),
    }
    # written last; its presence marks a complete checkpoint
    with open(os.path.join(checkpoint_dir, PROGRESS_FILE), "w", encoding="utf-8") as f:
        yaml.safe_dump(progress, f, sort_keys=False)


def load_checkpoint(checkpoint_dir: str) -> DdpgCheckpoint:
    progress_path = os.path.join(checkpoint_dir, PROGRESS_FILE)
    if not os.path.exists(progress_path):
        raise PreconditionError(f"no DDPG checkpoint in {checkpoint_dir}")
    with open(progress_path, "r", encoding="utf-8") as f:
        progress = yaml.safe_load(f)
    try:
        episodes_done = int(progress["episodes_done"])
        updates = int(progress["updates"])
        direction = str(progress["direction"])
        action_bound = float(progress["action_bound"])
    except (TypeError, KeyError, ValueError) as exc:
        raise FormatError(f"{progress_path}: malformed progress record ({exc})") from exc
    nets = {name: load_net(os.path.join(checkpoint_dir, f"{name}.net")) for name in _CHECKPOINT_NETS}
    curve = read_curve_csv(os.path.join(checkpoint_dir, "curve.csv"))
    if len(curve) != episodes_done:
        raise FormatError(f"{checkpoint_dir}: curve has {len(curve)} rows, progress says {episodes_done}")
    return DdpgCheckpoint(
        buffer=DdpgReplayBuffer.load(os.path.join(checkpoint_dir, "buffer.rpb")),
        episodes_done=episodes_done, updates=updates, curve=curve,
        direction=direction, action_bound=action_bound, **nets,
    )


# ─── Training loop ────────────────────────────────────────────────────────────

def _make_noise(cfg: DdpgConfig, episode: int, dt_control: float):
    sigma = cfg.noise_scale * cfg.action_bound * cfg.noise_decay ** episode
    if cfg.noise == "ou":
        return OrnsteinUhlenbeckNoise(cfg.ou_theta, sigma, dt_control)
    return GaussianNoise(sigma)


def train_ddpg(
    cfg: DdpgConfig,
    env: EnvBundle,
    seed: int = 0,
    run_index: int = 0,
    actor: Optional[DenseNet] = None,
    critic: Optional[DenseNet] = None,
    eval_rollouts: int = 100,
    eval_stride: int = 1,
    checkpoint_dir: Optional[str] = None,
    buffer: Optional[DdpgReplayBuffer] = None,
    resume: Optional[DdpgCheckpoint] = None,
) -> TrainingRun:
    """
    Train until ``cfg.episodes`` episodes exist, one trajectory each.
    ``actor``/``critic`` warm-start training; targets start as exact copies
    of them. ``buffer`` seeds the replay buffer with earlier transitions.

    ``resume`` continues a checkpointed run at episode ``episodes_done``
    with its networks, targets, Adam state, buffer and curve, so a resumed
    run reproduces the uninterrupted one exactly.
    """
    F = cfg.action_bound
    start = 0
    rows: List[dict] = []
    updates = 0
    if resume is not None:
        if resume.direction != cfg.direction or resume.action_bound != F:
            raise ConfigError(
                f"checkpoint is for {resume.direction} at F={resume.action_bound:g}, "
                f"not {cfg.direction} at F={F:g}"
            )
        actor, critic = resume.actor, resume.critic
        target_actor, target_critic = resume.target_actor, resume.target_critic
        buffer = resume.buffer
        start, updates = resume.episodes_done, resume.updates
        rows = resume.curve.to_dict("records")
        logger.info("resuming DDPG %s F=%g at episode %d", cfg.direction, F, start)
    else:
        if actor is None:
            actor = build_policy(cfg.hidden, derive_rng(seed, "policy_init", run_index))
        if critic is None:
            critic = build_critic(cfg.hidden, derive_rng(seed, "critic_init", run_index))
        target_actor = actor.clone()
        target_critic = critic.clone()
        target_actor.reset_optimizer()
        target_critic.reset_optimizer()
    if buffer is None:
        buffer = DdpgReplayBuffer(cfg.buffer_capacity)
    senv = SwitchingEnv(env, cfg.direction, F)
    ready = max(cfg.warmup, cfg.minibatch)
    reports = []

    for k in range(start, cfg.episodes):
        rng = derive_rng(seed, "ddpg", run_index, k)
        sample_rng = derive_rng(seed, "ddpg_sample", run_index, k)
        noise = _make_noise(cfg, k, env.integrator.dt_control)
        noise.reset()

        state = senv.reset(rng)
        feat = featurize_batch(state.as_array()[None, :])[0]
        ep_reward = 0.0
        terminal = False
        while True:
            raw = F * policy_forward(actor, feat) + noise.sample(rng)
            a = min(max(raw, -F), F)
            nxt, r, terminal, done = senv.step(a)
            nxt_feat = featurize_batch(nxt.as_array()[None, :])[0]
            buffer.store(Transition(feat, a, r, nxt_feat, terminal))
            ep_reward += r
            if len(buffer) >= ready:
                update_networks(actor, critic, target_actor, target_critic,
                                buffer.sample_arrays(cfg.minibatch, sample_rng), cfg)
                updates += 1
            feat = nxt_feat
            if done:
                break

        report = None
        if k % eval_stride == 0 or k == cfg.episodes - 1:
            report = evaluate(actor, cfg.direction, env, F, eval_rollouts, seed)
            reports.append(report)
        rows.append(curve_row(k, k + 1, report))

        if checkpoint_dir:
            save_checkpoint(DdpgCheckpoint(actor, critic, target_actor, target_critic, buffer, k + 1, updates,
                                           curve_frame(rows), cfg.direction, F), checkpoint_dir)
        logger.info(
            "DDPG F=%g ep %d: %s in %d steps, reward %.2f, buffer %d, updates %d%s",
            F, k, "switched" if terminal else "timeout", senv.steps, ep_reward, len(buffer), updates,
            f", eval success {report.success_rate:.2f}" if report else "",
        )

    return TrainingRun(policy=actor, curve=curve_frame(rows), critic=critic, reports=reports)
