"""
tests/test_ddpg_trainer.py
==========================
Tests for the DDPG replay buffer, TD targets, network updates and short
training runs.

Run:  pytest tests/test_ddpg_trainer.py -v
"""
import os

import numpy as np
import pandas as pd
import pytest

from attractor_platform.config import DdpgConfig
from attractor_platform.ddpg_trainer import (
    DdpgReplayBuffer,
    load_checkpoint,
    sample_minibatch,
    store,
    td_target,
    td_targets,
    train_ddpg,
    update_networks,
)
from attractor_platform.errors import ConfigError, FormatError, InsufficientDataError, PreconditionError
from attractor_platform.neural import build_critic, build_policy, forward
from attractor_platform.types import Transition


def _transition(i, terminal=False):
    return Transition(np.full(4, float(i)), float(i) / 10.0, float(i), np.full(4, float(i) + 0.5), terminal)


def _constant_critic(value):
    critic = build_critic([4, 4], np.random.default_rng(0))
    for p in critic.parameters():
        p[...] = 0.0
    critic.biases[-1][...] = value
    return critic


def _zero_actor():
    actor = build_policy([4, 4], np.random.default_rng(0))
    for p in actor.parameters():
        p[...] = 0.0
    return actor


def _filled_buffer(n, seed=0):
    rng = np.random.default_rng(seed)
    buf = DdpgReplayBuffer(capacity=100)
    for _ in range(n):
        buf.store(Transition(rng.normal(size=4), float(rng.uniform(-4, 4)), float(rng.normal()),
                             rng.normal(size=4), bool(rng.random() < 0.2)))
    return buf


# ─── Replay buffer ────────────────────────────────────────────────────────────

class TestReplayBuffer:
    def test_ring_overwrites_oldest(self):
        buf = DdpgReplayBuffer(capacity=2)
        for i in range(3):
            store(buf, _transition(i))
        assert len(buf) == 2
        assert [t.reward for t in buf.ordered()] == [1.0, 2.0]

    def test_grows_past_initial_allocation(self):
        buf = DdpgReplayBuffer(capacity=10, initial_alloc=2)
        for i in range(7):
            buf.store(_transition(i))
        assert [t.reward for t in buf.ordered()] == [float(i) for i in range(7)]

    def test_uniform_sampling(self):
        buf = DdpgReplayBuffer(capacity=4)
        for i in range(4):
            buf.store(_transition(i))
        idx = buf.sample_indices(40_000, np.random.default_rng(0))
        freq = np.bincount(idx, minlength=4) / len(idx)
        assert freq == pytest.approx([0.25] * 4, abs=0.02)

    def test_insufficient_data(self):
        buf = DdpgReplayBuffer(capacity=10)
        buf.store(_transition(0))
        with pytest.raises(InsufficientDataError):
            sample_minibatch(buf, 2, np.random.default_rng(0))

    def test_minibatch_is_transitions(self):
        buf = DdpgReplayBuffer(capacity=10)
        buf.store(_transition(3, terminal=True))
        batch = sample_minibatch(buf, 3, np.random.default_rng(0))
        assert all(t.terminal and t.reward == 3.0 for t in batch)

    def test_file_round_trip_after_wrap(self, tmp_path):
        buf = DdpgReplayBuffer(capacity=3)
        for i in range(5):
            buf.store(_transition(i, terminal=(i % 2 == 0)))
        path = str(tmp_path / "buffer.rpb")
        buf.save(path)
        loaded = DdpgReplayBuffer.load(path)
        assert loaded.capacity == 3
        assert loaded.cursor == buf.cursor
        for a, b in zip(loaded.ordered(), buf.ordered()):
            assert np.array_equal(a.state, b.state)
            assert (a.action, a.reward, a.terminal) == (b.action, b.reward, b.terminal)
            assert np.array_equal(a.next_state, b.next_state)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "buffer.rpb"
        path.write_bytes(b"RPB0" + bytes(32))
        with pytest.raises(FormatError):
            DdpgReplayBuffer.load(str(path))

    def test_truncated_body(self, tmp_path):
        buf = _filled_buffer(4)
        path = tmp_path / "buffer.rpb"
        buf.save(str(path))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            DdpgReplayBuffer.load(str(path))


# ─── TD targets ───────────────────────────────────────────────────────────────

class TestTdTarget:
    def test_terminal_no_bootstrap(self):
        t = Transition(np.zeros(4), 1.0, 99.5, np.zeros(4), True)
        assert td_target(t, _zero_actor(), _constant_critic(10.0), 0.9, 4.0) == 99.5

    def test_bootstrap_from_target_critic(self):
        t = Transition(np.zeros(4), 1.0, 0.0, np.ones(4), False)
        assert td_target(t, _zero_actor(), _constant_critic(10.0), 0.9, 4.0) == pytest.approx(9.0)

    def test_cost_only(self):
        t = Transition(np.zeros(4), 4.0, -1.0, np.ones(4), False)
        assert td_target(t, _zero_actor(), _constant_critic(0.0), 0.9, 4.0) == pytest.approx(-1.0)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(2)
        actor, critic = build_policy([8, 8], rng), build_critic([8, 8], rng)
        buf = _filled_buffer(6)
        ys = td_targets(buf.rewards[:6], buf.next_states[:6], buf.terminals[:6], actor, critic, 0.9, 4.0)
        for i, t in enumerate(buf.ordered()):
            assert ys[i] == pytest.approx(td_target(t, actor, critic, 0.9, 4.0))


# ─── Network updates ──────────────────────────────────────────────────────────

def _nets(seed=0):
    rng = np.random.default_rng(seed)
    actor, critic = build_policy([8, 8], rng), build_critic([8, 8], rng)
    t_actor, t_critic = actor.clone(), critic.clone()
    return actor, critic, t_actor, t_critic


def _batch(seed=1, n=16):
    buf = _filled_buffer(n, seed)
    return buf.states[:n].copy(), buf.actions[:n].copy(), buf.rewards[:n].copy(), \
        buf.next_states[:n].copy(), buf.terminals[:n].copy()


class TestUpdateNetworks:
    def test_critic_loss_decreases(self):
        actor, critic, ta, tc = _nets()
        s, a, r, s2, term = batch = _batch()
        cfg = DdpgConfig(critic_lr=1e-4, actor_lr=1e-4, hidden=(8, 8))
        y = td_targets(r, s2, term, ta, tc, cfg.gamma, cfg.action_bound)
        before = np.mean((forward(critic, s, a[:, None], keep_cache=False)[:, 0] - y) ** 2)
        update_networks(actor, critic, ta, tc, batch, cfg)
        after = np.mean((forward(critic, s, a[:, None], keep_cache=False)[:, 0] - y) ** 2)
        assert after < before

    def test_actor_ascends_critic(self):
        actor, critic, ta, tc = _nets(3)
        s = _batch()[0]
        cfg = DdpgConfig(critic_lr=1e-12, actor_lr=1e-4, hidden=(8, 8))

        def mean_q():
            pi = cfg.action_bound * forward(actor, s, keep_cache=False)
            return float(np.mean(forward(critic, s, pi, keep_cache=False)))

        before = mean_q()
        update_networks(actor, critic, ta, tc, _batch(), cfg)
        assert mean_q() > before

    def test_soft_updates_exact(self):
        actor, critic, ta, tc = _nets(4)
        ta_before = [p.copy() for p in ta.parameters()]
        tc_before = [p.copy() for p in tc.parameters()]
        cfg = DdpgConfig(tau=0.1, hidden=(8, 8))
        update_networks(actor, critic, ta, tc, _batch(), cfg)
        for p_t, p, old in zip(ta.parameters(), actor.parameters(), ta_before):
            assert np.array_equal(p_t, 0.1 * p + (1.0 - 0.1) * old)
        for p_t, p, old in zip(tc.parameters(), critic.parameters(), tc_before):
            assert np.array_equal(p_t, 0.1 * p + (1.0 - 0.1) * old)


# ─── Training runs ────────────────────────────────────────────────────────────

def _small_config(**kw):
    base = dict(episodes=2, hidden=(8, 8), warmup=10, minibatch=4, buffer_capacity=1000)
    base.update(kw)
    return DdpgConfig(**base)


class TestTrainDdpg:
    def test_zero_episodes(self, env):
        run = train_ddpg(_small_config(episodes=0), env, eval_rollouts=2)
        assert run.curve.empty
        assert run.critic is not None

    def test_short_run(self, env, tmp_path):
        run = train_ddpg(_small_config(), env, seed=2, eval_rollouts=2, checkpoint_dir=str(tmp_path))
        assert list(run.curve["samples_total"]) == [1, 2]
        assert list(run.curve["episode"]) == [0, 1]
        for name in ("actor.net", "critic.net", "target_actor.net", "target_critic.net", "buffer.rpb"):
            assert os.path.exists(tmp_path / name)
        buf = DdpgReplayBuffer.load(str(tmp_path / "buffer.rpb"))
        assert len(buf) > 0

    def test_ou_noise_run(self, env):
        run = train_ddpg(_small_config(episodes=1, noise="ou"), env, eval_rollouts=2)
        assert len(run.curve) == 1

    def test_deterministic(self, env):
        a = train_ddpg(_small_config(), env, seed=7, eval_rollouts=2)
        b = train_ddpg(_small_config(), env, seed=7, eval_rollouts=2)
        pd.testing.assert_frame_equal(a.curve, b.curve)
        for p, q in zip(a.critic.parameters(), b.critic.parameters()):
            assert np.array_equal(p, q)

    def test_resume_with_buffer(self, env):
        buf = _filled_buffer(20)
        n0 = len(buf)
        train_ddpg(_small_config(episodes=1, buffer_capacity=100), env, eval_rollouts=2, buffer=buf)
        assert len(buf) > n0


# ─── Checkpoints and resume ───────────────────────────────────────────────────

class TestResume:
    def test_resumed_run_matches_uninterrupted(self, env, tmp_path):
        straight = train_ddpg(_small_config(episodes=3), env, seed=3, eval_rollouts=2,
                              checkpoint_dir=str(tmp_path / "straight"))
        ckpt_dir = str(tmp_path / "split")
        first = train_ddpg(_small_config(episodes=2), env, seed=3, eval_rollouts=2, checkpoint_dir=ckpt_dir)
        assert list(first.curve["episode"]) == [0, 1]

        ckpt = load_checkpoint(ckpt_dir)
        assert ckpt.episodes_done == 2
        resumed = train_ddpg(_small_config(episodes=3), env, seed=3, eval_rollouts=2,
                             checkpoint_dir=ckpt_dir, resume=ckpt)
        assert list(resumed.curve["episode"]) == [0, 1, 2]
        pd.testing.assert_frame_equal(resumed.curve, straight.curve, check_dtype=False)
        for p, q in zip(resumed.policy.parameters(), straight.policy.parameters()):
            assert np.array_equal(p, q)
        for p, q in zip(resumed.critic.parameters(), straight.critic.parameters()):
            assert np.array_equal(p, q)

    def test_checkpoint_keeps_targets(self, env, tmp_path):
        run = train_ddpg(_small_config(episodes=2, warmup=4), env, seed=4, eval_rollouts=2,
                         checkpoint_dir=str(tmp_path))
        ckpt = load_checkpoint(str(tmp_path))
        for p, q in zip(ckpt.actor.parameters(), run.policy.parameters()):
            assert np.array_equal(p, q)
        # soft updates leave the targets behind the online nets once updates have run
        assert ckpt.updates > 0
        assert not all(np.array_equal(p, q) for p, q in
                       zip(ckpt.target_actor.parameters(), ckpt.actor.parameters()))
        assert ckpt.actor.adam_t == run.policy.adam_t

    def test_finished_run_resumes_to_nothing(self, env, tmp_path):
        train_ddpg(_small_config(episodes=1), env, eval_rollouts=2, checkpoint_dir=str(tmp_path))
        again = train_ddpg(_small_config(episodes=1), env, eval_rollouts=2, resume=load_checkpoint(str(tmp_path)))
        assert list(again.curve["episode"]) == [0]
        assert again.reports == []

    def test_direction_mismatch(self, env, tmp_path):
        train_ddpg(_small_config(episodes=1), env, eval_rollouts=2, checkpoint_dir=str(tmp_path))
        with pytest.raises(ConfigError):
            train_ddpg(_small_config(episodes=2, direction="la2sa"), env, eval_rollouts=2,
                       resume=load_checkpoint(str(tmp_path)))

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(PreconditionError):
            load_checkpoint(str(tmp_path))
