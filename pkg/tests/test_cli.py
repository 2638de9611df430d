"""
tests/test_cli.py
=================
Tests for the command-line front end: exit codes, preconditions and small
end-to-end commands against a temporary output directory.

Run:  pytest tests/test_cli.py -v
"""
import os

import numpy as np
import pandas as pd
import pytest

from attractor_platform import artifacts
from attractor_platform.boa_classifier import save_model
from attractor_platform.cli import EXIT_OK, EXIT_PIPELINE, EXIT_USAGE, main
from attractor_platform.neural import build_policy, save_net


def _out(tmp_path, name="t"):
    return ["--set", f"run.output_dir={tmp_path}", "--name", name]


@pytest.fixture
def prepared_run(tmp_path, catalog, basin_model):
    """Run directory holding the session catalog and basin model."""
    run_dir = tmp_path / "t"
    artifacts.save_catalog(catalog, str(run_dir / "catalog" / "catalog.txt"))
    save_model(basin_model, str(run_dir / "boa" / "model.boa"))
    return run_dir


# ─── Usage ────────────────────────────────────────────────────────────────────

class TestUsage:
    def test_no_command(self):
        assert main([]) == EXIT_USAGE

    def test_bad_direction(self, tmp_path):
        assert main(["train", "cem", "up"] + _out(tmp_path)) == EXIT_USAGE

    def test_bad_override(self, tmp_path):
        assert main(["catalog", "--set", "cem.nothing=1"] + _out(tmp_path)) == EXIT_USAGE

    def test_unknown_profile(self, tmp_path):
        assert main(["catalog", "--profile", "nightly"] + _out(tmp_path)) == EXIT_USAGE

    def test_unknown_figure(self, tmp_path):
        assert main(["reproduce", "fig6"] + _out(tmp_path)) == EXIT_USAGE

    def test_resume_is_ddpg_only(self, tmp_path, prepared_run):
        assert main(["train", "cem", "sa2la", "--resume"] + _out(tmp_path)) == EXIT_USAGE

    def test_eval_needs_bound_for_unnamed_policy(self, tmp_path, prepared_run):
        policy_file = str(tmp_path / "p.net")
        save_net(build_policy([8, 8], np.random.default_rng(0)), policy_file)
        assert main(["eval", "sa2la", "--policy", policy_file] + _out(tmp_path)) == EXIT_USAGE


# ─── Preconditions ────────────────────────────────────────────────────────────

class TestPreconditions:
    def test_train_without_catalog(self, tmp_path, capsys):
        assert main(["train", "cem", "sa2la"] + _out(tmp_path)) == EXIT_PIPELINE
        assert "catalog" in capsys.readouterr().err

    def test_boa_without_catalog(self, tmp_path):
        assert main(["boa"] + _out(tmp_path)) == EXIT_PIPELINE

    def test_resume_without_checkpoint(self, tmp_path, prepared_run):
        assert main(["train", "ddpg", "sa2la", "--resume"] + _out(tmp_path)) == EXIT_PIPELINE

    def test_eval_missing_policy(self, tmp_path):
        code = main(["eval", "sa2la", "--policy", str(tmp_path / "none.net")] + _out(tmp_path))
        assert code == EXIT_PIPELINE

    def test_monostable_parameters(self, tmp_path):
        argv = ["catalog", "--set", "duffing.omega=0.5", "--set", "oracle.catalog_samples=100"] + _out(tmp_path)
        assert main(argv) == EXIT_PIPELINE


# ─── Commands ─────────────────────────────────────────────────────────────────

class TestCommands:
    def test_catalog_is_reproducible(self, tmp_path):
        argv = ["catalog", "--set", "oracle.catalog_samples=100"] + _out(tmp_path)
        assert main(argv) == EXIT_OK
        path = tmp_path / "t" / "catalog" / "catalog.txt"
        first = path.read_text()
        assert main(argv) == EXIT_OK
        assert path.read_text() == first
        assert (tmp_path / "t" / "config.effective").exists()
        assert (tmp_path / "t" / "run.log").exists()

    def test_eval_writes_report(self, tmp_path, prepared_run, capsys):
        policy = build_policy([8, 8], np.random.default_rng(0))
        policy_file = str(tmp_path / "p.net")
        save_net(policy, policy_file)
        argv = ["eval", "sa2la", "--policy", policy_file, "--bound", "2",
                "--set", "evaluation.rollouts=2", "--set", "evaluation.audit_fraction=0"] + _out(tmp_path)
        assert main(argv) == EXIT_OK
        report = pd.read_csv(prepared_run / "reports" / "eval_p_sa2la.csv")
        assert len(report) == 2
        assert (prepared_run / "reports" / "eval_p_sa2la.txt").exists()
        assert "success rate" in capsys.readouterr().out

    def test_train_cem_writes_policy_and_curve(self, tmp_path, prepared_run):
        argv = ["train", "cem", "sa2la", "--set", "cem.episodes=1", "--set", "cem.samples_per_episode=2",
                "--set", "cem.hidden=[8, 8]", "--set", "evaluation.rollouts=1"] + _out(tmp_path)
        assert main(argv) == EXIT_OK
        assert (prepared_run / "policies" / "cem_sa2la_F4.net").exists()
        curve = artifacts.read_curve_csv(str(prepared_run / "curves" / "cem_sa2la_F4.csv"))
        assert len(curve) == 1

    def test_train_ddpg_saves_critic(self, tmp_path, prepared_run):
        argv = ["train", "ddpg", "la2sa", "--set", "ddpg.episodes=1", "--set", "ddpg.hidden=[8, 8]",
                "--set", "ddpg.warmup=8", "--set", "ddpg.minibatch=4",
                "--set", "evaluation.rollouts=1"] + _out(tmp_path)
        assert main(argv) == EXIT_OK
        assert (prepared_run / "policies" / "ddpg_la2sa_F4.net").exists()
        assert (prepared_run / "policies" / "ddpg_la2sa_F4.critic.net").exists()
        assert os.path.exists(prepared_run / "checkpoints" / "ddpg_la2sa" / "buffer.rpb")

    def test_eval_reads_bound_from_policy_name(self, tmp_path, prepared_run, capsys):
        policy_file = str(tmp_path / "ddpg_sa2la_F2.net")
        save_net(build_policy([8, 8], np.random.default_rng(0)), policy_file)
        argv = ["eval", "sa2la", "--policy", policy_file,
                "--set", "evaluation.rollouts=2", "--set", "evaluation.audit_fraction=0"] + _out(tmp_path)
        assert main(argv) == EXIT_OK
        assert "F=2" in capsys.readouterr().out

    def test_train_ddpg_resume_continues_curve(self, tmp_path, prepared_run):
        common = ["--set", "ddpg.hidden=[8, 8]", "--set", "ddpg.warmup=8", "--set", "ddpg.minibatch=4",
                  "--set", "evaluation.rollouts=1"] + _out(tmp_path)
        assert main(["train", "ddpg", "sa2la", "--set", "ddpg.episodes=1"] + common) == EXIT_OK
        assert main(["train", "ddpg", "sa2la", "--resume", "--set", "ddpg.episodes=2"] + common) == EXIT_OK
        curve = artifacts.read_curve_csv(str(prepared_run / "curves" / "ddpg_sa2la_F4.csv"))
        assert list(curve["episode"]) == [0, 1]
        assert list(curve["samples_total"]) == [1, 2]

    def test_simulate_writes_trajectory(self, tmp_path):
        argv = ["simulate", "--duration", "1", "--action", "0.5"] + _out(tmp_path)
        assert main(argv) == EXIT_OK
        frame = artifacts.read_trajectory_csv(str(tmp_path / "t" / "trajectories" / "simulate_T1_a0.5.csv"))
        assert list(frame.columns) == ["t", "x", "v", "phi", "a"]
        assert frame["t"].tolist() == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
        assert frame["a"].iloc[0] == 0.5

    def test_simulate_negative_duration(self, tmp_path):
        assert main(["simulate", "--duration", "-1"] + _out(tmp_path)) == EXIT_USAGE


# ─── Reproduction bundles ─────────────────────────────────────────────────────

def _toy_sweep(tmp_path):
    return ["--set", "sweep.bounds=[2.0]", "--set", "sweep.episodes_per_bound=1",
            "--set", "cem.samples_per_episode=2", "--set", "cem.hidden=[8, 8]",
            "--set", "ddpg.hidden=[8, 8]", "--set", "ddpg.warmup=8", "--set", "ddpg.minibatch=4",
            "--set", "evaluation.rollouts=2", "--set", "evaluation.audit_fraction=0"] + _out(tmp_path)


class TestReproduce:
    def test_fig3_rollouts_for_both_directions(self, tmp_path, prepared_run):
        assert main(["reproduce", "fig3"] + _toy_sweep(tmp_path)) == EXIT_OK
        for direction in ("sa2la", "la2sa"):
            frame = pd.read_csv(prepared_run / "rollouts" / f"cem_{direction}_F2.csv")
            assert list(frame.columns) == ["t", "x", "v", "phi", "a", "phase_tag"]
            assert set(frame["phase_tag"]) <= {"free", "control", "settle"}
            assert (frame.loc[frame["phase_tag"] == "control", "a"].abs() <= 2.0).all()
            assert (prepared_run / "policies" / f"cem_{direction}_F2.net").exists()

    def test_fig5_curves(self, tmp_path, prepared_run):
        assert main(["reproduce", "fig5"] + _toy_sweep(tmp_path)) == EXIT_OK
        for algorithm in ("cem", "ddpg"):
            success = pd.read_csv(prepared_run / "curves" / f"sweep_{algorithm}_success.csv")
            reward = pd.read_csv(prepared_run / "curves" / f"sweep_{algorithm}_reward.csv")
            assert list(success.columns) == ["bound", "episode", "samples_total", "success_rate"]
            assert list(reward.columns) == ["bound", "episode", "samples_total", "reward_mean", "reward_std"]
            assert len(success) == 1
        cem = pd.read_csv(prepared_run / "curves" / "sweep_cem_success.csv")
        assert cem["samples_total"].iloc[0] == 2
