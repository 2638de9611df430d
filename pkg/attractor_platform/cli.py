"""
attractor_platform/cli.py
=========================
Command-line front end.

    python -m attractor_platform catalog
    python -m attractor_platform boa
    python -m attractor_platform train {cem,ddpg} {sa2la,la2sa} [--resume]
    python -m attractor_platform eval --policy PATH {sa2la,la2sa} [--bound F]
    python -m attractor_platform simulate [--x X --v V --phi PHI --duration T --action A]
    python -m attractor_platform reproduce {fig3,fig4,fig5}

Common flags: --config PATH, --profile NAME, --seed N, --workers K,
--name RUN, --set section.key=value (repeatable).

Artifacts land in ``<output_dir>/<name>/`` under catalog/, boa/, policies/,
curves/, rollouts/, reports/, trajectories/ plus config.effective and run.log.
Exit codes: 0 success, 1 usage or configuration error, 2 pipeline error.
"""
from __future__ import annotations
import argparse
import logging
import os
import re
import sys
from dataclasses import replace
from typing import List, Optional

from . import artifacts, boa_classifier, oracle
from .boa_classifier import BoaModel
from .cem_trainer import train_cem
from .config import RunConfig, dump_config, load_config, parse_override
from .ddpg_trainer import load_checkpoint, train_ddpg
from .dynamics import simulate_frame
from .environment import EnvBundle, build_env
from .errors import AttractorPlatformError, ConfigError, PreconditionError
from .eval_harness import evaluate, rollout_export, sweep_bounds
from .formatting import direction_label, format_amplitude, format_rate
from .neural import load_net, save_net
from .seeding import derive_int, derive_rng
from .types import DIRECTIONS, AttractorLabel, SimState

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PIPELINE = 2

BUNDLES = {
    "fig3": "cem-rollouts",
    "fig4": "ddpg-rollouts",
    "fig5": "learning-curves",
}

_POLICY_NAME = re.compile(r"^(cem|ddpg)_(sa2la|la2sa)_F(?P<bound>[0-9.eE+-]+)$")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ─── Paths ────────────────────────────────────────────────────────────────────

def catalog_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.run_dir, "catalog", "catalog.txt")


def model_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.run_dir, "boa", "model.boa")


def policy_path(cfg: RunConfig, algorithm: str, direction: str, bound: float) -> str:
    return os.path.join(cfg.run_dir, "policies", f"{algorithm}_{direction}_F{bound:g}.net")


def _configure_logging(cfg: RunConfig, verbose: bool = False) -> None:
    os.makedirs(cfg.run_dir, exist_ok=True)
    root = logging.getLogger()
    for h in [h for h in root.handlers if getattr(h, "_attractor_platform", False)]:
        root.removeHandler(h)
        h.close()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logfile = logging.FileHandler(os.path.join(cfg.run_dir, "run.log"), encoding="utf-8")
    logfile.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    for h in (console, logfile):
        h._attractor_platform = True
        root.addHandler(h)


# ─── Pipeline loaders ─────────────────────────────────────────────────────────

def _require(path: str, what: str, command: str) -> str:
    if not os.path.exists(path):
        raise PreconditionError(f"{what} not found at {path}; run `{command}` first")
    return path


def _load_env(cfg: RunConfig) -> EnvBundle:
    catalog = artifacts.load_catalog(_require(catalog_path(cfg), "attractor catalog", "catalog"))
    model = boa_classifier.load_model(_require(model_path(cfg), "basin classifier", "boa"))
    return build_env(catalog, model, cfg.duffing, cfg.integrator, cfg.episode)


# ─── Commands ─────────────────────────────────────────────────────────────────

def cmd_catalog(cfg: RunConfig) -> str:
    o = cfg.oracle
    catalog = oracle.build_catalog(
        cfg.duffing, cfg.integrator,
        sample_count=o.catalog_samples,
        settle_periods=o.settle_periods,
        measure_periods=o.measure_periods,
        min_cluster_fraction=o.min_cluster_fraction,
        rng=derive_rng(cfg.run.seed, "catalog"),
    )
    path = catalog_path(cfg)
    artifacts.save_catalog(catalog, path)
    print(f"attractors found: 2 (threshold {format_amplitude(catalog.amplitude_threshold)})")
    for lab in (AttractorLabel.SA, AttractorLabel.LA):
        print(f"  {lab.value}: amplitude {format_amplitude(catalog.amplitudes[lab])}")
    print(f"catalog written to {path}")
    return path


def cmd_boa(cfg: RunConfig) -> str:
    catalog = artifacts.load_catalog(_require(catalog_path(cfg), "attractor catalog", "catalog"))
    b = cfg.boa
    boa_dir = os.path.join(cfg.run_dir, "boa")
    dataset = boa_classifier.generate_dataset(
        catalog, cfg.integrator, cfg.duffing,
        resolution=b.resolution,
        workers=cfg.run.workers,
        chunk_size=b.chunk_size,
        checkpoint_path=os.path.join(boa_dir, f"dataset_r{b.resolution}.npz"),
        ambiguity_band=cfg.oracle.ambiguity_band,
    )
    artifacts.write_dataset_csv(dataset, os.path.join(boa_dir, "dataset.csv"))

    train_set, holdout = boa_classifier.split_dataset(dataset, b.holdout_fraction,
                                                      derive_rng(cfg.run.seed, "boa_split"))
    svm_seed = derive_int(cfg.run.seed, "svm")
    if b.grid_search:
        fit_set, val_set = boa_classifier.split_dataset(train_set, 0.25, derive_rng(cfg.run.seed, "boa_split", 1))
        best, table = boa_classifier.grid_search(fit_set, val_set, seed=svm_seed, tol=b.tol,
                                                 feature_mode=b.feature_mode)
        artifacts.write_frame(table, os.path.join(boa_dir, "grid_search.csv"))
        C, gamma_k = best.C, best.gamma_k
        logger.info("grid search picked C=%g gamma_k=%g", C, gamma_k)
    else:
        C, gamma_k = b.C, b.gamma_k
    model = boa_classifier.train(train_set, C, gamma_k, seed=svm_seed, tol=b.tol,
                                 max_iter=b.max_iter, feature_mode=b.feature_mode)
    path = model_path(cfg)
    boa_classifier.save_model(model, path)
    held = boa_classifier.accuracy(model, holdout) if len(holdout) else float("nan")
    print(f"dataset: {len(dataset)} points ({b.resolution}^3 grid)")
    print(f"support vectors: {len(model.dual_coef)}; train accuracy {format_rate(model.train_accuracy, 2)}; "
          f"held-out accuracy {format_rate(held, 2)}")
    print(f"model written to {path}")
    return path


def cmd_train(cfg: RunConfig, algorithm: str, direction: str, resume: bool = False) -> str:
    if resume and algorithm != "ddpg":
        raise UsageError("--resume is only supported for ddpg runs")
    env = _load_env(cfg)
    ev = cfg.evaluation
    if algorithm == "cem":
        c = replace(cfg.cem, direction=direction)
        bound = c.action_bound
        run = train_cem(c, env, seed=cfg.run.seed, eval_rollouts=ev.rollouts, eval_stride=ev.stride,
                        checkpoint_dir=os.path.join(cfg.run_dir, "checkpoints", f"cem_{direction}"))
    else:
        d = replace(cfg.ddpg, direction=direction)
        bound = d.action_bound
        ckpt_dir = os.path.join(cfg.run_dir, "checkpoints", f"ddpg_{direction}")
        checkpoint = load_checkpoint(ckpt_dir) if resume else None
        run = train_ddpg(d, env, seed=cfg.run.seed, eval_rollouts=ev.rollouts, eval_stride=ev.stride,
                         checkpoint_dir=ckpt_dir, resume=checkpoint)
    path = policy_path(cfg, algorithm, direction, bound)
    save_net(run.policy, path)
    if run.critic is not None:
        save_net(run.critic, os.path.splitext(path)[0] + ".critic.net")
    curve_path = os.path.join(cfg.run_dir, "curves", f"{algorithm}_{direction}_F{bound:g}.csv")
    artifacts.write_frame(run.curve, curve_path)
    last = run.reports[-1] if run.reports else None
    print(f"{algorithm.upper()} {direction_label(direction)} F={bound:g}: {len(run.curve)} episodes, "
          f"final success {format_rate(last.success_rate if last else None)}")
    print(f"policy written to {path}; curve written to {curve_path}")
    return path


def cmd_eval(cfg: RunConfig, policy_file: str, direction: str, bound: Optional[float] = None) -> str:
    if not os.path.exists(policy_file):
        raise PreconditionError(f"policy file not found: {policy_file}")
    policy = load_net(policy_file)
    env = _load_env(cfg)
    if bound is None:
        bound = bound_from_policy_name(policy_file)
    ev = cfg.evaluation
    report = evaluate(policy, direction, env, bound, ev.rollouts, cfg.run.seed, ev.audit_fraction)
    stem = os.path.splitext(os.path.basename(policy_file))[0]
    base = os.path.join(cfg.run_dir, "reports", f"eval_{stem}_{direction}")
    text = artifacts.write_report(report, base + ".csv", base + ".txt",
                                  title=f"{stem}: {direction_label(direction)}, F={bound:g}")
    print(text)
    return base + ".csv"


def bound_from_policy_name(policy_file: str) -> float:
    """Action bound encoded in a ``<alg>_<direction>_F<bound>.net`` file name."""
    stem = os.path.splitext(os.path.basename(policy_file))[0]
    match = _POLICY_NAME.match(stem)
    if match is None:
        raise UsageError(f"cannot infer the action bound from {stem!r}; pass --bound")
    try:
        return float(match.group("bound"))
    except ValueError:
        raise UsageError(f"cannot infer the action bound from {stem!r}; pass --bound") from None


def cmd_simulate(cfg: RunConfig, initial: SimState, duration: float, action: float = 0.0,
                 out: Optional[str] = None) -> str:
    """Constant-action run from ``initial`` written as a t,x,v,phi,a trajectory CSV."""
    if duration < 0:
        raise UsageError(f"duration must be >= 0, got {duration:g}")
    frame = simulate_frame(initial, action, duration, cfg.integrator, cfg.duffing)
    path = out or os.path.join(cfg.run_dir, "trajectories", f"simulate_T{duration:g}_a{action:g}.csv")
    artifacts.write_trajectory_csv(frame, path)
    recent = frame["t"] >= frame["t"].iloc[-1] - 10 * cfg.duffing.forcing_period
    tail = float(frame.loc[recent, "x"].abs().max())
    print(f"{len(frame)} samples over t={duration:g}; max |x| over the last 10 periods {format_amplitude(tail)}")
    print(f"trajectory written to {path}")
    return path


def _ensure_pipeline(cfg: RunConfig) -> None:
    if not os.path.exists(catalog_path(cfg)):
        cmd_catalog(cfg)
    if not os.path.exists(model_path(cfg)):
        cmd_boa(cfg)


def cmd_reproduce(cfg: RunConfig, figure: str) -> List[str]:
    """
    fig3 / fig4: CEM / DDPG rollout CSVs per direction and sweep bound.
    fig5: success and reward learning curves of both sweeps.
    The descriptive bundle names (``cem-rollouts`` ...) are accepted too.
    """
    bundle = BUNDLES.get(figure, figure)
    if bundle not in BUNDLES.values():
        raise UsageError(f"unknown figure {figure!r}")
    _ensure_pipeline(cfg)
    env = _load_env(cfg)
    s, ev = cfg.sweep, cfg.evaluation
    written: List[str] = []

    def run_sweep(algorithm: str, direction: str):
        return sweep_bounds(
            algorithm, env, s.bounds, s.episodes_per_bound, direction, cfg.run.seed,
            cem_config=cfg.cem, ddpg_config=cfg.ddpg,
            eval_rollouts=ev.rollouts, eval_stride=ev.stride, audit_fraction=ev.audit_fraction,
            checkpoint_dir=os.path.join(cfg.run_dir, "checkpoints", f"sweep_{algorithm}_{direction}"),
        )

    if bundle in ("cem-rollouts", "ddpg-rollouts"):
        algorithm = bundle.split("-")[0]
        for direction in DIRECTIONS:
            result = run_sweep(algorithm, direction)
            for bound, policy in result.policies.items():
                save_net(policy, policy_path(cfg, algorithm, direction, bound))
                path = os.path.join(cfg.run_dir, "rollouts", f"{algorithm}_{direction}_F{bound:g}.csv")
                summary = rollout_export(policy, direction, path, env, bound, cfg.run.seed)
                print(f"{algorithm.upper()} {direction_label(direction)} F={bound:g}: success={summary.success}, "
                      f"control {summary.control_duration:.2f}, jaggedness {summary.jaggedness:.3f}")
                written.append(path)
    elif bundle == "learning-curves":
        for algorithm in ("cem", "ddpg"):
            result = run_sweep(algorithm, s.direction)
            curve = result.curve
            base = os.path.join(cfg.run_dir, "curves", f"sweep_{algorithm}")
            artifacts.write_frame(curve[["bound", "episode", "samples_total", "success_rate"]], base + "_success.csv")
            artifacts.write_frame(curve[["bound", "episode", "samples_total", "reward_mean", "reward_std"]],
                                  base + "_reward.csv")
            written += [base + "_success.csv", base + "_reward.csv"]
            for bound, report in result.reports.items():
                print(f"{algorithm.upper()} sweep F={bound:g}: success {format_rate(report.success_rate)}")
    return written


# ─── Entry point ──────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--profile", help="named profile from specs/profiles.yaml (ci, full)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="worker processes for grid labeling")
    common.add_argument("--name", help="run name (output subdirectory)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="attractor_platform", description="Attractor selection for the forced Duffing oscillator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("catalog", parents=[common], help="find the SA/LA attractors")
    sub.add_parser("boa", parents=[common], help="label the grid and train the basin classifier")
    p_train = sub.add_parser("train", parents=[common], help="train a switching policy")
    p_train.add_argument("algorithm", choices=["cem", "ddpg"])
    p_train.add_argument("direction", choices=list(DIRECTIONS))
    p_train.add_argument("--resume", action="store_true", help="continue from the last ddpg checkpoint")
    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a saved policy")
    p_eval.add_argument("direction", choices=list(DIRECTIONS))
    p_eval.add_argument("--policy", required=True, help="policy file (NET1)")
    p_eval.add_argument("--bound", type=float,
                        help="action bound F (default: parsed from an <alg>_<dir>_F<bound>.net file name)")
    p_sim = sub.add_parser("simulate", parents=[common], help="export a constant-action trajectory")
    p_sim.add_argument("--x", type=float, default=0.0)
    p_sim.add_argument("--v", type=float, default=0.0)
    p_sim.add_argument("--phi", type=float, default=0.0)
    p_sim.add_argument("--duration", type=float, default=200.0)
    p_sim.add_argument("--action", type=float, default=0.0, help="constant actuation a")
    p_sim.add_argument("--out", help="CSV path (default: trajectories/ in the run directory)")
    p_rep = sub.add_parser("reproduce", parents=[common], help="emit the rollout or learning-curve data bundles")
    p_rep.add_argument("figure", choices=[*BUNDLES, *BUNDLES.values()])
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = [parse_override(text) for text in args.overrides]
    run_over = {k: v for k, v in (("seed", args.seed), ("workers", args.workers), ("name", args.name))
                if v is not None}
    if run_over:
        overrides.append({"run": run_over})
    return load_config(args.config, args.profile, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _config_from_args(args)
        _configure_logging(cfg, args.verbose)
        dump_config(cfg, os.path.join(cfg.run_dir, "config.effective"))
        if args.command == "catalog":
            cmd_catalog(cfg)
        elif args.command == "boa":
            cmd_boa(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.algorithm, args.direction, args.resume)
        elif args.command == "eval":
            cmd_eval(cfg, args.policy, args.direction, args.bound)
        elif args.command == "reproduce":
            cmd_reproduce(cfg, args.figure)
        elif args.command == "simulate":
            try:
                initial = SimState.wrapped(args.x, args.v, args.phi)
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            cmd_simulate(cfg, initial, args.duration, args.action, args.out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AttractorPlatformError, OSError) as exc:
        logger.debug("pipeline failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
