"""Batch experiment runner: train, compare, validate.

`train` runs PPO for one or more seeds and writes per-epoch convergence
CSVs plus checkpoints (including a `_best` copy selected by smoothed final
reward).  `compare` evaluates the learned policy against the three
reference strategies on paired episodes: every strategy sees byte-identical
channel-gain sequences per (seed, episode), so differences are strategy
differences.  `validate` checks a config file and reports every violation
with its key path.

All numbers land in CSVs first; plots are rendered from the same data and
carry no extra state.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .baselines import (StrategyKind, average_policy, heuristic_rde_policy,
                        random_policy)
from .config import (ConfigError, ExperimentConfig, config_fingerprint,
                     load_experiment_config, validate_experiment_config)
from .environment import Action, EnvConfig, EnvState, SemComEnv
from .nets import Mlp, load_checkpoint, save_checkpoint
from .ppo import (TrainingReport, exponential_moving_average, sample_action,
                  train)

STRATEGY_ORDER = (StrategyKind.RANDOM, StrategyKind.AVERAGE,
                  StrategyKind.HEURISTIC_RDE, StrategyKind.LEARNED_POLICY)


@dataclass(frozen=True)
class StrategyResult:
    kind: StrategyKind
    rewards: np.ndarray  # (num_seeds, num_episodes)

    @property
    def mean_reward(self) -> float:
        return float(self.rewards.mean())

    @property
    def std_reward(self) -> float:
        return float(self.rewards.std())


@dataclass(frozen=True)
class ComparisonReport:
    results: tuple[StrategyResult, ...]
    seeds: tuple[int, ...]
    num_episodes: int
    num_users: int
    fingerprint: str

    def result(self, kind: StrategyKind) -> StrategyResult:
        for r in self.results:
            if r.kind is kind:
                return r
        raise KeyError(kind.value)

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["strategy", "mean_reward", "std_reward",
                             "num_episodes", "num_users", "seeds",
                             "config_fingerprint"])
            for r in self.results:
                writer.writerow([r.kind.value,
                                 f"{r.mean_reward:.12g}",
                                 f"{r.std_reward:.12g}",
                                 self.num_episodes, self.num_users,
                                 "|".join(str(s) for s in self.seeds),
                                 self.fingerprint])

    def write_episodes_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["strategy", "seed", "episode", "reward"])
            for r in self.results:
                for i, seed in enumerate(self.seeds):
                    for episode in range(self.num_episodes):
                        writer.writerow([r.kind.value, seed, episode,
                                         f"{r.rewards[i, episode]:.12g}"])


ActionFn = Callable[[EnvState, np.ndarray, np.random.Generator], Action]


def _strategy_action_fn(kind: StrategyKind, env_config: EnvConfig,
                        fixed_scm: int, policy: Mlp | None,
                        deterministic: bool) -> ActionFn:
    if kind is StrategyKind.RANDOM:
        return lambda state, obs, rng: random_policy(state, rng, env_config)
    if kind is StrategyKind.AVERAGE:
        return lambda state, obs, rng: average_policy(state, env_config,
                                                      fixed_scm)
    if kind is StrategyKind.HEURISTIC_RDE:
        return lambda state, obs, rng: heuristic_rde_policy(state, env_config)
    if policy is None:
        raise ValueError("learned strategy needs a policy network")
    return lambda state, obs, rng: sample_action(policy, obs, rng,
                                                 deterministic)[0]


def _episode_reward(env: SemComEnv, act: ActionFn,
                    env_rng: np.random.Generator,
                    action_rng: np.random.Generator) -> float:
    obs = env.reset(env_rng)
    total = 0.0
    done = False
    while not done:
        action = act(env.state, obs, action_rng)
        obs, reward, done, _ = env.step(action, env_rng)
        total += reward
    return total


def evaluate_strategies(config: ExperimentConfig, policy: Mlp | None,
                        seeds: Sequence[int] | None = None,
                        num_episodes: int | None = None,
                        deterministic: bool | None = None) -> ComparisonReport:
    """Paired evaluation of all four strategies.

    The environment stream for episode e under seed s is seeded by (s, e)
    alone, so every strategy replays identical channel conditions; action
    randomness uses separate per-strategy streams.
    """
    ev = config.evaluation
    seeds = tuple(seeds if seeds is not None else ev.seeds)
    num_episodes = num_episodes if num_episodes is not None else ev.num_episodes
    deterministic = (deterministic if deterministic is not None
                     else ev.deterministic)
    env_config = replace(config.environment, num_users=ev.num_users)
    env = SemComEnv(env_config)

    results = []
    for ordinal, kind in enumerate(STRATEGY_ORDER):
        act = _strategy_action_fn(kind, env_config, ev.average_fixed_scm,
                                  policy, deterministic)
        rewards = np.empty((len(seeds), num_episodes))
        for i, seed in enumerate(seeds):
            for episode in range(num_episodes):
                env_rng = np.random.default_rng(
                    np.random.SeedSequence([seed, episode]))
                action_rng = np.random.default_rng(
                    np.random.SeedSequence([seed, episode, 10_000 + ordinal]))
                rewards[i, episode] = _episode_reward(env, act, env_rng,
                                                      action_rng)
        results.append(StrategyResult(kind=kind, rewards=rewards))

    return ComparisonReport(
        results=tuple(results),
        seeds=seeds,
        num_episodes=num_episodes,
        num_users=ev.num_users,
        fingerprint=config_fingerprint(config),
    )


def run_train(config: ExperimentConfig, seeds: Sequence[int],
              out_dir: Path, quiet: bool = False) -> dict[int, TrainingReport]:
    """Train once per seed; write convergence CSV and checkpoints."""
    out_dir.mkdir(parents=True, exist_ok=True)
    users = config.environment.num_users
    reports: dict[int, TrainingReport] = {}
    for seed in seeds:
        if not quiet:
            print(f"training: {users} users, seed {seed}, "
                  f"{config.ppo.epochs} epochs x {config.ppo.rollout_steps} steps")
        progress = None if quiet else (
            lambda row: print(f"  epoch {row.epoch:4d}  "
                              f"reward {row.mean_episode_reward:10.3f}  "
                              f"entropy {row.entropy:7.3f}", flush=True))
        report = train(SemComEnv, config.ppo, config.environment, seed,
                       progress=progress)
        reports[seed] = report
        save_checkpoint(out_dir / f"checkpoint_{users}u_seed{seed}.npz",
                        report.policy, report.value,
                        metadata={"seed": seed, "num_users": users})

    _write_convergence_csv(out_dir / f"convergence_{users}u.csv", reports)

    best_seed = max(reports, key=lambda s: float(
        exponential_moving_average(reports[s].mean_rewards())[-1]))
    best = reports[best_seed]
    save_checkpoint(out_dir / f"checkpoint_{users}u_best.npz",
                    best.policy, best.value,
                    metadata={"seed": best_seed, "num_users": users})
    if not quiet:
        print(f"best seed {best_seed}; checkpoints in {out_dir}")
    return reports


def _write_convergence_csv(path: Path,
                           reports: dict[int, TrainingReport]) -> None:
    seeds = sorted(reports)
    num_epochs = len(reports[seeds[0]].epochs)
    per_seed = {s: reports[s].mean_rewards() for s in seeds}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", *(f"reward_seed{s}" for s in seeds),
                         "mean_reward", "std_reward"])
        for epoch in range(num_epochs):
            row_rewards = np.asarray([per_seed[s][epoch] for s in seeds])
            writer.writerow([epoch,
                             *(f"{r:.12g}" for r in row_rewards),
                             f"{row_rewards.mean():.12g}",
                             f"{row_rewards.std():.12g}"])


def _resolve_checkpoint(out_dir: Path, explicit: Path | None) -> Path:
    if explicit is not None:
        if not explicit.is_file():
            raise FileNotFoundError(
                f"checkpoint not found: {explicit}; run `semcom-rl train` "
                f"to create one")
        return explicit
    candidates = sorted(out_dir.glob("checkpoint_*_best.npz"))
    if not candidates:
        raise FileNotFoundError(
            f"no checkpoint in {out_dir}; run `semcom-rl train` first or "
            f"pass --checkpoint")
    if len(candidates) > 1:
        names = ", ".join(c.name for c in candidates)
        raise FileNotFoundError(
            f"multiple checkpoints in {out_dir} ({names}); pick one with "
            f"--checkpoint")
    return candidates[0]


def run_compare(config: ExperimentConfig, checkpoint: Path, out_dir: Path,
                deterministic: bool | None = None,
                quiet: bool = False) -> ComparisonReport:
    """Evaluate all strategies from a checkpoint; write comparison CSVs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    policy, _, _ = load_checkpoint(checkpoint)
    report = evaluate_strategies(config, policy, deterministic=deterministic)
    report.write_csv(out_dir / "comparison.csv")
    report.write_episodes_csv(out_dir / "episodes.csv")
    if not quiet:
        print(f"{'strategy':<14} {'mean':>10} {'std':>10}")
        for r in report.results:
            print(f"{r.kind.value:<14} {r.mean_reward:>10.3f} "
                  f"{r.std_reward:>10.3f}")
        print(f"reports in {out_dir}")
    return report


def _parse_seeds(args: argparse.Namespace,
                 config: ExperimentConfig) -> list[int]:
    if args.seeds is not None:
        return [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if args.seed is not None:
        return [args.seed]
    return list(config.evaluation.seeds)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, type=Path,
                        help="experiment config file (YAML)")
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (default: config output_dir)")


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="semcom-rl",
        description="Multi-user semantic-communication resource allocation: "
                    "PPO training and strategy comparison.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train PPO and write convergence data")
    _add_common(p_train)
    p_train.add_argument("--seed", type=int, default=None,
                         help="single training seed")
    p_train.add_argument("--seeds", type=str, default=None,
                         help="comma-separated training seeds")

    p_cmp = sub.add_parser("compare", help="evaluate strategies from a checkpoint")
    _add_common(p_cmp)
    p_cmp.add_argument("--checkpoint", type=Path, default=None,
                       help="policy checkpoint (default: single *_best.npz in --out)")
    p_cmp.add_argument("--deterministic-eval", action="store_true",
                       default=None,
                       help="evaluate the learned policy with argmax/mean actions")

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("--config", required=True, type=Path)

    args = parser.parse_args(argv)

    if args.command == "validate":
        violations = validate_experiment_config(args.config)
        if violations:
            for v in violations:
                print(f"violation: {v}")
            return 1
        print("configuration valid")
        return 0

    try:
        config = load_experiment_config(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    out_dir = args.out if args.out is not None else config.output_dir

    if args.command == "train":
        seeds = _parse_seeds(args, config)
        run_train(config, seeds, out_dir)
        from . import plots
        plots.convergence_plot(out_dir)
        return 0

    try:
        checkpoint = _resolve_checkpoint(out_dir, args.checkpoint)
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return 1
    run_compare(config, checkpoint, out_dir,
                deterministic=args.deterministic_eval)
    from . import plots
    plots.comparison_bar(out_dir)
    plots.episode_trajectory(out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
