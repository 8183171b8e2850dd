"""Comparison policies: equal power split and the plain-PPO trainer."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import STREAM_EVAL_ENV, ScenarioConfig, build_scenario, make_rng
from .env import VideoStreamEnv
from .metrics import EvalRecord, PowerPolicy, evaluate_policy, run_episode, write_log
from .ppo import TrainerParams, TrainingLog, train

BASELINES = ("average", "standard_ppo")


def average_allocation(n_users: int, p_max: float) -> np.ndarray:
    if n_users < 1:
        raise ValueError(f"n_users must be >= 1, got {n_users}")
    return np.full(n_users, p_max / n_users)


def average_policy(config: ScenarioConfig) -> PowerPolicy:
    powers = average_allocation(config.n_users, config.p_max)
    return lambda obs: powers


def train_standard_ppo(config: ScenarioConfig, params: TrainerParams, seed: int | None = None, **kwargs) -> TrainingLog:
    """The PPO baseline is the shared trainer with a single-value critic."""
    return train(config, "standard", params, seed=seed, **kwargs)


@dataclass(frozen=True)
class BaselineSummary:
    episodes: int
    reward_mean: float
    reward_std: float
    fps_non_mean: float
    fps_non_std: float
    fps_vr_mean: float
    fps_vr_std: float
    delay_std_vr_mean: float
    delay_std_vr_std: float
    episode_length_mean: float
    episode_length_std: float
    failure_rate_per_user: tuple[float, ...]


def run_baseline(
    config: ScenarioConfig,
    policy: str | PowerPolicy,
    n_episodes: int,
    rng: np.random.Generator | None = None,
) -> BaselineSummary:
    """Roll out ``n_episodes`` seeded episodes and summarise per-group metrics.

    Per-user failure rate is failures over slots actually played, so early
    termination does not bias it.
    """
    if isinstance(policy, str):
        if policy != "average":
            raise ValueError("only 'average' is available by name; pass a callable for trained policies")
        policy = average_policy(config)
    rng = make_rng(config.seed, STREAM_EVAL_ENV) if rng is None else rng
    env = VideoStreamEnv(config, build_scenario(config))
    eps = []
    failures = np.zeros(config.n_users)
    slots = 0
    for _ in range(n_episodes):
        eps.append(run_episode(env, policy, rng))
        failures += [u.failures for u in env.trace]
        slots += env.slot

    def ms(values):
        a = np.asarray(values, dtype=float)
        return float(np.mean(a)), float(np.std(a))

    reward = ms([e.reward_non + e.reward_vr for e in eps])
    fps_non = ms([e.fps_non for e in eps])
    fps_vr = ms([e.fps_vr for e in eps])
    sick = ms([e.delay_std_vr for e in eps])
    length = ms([e.length for e in eps])
    return BaselineSummary(
        n_episodes, *reward, *fps_non, *fps_vr, *sick, *length,
        failure_rate_per_user=tuple(float(x) for x in failures / slots),
    )


def evaluation_log(
    config: ScenarioConfig,
    policy: PowerPolicy,
    params: TrainerParams,
    seed: int,
    variant: str = "average",
    log_path: str | Path | None = None,
) -> list[EvalRecord]:
    """Evaluate a fixed policy on the trainer's schedule so its log lines up with learning curves."""
    config = config.replace(seed=seed)
    profiles = build_scenario(config)
    records = [
        evaluate_policy(config, profiles, policy, params.eval_episodes, seed, step // params.eval_period,
                        step=step, variant=variant)
        for step in range(params.eval_period, params.total_steps + 1, params.eval_period)
    ]
    if log_path is not None:
        write_log(records, log_path)
    return records
