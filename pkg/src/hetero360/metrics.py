"""Evaluation rollouts and the per-evaluation CSV schema shared by trainers and baselines."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import STREAM_EVAL_ENV, ScenarioConfig, UserProfile, make_rng
from .env import GroupedState, VideoStreamEnv, encode_state

LOG_COLUMNS = (
    "step", "seed", "variant", "eval_reward_total", "eval_reward_non", "eval_reward_vr",
    "fps_non_mean", "fps_vr_mean", "delay_std_vr_mean", "episode_length_mean",
)

# maps an encoded global observation to a power vector
PowerPolicy = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class EvalRecord:
    step: int
    seed: int
    variant: str
    eval_reward_total: float
    eval_reward_non: float
    eval_reward_vr: float
    fps_non_mean: float
    fps_vr_mean: float
    delay_std_vr_mean: float
    episode_length_mean: float


@dataclass(frozen=True)
class EpisodeSummary:
    reward_non: float
    reward_vr: float
    length: int
    fps_non: float  # mean over non-VR users, nan if none
    fps_vr: float
    delay_std_vr: float
    qos_total: float
    failures: int


def run_episode(env: VideoStreamEnv, policy: PowerPolicy, rng: np.random.Generator | None = None) -> EpisodeSummary:
    state: GroupedState = env.reset(rng)
    cfg = env.config
    r_non = r_vr = 0.0
    done = False
    while not done:
        state, reward, done, _ = env.step(policy(encode_state(state, cfg)))
        r_non += reward.non_vr
        r_vr += reward.vr
    non = env.trace.group(0)
    vr = env.trace.group(1)
    return EpisodeSummary(
        reward_non=r_non,
        reward_vr=r_vr,
        length=env.slot,
        fps_non=float(np.mean([u.achieved_fps for u in non])) if non else math.nan,
        fps_vr=float(np.mean([u.achieved_fps for u in vr])) if vr else math.nan,
        delay_std_vr=float(np.mean([u.delay_std for u in vr])) if vr else math.nan,
        qos_total=sum(u.qos(cfg.w_frame, cfg.w_sickness) for u in env.trace),
        failures=sum(u.failures for u in env.trace),
    )


def evaluate_policy(
    config: ScenarioConfig,
    profiles: Sequence[UserProfile],
    policy: PowerPolicy,
    n_episodes: int,
    seed: int,
    eval_index: int,
    *,
    step: int = 0,
    variant: str = "",
) -> EvalRecord:
    """Average ``n_episodes`` rollouts on channel draws fixed by ``(seed, eval_index)``.

    Every algorithm evaluated at the same index sees the same fading sequence.
    """
    env = VideoStreamEnv(config, profiles)
    rng = make_rng(seed, STREAM_EVAL_ENV, eval_index)
    eps = [run_episode(env, policy, rng) for _ in range(n_episodes)]
    mean = lambda xs: float(np.mean(xs))  # noqa: E731
    return EvalRecord(
        step=step,
        seed=seed,
        variant=variant,
        eval_reward_total=mean([e.reward_non + e.reward_vr for e in eps]),
        eval_reward_non=mean([e.reward_non for e in eps]),
        eval_reward_vr=mean([e.reward_vr for e in eps]),
        fps_non_mean=mean([e.fps_non for e in eps]),
        fps_vr_mean=mean([e.fps_vr for e in eps]),
        delay_std_vr_mean=mean([e.delay_std_vr for e in eps]),
        episode_length_mean=mean([e.length for e in eps]),
    )


def write_log(records: Iterable[EvalRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for rec in records:
            row = asdict(rec)
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in LOG_COLUMNS])


def read_log(path: str | Path) -> list[EvalRecord]:
    kinds = {f.name: f.type for f in fields(EvalRecord)}
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            out.append(EvalRecord(**{
                k: (int(v) if kinds[k] == "int" else float(v) if kinds[k] == "float" else v)
                for k, v in row.items()
            }))
    return out
