"""Scenario configuration, user profiles and random-stream plumbing."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """A scenario or trainer configuration violates one of its bounds."""


class DimensionError(ValueError):
    pass


class UsageError(RuntimeError):
    """An object was used outside its lifecycle (finished episode, stale tape, wrong variant)."""


class NumericError(ArithmeticError):
    """A non-finite value reached a place where it would corrupt training."""


# Independent random streams derived from one experiment seed.
STREAM_GEOMETRY = 0
STREAM_TRAIN_ENV = 1
STREAM_EVAL_ENV = 2
STREAM_ACTOR_INIT = 3
STREAM_CRITIC_INIT = 4
STREAM_POLICY = 5
STREAM_ORACLE = 6
STREAM_MINIBATCH = 7


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 8
    n_vr: int = 4
    frames_per_second: int = 90
    resolution_pixels: int = 2560 * 1440
    bits_per_pixel: int = 16
    compression_min: float = 300.0
    compression_max: float = 500.0
    bandwidth_per_user: float = 1e6
    noise_psd: float = 4e-21
    p_max: float = 0.1
    min_fps_vr: int = 75
    min_fps_non: int = 60
    w_frame: float = 1.0
    w_sickness: float = 1000.0
    path_loss_exponent: float = 2.0
    distance_min: float = 50.0
    distance_max: float = 100.0
    reference_gain: float = 1e-3
    seed: int = 0
    # per-slot reward shaping
    success_reward_non: float = 1.0
    success_reward_vr: float = 1.5
    termination_penalty: float = 2.0
    # fixed feature scaling for the learner
    gain_log_center: float = -7.0
    gain_log_scale: float = 0.6
    std_feature_scale: float = 100.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.n_users < 1:
            raise ConfigError(f"n_users must be >= 1, got {self.n_users}")
        if not 0 <= self.n_vr <= self.n_users:
            raise ConfigError(f"n_vr must lie in [0, n_users={self.n_users}], got {self.n_vr}")
        if self.frames_per_second < 1:
            raise ConfigError(f"frames_per_second must be >= 1, got {self.frames_per_second}")
        if not 0 <= self.min_fps_vr <= self.frames_per_second:
            raise ConfigError(
                f"min_fps_vr must lie in [0, frames_per_second={self.frames_per_second}], got {self.min_fps_vr}"
            )
        if not 0 <= self.min_fps_non <= self.frames_per_second:
            raise ConfigError(
                f"min_fps_non must lie in [0, frames_per_second={self.frames_per_second}], got {self.min_fps_non}"
            )
        if not 0 < self.compression_min <= self.compression_max:
            raise ConfigError(
                "compression bounds must satisfy 0 < compression_min <= compression_max, "
                f"got [{self.compression_min}, {self.compression_max}]"
            )
        for name in ("p_max", "noise_psd", "bandwidth_per_user", "reference_gain",
                     "resolution_pixels", "bits_per_pixel", "gain_log_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 < self.distance_min <= self.distance_max:
            raise ConfigError(
                f"distances must satisfy 0 < distance_min <= distance_max, got [{self.distance_min}, {self.distance_max}]"
            )

    @property
    def n_non(self) -> int:
        return self.n_users - self.n_vr

    @property
    def slot_duration(self) -> float:
        return 1.0 / self.frames_per_second

    @property
    def raw_frame_bits(self) -> float:
        return float(self.resolution_pixels) * float(self.bits_per_pixel)

    @property
    def tolerance_non(self) -> int:
        return self.frames_per_second - self.min_fps_non

    @property
    def tolerance_vr(self) -> int:
        return self.frames_per_second - self.min_fps_vr

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def desk_config(**overrides) -> ScenarioConfig:
    """Small 2|2 scenario at 30 fps used for fast training experiments.

    Frame-rate floors scale with T (60/90 and 75/90 of 30) and the power budget is
    re-calibrated so an equal split fails 2-10% of frames, as in the default scenario.
    """
    base = dict(n_users=4, n_vr=2, frames_per_second=30, min_fps_non=20, min_fps_vr=25, p_max=4e-5)
    base.update(overrides)
    return ScenarioConfig(**base)


@dataclass(frozen=True)
class UserProfile:
    index: int
    mode: int
    distance: float
    large_scale_gain: float

    @property
    def is_vr(self) -> bool:
        return self.mode == 1


def build_scenario(config: ScenarioConfig) -> list[UserProfile]:
    """Place users: the non-VR block first, then the VR block.

    Distances come from the geometry stream of ``config.seed`` so they are fixed
    for every episode of a run.
    """
    config.validate()
    rng = make_rng(config.seed, STREAM_GEOMETRY)
    distances = rng.uniform(config.distance_min, config.distance_max, size=config.n_users)
    profiles = []
    for n, d in enumerate(distances):
        gain = config.reference_gain * float(d) ** (-config.path_loss_exponent)
        profiles.append(UserProfile(index=n, mode=int(n >= config.n_non), distance=float(d), large_scale_gain=gain))
    return profiles


_SECTION = "scenario"


def _coerce(kind: str, raw: str):
    # field annotations are strings under postponed evaluation
    return int(raw) if kind == "int" else float(raw)


def load_config(path: str | Path, **overrides) -> ScenarioConfig:
    """Read a flat ``key = value`` file with a ``[scenario]`` section.

    Keys that are absent keep their defaults; unknown keys are rejected.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section(_SECTION):
        raise ConfigError(f"{path}: missing [{_SECTION}] section")
    known = {f.name: f.type for f in fields(ScenarioConfig)}
    values = {}
    for key, raw in parser.items(_SECTION):
        if key not in known:
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            values[key] = _coerce(known[key], raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key}: {raw!r}") from exc
    values.update(overrides)
    return ScenarioConfig(**values)


def save_config(config: ScenarioConfig, path: str | Path) -> None:
    lines = [f"[{_SECTION}]"]
    for f in fields(config):
        lines.append(f"{f.name} = {getattr(config, f.name)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
