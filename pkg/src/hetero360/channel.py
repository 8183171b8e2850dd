"""Per-slot downlink physics: fading, Shannon rate, frame latency and deadline success."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import STREAM_ORACLE, ScenarioConfig, UserProfile, build_scenario, make_rng


@dataclass(frozen=True)
class ChannelSample:
    gain: float
    compression_ratio: float


@dataclass(frozen=True)
class SlotOutcome:
    power: float
    gain: float
    rate: float
    data_size: float
    latency: float
    success: int


def shannon_rate(power, gain, bandwidth: float, noise_psd: float):
    """Achievable rate in bit/s over an interference-free band of ``bandwidth`` Hz.

    Works elementwise on arrays.
    """
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth}")
    if not noise_psd > 0:
        raise ValueError(f"noise_psd must be > 0, got {noise_psd}")
    snr = np.multiply(power, gain) / (noise_psd * bandwidth)
    rate = bandwidth * np.log2(1.0 + snr)
    return float(rate) if np.ndim(rate) == 0 else rate


def frame_latency(data_size, rate, frames_per_second: int):
    """Return ``(latency, success)`` for frames that must finish within one slot.

    Latency is capped at the slot length 1/T; a zero rate is a capped failure.
    """
    tti = 1.0 / frames_per_second
    data_size = np.asarray(data_size, dtype=float)
    rate = np.asarray(rate, dtype=float)
    with np.errstate(divide="ignore"):
        duration = np.where(rate > 0, data_size / np.where(rate > 0, rate, 1.0), np.inf)
    success = (duration <= tti).astype(np.int64)
    latency = np.minimum(duration, tti)
    if latency.ndim == 0:
        return float(latency), int(success)
    return latency, success


def large_scale_gains(users: Sequence[UserProfile]) -> np.ndarray:
    return np.array([u.large_scale_gain for u in users], dtype=float)


def draw_channel_arrays(lsg: np.ndarray, config: ScenarioConfig, rng: np.random.Generator):
    """Vectorised draw for one slot: Rayleigh power fade times path loss, fresh compression."""
    fade = rng.exponential(1.0, size=lsg.shape)
    ratio = rng.uniform(config.compression_min, config.compression_max, size=lsg.shape)
    return lsg * fade, ratio


def draw_channel(users: Sequence[UserProfile], config: ScenarioConfig, rng: np.random.Generator) -> list[ChannelSample]:
    gains, ratios = draw_channel_arrays(large_scale_gains(users), config, rng)
    return [ChannelSample(float(g), float(c)) for g, c in zip(gains, ratios)]


def failure_probability_oracle(
    config: ScenarioConfig,
    power_per_user,
    n_samples: int = 100_000,
    users: Sequence[UserProfile] | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Monte Carlo estimate of the per-user frame failure probability under fixed power.

    Used to calibrate ``p_max``: an equal split should miss 2-10% of deadlines.
    """
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be >= 1e4 for a usable estimate, got {n_samples}")
    users = build_scenario(config) if users is None else users
    rng = make_rng(config.seed, STREAM_ORACLE) if rng is None else rng
    lsg = large_scale_gains(users)[:, None]
    power = np.broadcast_to(np.asarray(power_per_user, dtype=float), (len(users),))[:, None]
    fade = rng.exponential(1.0, size=(len(users), n_samples))
    ratio = rng.uniform(config.compression_min, config.compression_max, size=(len(users), n_samples))
    with np.errstate(invalid="ignore", over="ignore"):
        rate = shannon_rate(power, lsg * fade, config.bandwidth_per_user, config.noise_psd)
    rate = np.where(np.isnan(rate), np.inf, rate)
    _, success = frame_latency(config.raw_frame_bits / ratio, rate, config.frames_per_second)
    return 1.0 - success.mean(axis=1)
