"""Frame-slotted downlink MDP with grouped (non-VR / VR) state and reward."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import SlotOutcome, draw_channel_arrays, frame_latency, large_scale_gains, shannon_rate
from .core import NumericError, ScenarioConfig, UsageError, UserProfile, build_scenario

NON_VR_FEATURES = 4  # frames_left, tolerance_left, data_size, gain
VR_FEATURES = 5  # the same plus running delay std


def project_action(raw_outputs, p_max: float) -> np.ndarray:
    """Map unconstrained scores to powers ``p_max * softmax(raw)`` that sum to ``p_max``."""
    raw = np.asarray(raw_outputs, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise NumericError(f"non-finite action scores: {raw}")
    z = np.exp(raw - raw.max())
    return p_max * (z / z.sum())


def inter_frame_delays(latencies: Sequence[float], successes: Sequence[int], frames_per_second: int) -> list[float]:
    """Gaps between consecutive received frames.

    After a success at slot i the remaining ``1/T - l_i`` of that slot counts toward
    the next gap, plus the full latency of every later slot up to and including the
    next success (failed slots carry latency 1/T).
    """
    tti = 1.0 / frames_per_second
    delays = []
    pending = None
    for latency, ok in zip(latencies, successes):
        if pending is not None:
            pending += latency
        if ok:
            if pending is not None:
                delays.append(pending)
            pending = tti - latency
    return delays


def delay_std(delays: Sequence[float]) -> float:
    """Dispersion of inter-frame gaps, normalised by the number of gaps; 0 for fewer than two."""
    if len(delays) < 2:
        return 0.0
    # plain floats: these lists are short and numpy call overhead dominates
    n = len(delays)
    lo, hi = min(delays), max(delays)
    if lo == hi:
        return 0.0  # avoid rounding residue from the mean
    mean = sum(delays) / n
    return math.sqrt(sum((d - mean) ** 2 for d in delays) / n)


@dataclass
class UserTrace:
    index: int
    mode: int
    tolerance: int
    latencies: list = field(default_factory=list)
    successes: list = field(default_factory=list)
    success_slots: list = field(default_factory=list)
    delays: list = field(default_factory=list)
    failures: int = 0
    _pending: float | None = None
    _std: tuple = (0, 0.0)  # (number of delays it was computed from, value)

    def record(self, slot: int, latency: float, success: int, tti: float) -> None:
        self.latencies.append(latency)
        self.successes.append(success)
        if self._pending is not None:
            self._pending += latency
        if success:
            self.success_slots.append(slot)
            if self._pending is not None:
                self.delays.append(self._pending)
            self._pending = tti - latency
        else:
            self.failures += 1

    @property
    def success_count(self) -> int:
        return len(self.success_slots)

    achieved_fps = success_count

    @property
    def tolerance_left(self) -> int:
        return self.tolerance - self.failures

    @property
    def delay_mean(self) -> float:
        return float(np.mean(self.delays)) if self.delays else 0.0

    @property
    def delay_std(self) -> float:
        if self._std[0] != len(self.delays):
            self._std = (len(self.delays), delay_std(self.delays))
        return self._std[1]

    def qos(self, w_frame: float, w_sickness: float) -> float:
        return episode_qos(self, self.mode, w_frame, w_sickness)


@dataclass
class EpisodeTrace:
    users: list[UserTrace]

    @classmethod
    def start(cls, profiles: Sequence[UserProfile], config: ScenarioConfig) -> "EpisodeTrace":
        return cls([
            UserTrace(p.index, p.mode, config.tolerance_vr if p.mode else config.tolerance_non)
            for p in profiles
        ])

    def __iter__(self):
        return iter(self.users)

    def __getitem__(self, n: int) -> UserTrace:
        return self.users[n]

    def group(self, mode: int) -> list[UserTrace]:
        return [u for u in self.users if u.mode == mode]


def episode_qos(trace: UserTrace, mode: int, w_frame: float, w_sickness: float) -> float:
    """Per-user QoS: weighted frame count minus the sickness term, gated by VR mode."""
    return w_frame * trace.success_count - w_sickness * mode * trace.delay_std


@dataclass(frozen=True)
class GroupedReward:
    non_vr: float
    vr: float

    @property
    def total(self) -> float:
        return self.non_vr + self.vr


def reward_for_slot(
    outcomes: Sequence[SlotOutcome], trace: EpisodeTrace, slot: int, config: ScenarioConfig
) -> GroupedReward:
    """Shaped reward for slot ``slot`` given traces already updated through that slot."""
    penalty = config.termination_penalty * (config.frames_per_second - slot)
    r_non = 0.0
    r_vr = 0.0
    violated = [False, False]
    for out, user in zip(outcomes, trace):
        if user.mode:
            r_vr += config.success_reward_vr * out.success - config.w_sickness * user.delay_std
        else:
            r_non += config.success_reward_non * out.success
        if user.tolerance_left < 0:
            violated[user.mode] = True
    if violated[0]:
        r_non -= penalty
    if violated[1]:
        r_vr -= penalty
    return GroupedReward(r_non, r_vr)


@dataclass(frozen=True)
class GroupedState:
    """Raw (unscaled) observation at the start of slot ``slot``."""

    slot: int
    non_vr: np.ndarray  # (n_non, 4)
    vr: np.ndarray  # (n_vr, 5)

    def global_state(self) -> np.ndarray:
        return np.concatenate([self.non_vr.ravel(), self.vr.ravel()])


def state_dims(config: ScenarioConfig) -> tuple[int, int]:
    return NON_VR_FEATURES * config.n_non, VR_FEATURES * config.n_vr


def encode_state(state: GroupedState, config: ScenarioConfig) -> np.ndarray:
    """Scaled global feature vector, non-VR block first.

    Counters are divided by T, data size by its maximum, gains go through log10 and
    a fixed affine map, and the delay std is multiplied by a fixed factor.
    """
    T = config.frames_per_second
    max_bits = config.raw_frame_bits / config.compression_min

    def scale(block: np.ndarray) -> np.ndarray:
        out = np.empty_like(block)
        out[:, 0] = block[:, 0] / T
        out[:, 1] = block[:, 1] / T
        out[:, 2] = block[:, 2] / max_bits
        out[:, 3] = (np.log10(block[:, 3]) - config.gain_log_center) / config.gain_log_scale
        if block.shape[1] > 4:
            out[:, 4] = block[:, 4] * config.std_feature_scale
        return out

    return np.concatenate([scale(state.non_vr).ravel(), scale(state.vr).ravel()])


class VideoStreamEnv:
    """One second of frame-slotted transmission to a fixed set of users.

    ``step`` raises :class:`UsageError` once the episode is done; call ``reset``.
    """

    def __init__(
        self,
        config: ScenarioConfig,
        profiles: Sequence[UserProfile] | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.config = config
        self.profiles = list(build_scenario(config) if profiles is None else profiles)
        if len(self.profiles) != config.n_users:
            raise ValueError(f"expected {config.n_users} profiles, got {len(self.profiles)}")
        self.rng = np.random.default_rng(config.seed) if rng is None else rng
        self._lsg = large_scale_gains(self.profiles)
        self._modes = np.array([p.mode for p in self.profiles])
        self._vr_idx = np.flatnonzero(self._modes == 1)
        self._non_idx = np.flatnonzero(self._modes == 0)
        self.slot = 0
        self.done = True
        self.trace: EpisodeTrace | None = None
        self.history: list[list[SlotOutcome]] = []

    def reset(self, rng: np.random.Generator | None = None) -> GroupedState:
        if rng is not None:
            self.rng = rng
        self.slot = 1
        self.done = False
        self.trace = EpisodeTrace.start(self.profiles, self.config)
        self.history = []
        self._gains, self._ratios = draw_channel_arrays(self._lsg, self.config, self.rng)
        return self.state()

    def state(self) -> GroupedState:
        cfg = self.config
        frames_left = cfg.frames_per_second - self.slot
        data = cfg.raw_frame_bits / self._ratios
        tol = np.array([u.tolerance_left for u in self.trace], dtype=float)
        base = np.column_stack([np.full(cfg.n_users, float(frames_left)), tol, data, self._gains])
        stds = np.array([self.trace[n].delay_std for n in self._vr_idx], dtype=float)
        vr = np.column_stack([base[self._vr_idx], stds]) if len(self._vr_idx) else np.zeros((0, VR_FEATURES))
        return GroupedState(self.slot, base[self._non_idx], vr)

    def step(self, powers) -> tuple[GroupedState, GroupedReward, bool, list[SlotOutcome]]:
        if self.done:
            raise UsageError("episode finished; call reset() before stepping again")
        cfg = self.config
        powers = np.asarray(powers, dtype=float)
        if powers.shape != (cfg.n_users,):
            raise ValueError(f"expected {cfg.n_users} powers, got shape {powers.shape}")
        if not np.all(np.isfinite(powers)) or np.any(powers < 0):
            raise NumericError(f"powers must be finite and non-negative: {powers}")
        if powers.sum() > cfg.p_max * (1 + 1e-6):
            raise ValueError(f"power budget exceeded: {powers.sum()} > {cfg.p_max}")

        data = cfg.raw_frame_bits / self._ratios
        rate = shannon_rate(powers, self._gains, cfg.bandwidth_per_user, cfg.noise_psd)
        latency, success = frame_latency(data, rate, cfg.frames_per_second)
        tti = cfg.slot_duration
        outcomes = []
        for n, user in enumerate(self.trace):
            user.record(self.slot, float(latency[n]), int(success[n]), tti)
            outcomes.append(SlotOutcome(float(powers[n]), float(self._gains[n]), float(rate[n]),
                                        float(data[n]), float(latency[n]), int(success[n])))
        self.history.append(outcomes)
        reward = reward_for_slot(outcomes, self.trace, self.slot, cfg)
        terminated = any(u.tolerance_left < 0 for u in self.trace)
        self.done = terminated or self.slot >= cfg.frames_per_second
        if not self.done:
            self.slot += 1
            self._gains, self._ratios = draw_channel_arrays(self._lsg, cfg, self.rng)
        return self.state(), reward, self.done, outcomes

    def write_trace_csv(self, path: str | Path) -> None:
        """Dump the current episode as one row per (slot, user)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["slot", "user", "power", "gain", "rate", "latency", "success"])
            for t, outcomes in enumerate(self.history, start=1):
                for n, o in enumerate(outcomes):
                    writer.writerow([t, n, repr(o.power), repr(o.gain), repr(o.rate), repr(o.latency), o.success])


def read_trace_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["slot"] = int(row["slot"])
        row["user"] = int(row["user"])
        row["success"] = int(row["success"])
        for key in ("power", "gain", "rate", "latency"):
            row[key] = float(row[key])
    return rows

