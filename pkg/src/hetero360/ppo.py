"""PPO with clipped surrogate, GAE, and standard / SIDO / MIDO critics."""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import (
    STREAM_ACTOR_INIT, STREAM_CRITIC_INIT, STREAM_MINIBATCH, STREAM_POLICY, STREAM_TRAIN_ENV,
    ConfigError, DimensionError, NumericError, ScenarioConfig, UsageError, build_scenario, make_rng,
)
from .env import VideoStreamEnv, encode_state, project_action, state_dims
from .metrics import EvalRecord, evaluate_policy, write_log
from .nn import (
    MLP, Adam, NetworkArchitecture, ParameterSet, clip_grad_norm, concentrations, dirichlet_entropy,
    dirichlet_entropy_grad, dirichlet_log_prob, dirichlet_log_prob_grad, dirichlet_mean, save_checkpoint,
    sigmoid, simplex_policy_sample,
)

log = logging.getLogger(__name__)

VARIANTS = ("standard", "sido", "mido")


@dataclass(frozen=True)
class TrainerParams:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs_per_batch: int = 10
    rollout_length: int = 2048
    minibatch_size: int = 256
    target_update_period: int = 1
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    hidden_sizes: tuple[int, ...] = (128, 128)
    activation: str = "tanh"
    entropy_coef: float = 0.0
    max_grad_norm: float | None = 0.5
    normalize_advantages: bool = True
    total_steps: int = 500_000
    eval_period: int = 50
    eval_episodes: int = 1
    sido_shared_trunk: bool = True

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ConfigError(f"gamma and lam must lie in (0, 1], got {self.gamma}, {self.lam}")
        if not 0 < self.clip < 1:
            raise ConfigError(f"clip must lie in (0, 1), got {self.clip}")
        for name in ("epochs_per_batch", "rollout_length", "minibatch_size", "target_update_period",
                     "total_steps", "eval_period", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.actor_lr < 0 or self.critic_lr < 0:
            raise ConfigError("learning rates must be non-negative")


# --- actor ------------------------------------------------------------------

class Actor:
    """Global state -> Dirichlet concentrations over the users' power fractions."""

    def __init__(self, input_dim: int, n_users: int, hidden_sizes=(128, 128), activation="tanh",
                 rng: np.random.Generator | None = None):
        self.arch = NetworkArchitecture(input_dim, tuple(hidden_sizes), n_users, activation)
        self.params = ParameterSet()
        self.net = MLP(self.arch, self.params, "", rng, head_gain=0.01)

    def concentrations(self, obs) -> np.ndarray:
        return concentrations(self.net(obs))

    def sample(self, obs, rng: np.random.Generator) -> tuple[np.ndarray, float]:
        return simplex_policy_sample(self.concentrations(obs), rng)

    def mean_action(self, obs) -> np.ndarray:
        return dirichlet_mean(self.concentrations(obs))

    def power_policy(self, p_max: float) -> Callable[[np.ndarray], np.ndarray]:
        return lambda obs: project_action(np.log(self.mean_action(obs)), p_max)


def clipped_surrogate(actor: Actor, obs, actions, old_log_probs, advantages, clip: float,
                      entropy_coef: float = 0.0) -> tuple[float, dict, dict]:
    """Negated clipped objective with its exact parameter gradient.

    Per sample the surrogate is ``min(r A, clip(r, 1-eps, 1+eps) A)``; its gradient
    flows only where the unclipped branch attains the minimum.
    """
    raw, tape = actor.net.forward(obs)
    alpha = concentrations(raw)
    logp = dirichlet_log_prob(actions, alpha)
    ratio = np.exp(logp - old_log_probs)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    objective = np.minimum(surr1, surr2)
    entropy = dirichlet_entropy(alpha)
    b = len(advantages)
    loss = -float(objective.mean()) - entropy_coef * float(entropy.mean())
    if not np.isfinite(loss):
        raise NumericError(f"non-finite actor loss {loss}")
    unclipped = surr1 <= surr2
    d_logp = -(ratio * advantages * unclipped) / b
    d_alpha = d_logp[:, None] * dirichlet_log_prob_grad(actions, alpha)
    if entropy_coef:
        d_alpha = d_alpha - (entropy_coef / b) * dirichlet_entropy_grad(alpha)
    grads, _ = actor.net.backward(tape, d_alpha * sigmoid(raw))
    diag = {
        "ratio_mean": float(ratio.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip)),
        "entropy": float(entropy.mean()),
        "approx_kl": float(np.mean(old_log_probs - logp)),
        "unclipped_mask": unclipped,
    }
    return loss, grads, diag


# --- critics ----------------------------------------------------------------

class Critic:
    """Base for value networks. ``forward`` returns a ``(B, 2)`` array of (V_non, V_vr).

    Columns of an empty user group are forced to zero, as are their gradients.
    """

    variant = ""

    def __init__(self, d_non: int, d_vr: int, hidden_sizes, activation, rng):
        self.d_non = d_non
        self.d_vr = d_vr
        self.hidden_sizes = tuple(hidden_sizes)
        self.activation = activation
        self.params = ParameterSet()
        self.mask = np.array([float(d_non > 0), float(d_vr > 0)])

    @property
    def input_dim(self) -> int:
        return self.d_non + self.d_vr

    def forward(self, s_g) -> tuple[np.ndarray, object]:
        raise NotImplementedError

    def backward(self, tape, grad_values) -> dict:
        raise NotImplementedError

    def values(self, s_g) -> np.ndarray:
        return self.forward(s_g)[0]

    def copy(self) -> "Critic":
        return copy.deepcopy(self)

    def multiply_adds(self) -> int:
        """Per-sample multiply-add count of one forward pass (the critic term of the step cost)."""
        raise NotImplementedError

    def _batch(self, s_g) -> np.ndarray:
        s_g = np.asarray(s_g, dtype=float)
        s_g = s_g[None, :] if s_g.ndim == 1 else s_g
        if s_g.shape[1] != self.input_dim:
            raise DimensionError(f"expected state width {self.input_dim}, got {s_g.shape[1]}")
        return s_g


class StandardCritic(Critic):
    """Single value for the summed reward, reported in column 0."""

    variant = "standard"

    def __init__(self, d_non, d_vr, hidden_sizes=(128, 128), activation="tanh", rng=None):
        super().__init__(d_non, d_vr, hidden_sizes, activation, rng)
        self.mask = np.array([1.0, 0.0])
        self.net = MLP(NetworkArchitecture(self.input_dim, self.hidden_sizes, 1, activation), self.params, "", rng)

    def forward(self, s_g):
        v, tape = self.net.forward(self._batch(s_g))
        out = np.zeros((len(v), 2))
        out[:, 0] = v[:, 0]
        return out, tape

    def backward(self, tape, grad_values):
        return self.net.backward(tape, np.ascontiguousarray(np.asarray(grad_values)[:, :1]))[0]

    def multiply_adds(self):
        return self.net.arch.multiply_adds


class MidoCritic(Critic):
    """Merged input, differentiated output: one network on the global state, two-value head."""

    variant = "mido"

    def __init__(self, d_non, d_vr, hidden_sizes=(128, 128), activation="tanh", rng=None):
        super().__init__(d_non, d_vr, hidden_sizes, activation, rng)
        self.net = MLP(NetworkArchitecture(self.input_dim, self.hidden_sizes, 2, activation), self.params, "", rng)

    def forward(self, s_g):
        v, tape = self.net.forward(self._batch(s_g))
        return v * self.mask, tape

    def backward(self, tape, grad_values):
        return self.net.backward(tape, np.asarray(grad_values) * self.mask)[0]

    def multiply_adds(self):
        return self.net.arch.multiply_adds


class SidoCritic(Critic):
    """Separate input, differentiated output.

    Each group's block goes through its own linear adapter into a common width,
    then through hidden layers shared by both branches (or per-branch layers when
    ``shared_trunk`` is false), then a per-group scalar head. V_non never sees the
    VR block and vice versa.
    """

    variant = "sido"

    def __init__(self, d_non, d_vr, hidden_sizes=(128, 128), activation="tanh", rng=None, shared_trunk=True):
        super().__init__(d_non, d_vr, hidden_sizes, activation, rng)
        self.shared_trunk = shared_trunk
        h = self.hidden_sizes
        p = self.params
        self.adapters = [
            MLP(NetworkArchitecture(d, (), h[0], activation, output_activation=activation), p, f"adapter_{g}.", rng)
            for g, d in (("non", d_non), ("vr", d_vr))
        ]
        if len(h) > 1:
            trunk_arch = NetworkArchitecture(h[0], h[1:-1], h[-1], activation, output_activation=activation)
            if shared_trunk:
                shared = MLP(trunk_arch, p, "trunk.", rng)
                self.trunks = [shared, shared]
            else:
                self.trunks = [MLP(trunk_arch, p, f"trunk_{g}.", rng) for g in ("non", "vr")]
        else:
            self.trunks = [None, None]
        self.heads = [
            MLP(NetworkArchitecture(h[-1], (), 1, activation), p, f"head_{g}.", rng) for g in ("non", "vr")
        ]

    def branch_inputs(self, s_g):
        s_g = self._batch(s_g)
        return s_g[:, :self.d_non], s_g[:, self.d_non:]

    def forward(self, s_g):
        tapes = []
        cols = []
        for k, x in enumerate(self.branch_inputs(s_g)):
            z, t_a = self.adapters[k].forward(x)
            t_t = None
            if self.trunks[k] is not None:
                z, t_t = self.trunks[k].forward(z)
            v, t_h = self.heads[k].forward(z)
            tapes.append((t_a, t_t, t_h))
            cols.append(v[:, 0])
        return np.column_stack(cols) * self.mask, tapes

    def backward(self, tapes, grad_values):
        grad_values = np.asarray(grad_values) * self.mask
        grads: dict = {}
        for k, (t_a, t_t, t_h) in enumerate(tapes):
            _, g = self.heads[k].backward(t_h, grad_values[:, k:k + 1], grads)
            if t_t is not None:
                _, g = self.trunks[k].backward(t_t, g, grads)
            self.adapters[k].backward(t_a, g, grads)
        return grads

    def multiply_adds(self):
        total = sum(a.arch.multiply_adds for a in self.adapters) + sum(h.arch.multiply_adds for h in self.heads)
        if self.trunks[0] is not None:
            total += 2 * self.trunks[0].arch.multiply_adds
        return total


def make_critic(variant: str, d_non: int, d_vr: int, params: TrainerParams, rng=None) -> Critic:
    if variant == "standard":
        return StandardCritic(d_non, d_vr, params.hidden_sizes, params.activation, rng)
    if variant == "mido":
        return MidoCritic(d_non, d_vr, params.hidden_sizes, params.activation, rng)
    if variant == "sido":
        return SidoCritic(d_non, d_vr, params.hidden_sizes, params.activation, rng, params.sido_shared_trunk)
    raise ValueError(f"unknown critic variant {variant!r}; expected one of {VARIANTS}")


def sido_values(s_non, s_vr, critic: Critic) -> tuple[float, float]:
    if critic.variant != "sido":
        raise UsageError(f"sido_values needs a SIDO critic, got {critic.variant!r}")
    v = critic.values(np.concatenate([np.ravel(s_non), np.ravel(s_vr)]))[0]
    return float(v[0]), float(v[1])


def mido_values(s_g, critic: Critic) -> tuple[float, float]:
    if critic.variant != "mido":
        raise UsageError(f"mido_values needs a MIDO critic, got {critic.variant!r}")
    v = critic.values(s_g)[0]
    return float(v[0]), float(v[1])


# --- rollouts and advantages ------------------------------------------------

@dataclass(frozen=True)
class Transition:
    global_state: np.ndarray
    action_fractions: np.ndarray
    log_prob: float
    reward_non: float
    reward_vr: float
    done: bool
    value_non: float
    value_vr: float
    slot_index: int


@dataclass
class RolloutBatch:
    """Collected transitions in order; values come from the target critic."""

    obs: np.ndarray  # (T, d)
    actions: np.ndarray  # (T, N)
    log_probs: np.ndarray  # (T,)
    rewards: np.ndarray  # (T, 2): non-VR, VR
    dones: np.ndarray  # (T,)
    values: np.ndarray  # (T, 2)
    next_values: np.ndarray  # (T, 2), zero after a terminal step
    slots: np.ndarray  # (T,)

    def __len__(self):
        return len(self.log_probs)

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.obs[i], self.actions[i], float(self.log_probs[i]), float(self.rewards[i, 0]),
                          float(self.rewards[i, 1]), bool(self.dones[i]), float(self.values[i, 0]),
                          float(self.values[i, 1]), int(self.slots[i]))


class RolloutBuffer:
    def __init__(self, capacity: int, obs_dim: int, n_users: int):
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, n_users))
        self.log_probs = np.zeros(capacity)
        self.rewards = np.zeros((capacity, 2))
        self.dones = np.zeros(capacity)
        self.slots = np.zeros(capacity, dtype=np.int64)
        self.size = 0

    def add(self, obs, action, log_prob, r_non, r_vr, done, next_obs, slot):
        i = self.size
        self.obs[i] = obs
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = (r_non, r_vr)
        self.dones[i] = float(done)
        self.next_obs[i] = next_obs
        self.slots[i] = slot
        self.size += 1

    def finalize(self, target: Critic) -> RolloutBatch:
        n = self.size
        values = target.values(self.obs[:n])
        next_values = target.values(self.next_obs[:n]) * (1.0 - self.dones[:n, None])
        return RolloutBatch(self.obs[:n].copy(), self.actions[:n].copy(), self.log_probs[:n].copy(),
                            self.rewards[:n].copy(), self.dones[:n].copy(), values, next_values,
                            self.slots[:n].copy())


def gae_advantages(rewards, values, next_values, dones, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantages by the backward recursion ``A_t = delta_t + gamma*lam*(1-done_t)*A_{t+1}``.

    ``delta_t = r_t + gamma*(1-done_t)*V'(s_{t+1}) - V'(s_t)``; a done flag cuts both
    the bootstrap and the accumulation.
    """
    rewards, values, next_values, dones = (np.asarray(a, dtype=float) for a in (rewards, values, next_values, dones))
    n = len(rewards)
    if not (len(values) == len(next_values) == len(dones) == n):
        raise DimensionError("rewards, values, next_values and dones must have equal length")
    live = 1.0 - dones
    delta = rewards + gamma * live * next_values - values
    adv = np.zeros(n)
    acc = 0.0
    decay = gamma * lam
    for t in range(n - 1, -1, -1):
        acc = delta[t] + decay * live[t] * acc
        adv[t] = acc
    return adv


def grouped_advantages(batch: RolloutBatch, variant: str, params: TrainerParams,
                       mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-group advantages; the standard variant works on the summed reward and reports A_vr = 0."""
    if variant == "standard":
        a = gae_advantages(batch.rewards.sum(axis=1), batch.values[:, 0], batch.next_values[:, 0],
                           batch.dones, params.gamma, params.lam)
        return a, np.zeros_like(a)
    mask = np.ones(2) if mask is None else mask
    out = []
    for k in range(2):
        if mask[k]:
            out.append(gae_advantages(batch.rewards[:, k], batch.values[:, k], batch.next_values[:, k],
                                      batch.dones, params.gamma, params.lam))
        else:
            out.append(np.zeros(len(batch)))
    return out[0], out[1]


def _minibatches(n: int, size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, size):
        yield perm[start:start + size]


def actor_update(batch: RolloutBatch, advantages_total, actor: Actor, optimizer: Adam,
                 params: TrainerParams, rng: np.random.Generator) -> dict:
    """Run the clipped-surrogate ascent for ``epochs_per_batch`` passes over the batch."""
    adv = np.asarray(advantages_total, dtype=float)
    if params.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    stats = {"ratio_mean": [], "clip_fraction": [], "entropy": [], "approx_kl": [], "loss": [], "grad_norm": []}
    for _ in range(params.epochs_per_batch):
        for idx in _minibatches(len(batch), params.minibatch_size, rng):
            loss, grads, diag = clipped_surrogate(actor, batch.obs[idx], batch.actions[idx], batch.log_probs[idx],
                                                  adv[idx], params.clip, params.entropy_coef)
            stats["grad_norm"].append(clip_grad_norm(grads, params.max_grad_norm))
            optimizer.step(grads)
            stats["loss"].append(loss)
            for k in ("ratio_mean", "clip_fraction", "entropy", "approx_kl"):
                stats[k].append(diag[k])
    return {k: float(np.mean(v)) for k, v in stats.items()}


def critic_loss(critic: Critic, obs, targets) -> tuple[float, dict]:
    """Sum over groups of the squared error to the frozen targets, averaged over the batch."""
    v, tape = critic.forward(obs)
    err = (v - targets) * critic.mask
    loss = float(np.mean(np.sum(err * err, axis=1)))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite critic loss {loss}")
    grads = critic.backward(tape, 2.0 * err / len(err))
    return loss, grads


def critic_update(batch: RolloutBatch, adv_non, adv_vr, critic: Critic, optimizer: Adam,
                  params: TrainerParams, rng: np.random.Generator) -> dict:
    targets = np.column_stack([adv_non, adv_vr]) + batch.values
    losses = []
    for _ in range(params.epochs_per_batch):
        for idx in _minibatches(len(batch), params.minibatch_size, rng):
            loss, grads = critic_loss(critic, batch.obs[idx], targets[idx])
            clip_grad_norm(grads, params.max_grad_norm)
            optimizer.step(grads)
            losses.append(loss)
    return {"critic_loss": float(np.mean(losses))}


# --- training loop ----------------------------------------------------------

@dataclass
class TrainingLog:
    variant: str
    seed: int
    records: list[EvalRecord] = field(default_factory=list)
    updates: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    agent: "Agent | None" = None

    def write_csv(self, path: str | Path) -> None:
        write_log(self.records, path)


class Agent:
    """Actor, critic and target critic for one variant, plus their optimisers."""

    def __init__(self, config: ScenarioConfig, variant: str, params: TrainerParams, seed: int):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.config = config
        self.variant = variant
        self.params = params
        d_non, d_vr = state_dims(config)
        self.actor = Actor(d_non + d_vr, config.n_users, params.hidden_sizes, params.activation,
                           make_rng(seed, STREAM_ACTOR_INIT))
        self.critic = make_critic(variant, d_non, d_vr, params, make_rng(seed, STREAM_CRITIC_INIT))
        self.target = self.critic.copy()
        self.actor_opt = Adam(self.actor.params, params.actor_lr)
        self.critic_opt = Adam(self.critic.params, params.critic_lr)
        self.n_updates = 0

    def update(self, batch: RolloutBatch, rng: np.random.Generator) -> dict:
        a_non, a_vr = grouped_advantages(batch, self.variant, self.params, self.critic.mask)
        diag = actor_update(batch, a_non + a_vr, self.actor, self.actor_opt, self.params, rng)
        diag.update(critic_update(batch, a_non, a_vr, self.critic, self.critic_opt, self.params, rng))
        self.n_updates += 1
        if self.n_updates % self.params.target_update_period == 0:
            self.target.params.load_from(self.critic.params)
        return diag

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_checkpoint(directory / "actor.npz", self.actor.params, {"role": "actor", "arch": self.actor.arch})
        save_checkpoint(directory / "critic.npz", self.critic.params,
                        {"role": "critic", "variant": self.variant, "d_non": self.critic.d_non,
                         "d_vr": self.critic.d_vr, "hidden_sizes": list(self.critic.hidden_sizes)})


def train(
    config: ScenarioConfig,
    variant: str,
    params: TrainerParams,
    seed: int | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
) -> TrainingLog:
    """Alternate rollout collection and PPO updates for ``params.total_steps`` environment steps.

    Every ``eval_period`` steps the mean-action policy is evaluated on fixed channel
    draws. On a numeric failure the last good parameters are written to
    ``checkpoint_dir`` before the error propagates.
    """
    seed = config.seed if seed is None else seed
    config = config.replace(seed=seed)
    profiles = build_scenario(config)
    agent = Agent(config, variant, params, seed)
    env = VideoStreamEnv(config, profiles, make_rng(seed, STREAM_TRAIN_ENV))
    policy_rng = make_rng(seed, STREAM_POLICY)
    batch_rng = make_rng(seed, STREAM_MINIBATCH)
    out = TrainingLog(variant, seed)
    started = time.perf_counter()

    def evaluate(step: int) -> None:
        rec = evaluate_policy(config, profiles, agent.actor.power_policy(config.p_max), params.eval_episodes,
                              seed, step // params.eval_period, step=step, variant=variant)
        out.records.append(rec)

    obs = encode_state(env.reset(), config)
    step = 0
    while step < params.total_steps:
        buf = RolloutBuffer(min(params.rollout_length, params.total_steps - step), len(obs), config.n_users)
        while buf.size < len(buf.log_probs):
            fractions, logp = agent.actor.sample(obs, policy_rng)
            slot = env.slot
            state, reward, done, _ = env.step(project_action(np.log(fractions), config.p_max))
            next_obs = encode_state(state, config)
            buf.add(obs, fractions, logp, reward.non_vr, reward.vr, done, next_obs, slot)
            step += 1
            if step % params.eval_period == 0:
                evaluate(step)
            obs = encode_state(env.reset(), config) if done else next_obs
        batch = buf.finalize(agent.target)
        last_good = (agent.actor.params.copy(), agent.critic.params.copy())
        try:
            diag = agent.update(batch, batch_rng)
        except NumericError:
            if checkpoint_dir is not None:
                agent.actor.params.load_from(last_good[0])
                agent.critic.params.load_from(last_good[1])
                agent.save(checkpoint_dir)
            log.error("numeric failure at step %d (%s seed %d); last good state saved", step, variant, seed)
            raise
        diag["step"] = step
        out.updates.append(diag)
        log.debug("update %d at step %d: %s", agent.n_updates, step, diag)

    out.wall_time = time.perf_counter() - started
    if log_path is not None:
        out.write_csv(log_path)
    if checkpoint_dir is not None:
        agent.save(checkpoint_dir)
    out.agent = agent
    return out


def prepare_step_timing(config: ScenarioConfig, variant: str, params: TrainerParams, seed: int = 0,
                        n_exec: int = 10_000) -> tuple[Callable[[], None], dict]:
    """Time ``n_exec`` collection steps and return a closure running one minibatch update.

    The execution step is actor sampling, one environment slot and the target-critic
    evaluation of the visited state. The collected transitions fill the minibatch
    the update closure trains on.
    """
    config = config.replace(seed=seed)
    agent = Agent(config, variant, params, seed)
    rng = make_rng(seed, STREAM_POLICY)
    env = VideoStreamEnv(config, rng=make_rng(seed, STREAM_TRAIN_ENV))
    obs = encode_state(env.reset(), config)
    exec_times = []
    buf = RolloutBuffer(params.minibatch_size, len(obs), config.n_users)
    for _ in range(n_exec):
        t0 = time.perf_counter()
        fractions, logp = agent.actor.sample(obs, rng)
        state, reward, done, _ = env.step(project_action(np.log(fractions), config.p_max))
        agent.target.values(obs)
        exec_times.append(time.perf_counter() - t0)
        nxt = encode_state(state, config)
        if buf.size < len(buf.log_probs):
            buf.add(obs, fractions, logp, reward.non_vr, reward.vr, done, nxt, 0)
        obs = encode_state(env.reset(), config) if done else nxt
    batch = buf.finalize(agent.target)
    a_non, a_vr = grouped_advantages(batch, variant, params, agent.critic.mask)
    adv = a_non + a_vr
    targets = np.column_stack([a_non, a_vr]) + batch.values

    def train_step() -> None:
        _, grads, _ = clipped_surrogate(agent.actor, batch.obs, batch.actions, batch.log_probs, adv, params.clip)
        agent.actor_opt.step(grads)
        _, grads = critic_loss(agent.critic, batch.obs, targets)
        agent.critic_opt.step(grads)

    info = {
        "variant": variant,
        "exec_step_median_s": float(np.median(exec_times)),
        "critic_multiply_adds": agent.critic.multiply_adds(),
        "actor_multiply_adds": agent.actor.arch.multiply_adds,
    }
    return train_step, info


def time_call(fn: Callable[[], None]) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def measure_step_times(config: ScenarioConfig, variant: str, params: TrainerParams, seed: int = 0,
                       n_train: int = 100, n_exec: int = 10_000) -> dict:
    """Median wall-clock of one minibatch update (train) and one collection step (execution)."""
    train_step, info = prepare_step_timing(config, variant, params, seed, n_exec)
    train_step()  # warm-up
    info["train_step_median_s"] = float(np.median([time_call(train_step) for _ in range(n_train)]))
    return info
