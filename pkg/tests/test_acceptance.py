"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The training experiment behind criteria 7-9 runs once per session (ten seeds of
every algorithm at desk scale) and takes tens of minutes on one core. Set
``HETERO360_ACCEPTANCE_DIR`` to keep its results and reuse them on later runs.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from hetero360.baselines import average_allocation
from hetero360.channel import failure_probability_oracle, frame_latency, shannon_rate
from hetero360.core import ScenarioConfig, desk_config, make_rng
from hetero360.env import UserTrace, VideoStreamEnv, encode_state, project_action
from hetero360.harness import (
    ALGORITHMS, ExperimentPlan, final_window_means, log_path, read_timing, run_cell, run_plan, timing_report,
)
from hetero360.metrics import read_log
from hetero360.nn import (
    MLP, NetworkArchitecture, concentrations, dirichlet_log_prob, dirichlet_log_prob_grad, sigmoid,
)
from hetero360.ppo import Actor, MidoCritic, SidoCritic, TrainerParams, gae_advantages

DESK_SEEDS = list(range(10))
DESK_STEPS = 50_000
DESK_EVAL_PERIOD = 50
TIMING_TIE_ALLOWANCE = 0.10  # relative measurement noise tolerated between timing medians


# --- 1. channel physics ------------------------------------------------------------

def test_criterion_1_channel_physics(verdict):
    cfg = ScenarioConfig()
    rng = np.random.default_rng(101)
    n = 10_000
    started = time.perf_counter()
    p_lo = rng.uniform(0, cfg.p_max, n)
    p_hi = p_lo + rng.uniform(0, cfg.p_max, n)
    gain = 10 ** rng.uniform(-12, -4, n)
    r_lo = shannon_rate(p_lo, gain, cfg.bandwidth_per_user, cfg.noise_psd)
    r_hi = shannon_rate(p_hi, gain, cfg.bandwidth_per_user, cfg.noise_psd)
    data = cfg.raw_frame_bits / rng.uniform(cfg.compression_min, cfg.compression_max, n)
    T = cfg.frames_per_second
    latency, success = frame_latency(data, r_hi, T)
    tti = 1.0 / T
    with np.errstate(divide="ignore"):
        transmit = data / r_hi
    violations = (
        int(np.sum(r_hi < r_lo))
        + int(np.sum(latency > tti))
        + int(np.sum((success == 1) != (transmit <= tti)))
        + int(np.sum((success == 1) & (latency != transmit)))
        + int(np.sum((success == 0) & (latency != tti)))
    )
    elapsed = time.perf_counter() - started
    ok = violations == 0 and elapsed < 1.0
    verdict(1, ok, f"{n} cases, {violations} violations, {elapsed:.3f}s")
    assert ok


# --- 2. delay/std oracle -------------------------------------------------------------

def brute_force_delay_std(latencies, successes, T):
    tti = 1.0 / T
    slots = [t for t, s in enumerate(successes) if s]
    delays = []
    for a, b in zip(slots, slots[1:]):
        d = tti - latencies[a]
        for t in range(a + 1, b + 1):
            d += latencies[t]
        delays.append(d)
    if len(delays) < 2:
        return delays, 0.0
    mean = 0.0
    for d in delays:
        mean += d
    mean /= len(delays)
    var = 0.0
    for d in delays:
        var += (d - mean) * (d - mean)
    return delays, math.sqrt(var / len(delays))


def test_criterion_2_delay_std_oracle(verdict):
    rng = np.random.default_rng(202)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 11))
        ok_flags = (rng.random(T) < rng.uniform(0.2, 1.0)).astype(int)
        lat = [float(rng.uniform(0, 1 / T)) if s else 1 / T for s in ok_flags]
        trace = UserTrace(0, 1, T)
        for t in range(T):
            trace.record(t + 1, lat[t], int(ok_flags[t]), 1 / T)
        ref_delays, ref_std = brute_force_delay_std(lat, ok_flags, T)
        assert len(trace.delays) == len(ref_delays)
        for a, b in zip(trace.delays + [trace.delay_std], ref_delays + [ref_std]):
            if a != b:
                worst = max(worst, abs(a - b) / max(abs(a), abs(b)))
    hand = UserTrace(0, 1, 4)
    for t, (l, s) in enumerate(zip([0.1, 0.25, 0.2, 0.05], [1, 0, 1, 1]), start=1):
        hand.record(t, l, s, 0.25)
    hand_ok = np.allclose(hand.delays, [0.6, 0.10], rtol=1e-12) and abs(hand.delay_std - 0.25) <= 0.25e-12
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-12 and hand_ok and elapsed < 1.0
    verdict(2, ok, f"1000 patterns, worst rel err {worst:.2e}, hand case {'ok' if hand_ok else 'wrong'}, {elapsed:.3f}s")
    assert ok


# --- 3. power simplex fuzz -------------------------------------------------------------

def test_criterion_3_power_simplex(verdict):
    cfg = desk_config()
    rng = np.random.default_rng(303)
    env = VideoStreamEnv(cfg, rng=make_rng(303, 1))
    actor = Actor(len(encode_state(env.reset(), cfg)), cfg.n_users, (32, 32), rng=rng)
    obs = encode_state(env.reset(), cfg)
    started = time.perf_counter()
    worst = 0.0
    steps = 10_000
    for i in range(steps):
        if i % 3 == 0:
            powers = project_action(rng.normal(scale=10 ** rng.uniform(-3, 3), size=cfg.n_users), cfg.p_max)
        else:
            fractions, _ = actor.sample(obs, rng)
            powers = project_action(np.log(fractions), cfg.p_max)
        worst = max(worst, abs(powers.sum() - cfg.p_max) / cfg.p_max)
        state, _, done, _ = env.step(powers)
        obs = encode_state(env.reset() if done else state, cfg)
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-9 and elapsed < 10.0
    verdict(3, ok, f"{steps} actions, worst budget rel err {worst:.2e}, {elapsed:.2f}s")
    assert ok


# --- 4. GAE oracle -------------------------------------------------------------------

def forward_sum_gae(r, v, nv, d, gamma, lam):
    n = len(r)
    delta = [r[t] + gamma * (1 - d[t]) * nv[t] - v[t] for t in range(n)]
    out = np.zeros(n)
    for t in range(n):
        w = 1.0
        for k in range(t, n):
            out[t] += w * delta[k]
            if d[k]:
                break
            w *= gamma * lam
    return out, np.array(delta)


def test_criterion_4_gae_oracle(verdict):
    rng = np.random.default_rng(404)
    started = time.perf_counter()
    worst = 0.0
    td_exact = True
    for _ in range(1000):
        n = int(rng.integers(1, 33))
        r, v, nv = rng.normal(size=(3, n))
        d = (rng.random(n) < 0.2).astype(float)
        gamma, lam = rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0)
        ref, delta = forward_sum_gae(r, v, nv, d, gamma, lam)
        worst = max(worst, float(np.max(np.abs(gae_advantages(r, v, nv, d, gamma, lam) - ref))))
        td_exact &= bool(np.array_equal(gae_advantages(r, v, nv, d, gamma, 0.0), r + gamma * (1 - d) * nv - v))
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-9 and td_exact and elapsed < 1.0
    verdict(4, ok, f"1000 sequences, worst abs diff {worst:.2e}, lambda=0 exact: {td_exact}, {elapsed:.3f}s")
    assert ok


# --- 5. gradient checks ---------------------------------------------------------------

def _rel(a, b):
    return abs(a - b) / max(abs(a) + abs(b), 1e-8)


def _check_params(params, grads, loss, h=1e-5):
    worst = 0.0
    for k, p in params.items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss()
            p[idx] = orig - h
            down = loss()
            p[idx] = orig
            worst = max(worst, _rel(grads[k][idx], (up - down) / (2 * h)))
    return worst


def test_criterion_5_gradient_checks(verdict):
    started = time.perf_counter()
    worst = {}
    for seed in range(10):
        rng = np.random.default_rng(500 + seed)
        x = rng.normal(size=(6, 4))
        for act in ("tanh", "relu", "identity"):
            net = MLP(NetworkArchitecture(4, (5, 5), 3, activation=act), rng=rng)
            # zero biases can put a relu pre-activation exactly on its kink, where differences are undefined
            for k in net.params.keys():
                if k.startswith("b"):
                    net.params[k][...] = rng.normal(size=net.params[k].shape)
            target = rng.normal(size=(6, 3))
            y, tape = net.forward(x)
            grads, _ = net.backward(tape, y - target)
            err = _check_params(net.params, grads, lambda: 0.5 * float(np.sum((net(x) - target) ** 2)))
            worst[act] = max(worst.get(act, 0.0), err)
        actor = Actor(4, 3, (5,), rng=rng)
        actions = rng.dirichlet(np.ones(3), size=6)
        weights = rng.normal(size=6)

        def head_loss():
            return float(np.sum(weights * dirichlet_log_prob(actions, actor.concentrations(x))))

        raw, tape = actor.net.forward(x)
        d_raw = weights[:, None] * dirichlet_log_prob_grad(actions, concentrations(raw)) * sigmoid(raw)
        grads, _ = actor.net.backward(tape, d_raw)
        worst["dirichlet"] = max(worst.get("dirichlet", 0.0), _check_params(actor.params, grads, head_loss))
    elapsed = time.perf_counter() - started
    ok = max(worst.values()) < 1e-4 and elapsed < 30.0
    verdict(5, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" over 10 seeds, {elapsed:.2f}s")
    assert ok


# --- 6. SIDO isolation ----------------------------------------------------------------

def _jacobian_non_wrt_vr(critic, s, d_non, h=1e-6):
    base = critic.values(s)[0, 0]
    out = []
    for j in range(d_non, len(s)):
        bumped = s.copy()
        bumped[j] += h
        out.append((critic.values(bumped)[0, 0] - base) / h)
    return np.array(out)


def test_criterion_6_sido_isolation(verdict):
    started = time.perf_counter()
    cfg = ScenarioConfig()
    d_non, d_vr = 4 * cfg.n_non, 5 * cfg.n_vr
    rng = np.random.default_rng(606)
    sido_max = 0.0
    mido_min = math.inf
    for seed in range(5):
        s = rng.normal(size=d_non + d_vr)
        sido = SidoCritic(d_non, d_vr, rng=np.random.default_rng(seed))
        mido = MidoCritic(d_non, d_vr, rng=np.random.default_rng(seed))
        sido_max = max(sido_max, float(np.max(np.abs(_jacobian_non_wrt_vr(sido, s, d_non)))))
        mido_min = min(mido_min, float(np.max(np.abs(_jacobian_non_wrt_vr(mido, s, d_non)))))
    elapsed = time.perf_counter() - started
    ok = sido_max == 0.0 and mido_min > 0.0 and elapsed < 5.0
    verdict(6, ok, f"SIDO max |dV_non/ds_vr| = {sido_max}, MIDO min over nets = {mido_min:.2e}, {elapsed:.2f}s")
    assert ok


# --- desk-scale experiment ------------------------------------------------------------------

def desk_plan(out_dir: Path) -> ExperimentPlan:
    return ExperimentPlan(
        n_vr_values=[2], algorithms=list(ALGORITHMS), seeds=DESK_SEEDS, out_dir=out_dir, config=desk_config(),
        trainer=TrainerParams(total_steps=DESK_STEPS, eval_period=DESK_EVAL_PERIOD), timing=False,
    )


@pytest.fixture(scope="session")
def desk_results(tmp_path_factory):
    keep = os.environ.get("HETERO360_ACCEPTANCE_DIR")
    out = Path(keep) if keep else tmp_path_factory.mktemp("desk")
    plan = desk_plan(out)
    expected = [log_path(out, 2, a, s) for a in plan.algorithms for s in plan.seeds]
    if not all(p.exists() for p in expected):
        result = run_plan(plan)
        assert result.ok, result.failures
    finals = {
        (algo, seed): final_window_means(read_log(log_path(out, 2, algo, seed)))
        for algo in plan.algorithms for seed in plan.seeds
    }
    return plan, finals


@pytest.mark.slow
def test_criterion_7_determinism(desk_results, tmp_path, verdict):
    plan, _ = desk_results
    again = tmp_path / "rerun.csv"
    run_cell(plan.scenario(2), "sido", 0, plan.trainer, again)
    ok = again.read_bytes() == log_path(plan.out_dir, 2, "sido", 0).read_bytes()
    verdict(7, ok, "rerun of sido seed 0 at desk scale " + ("bit-identical" if ok else "differs"))
    assert ok


@pytest.mark.slow
def test_criterion_8_reward_ordering(desk_results, verdict):
    _, finals = desk_results
    reward = {k: v["reward"] for k, v in finals.items()}
    wins = {
        algo: sum(reward[(algo, s)] > reward[("standard_ppo", s)] for s in DESK_SEEDS) for algo in ("mido", "sido")
    }
    beats_avg = {
        algo: sum(reward[(algo, s)] > reward[("average", s)] for s in DESK_SEEDS)
        for algo in ("mido", "sido", "standard_ppo")
    }
    ok = all(w >= 7 for w in wins.values()) and all(b >= 9 for b in beats_avg.values())
    table = "; ".join(
        f"seed {s}: " + " ".join(f"{a}={reward[(a, s)]:.1f}" for a in ALGORITHMS) for s in DESK_SEEDS
    )
    print(table)
    verdict(8, ok, f"wins over standard_ppo {wins} (need >=7/10), wins over average {beats_avg} (need >=9/10)")
    assert ok


@pytest.mark.slow
def test_criterion_9_sickness_direction(desk_results, verdict):
    _, finals = desk_results
    med = {
        algo: float(np.median([finals[(algo, s)]["delay_std_vr"] for s in DESK_SEEDS]))
        for algo in ("sido", "mido", "standard_ppo")
    }
    ok = med["sido"] < med["standard_ppo"] and med["mido"] < med["standard_ppo"]
    verdict(9, ok, "median final-window VR delay std " + ", ".join(f"{k}={v:.5f}" for k, v in med.items()))
    assert ok


# --- 10. calibration -----------------------------------------------------------------------

def test_criterion_10_calibration(verdict):
    cfg = ScenarioConfig()
    power = average_allocation(cfg.n_users, cfg.p_max)[0]
    probs = failure_probability_oracle(cfg, power, 100_000, rng=make_rng(cfg.seed, 6))
    ok = bool(np.all((probs >= 0.02) & (probs <= 0.10)))
    verdict(10, ok, f"p_max={cfg.p_max} W, per-user failure " + " ".join(f"{p:.3f}" for p in probs))
    assert ok


# --- 11. timing ---------------------------------------------------------------------------

def test_criterion_11_timing(tmp_path, verdict):
    plan = ExperimentPlan(n_vr_values=[ScenarioConfig().n_vr], algorithms=list(ALGORITHMS), seeds=[0],
                          out_dir=tmp_path, config=ScenarioConfig(), trainer=TrainerParams())
    path = tmp_path / "timing.csv"
    timing_report(plan, path)
    rows = {r["algorithm"]: r for r in read_timing(path)}
    t = {a: rows[a]["train_step_median_s"] for a in ("sido", "mido", "standard_ppo")}
    slack = 1.0 + TIMING_TIE_ALLOWANCE
    ok = path.exists() and t["sido"] * slack >= t["mido"] and t["mido"] * slack >= t["standard_ppo"]
    verdict(11, ok, "median train step " + ", ".join(f"{k}={1e3 * v:.2f}ms" for k, v in t.items())
            + f" (ties within {TIMING_TIE_ALLOWANCE:.0%})")
    assert ok
