"""Experiment sweeps over scenarios, algorithms and seeds; aggregation, timing and summary reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import average_policy, evaluation_log, train_standard_ppo
from .core import ScenarioConfig, make_rng, STREAM_POLICY
from .env import VideoStreamEnv, encode_state
from .metrics import LOG_COLUMNS, EvalRecord, read_log
from .ppo import TrainerParams, prepare_step_timing, time_call, train

log = logging.getLogger(__name__)

ALGORITHMS = ("sido", "mido", "standard_ppo", "average")
METRICS = LOG_COLUMNS[3:]
# summary metrics: (log column, short name)
SUMMARY_METRICS = (
    ("eval_reward_total", "reward"),
    ("fps_non_mean", "fps_non"),
    ("fps_vr_mean", "fps_vr"),
    ("delay_std_vr_mean", "delay_std_vr"),
    ("episode_length_mean", "episode_length"),
)
FINAL_WINDOW = 0.1


@dataclass
class ExperimentPlan:
    n_vr_values: list[int]
    algorithms: list[str]
    seeds: list[int]
    out_dir: Path
    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    trainer: TrainerParams = field(default_factory=TrainerParams)
    workers: int = 1
    timing: bool = True
    timing_train_steps: int = 100
    timing_exec_steps: int = 10_000

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if not self.n_vr_values or not self.algorithms or not self.seeds:
            raise ValueError("plan needs at least one scenario, algorithm and seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}; expected a subset of {ALGORITHMS}")

    def scenario(self, n_vr: int) -> ScenarioConfig:
        return self.config.replace(n_vr=n_vr)

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "ExperimentPlan":
        from .core import load_config

        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        config = raw.get("config", {})
        if isinstance(config, str):
            config = load_config(Path(path).parent / config)
        else:
            config = ScenarioConfig(**config)
        trainer = dict(raw.get("trainer", {}))
        for key in ("total_steps", "eval_period", "eval_episodes"):
            if key in raw:
                trainer[key] = raw[key]
        if "hidden_sizes" in trainer:
            trainer["hidden_sizes"] = tuple(trainer["hidden_sizes"])
        kwargs = dict(
            n_vr_values=list(raw.get("n_vr", [config.n_vr])),
            algorithms=list(raw.get("algorithms", ALGORITHMS)),
            seeds=list(raw.get("seeds", range(11))),
            out_dir=raw.get("out", "results"),
            config=config,
            trainer=TrainerParams(**trainer),
            workers=int(raw.get("workers", 1)),
            timing=bool(raw.get("timing", True)),
        )
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


@dataclass
class ResultSet:
    out_dir: Path
    logs: dict = field(default_factory=dict)  # (n_vr, algorithm, seed) -> path
    aggregates: dict = field(default_factory=dict)  # (n_vr, algorithm) -> path
    timing_path: Path | None = None
    failures: dict = field(default_factory=dict)  # (n_vr, algorithm, seed) -> error text

    @property
    def ok(self) -> bool:
        return not self.failures


def log_path(out_dir: Path, n_vr: int, algorithm: str, seed: int) -> Path:
    return Path(out_dir) / "logs" / f"nvr{n_vr}" / f"{algorithm}_seed{seed}.csv"


def aggregate_path(out_dir: Path, n_vr: int, algorithm: str) -> Path:
    return Path(out_dir) / "aggregate" / f"nvr{n_vr}_{algorithm}.csv"


def run_cell(config: ScenarioConfig, algorithm: str, seed: int, params: TrainerParams, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if algorithm == "average":
        evaluation_log(config, average_policy(config), params, seed, "average", path)
    elif algorithm == "standard_ppo":
        train_standard_ppo(config, params, seed=seed, log_path=path)
    else:
        train(config, algorithm, params, seed=seed, log_path=path)
    return path


def _run_cell_safe(args):
    key, config, algorithm, seed, params, path = args
    try:
        run_cell(config, algorithm, seed, params, path)
        return key, None
    except Exception:  # one bad cell must not sink the sweep
        return key, traceback.format_exc()


def aggregate_logs(paths: list[Path], out_path: Path) -> list[dict]:
    """Mean and sample std across seeds at every evaluation step.

    A single seed gets a zero band.
    """
    runs = [read_log(p) for p in paths]
    steps = sorted(set.intersection(*(set(r.step for r in run) for run in runs)))
    by_step = [{r.step: r for r in run} for run in runs]
    rows = []
    for step in steps:
        row = {"step": step, "n_seeds": len(runs)}
        for m in METRICS:
            vals = np.array([getattr(bs[step], m) for bs in by_step], dtype=float)
            row[f"{m}_mean"] = float(np.mean(vals))
            row[f"{m}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        rows.append(row)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["step", "n_seeds"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return rows


def measure_average_exec(config: ScenarioConfig, n_exec: int, seed: int = 0) -> float:
    policy = average_policy(config)
    env = VideoStreamEnv(config.replace(seed=seed), rng=make_rng(seed, STREAM_POLICY))
    obs = encode_state(env.reset(), config)
    times = []
    for _ in range(n_exec):
        t0 = time.perf_counter()
        state, _, done, _ = env.step(policy(obs))
        times.append(time.perf_counter() - t0)
        obs = encode_state(env.reset() if done else state, config)
    return float(np.median(times))


TIMING_COLUMNS = ("n_vr", "algorithm", "train_step_median_s", "exec_step_median_s",
                  "critic_multiply_adds", "actor_multiply_adds")


def timing_report(plan: ExperimentPlan, path: Path) -> list[dict]:
    """Median single-step train and execution times per (scenario, algorithm).

    Train steps of the algorithms in a scenario are timed round-robin so that slow
    drift of the machine affects all of them alike.
    """
    rows = []
    for n_vr in plan.n_vr_values:
        cfg = plan.scenario(n_vr)
        steps = {}
        for algo in plan.algorithms:
            if algo == "average":
                rows.append({"n_vr": n_vr, "algorithm": algo, "train_step_median_s": math.nan,
                             "exec_step_median_s": measure_average_exec(cfg, plan.timing_exec_steps),
                             "critic_multiply_adds": 0, "actor_multiply_adds": 0})
                continue
            variant = "standard" if algo == "standard_ppo" else algo
            fn, info = prepare_step_timing(cfg, variant, plan.trainer, n_exec=plan.timing_exec_steps)
            fn()  # warm-up
            steps[algo] = (fn, info, [])
        for _ in range(plan.timing_train_steps):
            for fn, _, samples in steps.values():
                samples.append(time_call(fn))
        for algo, (_, info, samples) in steps.items():
            info["train_step_median_s"] = float(np.median(samples))
            rows.append({"n_vr": n_vr, "algorithm": algo, **{k: info[k] for k in TIMING_COLUMNS[2:]}})
    order = {a: i for i, a in enumerate(plan.algorithms)}
    rows.sort(key=lambda r: (plan.n_vr_values.index(r["n_vr"]), order[r["algorithm"]]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMING_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def read_timing(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["n_vr"] = int(r["n_vr"])
        for k in TIMING_COLUMNS[2:]:
            r[k] = float(r[k])
    return rows


def run_plan(plan: ExperimentPlan) -> ResultSet:
    """Run every (scenario, algorithm, seed) cell, then aggregate and time.

    Failed cells are recorded in ``ResultSet.failures`` and skipped by aggregation.
    """
    out = plan.out_dir
    out.mkdir(parents=True, exist_ok=True)
    result = ResultSet(out)
    jobs = []
    for n_vr in plan.n_vr_values:
        cfg = plan.scenario(n_vr)
        for algo in plan.algorithms:
            for seed in plan.seeds:
                key = (n_vr, algo, seed)
                jobs.append((key, cfg, algo, seed, plan.trainer, log_path(out, n_vr, algo, seed)))
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            outcomes = list(pool.map(_run_cell_safe, jobs))
    else:
        outcomes = [_run_cell_safe(job) for job in jobs]
    for (key, *_rest), (_, err) in zip(jobs, outcomes):
        if err is None:
            result.logs[key] = _rest[-1]
        else:
            result.failures[key] = err
            log.error("cell %s failed:\n%s", key, err)

    for n_vr in plan.n_vr_values:
        for algo in plan.algorithms:
            paths = [result.logs[(n_vr, algo, s)] for s in plan.seeds if (n_vr, algo, s) in result.logs]
            if paths:
                agg = aggregate_path(out, n_vr, algo)
                aggregate_logs(paths, agg)
                result.aggregates[(n_vr, algo)] = agg
    if plan.timing:
        result.timing_path = out / "timing.csv"
        timing_report(plan, result.timing_path)
    if result.failures:
        (out / "failures.json").write_text(
            json.dumps({"/".join(map(str, k)): v for k, v in result.failures.items()}, indent=2), encoding="utf-8"
        )
    return result


# --- summary ----------------------------------------------------------------

def final_window(records: list[EvalRecord], fraction: float = FINAL_WINDOW) -> list[EvalRecord]:
    k = max(1, int(math.ceil(len(records) * fraction)))
    return records[-k:]


def final_window_means(records: list[EvalRecord], fraction: float = FINAL_WINDOW) -> dict[str, float]:
    window = final_window(records, fraction)
    return {name: float(np.mean([getattr(r, col) for r in window])) for col, name in SUMMARY_METRICS}


def relative_improvement(x: float, y: float) -> float:
    """``(x - y) / |y|``: positive when x exceeds y regardless of the sign of y."""
    if y == 0:
        return 0.0 if x == 0 else math.copysign(math.inf, x)
    return (x - y) / abs(y)


def discover_logs(result_dir: Path) -> dict:
    found = {}
    for path in sorted((Path(result_dir) / "logs").glob("nvr*/*_seed*.csv")):
        n_vr = int(path.parent.name[3:])
        algo, seed = path.stem.rsplit("_seed", 1)
        found[(n_vr, algo, int(seed))] = path
    return found


def summarize(result_dir: str | Path, fraction: float = FINAL_WINDOW) -> dict:
    """Final-window metrics per (scenario, algorithm) and pairwise relative improvements.

    Writes ``summary.csv`` (one row per scenario and algorithm), ``improvements.csv``
    and a plain-text ``summary.md`` into ``result_dir``.
    """
    result_dir = Path(result_dir)
    logs = discover_logs(result_dir)
    per_seed: dict = {}
    for (n_vr, algo, seed), path in logs.items():
        per_seed.setdefault((n_vr, algo), {})[seed] = final_window_means(read_log(path), fraction)
    table = {}
    for key, seeds in sorted(per_seed.items()):
        names = [n for _, n in SUMMARY_METRICS]
        table[key] = {n: float(np.mean([s[n] for s in seeds.values()])) for n in names}
        table[key]["n_seeds"] = len(seeds)
    improvements = []
    for (n_vr, a), ma in table.items():
        for (n_vr2, b), mb in table.items():
            if n_vr2 != n_vr or a == b:
                continue
            row = {"n_vr": n_vr, "algorithm": a, "baseline": b}
            for _, name in SUMMARY_METRICS:
                row[name] = relative_improvement(ma[name], mb[name])
            improvements.append(row)

    names = [n for _, n in SUMMARY_METRICS]
    with open(result_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_vr", "algorithm", "n_seeds", *names])
        for (n_vr, algo), m in table.items():
            writer.writerow([n_vr, algo, m["n_seeds"], *(repr(m[n]) for n in names)])
    with open(result_dir / "improvements.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["n_vr", "algorithm", "baseline", *names])
        writer.writeheader()
        for row in improvements:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    lines = ["| n_vr | algorithm | seeds | " + " | ".join(names) + " |",
             "|---" * (3 + len(names)) + "|"]
    for (n_vr, algo), m in table.items():
        lines.append(f"| {n_vr} | {algo} | {m['n_seeds']} | " + " | ".join(f"{m[n]:.4g}" for n in names) + " |")
    lines += ["", "Relative change of algorithm vs baseline, (x - y) / |y|; negative delay_std_vr = less sickness.", "",
              "| n_vr | algorithm | baseline | " + " | ".join(names) + " |",
              "|---" * (3 + len(names)) + "|"]
    for row in improvements:
        lines.append(f"| {row['n_vr']} | {row['algorithm']} | {row['baseline']} | "
                     + " | ".join(f"{100 * row[n]:+.1f}%" for n in names) + " |")
    (result_dir / "summary.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"table": table, "improvements": improvements}
