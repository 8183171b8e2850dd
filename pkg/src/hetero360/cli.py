"""Command line: ``hetero360 run | summarize | oracle``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .baselines import average_allocation
from .channel import failure_probability_oracle
from .core import ScenarioConfig, load_config
from .harness import ALGORITHMS, ExperimentPlan, run_plan, summarize
from .ppo import TrainerParams

CALIBRATION_BAND = (0.02, 0.10)


def _int_list(text: str) -> list[int]:
    """Parse ``"0,1,2"`` or ``"0-9"`` (inclusive) or a mix of both."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetero360", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment plan")
    run.add_argument("plan", nargs="?", help="JSON plan file; flags override its fields")
    run.add_argument("--config", help="scenario config file ([scenario] key = value)")
    run.add_argument("--seeds", type=_int_list)
    run.add_argument("--steps", type=int)
    run.add_argument("--eval-period", type=int)
    run.add_argument("--eval-episodes", type=int)
    run.add_argument("--algo", type=_str_list, help=f"comma list from {','.join(ALGORITHMS)}")
    run.add_argument("--n-vr", type=_int_list)
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.add_argument("--no-timing", action="store_true")

    summ = sub.add_parser("summarize", help="summarise a result directory")
    summ.add_argument("result_dir")

    oracle = sub.add_parser("oracle", help="Monte Carlo failure probability under an equal power split")
    oracle.add_argument("--config")
    oracle.add_argument("--samples", type=int, default=100_000)
    oracle.add_argument("--power", type=float, help="power per user in W (default p_max / N)")
    return parser


def _plan_from_args(args) -> ExperimentPlan:
    config = load_config(args.config) if args.config else None
    if args.plan:
        plan = ExperimentPlan.from_json(args.plan)
    else:
        plan = ExperimentPlan(n_vr_values=[2, 3, 4, 5, 6], algorithms=list(ALGORITHMS), seeds=list(range(11)),
                              out_dir=Path("results"))
    if config is not None:
        plan.config = config
    trainer = {}
    if args.steps is not None:
        trainer["total_steps"] = args.steps
    if args.eval_period is not None:
        trainer["eval_period"] = args.eval_period
    if args.eval_episodes is not None:
        trainer["eval_episodes"] = args.eval_episodes
    if trainer:
        plan.trainer = TrainerParams(**{**plan.trainer.__dict__, **trainer})
    for attr, value in (("seeds", args.seeds), ("algorithms", args.algo), ("n_vr_values", args.n_vr),
                        ("workers", args.workers)):
        if value is not None:
            setattr(plan, attr, value)
    if args.out is not None:
        plan.out_dir = Path(args.out)
    if args.no_timing:
        plan.timing = False
    plan.__post_init__()
    return plan


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")

    if args.command == "run":
        plan = _plan_from_args(args)
        result = run_plan(plan)
        print(f"{len(result.logs)} logs, {len(result.aggregates)} aggregates written to {plan.out_dir}")
        if result.failures:
            print(f"{len(result.failures)} cell(s) failed; see {plan.out_dir / 'failures.json'}", file=sys.stderr)
            return 2
        return 0

    if args.command == "summarize":
        report = summarize(args.result_dir)
        print((Path(args.result_dir) / "summary.md").read_text(encoding="utf-8"))
        return 0 if report["table"] else 2

    config = load_config(args.config) if args.config else ScenarioConfig()
    power = args.power if args.power is not None else average_allocation(config.n_users, config.p_max)[0]
    probs = failure_probability_oracle(config, power, args.samples)
    lo, hi = CALIBRATION_BAND
    print(f"power per user {power:.6g} W, {args.samples} samples per user")
    for n, p in enumerate(probs):
        flag = "ok" if lo <= p <= hi else "OUT OF BAND"
        print(f"user {n}: failure probability {p:.4f}  {flag}")
    return 0 if np.all((probs >= lo) & (probs <= hi)) else 1


if __name__ == "__main__":
    sys.exit(main())
