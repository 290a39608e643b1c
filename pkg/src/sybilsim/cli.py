"""Command-line entry point: run experiments, summarize result trees."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ExperimentConfig
from .scenarios import SCENARIOS, run_scenario
from .summarize import format_table, summarize

OUT_DIR_ENV = "SYBILSIM_OUT"


def _resolve_out_dir(cli_out: str | None, config: ExperimentConfig) -> Path:
    if cli_out:
        return Path(cli_out)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    if config.out_dir:
        return Path(config.out_dir)
    return Path("results") / f"{config.scenario}-seed{config.seed}"


def cmd_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(Path(args.config))
    if args.seed is not None:
        config.seed = args.seed
    if args.trials is not None:
        config.trials = args.trials
    out_dir = _resolve_out_dir(args.out, config)
    result = run_scenario(config, out_dir)
    print(f"{result.scenario}: {result.trials} trial(s) -> {out_dir}")
    for check in result.checks:
        flag = "PASS" if check.passed else "FAIL"
        print(f"  [{flag}] {check.name} = {check.value:.6g} {check.detail}")
    if args.plot:
        from .plots import render_run

        for fig in render_run(out_dir):
            print(f"  figure: {fig}")
    return 0


def cmd_summarize(args: argparse.Namespace) -> int:
    root = Path(args.dir)
    summaries = summarize(root, write_csv_to=root / "summary.csv")
    print(format_table(summaries))
    if args.plot:
        from .plots import render_run

        for s in summaries:
            for fig in render_run(s.run_dir):
                print(f"figure: {fig}")
    return 0 if all(s.all_passed for s in summaries) else 1


def cmd_list_scenarios(_: argparse.Namespace) -> int:
    width = max(len(name) for name in SCENARIOS)
    for name in sorted(SCENARIOS):
        spec = SCENARIOS[name]
        print(f"{name:<{width}}  (trials={spec.default_trials})  {spec.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sybilsim",
        description="crowdsourced-map attack and sybil-defense simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario from a config file")
    p_run.add_argument("config", help="path to an experiment config (JSON)")
    p_run.add_argument("--seed", type=int, default=None, help="override the master seed")
    p_run.add_argument("--trials", type=int, default=None, help="override the trial count")
    p_run.add_argument("--out", default=None, help=f"output directory (or ${OUT_DIR_ENV})")
    p_run.add_argument("--plot", action="store_true", help="render figures next to the data")
    p_run.set_defaults(func=cmd_run)

    p_sum = sub.add_parser("summarize", help="aggregate completed runs under a directory")
    p_sum.add_argument("dir", help="directory containing one or more runs")
    p_sum.add_argument("--plot", action="store_true", help="render figures for each run")
    p_sum.set_defaults(func=cmd_summarize)

    p_list = sub.add_parser("list-scenarios", help="list available scenarios")
    p_list.set_defaults(func=cmd_list_scenarios)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
