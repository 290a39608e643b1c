"""Aggregate completed runs: per-scenario mean/stddev over trials plus
the pass/fail state of every threshold embedded in the scenario."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class RunSummary:
    run_dir: Path
    scenario: str
    trials: int
    stats: dict[str, tuple[float, float, int]]  # key -> (mean, std, n)
    checks: list[dict] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


def _find_runs(root: Path) -> list[Path]:
    if (root / "config.json").exists() and (root / "aggregate.json").exists():
        return [root]
    found = sorted(
        p.parent for p in root.rglob("config.json")
        if (p.parent / "aggregate.json").exists()
    )
    return found


def summarize_run(run_dir: Path) -> RunSummary:
    with open(run_dir / "config.json") as fh:
        config = json.load(fh)
    with open(run_dir / "aggregate.json") as fh:
        aggregate = json.load(fh)
    trials = int(aggregate["trials"])
    trials_dir = run_dir / "trials"
    metrics: list[dict] = []
    for k in range(trials):
        path = trials_dir / f"{k:03d}" / "metrics.json"
        if not path.exists():
            raise FileNotFoundError(f"missing trial file {path}")
        with open(path) as fh:
            metrics.append(json.load(fh))
    stats: dict[str, tuple[float, float, int]] = {}
    if metrics:
        for key in sorted(metrics[0]):
            values = [m[key] for m in metrics if key in m]
            if all(isinstance(v, (int, float, bool)) for v in values):
                arr = np.asarray(values, dtype=float)
                stats[key] = (float(arr.mean()), float(arr.std()), len(values))
    return RunSummary(
        run_dir=run_dir,
        scenario=config["scenario"],
        trials=trials,
        stats=stats,
        checks=aggregate.get("checks", []),
    )


def summarize(root: Path, write_csv_to: Path | None = None) -> list[RunSummary]:
    runs = _find_runs(root)
    if not runs:
        raise FileNotFoundError(f"no completed runs under {root}")
    summaries = [summarize_run(r) for r in runs]
    if write_csv_to is not None:
        rows = []
        for s in sorted(summaries, key=lambda s: (s.scenario, str(s.run_dir))):
            for key, (mean, std, n) in sorted(s.stats.items()):
                rows.append([s.scenario, str(s.run_dir), key, f"{mean:.10g}", f"{std:.10g}", n])
        with open(write_csv_to, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scenario", "run_dir", "metric", "mean", "std", "trials"])
            writer.writerows(rows)
    return summaries


def format_table(summaries: list[RunSummary]) -> str:
    lines = []
    by_scenario: dict[str, list[RunSummary]] = {}
    for s in summaries:
        by_scenario.setdefault(s.scenario, []).append(s)
    for scenario in sorted(by_scenario):
        lines.append(f"== {scenario}")
        for s in by_scenario[scenario]:
            lines.append(f"   {s.run_dir}  (trials={s.trials})")
            for key, (mean, std, n) in sorted(s.stats.items()):
                lines.append(f"     {key:<48s} mean={mean:<12.6g} std={std:<12.6g} n={n}")
            for check in s.checks:
                flag = "PASS" if check["passed"] else "FAIL"
                lines.append(
                    f"     [{flag}] {check['name']} = {check['value']:.6g} {check.get('detail', '')}"
                )
    return "\n".join(lines)
