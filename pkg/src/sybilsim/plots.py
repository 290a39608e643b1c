"""Figure rendering for completed runs.

Each scenario gets a small matplotlib renderer that reads the CSV/JSON
files a run wrote and drops PNGs into ``<run>/figures/``.  CSV stays the
data contract; figures are a convenience layer on top.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy import stats


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _save(fig, run_dir: Path, name: str) -> Path:
    fig_dir = run_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    out = fig_dir / f"{name}.png"
    fig.savefig(out, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out


def plot_aggregation_sweep(run_dir: Path) -> list[Path]:
    rows = _read_csv(run_dir / "sweep.csv")
    classes = sorted({r["road_class"] for r in rows})
    fig, axes = plt.subplots(1, len(classes), figsize=(4 * len(classes), 3.2), sharey=False)
    if len(classes) == 1:
        axes = [axes]
    for ax, cls in zip(axes, classes):
        sub = [r for r in rows if r["road_class"] == cls]
        labels = [f"{r['n_slow']}:{r['n_fast']}" for r in sub]
        ax.plot(range(len(sub)), [float(r["aggregate_mph"]) for r in sub], "o-", label="aggregate")
        ax.set_xticks(range(len(sub)))
        ax.set_xticklabels(labels, rotation=45, fontsize=7)
        ax.set_title(cls)
        ax.set_xlabel("slow:fast")
        ax.set_ylabel("speed (mph)")
    fig.suptitle("aggregated speed vs cohort ratio")
    fig.tight_layout()
    return [_save(fig, run_dir, "aggregation_sweep")]


def plot_persistent_jam(run_dir: Path) -> list[Path]:
    rows = _read_csv(run_dir / "segment_state.csv")
    t = np.array([float(r["time_s"]) for r in rows])
    agg = np.array([float(r["aggregate_mph"]) if r["aggregate_mph"] else np.nan for r in rows])
    hot = np.array([int(r["hotspot_flag"]) for r in rows])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 4.5), sharex=True,
                                   gridspec_kw={"height_ratios": [3, 1]})
    ax1.plot(t / 60.0, agg, lw=0.8)
    ax1.set_ylabel("aggregate (mph)")
    ax2.fill_between(t / 60.0, 0, hot, step="mid", alpha=0.6)
    ax2.set_ylabel("hotspot")
    ax2.set_xlabel("time (min)")
    ax2.set_yticks([0, 1])
    fig.tight_layout()
    return [_save(fig, run_dir, "persistent_jam")]


def plot_downsample_converge(run_dir: Path) -> list[Path]:
    out = []
    rows = _read_csv(run_dir / "unique_curve.csv")
    q = [int(r["query_index"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(q, [float(r["mean_unique"]) for r in rows], label="measured (mean)")
    ax.plot(q, [float(r["expected_unique"]) for r in rows], "--", label="closed form")
    ax.set_xlabel("queries")
    ax.set_ylabel("unique users")
    ax.legend()
    fig.tight_layout()
    out.append(_save(fig, run_dir, "unique_convergence"))

    hist = _read_csv(run_dir / "appearance_histogram.csv")
    with open(run_dir / "config.json") as fh:
        config = json.load(fh)
    m = int(config["params"].get("population", 100))
    n = int(config["params"].get("gof_queries", 100))
    trials = int(config["trials"])
    values = np.array([int(r["appearances"]) for r in hist])
    users = np.array([int(r["users"]) for r in hist], dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(values, users / trials, width=0.9, alpha=0.6, label="measured")
    ax.plot(values, stats.binom.pmf(values, n, min(20, m) / m) * m, "k-", lw=1.2,
            label="binomial model")
    ax.set_xlim(0, min(n, values[users > 0].max() + 10 if (users > 0).any() else n))
    ax.set_xlabel("appearances per user")
    ax.set_ylabel("users")
    ax.legend()
    fig.tight_layout()
    out.append(_save(fig, run_dir, "appearance_distribution"))
    return out


def plot_track(run_dir: Path) -> list[Path]:
    delays = []
    for metrics_path in sorted(run_dir.glob("trials/*/metrics.json")):
        with open(metrics_path) as fh:
            delays.append(json.load(fh)["avg_delay_s"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(delays, bins=20)
    ax.set_xlabel("avg capture delay per trial (s)")
    ax.set_ylabel("trials")
    fig.tight_layout()
    out = [_save(fig, run_dir, "capture_delay")]
    captures = run_dir / "trials" / "000" / "captures.csv"
    if captures.exists():
        rows = _read_csv(captures)
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.scatter([float(r["lon"]) for r in rows], [float(r["lat"]) for r in rows],
                   s=12, label="captured")
        ax.set_xlabel("lon")
        ax.set_ylabel("lat")
        ax.legend()
        fig.tight_layout()
        out.append(_save(fig, run_dir, "captured_points"))
    return out


def _plot_sweep_lines(run_dir: Path, x_key: str, group_key: str | None) -> list[Path]:
    rows = _read_csv(run_dir / "sweep.csv")
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    groups = sorted({r[group_key] for r in rows}, key=float) if group_key else [None]
    for g in groups:
        sub = [r for r in rows if group_key is None or r[group_key] == g]
        sub.sort(key=lambda r: float(r[x_key]))
        xs = [float(r[x_key]) for r in sub]
        ys = [float(r["mean_auc"]) for r in sub]
        es = [float(r["std_auc"]) for r in sub]
        label = None if g is None else f"{group_key}={g}"
        ax.errorbar(xs, ys, yerr=es, marker="o", capsize=2, label=label)
    ax.set_xlabel(x_key)
    ax.set_ylabel("AUC")
    ax.set_ylim(0, 1.05)
    if group_key:
        ax.legend(fontsize=8)
    if len({float(r[x_key]) for r in rows}) > 2:
        ax.set_xscale("log")
    fig.tight_layout()
    return [_save(fig, run_dir, "auc_sweep")]


def plot_auc_vs_attack_edges(run_dir: Path) -> list[Path]:
    return _plot_sweep_lines(run_dir, "attack_edges", "gateways")


def plot_fp_fn_sweep(run_dir: Path) -> list[Path]:
    rows = _read_csv(run_dir / "sweep.csv")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5), sharex=True)
    groups = sorted({r["gateways"] for r in rows}, key=float)
    for g in groups:
        sub = sorted((r for r in rows if r["gateways"] == g), key=lambda r: float(r["attack_edges"]))
        xs = [float(r["attack_edges"]) for r in sub]
        ax1.plot(xs, [float(r["mean_fp"]) for r in sub], "o-", label=f"gateways={g}")
        ax2.plot(xs, [float(r["mean_fn"]) for r in sub], "o-", label=f"gateways={g}")
    for ax, name in ((ax1, "false positive rate"), (ax2, "false negative rate")):
        ax.set_xlabel("attack edges")
        ax.set_ylabel(name)
        ax.set_xscale("log")
        ax.legend(fontsize=8)
    fig.tight_layout()
    return [_save(fig, run_dir, "fp_fn")]


def plot_seeds_sweep(run_dir: Path) -> list[Path]:
    return _plot_sweep_lines(run_dir, "trusted_count", None)


def plot_small_groups(run_dir: Path) -> list[Path]:
    return _plot_sweep_lines(run_dir, "sybil_count", None)


def plot_cost_curve(run_dir: Path) -> list[Path]:
    rows = _read_csv(run_dir / "required_edges.csv")
    xs = np.array([float(r["sybil_count"]) for r in rows if r["required_attack_edges"]])
    ys = np.array([float(r["required_attack_edges"]) for r in rows if r["required_attack_edges"]])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, "o", label="required attack edges")
    if len(xs) >= 2:
        slope, intercept = np.polyfit(xs, ys, 1)
        grid = np.linspace(xs.min(), xs.max(), 20)
        ax.plot(grid, slope * grid + intercept, "--", label="linear fit")
    ax.set_xlabel("sybil count")
    ax.set_ylabel("attack edges")
    ax.legend()
    fig.tight_layout()
    return [_save(fig, run_dir, "cost_curve")]


RENDERERS = {
    "aggregation-sweep": plot_aggregation_sweep,
    "persistent-jam": plot_persistent_jam,
    "downsample-converge": plot_downsample_converge,
    "track-city": plot_track,
    "track-highway": plot_track,
    "auc-vs-attack-edges": plot_auc_vs_attack_edges,
    "fp-fn-sweep": plot_fp_fn_sweep,
    "seeds-sweep": plot_seeds_sweep,
    "small-groups": plot_small_groups,
    "cost-curve": plot_cost_curve,
}


def render_run(run_dir: Path) -> list[Path]:
    with open(run_dir / "config.json") as fh:
        scenario = json.load(fh)["scenario"]
    renderer = RENDERERS.get(scenario)
    if renderer is None:
        return []
    return renderer(run_dir)
