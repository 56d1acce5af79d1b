"""Render evaluation results: figures plus a delimited summary table.

Reads the `summary.json` / `per_instance.csv` pair produced by the
evaluation step and writes PNG figures next to a flat CSV table, so the
numbers stay the machine contract and the figures are for eyeballs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _load_summary(results_dir: Path) -> dict:
    path = results_dir / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"{results_dir} has no summary.json; run an evaluation first")
    return json.loads(path.read_text())


def _bar_figure(metrics: dict, field: str, title: str, path: Path) -> None:
    variants = sorted(metrics.keys())
    algos = sorted({a for v in variants for a in metrics[v]})
    width = 0.8 / max(len(variants), 1)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(algos)), 3.6))
    xs = np.arange(len(algos))
    for i, variant in enumerate(variants):
        vals = [metrics[variant].get(a, {}).get(field, np.nan) for a in algos]
        ax.bar(xs + i * width, vals, width=width, label=variant)
    ax.set_xticks(xs + width * (len(variants) - 1) / 2)
    ax.set_xticklabels(algos, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(field)
    ax.set_title(title)
    ax.set_ylim(0.0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _violation_figure(ml_violation: dict, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for variant in sorted(ml_violation):
        series: dict[float, list[tuple[float, float]]] = {}
        for key, rate in ml_violation[variant].items():
            parts = dict(kv.split("=") for kv in key.split(","))
            series.setdefault(float(parts["R"]), []).append((float(parts["lambda"]), rate))
        for r, pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=f"{variant}, R={r:g}")
    ax.set_xlabel("lambda")
    ax.set_ylabel("violation rate")
    ax.set_title("Pure-ML worst-case constraint violations")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _ratio_figure(rows: list[dict], path: Path) -> None:
    algos = sorted({r["algo"] for r in rows})
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(algos)), 3.6))
    data = [[r["ratio"] for r in rows if r["algo"] == a and r["variant"] == "in"]
            for a in algos]
    data = [d if d else [np.nan] for d in data]
    ax.boxplot(data, tick_labels=algos)
    ax.set_ylabel("per-instance F_T / OPT")
    ax.set_title("Ratio distribution (in-distribution test split)")
    ax.tick_params(axis="x", rotation=30, labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(results_dir, out_dir=None) -> list[Path]:
    """Write report figures and the summary table; returns created paths."""
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir else results_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = _load_summary(results_dir)
    created = []

    table = out_dir / "summary_table.csv"
    with table.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "algo", "n", "avg", "avg_of_ratios", "cr_emp",
                         "violation_rate"])
        for variant in sorted(summary["metrics"]):
            for algo in sorted(summary["metrics"][variant]):
                m = summary["metrics"][variant][algo]
                writer.writerow([variant, algo, m["n"], repr(m["avg"]),
                                 repr(m["avg_of_ratios"]), repr(m["cr_emp"]),
                                 repr(m["violation_rate"]) if "violation_rate" in m else ""])
    created.append(table)

    fig_avg = out_dir / "avg_utility.png"
    _bar_figure(summary["metrics"], "avg", "Normalized average utility", fig_avg)
    created.append(fig_avg)
    fig_cr = out_dir / "competitive_ratio.png"
    _bar_figure(summary["metrics"], "cr_emp", "Empirical competitive ratio", fig_cr)
    created.append(fig_cr)

    if summary.get("ml_violation"):
        fig_v = out_dir / "ml_violation_rate.png"
        _violation_figure(summary["ml_violation"], fig_v)
        created.append(fig_v)

    per_instance = results_dir / "per_instance.csv"
    if per_instance.exists():
        rows = []
        with per_instance.open(newline="") as fh:
            for r in csv.DictReader(fh):
                rows.append({"algo": r["algo"], "variant": r["variant"],
                             "ratio": float(r["ratio"])})
        fig_r = out_dir / "ratio_distribution.png"
        _ratio_figure(rows, fig_r)
        created.append(fig_r)
    return created
