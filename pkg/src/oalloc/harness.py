"""Experiment orchestration: run algorithm suites, compute metrics, persist results.

Normalization follows the two conventions used for reporting: `avg` is the
ratio of summed utilities to summed optima (the table-style AVG), while
`avg_of_ratios` averages per-instance ratios; `cr_emp` is the worst
per-instance ratio.  Everything is deterministic given the config, and the
summary artifacts are written canonically so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Instance, Trace
from .la_oacp import RobustnessConfig, run_la_oacp
from .oacp import OacpConfig, run_oacp
from .oacp_plus import run_oacp_plus
from .oracles import run_baseline, solve_opt_concave
from .predictor import load_model, policy_predictor
from .workload import Dataset, perturb_ood, read_dataset

SUMMARY_SCHEMA_VERSION = 1

KNOWN_ALGORITHMS = ("opt", "equal", "greedy", "dmd", "oacp", "oacp-plus", "la-oacp", "ml")


class ConfigurationError(ValueError):
    """The experiment configuration references something that does not exist."""


@dataclass
class AlgorithmSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in KNOWN_ALGORITHMS:
            raise ConfigurationError(
                f"unknown algorithm {self.name!r}, expected one of {KNOWN_ALGORITHMS}")

    @property
    def key(self) -> str:
        """Stable row label; disambiguates repeated algorithms by their params."""
        if self.name == "la-oacp":
            lam = self.params.get("lambda", 0.0)
            r = self.params.get("R", 0.0)
            return f"la-oacp(lambda={lam},R={r})"
        return self.name


@dataclass
class ExperimentConfig:
    dataset: str
    algorithms: list[AlgorithmSpec]
    out: str
    lambda_grid: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    r_grid: list[float] = field(default_factory=lambda: [0.0])
    seed: int = 0
    ood_fraction: float = 0.3
    ood_sigma: float = 0.2
    include_ood: bool = True
    opt_segments: int = 96
    t_star: int = 24
    save_traces: bool = False

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file {path} does not exist")
        raw = json.loads(path.read_text())
        algos = [AlgorithmSpec(a["name"], dict(a.get("params", {})))
                 for a in raw.pop("algorithms")]
        raw["lambda_grid"] = raw.pop("lambda_grid", [0.1, 0.3, 0.5, 0.7, 0.9])
        raw["r_grid"] = raw.pop("R_grid", raw.pop("r_grid", [0.0]))
        return cls(algorithms=algos, **raw)


@dataclass
class MetricsReport:
    """Aggregate metrics per algorithm plus the per-instance table."""

    metrics: dict
    rows: list[dict]
    ml_violation: dict

    def avg(self, algo_key: str, variant: str = "in") -> float:
        return self.metrics[variant][algo_key]["avg"]

    def cr(self, algo_key: str, variant: str = "in") -> float:
        return self.metrics[variant][algo_key]["cr_emp"]


def _expert_options(params: dict, t_star: int) -> dict:
    opts = {"t_star": params.get("t_star", t_star)}
    if "reference" in params:
        opts["reference"] = params["reference"]
    return opts


def _run_one(spec: AlgorithmSpec, instance: Instance, opt_value: float,
             cfg: ExperimentConfig, models: dict):
    """Returns (total utility, expert total when a shadow expert ran, trace)."""
    name = spec.name
    p = spec.params
    if name == "opt":
        return opt_value, None, None
    if name in ("equal", "greedy", "dmd"):
        trace = run_baseline(name, instance, reference=p.get("reference", "l2"),
                             eta=p.get("eta", "auto"))
        return trace.total_utility, None, trace
    if name == "oacp":
        trace, _ = run_oacp(instance, OacpConfig(reference=p.get("reference", "l2"),
                                                 eta=p.get("eta", "auto")))
        return trace.total_utility, None, trace
    if name == "oacp-plus":
        trace, _ = run_oacp_plus(instance, t_star=p.get("t_star", cfg.t_star),
                                 beta=p.get("beta", "auto"),
                                 reference=p.get("reference", "l2"))
        return trace.total_utility, None, trace
    # la-oacp and pure ml both need a model and an expert shadow run
    model_path = p.get("model")
    if not model_path:
        raise ConfigurationError(f"algorithm {name!r} requires a 'model' parameter")
    if model_path not in models:
        try:
            models[model_path] = load_model(model_path)
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot load model {model_path}: {exc}") from exc
    model, meta = models[model_path]
    predictor = policy_predictor(model, meta["c_ref"])
    expert = p.get("expert", "oacp-plus")
    if name == "ml":
        lam, r = 0.0, 0.0
    else:
        lam, r = float(p.get("lambda", 0.3)), float(p.get("R", 0.0))
    rob = RobustnessConfig(lam=lam, slack=r, lipschitz=instance.lipschitz)
    result = run_la_oacp(instance, predictor, rob, expert=expert,
                         expert_options=_expert_options(p, cfg.t_star))
    return result.total_utility, result.expert_total_utility, result.trace


def _aggregate(rows: list[dict], algo_keys: list[str], variant: str) -> dict:
    out = {}
    for key in algo_keys:
        sub = [r for r in rows if r["algo"] == key and r["variant"] == variant]
        if not sub:
            continue
        values = np.array([r["F_T"] for r in sub])
        opts = np.array([r["OPT"] for r in sub])
        ratios = values / opts
        entry = {
            "n": len(sub),
            "avg": float(values.sum() / opts.sum()),
            "avg_of_ratios": float(ratios.mean()),
            "cr_emp": float(ratios.min()),
        }
        flags = [r["violated"] for r in sub if r["violated"] is not None]
        if flags:
            entry["violation_rate"] = float(np.mean(flags))
        out[key] = entry
    return out


def evaluate_suite(config: ExperimentConfig, dataset: Dataset | None = None) -> MetricsReport:
    """Run every configured algorithm over the test split (and its OOD variant)."""
    if dataset is None:
        dataset = read_dataset(config.dataset)
    variants = [("in", dataset)]
    if config.include_ood:
        shifted = perturb_ood(dataset, config.ood_fraction, config.ood_sigma, config.seed)
        variants.append(("ood", shifted))

    models: dict = {}
    rows: list[dict] = []
    ml_records: dict[str, list[tuple[float, float]]] = {}
    algo_keys = [spec.key for spec in config.algorithms]

    for variant, data in variants:
        test_idx = data.indices("test")
        opt_values = {}
        for i in test_idx:
            opt_values[i] = solve_opt_concave(data.instances[i],
                                              segments=config.opt_segments).value
        for spec in config.algorithms:
            for i in test_idx:
                inst = data.instances[i]
                value, expert_total, trace = _run_one(spec, inst, opt_values[i],
                                                      config, models)
                if config.save_traces and trace is not None:
                    tdir = Path(config.out) / "traces"
                    tdir.mkdir(parents=True, exist_ok=True)
                    write_trace_csv(trace, tdir / f"{spec.key}_{variant}_{i:05d}.csv")
                violated = None
                if expert_total is not None and spec.name == "la-oacp":
                    lam = float(spec.params.get("lambda", 0.3))
                    r = float(spec.params.get("R", 0.0))
                    violated = bool(value < lam * expert_total - r - 1e-9)
                if spec.name == "ml":
                    ml_records.setdefault(variant, []).append((value, expert_total))
                    violated = False
                rows.append({
                    "instance_id": i,
                    "algo": spec.key,
                    "variant": variant,
                    "F_T": value,
                    "OPT": opt_values[i],
                    "ratio": value / opt_values[i],
                    "violated": violated,
                    "ood_flag": bool(data.ood[i]),
                })

    metrics = {variant: _aggregate(rows, algo_keys, variant) for variant, _ in variants}
    ml_violation = {}
    for variant, recs in ml_records.items():
        sweep = {}
        for lam in config.lambda_grid:
            for r in config.r_grid:
                frac = float(np.mean([f < lam * fe - r for f, fe in recs]))
                sweep[f"lambda={lam:g},R={r:g}"] = frac
        ml_violation[variant] = sweep

    report = MetricsReport(metrics=metrics, rows=rows, ml_violation=ml_violation)
    persist_report(report, config)
    return report


def _config_payload(config: ExperimentConfig) -> dict:
    return {
        "dataset": str(config.dataset),
        "algorithms": [{"name": s.name, "params": s.params} for s in config.algorithms],
        "lambda_grid": config.lambda_grid,
        "R_grid": config.r_grid,
        "seed": config.seed,
        "ood": {"fraction": config.ood_fraction, "sigma": config.ood_sigma,
                "enabled": config.include_ood},
        "t_star": config.t_star,
    }


def persist_report(report: MetricsReport, config: ExperimentConfig) -> None:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "config": _config_payload(config),
        "metrics": report.metrics,
        "ml_violation": report.ml_violation,
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    with (out / "per_instance.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance_id", "algo", "F_T", "OPT", "ratio",
                         "violated", "ood_flag", "variant"])
        for r in sorted(report.rows, key=lambda r: (r["variant"], r["algo"], r["instance_id"])):
            writer.writerow([r["instance_id"], r["algo"],
                             repr(r["F_T"]), repr(r["OPT"]), repr(r["ratio"]),
                             "" if r["violated"] is None else int(r["violated"]),
                             int(r["ood_flag"]), r["variant"]])


def write_trace_csv(trace: Trace, path) -> None:
    """Per-round dump of one run (M=1 columns are scalars, M>1 joins with '|')."""
    def fmt(vec) -> str:
        return "|".join(repr(float(v)) for v in np.atleast_1d(vec))

    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t", "x", "f", "B", "E", "violated"]
        diag = trace.preselect is not None
        if diag:
            header += ["x_hat", "mu"]
        writer.writerow(header)
        for t in range(trace.x.shape[0]):
            row = [t + 1, fmt(trace.x[t]), repr(float(trace.utility[t])),
                   fmt(trace.budget[t]), fmt(trace.replenishment[t]),
                   int(trace.violated[t])]
            if diag:
                row += [fmt(trace.preselect[t]), fmt(trace.mu[t])]
            writer.writerow(row)
