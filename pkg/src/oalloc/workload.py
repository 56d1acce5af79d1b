"""Synthetic workload generation, dataset splits, OOD perturbation, and CSV IO.

The generator produces single-resource episodes with a diurnal renewable
replenishment profile (solar-like arc, zero at night, occasional cloud
dropouts) and a diurnal demand profile peaking in the evening.  It replaces
proprietary trace data; everything is a pure function of (params, seed).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import Instance, Linear, LogServe, UtilitySpec

DATASET_SCHEMA_VERSION = 1

UTILITY_KINDS = ("logserve", "linear", "mixed")


@dataclass(frozen=True)
class GeneratorParams:
    T: int = 120
    b1: float = 12.0
    bmax: float = 30.0
    xbar: float = 0.6
    demand_base: float = 1.0
    demand_amplitude: float = 0.9
    demand_noise: float = 0.2
    demand_floor: float = 0.01
    demand_trend: float = 1.0
    solar_amplitude: float = 0.9
    day_length: int = 24
    solar_noise: float = 0.08
    cloud_dropout: float = 0.3
    solar_trend: float = 1.0
    utility_kind: str = "logserve"
    seed: int = 0

    def __post_init__(self):
        if self.utility_kind not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.utility_kind!r}")
        for name in ("b1", "bmax", "xbar", "demand_base", "demand_floor", "day_length"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.T < 1:
            raise ValueError("T must be >= 1")


@dataclass
class Dataset:
    instances: list[Instance]
    labels: list[str]
    ood: list[bool]
    params: GeneratorParams | None = None

    def indices(self, label: str) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == label]

    def subset(self, label: str) -> list[Instance]:
        return [self.instances[i] for i in self.indices(label)]


def _make_utilities(kind: str, demand: np.ndarray, rng: np.random.Generator) -> list[UtilitySpec]:
    if kind == "mixed":
        kind = "linear" if rng.random() < 0.5 else "logserve"
    if kind == "linear":
        return [Linear(np.array([c])) for c in demand]
    return [LogServe(float(c)) for c in demand]


def generate_instance(params: GeneratorParams, seed) -> Instance:
    rng = np.random.default_rng(seed)
    T = params.T
    day = params.day_length
    half_day = day / 2.0
    # episodes start at the midnight demand peak; demand bottoms out at the
    # solar peak, so serving arrivals on the spot saturates cheap rounds
    clock = np.arange(T) % day

    # solar arc across the daylight half of each day, hard zero at night;
    # overcast days keep a thin diffuse share so every day replenishes a bit
    sun = clock - day / 4.0
    daylight = (0.0 <= sun) & (sun < half_day)
    arc = params.solar_amplitude * np.sin(np.pi * sun / half_day) * daylight
    n_days = int(np.ceil(T / day))
    day_idx = np.arange(T) // day
    overcast = np.where(rng.random(n_days) < params.cloud_dropout, 0.15, 1.0)
    arc = arc * overcast[day_idx] * params.solar_trend ** day_idx
    lit = arc > 0
    noise = rng.normal(0.0, params.solar_noise, T)
    e_hat = np.maximum(0.0, arc + noise * lit)

    diurnal = np.cos(2.0 * np.pi * clock / day)
    demand = params.demand_base * (1.0 + params.demand_amplitude * diurnal
                                   + rng.normal(0.0, params.demand_noise, T))
    demand = demand * params.demand_trend ** day_idx
    demand = np.maximum(demand, params.demand_floor)

    utilities = _make_utilities(params.utility_kind, demand, rng)
    return Instance(T=T, M=1,
                    b1=np.array([params.b1]),
                    bmax=np.array([params.bmax]),
                    xbar=np.array([params.xbar]),
                    utilities=utilities,
                    replenishment=e_hat[:, None])


def generate_dataset(params: GeneratorParams, n: int,
                     ratios: tuple[float, float, float] = (0.75, 0.0, 0.25)) -> Dataset:
    """Generate n seeded instances and split them train/validation/test.

    The default ratios give the conventional 3:1 train:test split.
    """
    if n < 1:
        raise ValueError("need at least one instance")
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    children = np.random.SeedSequence(params.seed).spawn(n)
    instances = [generate_instance(params, child) for child in children]
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    labels = (["train"] * n_train + ["validation"] * n_val
              + ["test"] * (n - n_train - n_val))
    return Dataset(instances=instances, labels=labels, ood=[False] * n, params=params)


def perturb_ood(dataset: Dataset, fraction: float, sigma: float, seed: int) -> Dataset:
    """Shift part of the test split out of distribution.

    Exactly round(fraction * |test|) test instances get multiplicative
    log-normal noise on demand and replenishment, then are re-validated.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    test_idx = dataset.indices("test")
    k = int(round(fraction * len(test_idx)))
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(test_idx, size=k, replace=False).tolist()) if k else set()
    instances: list[Instance] = []
    ood: list[bool] = []
    floor = dataset.params.demand_floor if dataset.params else 0.01
    for i, inst in enumerate(dataset.instances):
        if i not in chosen:
            instances.append(inst)
            ood.append(dataset.ood[i])
            continue
        e_factor = np.exp(rng.normal(0.0, sigma, inst.replenishment.shape))
        c_factor = np.exp(rng.normal(0.0, sigma, inst.T))
        utilities: list[UtilitySpec] = []
        for t, u in enumerate(inst.utilities):
            if isinstance(u, Linear):
                utilities.append(Linear(np.maximum(u.c * c_factor[t], floor)))
            else:
                utilities.append(LogServe(max(float(u.c * c_factor[t]), floor)))
        instances.append(Instance(T=inst.T, M=inst.M, b1=inst.b1.copy(),
                                  bmax=inst.bmax.copy(), xbar=inst.xbar.copy(),
                                  utilities=utilities,
                                  replenishment=inst.replenishment * e_factor))
        ood.append(True)
    return Dataset(instances=instances, labels=list(dataset.labels), ood=ood,
                   params=dataset.params)


def min_replenishment(instance: Instance, t_star: int) -> np.ndarray:
    """Minimum potential replenishment over aligned, non-overlapping unit frames.

    Uses the uncapped arrivals (what would land with an infinite cap); a
    trailing partial frame is excluded.
    """
    if not 1 <= t_star <= instance.T:
        raise ValueError(f"unit frame length must satisfy 1 <= T* <= T, got {t_star}")
    n_frames = instance.T // t_star
    window = instance.replenishment[:n_frames * t_star]
    sums = window.reshape(n_frames, t_star, instance.M).sum(axis=1)
    return sums.min(axis=0)


# ---------------------------------------------------------------------------
# CSV / directory persistence (M=1 instances)

INSTANCE_COLUMNS = ("t", "c", "E_hat")


def _demand_of(u: UtilitySpec) -> float:
    return float(u.c[0]) if isinstance(u, Linear) else float(u.c)


def _utility_kind_of(instance: Instance) -> str:
    kinds = {"linear" if isinstance(u, Linear) else "logserve" for u in instance.utilities}
    if len(kinds) != 1:
        raise ValueError("CSV schema stores one utility kind per instance")
    return kinds.pop()


def write_instance_csv(instance: Instance, path) -> None:
    if instance.M != 1:
        raise ValueError("the instance CSV schema is defined for M=1")
    path = Path(path)
    kind = _utility_kind_of(instance)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(INSTANCE_COLUMNS)
        for t in range(instance.T):
            writer.writerow([t + 1, repr(_demand_of(instance.utilities[t])),
                             repr(float(instance.replenishment[t, 0]))])
    meta = {"T": instance.T, "M": 1, "B1": float(instance.b1[0]),
            "Bmax": float(instance.bmax[0]), "xbar": float(instance.xbar[0]),
            "utility_kind": kind}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def read_instance_csv(path) -> Instance:
    path = Path(path)
    meta_path = path.with_suffix(".json")
    if not meta_path.exists():
        raise ValueError(f"missing metadata sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    for key in ("T", "M", "B1", "Bmax", "xbar", "utility_kind"):
        if key not in meta:
            raise ValueError(f"metadata sidecar is missing key {key!r}")
    demand = np.zeros(meta["T"])
    e_hat = np.zeros(meta["T"])
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty instance file")
        missing = [c for c in INSTANCE_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"{path}: missing column {missing[0]!r}")
        cols = {name: header.index(name) for name in INSTANCE_COLUMNS}
        n = 0
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if n >= meta["T"]:
                raise ValueError(f"{path}: more rows than the declared horizon T={meta['T']}")
            try:
                t = int(row[cols["t"]])
                c = float(row[cols["c"]])
                e = float(row[cols["E_hat"]])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}: malformed row {row_no}: {row}") from exc
            if t != n + 1:
                raise ValueError(f"{path}: row {row_no}: expected round {n + 1}, got {t}")
            if e < 0:
                raise ValueError(f"{path}: row {row_no}: negative replenishment {e}")
            if c <= 0:
                raise ValueError(f"{path}: row {row_no}: demand must be positive, got {c}")
            demand[n] = c
            e_hat[n] = e
            n += 1
    if n != meta["T"]:
        raise ValueError(f"{path}: expected {meta['T']} rows, found {n}")
    if meta["utility_kind"] == "linear":
        utilities: list[UtilitySpec] = [Linear(np.array([c])) for c in demand]
    elif meta["utility_kind"] == "logserve":
        utilities = [LogServe(float(c)) for c in demand]
    else:
        raise ValueError(f"unknown utility kind {meta['utility_kind']!r} in {meta_path}")
    return Instance(T=meta["T"], M=1, b1=np.array([meta["B1"]]),
                    bmax=np.array([meta["Bmax"]]), xbar=np.array([meta["xbar"]]),
                    utilities=utilities, replenishment=e_hat[:, None])


def write_dataset(dataset: Dataset, directory) -> None:
    directory = Path(directory)
    inst_dir = directory / "instances"
    inst_dir.mkdir(parents=True, exist_ok=True)
    for i, inst in enumerate(dataset.instances):
        write_instance_csv(inst, inst_dir / f"inst_{i:05d}.csv")
    meta = {"schema_version": DATASET_SCHEMA_VERSION,
            "n": len(dataset.instances),
            "params": asdict(dataset.params) if dataset.params else None}
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    splits = {"labels": dataset.labels, "ood": dataset.ood}
    (directory / "splits.json").write_text(json.dumps(splits, sort_keys=True, indent=2) + "\n")


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{directory} is not a dataset directory (no meta.json)")
    meta = json.loads(meta_path.read_text())
    splits = json.loads((directory / "splits.json").read_text())
    n = meta["n"]
    instances = [read_instance_csv(directory / "instances" / f"inst_{i:05d}.csv")
                 for i in range(n)]
    params = GeneratorParams(**meta["params"]) if meta.get("params") else None
    return Dataset(instances=instances, labels=list(splits["labels"]),
                   ood=list(splits["ood"]), params=params)
