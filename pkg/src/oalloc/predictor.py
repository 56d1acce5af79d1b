"""A small allocation policy network and its gradient-free training loop.

The policy maps normalized online state to a fraction of the currently
available budget.  Training perturbs the flat weight vector with antithetic
Gaussian noise and follows the resulting search gradient on the rollout
objective (mean utility of the full learning-augmented run), so no
differentiation through the projection step is ever needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Instance, Linear, UtilitySpec
from .la_oacp import (PredictionContext, Predictor, RobustnessConfig, run_la_oacp)

FEATURE_SCHEMA_VERSION = 1
N_FEATURES = 5
FEATURE_CLIP = 4.0
DEFAULT_HIDDEN = (10, 10)


@dataclass
class PolicyNet:
    """Fully connected net, rectifier hidden layers, logistic output head."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_policy(n_features: int = N_FEATURES, hidden: tuple[int, ...] = DEFAULT_HIDDEN) -> PolicyNet:
    sizes = (n_features,) + hidden + (1,)
    weights = [np.zeros((sizes[i + 1], sizes[i])) for i in range(len(sizes) - 1)]
    biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
    return PolicyNet(weights=weights, biases=biases)


def get_flat_params(model: PolicyNet) -> np.ndarray:
    return np.concatenate([a.ravel() for pair in zip(model.weights, model.biases) for a in pair])


def set_flat_params(model: PolicyNet, theta: np.ndarray) -> None:
    pos = 0
    for i in range(len(model.weights)):
        w = model.weights[i]
        model.weights[i] = theta[pos:pos + w.size].reshape(w.shape)
        pos += w.size
        b = model.biases[i]
        model.biases[i] = theta[pos:pos + b.size].copy()
        pos += b.size
    if pos != theta.size:
        raise ValueError(f"parameter vector has {theta.size} entries, model needs {pos}")


def demand_of(u: UtilitySpec) -> float:
    return float(u.c[0]) if isinstance(u, Linear) else float(u.c)


def featurize(t: int, instance: Instance, budget: np.ndarray, e_t: np.ndarray,
              demand: float, c_ref: float) -> np.ndarray:
    """Normalized online state: progress, budget, arrival, demand, time left."""
    if not 1 <= t <= instance.T:
        raise ValueError(f"round {t} outside horizon 1..{instance.T}")
    feats = np.array([
        t / instance.T,
        float(budget[0]) / float(instance.bmax[0]),
        float(e_t[0]) / float(instance.rho_max[0]),
        demand / c_ref,
        (instance.T - t) / instance.T,
    ])
    return np.clip(feats, 0.0, FEATURE_CLIP)


def net_forward(model: PolicyNet, feats: np.ndarray) -> float:
    """Raw activation of the output unit (before the logistic squash)."""
    h = feats
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = w @ h + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("policy network produced non-finite activations")
    return float(h[0])


def forward(model: PolicyNet, feats: np.ndarray, available: np.ndarray) -> np.ndarray:
    """Allocation suggestion: logistic(net) fraction of the available budget."""
    frac = 1.0 / (1.0 + np.exp(-net_forward(model, feats)))
    return frac * available


def policy_predictor(model: PolicyNet, c_ref: float) -> Predictor:
    def predict(ctx: PredictionContext) -> np.ndarray:
        feats = featurize(ctx.t, ctx.instance, ctx.budget, ctx.replenishment,
                          demand_of(ctx.utility), c_ref)
        return forward(model, feats, ctx.available)
    return predict


def mean_demand(instances: list[Instance]) -> float:
    total = sum(demand_of(u) for inst in instances for u in inst.utilities)
    count = sum(inst.T for inst in instances)
    return total / count


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    population: int = 16
    batch_size: int = 8
    sigma: float = 0.1
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.population < 2 or self.batch_size < 1:
            raise ValueError("epochs, population, and batch size must be positive")
        if self.population % 2 != 0:
            raise ValueError("population must be even (antithetic pairs)")
        if self.sigma <= 0 or self.learning_rate <= 0:
            raise ValueError("sigma and learning rate must be positive")


def rollout_objective(model: PolicyNet, instances: list[Instance], c_ref: float,
                      cfg: RobustnessConfig, expert: str,
                      expert_options: dict | None) -> float:
    """Mean end-to-end utility of the learning-augmented run over a set."""
    pred = policy_predictor(model, c_ref)
    total = 0.0
    for inst in instances:
        total += run_la_oacp(inst, pred, cfg, expert=expert,
                             expert_options=expert_options).total_utility
    return total / len(instances)


def train(instances: list[Instance], cfg: RobustnessConfig, tc: TrainConfig,
          expert: str = "oacp-plus", expert_options: dict | None = None,
          hidden: tuple[int, ...] = DEFAULT_HIDDEN,
          verbose: bool = False) -> tuple[PolicyNet, float, list[dict]]:
    """Evolution-strategies training of the policy on full rollouts.

    Returns (best model, its reference demand scale, per-epoch history).
    The best-seen model is tracked on the full training set, so the
    reported best objective is non-decreasing across epochs.
    """
    if not instances:
        raise ValueError("training requires a non-empty dataset")
    c_ref = mean_demand(instances)
    rng = np.random.default_rng(tc.seed)
    model = init_policy(hidden=hidden)
    theta = get_flat_params(model)
    n = theta.size

    def full_objective(vec: np.ndarray) -> float:
        set_flat_params(model, vec)
        return rollout_objective(model, instances, c_ref, cfg, expert, expert_options)

    best_theta = theta.copy()
    best_obj = full_objective(theta)
    if not np.isfinite(best_obj):
        raise RuntimeError("training aborted: initial objective is not finite")
    history = [{"epoch": 0, "objective": best_obj, "best": best_obj}]

    half = tc.population // 2
    for epoch in range(1, tc.epochs + 1):
        batch_idx = rng.choice(len(instances), size=min(tc.batch_size, len(instances)),
                               replace=False)
        batch = [instances[i] for i in batch_idx]
        eps = rng.standard_normal((half, n))
        fitness = np.zeros(tc.population)
        for k in range(half):
            for sign, slot in ((1.0, 2 * k), (-1.0, 2 * k + 1)):
                set_flat_params(model, theta + sign * tc.sigma * eps[k])
                fitness[slot] = rollout_objective(model, batch, c_ref, cfg,
                                                  expert, expert_options)
        if not np.all(np.isfinite(fitness)):
            raise RuntimeError(f"training aborted: non-finite fitness at epoch {epoch}")
        # standardized antithetic search gradient
        std = fitness.std()
        shaped = (fitness - fitness.mean()) / (std if std > 1e-12 else 1.0)
        grad = ((shaped[0::2] - shaped[1::2])[:, None] * eps).sum(axis=0) / tc.population
        theta = theta + tc.learning_rate * grad

        obj = full_objective(theta)
        if not np.isfinite(obj):
            raise RuntimeError(f"training aborted: non-finite objective at epoch {epoch}")
        if obj > best_obj:
            best_obj = obj
            best_theta = theta.copy()
        history.append({"epoch": epoch, "objective": obj, "best": best_obj})
        if verbose:
            print(f"epoch {epoch:3d}  objective {obj:.4f}  best {best_obj:.4f}")

    set_flat_params(model, best_theta)
    return model, c_ref, history


def save_model(model: PolicyNet, path, c_ref: float, train_seed: int | None = None) -> None:
    payload = {
        "feature_schema": FEATURE_SCHEMA_VERSION,
        "sizes": list(model.sizes),
        "c_ref": c_ref,
        "train_seed": train_seed,
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


class ModelFormatError(ValueError):
    """The model file is unreadable or from an incompatible schema."""


def load_model(path) -> tuple[PolicyNet, dict]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    schema = payload.get("feature_schema")
    if schema != FEATURE_SCHEMA_VERSION:
        raise ModelFormatError(
            f"model file {path} uses feature schema {schema}, "
            f"this build expects {FEATURE_SCHEMA_VERSION}")
    try:
        sizes = tuple(payload["sizes"])
        weights = [np.array(w, dtype=float).reshape(sizes[i + 1], sizes[i])
                   for i, w in enumerate(payload["weights"])]
        biases = [np.array(b, dtype=float) for b in payload["biases"]]
        meta = {"c_ref": float(payload["c_ref"]), "train_seed": payload.get("train_seed")}
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model file {path} is malformed: {exc}") from exc
    model = PolicyNet(weights=weights, biases=biases)
    if model.sizes != sizes:
        raise ModelFormatError(f"model file {path} has inconsistent layer sizes")
    return model, meta
