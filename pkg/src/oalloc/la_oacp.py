"""Learning-augmented allocation with a worst-case utility guarantee.

A predictor proposes an allocation each round; the proposal is projected
into the set of decisions that keep the run's cumulative utility within a
(lambda, R) envelope of a shadow-run competitive expert.  A reservation
charge sized by the expert's surplus remaining budget makes the envelope
inductively maintainable, and min(expert action, available budget) is always
inside it, so the projection is total.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (Instance, LogServe, Trace, UtilitySpec, empty_trace,
                   eval_utility, eval_utility_batch, step_budget)
from .oacp import OacpConfig, OacpRunner
from .oacp_plus import OacpPlusRunner

# Decisions are accepted when the utility-envelope margin is above this
# (slightly negative) threshold; pure float error on exact-boundary cases
# must not force the fallback.
MARGIN_ACCEPT = -1e-11

PROJECTION_GRID = 512
BISECT_TOL = 1e-9
MAX_SWEEPS = 100


@dataclass(frozen=True)
class RobustnessConfig:
    """Worst-case envelope F_T >= lam * F_T(expert) - slack."""

    lam: float
    slack: float
    lipschitz: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.slack < 0:
            raise ValueError(f"slack must be >= 0, got {self.slack}")
        if self.lipschitz <= 0:
            raise ValueError(f"Lipschitz constant must be positive, got {self.lipschitz}")


@dataclass
class RobustLedger:
    """Coupled bookkeeping: own and expert budgets plus cumulative utilities."""

    own_budget: np.ndarray
    expert_budget: np.ndarray
    own_total: float = 0.0
    expert_total: float = 0.0


def reservation_utility(ledger: RobustLedger, x: np.ndarray, cfg: RobustnessConfig,
                        e_own: np.ndarray, e_expert: np.ndarray,
                        x_expert: np.ndarray) -> float:
    """Charge covering the expert's possible future advantage.

    lam * L * sum_m [expert post-round remaining - own post-round remaining]^+.
    """
    own_after = ledger.own_budget + e_own - x
    expert_after = ledger.expert_budget + e_expert - x_expert
    return cfg.lam * cfg.lipschitz * float(np.sum(np.maximum(expert_after - own_after, 0.0)))


def feasibility_margin(ledger: RobustLedger, x: np.ndarray, u: UtilitySpec,
                       cfg: RobustnessConfig, e_own: np.ndarray,
                       e_expert: np.ndarray, x_expert: np.ndarray,
                       f_expert_round: float) -> float:
    """Envelope slack of a candidate decision; feasible iff >= 0.

    Equals F_{t-1} + f_t(x) - lam * F_t(expert) - reservation(x) + slack.
    """
    delta = reservation_utility(ledger, x, cfg, e_own, e_expert, x_expert)
    return (ledger.own_total + eval_utility(u, x)
            - cfg.lam * (ledger.expert_total + f_expert_round)
            - delta + cfg.slack)


def fallback_action(x_expert: np.ndarray, available: np.ndarray) -> np.ndarray:
    """min(expert action, available budget): always envelope-feasible."""
    return np.minimum(x_expert, available)


def _scalar_margin(ledger: RobustLedger, u: UtilitySpec, cfg: RobustnessConfig,
                   e_own: np.ndarray, e_expert: np.ndarray, x_expert: np.ndarray,
                   f_expert_round: float):
    """Fast M=1 margin closure plus its vectorized counterpart."""
    base = ledger.own_total - cfg.lam * (ledger.expert_total + f_expert_round) + cfg.slack
    q = float(ledger.own_budget[0] + e_own[0]
              - (ledger.expert_budget[0] + e_expert[0] - x_expert[0]))
    lam_l = cfg.lam * cfg.lipschitz
    if isinstance(u, LogServe):
        c = u.c

        def margin(x: float) -> float:
            f = c * np.log1p(min(1.0, x / c))
            return base + f - lam_l * max(x - q, 0.0)
    else:
        c0 = float(u.c[0])

        def margin(x: float) -> float:
            return base + c0 * x - lam_l * max(x - q, 0.0)

    def margin_batch(xs: np.ndarray) -> np.ndarray:
        return base + eval_utility_batch(u, xs) - lam_l * np.maximum(xs - q, 0.0)

    return margin, margin_batch


def _bisect_boundary(margin, feasible: float, infeasible: float) -> float:
    """Shrink [feasible, infeasible] to the envelope boundary, keeping the feasible side."""
    lo, hi = feasible, infeasible
    while abs(hi - lo) > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if margin(mid) >= MARGIN_ACCEPT:
            lo = mid
        else:
            hi = mid
    return lo


def _project_scalar(target: float, hi_box: float, margin, margin_batch,
                    fallback: float) -> float:
    """Nearest envelope-feasible point to `target` in [0, hi_box] (M=1).

    The margin is scanned on a fixed grid to bracket feasible segments (it
    is not assumed unimodal), then the boundary of the segment nearest the
    target is refined by bisection.
    """
    if margin(target) >= MARGIN_ACCEPT:
        return target
    if hi_box <= 0:
        return fallback
    grid = np.linspace(0.0, hi_box, PROJECTION_GRID)
    feasible = margin_batch(grid) >= MARGIN_ACCEPT
    idx = np.nonzero(feasible)[0]
    if idx.size == 0:
        return fallback
    best = idx[np.argmin(np.abs(grid[idx] - target))]
    point = grid[best]
    # refine toward the target across the adjacent infeasible grid cell
    if point < target and best + 1 < grid.size and not feasible[best + 1]:
        point = _bisect_boundary(margin, point, min(grid[best + 1], target))
    elif point > target and best - 1 >= 0 and not feasible[best - 1]:
        point = _bisect_boundary(margin, point, max(grid[best - 1], target))
    return point


def constrained_projection(x_tilde: np.ndarray, ledger: RobustLedger, u: UtilitySpec,
                           cfg: RobustnessConfig, e_own: np.ndarray,
                           e_expert: np.ndarray, x_expert: np.ndarray,
                           xbar: np.ndarray) -> np.ndarray:
    """Nearest feasible decision to the prediction, in Euclidean distance.

    Feasible means inside [0, min(xbar, B+E)] and satisfying the utility
    envelope.  Returns the fallback action if the numerical search finds no
    feasible point, so the operation is total.
    """
    available = ledger.own_budget + e_own
    hi = np.minimum(xbar, available)
    target = np.clip(x_tilde, 0.0, hi)
    f_expert_round = eval_utility(u, x_expert)
    fallback = fallback_action(x_expert, available)
    if x_tilde.shape[0] == 1:
        margin, margin_batch = _scalar_margin(ledger, u, cfg, e_own, e_expert,
                                              x_expert, f_expert_round)
        x = _project_scalar(float(target[0]), float(hi[0]), margin, margin_batch,
                            float(fallback[0]))
        return np.array([x])
    return _project_coordinate_descent(target, hi, ledger, u, cfg, e_own,
                                       e_expert, x_expert, f_expert_round, fallback)


def _project_coordinate_descent(target, hi, ledger, u, cfg, e_own, e_expert,
                                x_expert, f_expert_round, fallback) -> np.ndarray:
    def margin_at(z: np.ndarray) -> float:
        return feasibility_margin(ledger, z, u, cfg, e_own, e_expert, x_expert,
                                  f_expert_round)

    if margin_at(target) >= MARGIN_ACCEPT:
        return target
    z = fallback.copy()
    if margin_at(z) < MARGIN_ACCEPT:
        return fallback
    for _ in range(MAX_SWEEPS):
        moved = 0.0
        for m in range(z.shape[0]):
            grid = np.linspace(0.0, hi[m], PROJECTION_GRID)
            trial = np.repeat(z[None, :], grid.size, axis=0)
            trial[:, m] = grid
            margins = np.array([margin_at(row) for row in trial])
            ok = np.nonzero(margins >= MARGIN_ACCEPT)[0]
            if ok.size == 0:
                continue
            best = ok[np.argmin(np.abs(grid[ok] - target[m]))]
            moved = max(moved, abs(grid[best] - z[m]))
            z[m] = grid[best]
        if moved <= BISECT_TOL:
            break
    return z if margin_at(z) >= MARGIN_ACCEPT else fallback


@dataclass
class PredictionContext:
    """Online information handed to a predictor at one round."""

    t: int
    instance: Instance
    utility: UtilitySpec
    budget: np.ndarray
    replenishment: np.ndarray
    available: np.ndarray


Predictor = Callable[[PredictionContext], np.ndarray]


def constant_predictor(value) -> Predictor:
    def predict(ctx: PredictionContext) -> np.ndarray:
        return np.broadcast_to(np.asarray(value, dtype=float), ctx.available.shape).copy()
    return predict


def zero_predictor() -> Predictor:
    return constant_predictor(0.0)


def max_predictor() -> Predictor:
    def predict(ctx: PredictionContext) -> np.ndarray:
        return ctx.instance.xbar.copy()
    return predict


def random_predictor(seed: int) -> Predictor:
    rng = np.random.default_rng(seed)

    def predict(ctx: PredictionContext) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=ctx.available.shape) * ctx.available
    return predict


def decisions_predictor(decisions: np.ndarray) -> Predictor:
    decisions = np.asarray(decisions, dtype=float)

    def predict(ctx: PredictionContext) -> np.ndarray:
        return decisions[ctx.t - 1].copy()
    return predict


def make_expert(instance: Instance, expert: str, options: dict | None = None):
    options = dict(options or {})
    if expert == "oacp":
        cfg = OacpConfig(reference=options.pop("reference", "l2"),
                         eta=options.pop("eta", "auto"))
        if options:
            raise ValueError(f"unknown oacp expert options: {sorted(options)}")
        return OacpRunner(instance, cfg)
    if expert == "oacp-plus":
        return OacpPlusRunner(instance,
                              t_star=options.pop("t_star", min(24, instance.T)),
                              beta=options.pop("beta", "auto"),
                              reference=options.pop("reference", "l2"),
                              eta=options.pop("eta", "auto"))
    raise ValueError(f"unknown expert {expert!r}, expected 'oacp' or 'oacp-plus'")


@dataclass
class LaResult:
    trace: Trace
    expert_trace: Trace
    margins: np.ndarray
    fallback_margins: np.ndarray
    reservations: np.ndarray

    @property
    def total_utility(self) -> float:
        return self.trace.total_utility

    @property
    def expert_total_utility(self) -> float:
        return self.expert_trace.total_utility


def run_la_oacp(instance: Instance, predictor: Predictor, cfg: RobustnessConfig,
                expert: str = "oacp-plus", expert_options: dict | None = None,
                record_diagnostics: bool = False) -> LaResult:
    """Run the learning-augmented allocator with an independent expert shadow run."""
    expert_runner = make_expert(instance, expert, expert_options)
    ledger = RobustLedger(own_budget=instance.b1.copy(),
                          expert_budget=instance.b1.copy())
    trace = empty_trace(instance.T, instance.M, record_diagnostics)
    expert_trace = empty_trace(instance.T, instance.M, diagnostics=False)
    margins = np.zeros(instance.T)
    fallback_margins = np.zeros(instance.T)
    reservations = np.zeros(instance.T)

    for t, (u, e_hat) in enumerate(instance.rounds()):
        trace.budget[t] = ledger.own_budget
        expert_trace.budget[t] = ledger.expert_budget
        e_own = np.clip(e_hat, 0.0, instance.bmax - ledger.own_budget)
        x_expert, e_expert, _, _, _ = expert_runner.step(u, e_hat)
        f_expert_round = eval_utility(u, x_expert)
        available = np.minimum(instance.xbar, ledger.own_budget + e_own)
        ctx = PredictionContext(t=t + 1, instance=instance, utility=u,
                                budget=ledger.own_budget.copy(),
                                replenishment=e_own.copy(), available=available)
        x_tilde = np.clip(np.asarray(predictor(ctx), dtype=float), 0.0, available)
        x = constrained_projection(x_tilde, ledger, u, cfg, e_own, e_expert,
                                   x_expert, instance.xbar)
        margins[t] = feasibility_margin(ledger, x, u, cfg, e_own, e_expert,
                                        x_expert, f_expert_round)
        fb = fallback_action(x_expert, ledger.own_budget + e_own)
        fallback_margins[t] = feasibility_margin(ledger, fb, u, cfg, e_own,
                                                 e_expert, x_expert, f_expert_round)
        reservations[t] = reservation_utility(ledger, x, cfg, e_own, e_expert, x_expert)

        trace.x[t] = x
        trace.replenishment[t] = e_own
        trace.utility[t] = eval_utility(u, x)
        if record_diagnostics:
            trace.preselect[t] = x_tilde
        expert_trace.x[t] = x_expert
        expert_trace.replenishment[t] = e_expert
        expert_trace.utility[t] = f_expert_round

        _, ledger.own_budget = step_budget(ledger.own_budget, e_hat, x, instance.bmax)
        ledger.expert_budget = expert_runner.budget.copy()
        ledger.own_total += trace.utility[t]
        ledger.expert_total += f_expert_round

    return LaResult(trace=trace, expert_trace=expert_trace, margins=margins,
                    fallback_margins=fallback_margins, reservations=reservations)
