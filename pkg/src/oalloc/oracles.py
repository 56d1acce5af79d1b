"""Offline oracles (exact concave solver and a brute-force DP) plus baselines.

The concave oracle reformulates the capped budget dynamics as linear
inequalities.  Relaxing the storage recursion B_{t+1} = min(B_t + E_hat_t,
B_max) - x_t to "<=" is exact here: any relaxed-feasible allocation is
feasible under the true dynamics (budgets only ever understate the truth),
so the optimal values coincide.  Linear utilities then solve as a plain LP;
log-serve utilities are bounded above by tangent lines, which keeps the LP
optimum an upper bound on OPT while the extracted decisions, re-simulated
under the exact dynamics, give a feasible value a hair below it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .core import (Instance, Linear, LogServe, Trace, empty_trace, eval_utility,
                   eval_utility_batch, step_budget)
from .dual import initial_mu, mirror_step, reference_for_instance, DualState
from .oacp import OacpConfig, preselect, resolve_eta

DP_MAX_ROUNDS = 12
DP_MAX_GRID = 2001

BASELINE_KINDS = ("equal", "greedy", "dmd")


@dataclass
class OptResult:
    """Offline-optimal value and decisions with solver diagnostics.

    `value` is always the exact utility of the (feasible) `decisions`;
    `bracket` is a (lower, upper) estimate of where the true optimum lies.
    """

    value: float
    decisions: np.ndarray
    iterations: int
    residual: float
    converged: bool
    bracket: tuple[float, float]


def _resimulate(instance: Instance, decisions: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Replay decisions under the exact dynamics, clamping round-off.

    Returns (value, clamped decisions, max clamp applied).
    """
    b = instance.b1.copy()
    x_out = np.zeros_like(decisions)
    total = 0.0
    worst = 0.0
    for t, (u, e_hat) in enumerate(instance.rounds()):
        e = np.clip(e_hat, 0.0, instance.bmax - b)
        x = np.clip(decisions[t], 0.0, np.minimum(instance.xbar, b + e))
        worst = max(worst, float(np.max(decisions[t] - x)))
        x_out[t] = x
        total += eval_utility(u, x)
        _, b = step_budget(b, e_hat, x, instance.bmax)
    return total, x_out, worst


def _solve_single_resource_lp(T: int, b1: float, bmax: float, upper: np.ndarray,
                              e_hat: np.ndarray, objective: str,
                              lin_coef: np.ndarray | None,
                              tangents: list[tuple[np.ndarray, np.ndarray]] | None):
    """LP core for one resource.  Variables: x_1..x_T, b_2..b_T[, z_1..z_T]."""
    n_b = T - 1
    use_z = objective == "tangent"
    n_var = T + n_b + (T if use_z else 0)
    z0 = T + n_b
    rows, cols, data, rhs = [], [], [], []

    def add_row(entries, bound):
        r = len(rhs)
        for c, v in entries:
            rows.append(r)
            cols.append(c)
            data.append(v)
        rhs.append(bound)

    # availability: x_t <= b_t + E_hat_t (b_1 is a constant)
    for t in range(1, T):
        add_row([(t, 1.0), (T + t - 1, -1.0)], e_hat[t])
    # storage recursion, both branches of the min
    for t in range(T - 1):
        b_next = T + t
        if t == 0:
            add_row([(0, 1.0), (b_next, 1.0)], b1 + e_hat[0])
        else:
            add_row([(t, 1.0), (T + t - 1, -1.0), (b_next, 1.0)], e_hat[t])
        add_row([(t, 1.0), (b_next, 1.0)], bmax)

    c_obj = np.zeros(n_var)
    bounds = []
    x_upper = upper.copy()
    x_upper[0] = min(x_upper[0], b1 + e_hat[0])
    bounds.extend((0.0, ub) for ub in x_upper)
    bounds.extend((0.0, bmax) for _ in range(n_b))
    if use_z:
        for t, (slopes, intercepts) in enumerate(tangents):
            for s, b in zip(slopes, intercepts):
                add_row([(z0 + t, 1.0), (t, -s)], b)
            bounds.append((0.0, float(intercepts[-1] + slopes[-1] * upper[t])
                           if slopes.size else 0.0))
        c_obj[z0:z0 + T] = -1.0
    else:
        c_obj[:T] = -lin_coef

    a_ub = sp.csr_matrix((data, (rows, cols)), shape=(len(rhs), n_var))
    res = linprog(c_obj, A_ub=a_ub, b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.x is None:
        raise RuntimeError(f"offline LP failed: {res.message}")
    return res


def solve_opt_concave(instance: Instance, tol: float = 1e-6,
                      segments: int | None = None) -> OptResult:
    """Offline optimum for concave (linear / log-serve) utilities.

    `segments` controls the tangent count per round for log-serve rounds
    (default 96); the bracket width shrinks quadratically with it.
    """
    k = segments or 96
    kinds = {type(u) for u in instance.utilities}
    decisions = np.zeros((instance.T, instance.M))
    upper_total = 0.0
    iterations = 0
    converged = True
    if kinds == {Linear}:
        for m in range(instance.M):
            coef = np.array([u.c[m] for u in instance.utilities])
            res = _solve_single_resource_lp(
                instance.T, float(instance.b1[m]), float(instance.bmax[m]),
                np.full(instance.T, float(instance.xbar[m])),
                instance.replenishment[:, m], "linear", coef, None)
            decisions[:, m] = res.x[:instance.T]
            upper_total += -res.fun
            iterations += int(getattr(res, "nit", 0))
            converged = converged and res.status == 0
    else:
        if instance.M != 1:
            raise ValueError("log-serve oracles support M=1 only")
        upper = np.array([min(float(instance.xbar[0]), u.c) if isinstance(u, LogServe)
                          else float(instance.xbar[0]) for u in instance.utilities])
        tangents = []
        for t, u in enumerate(instance.utilities):
            if isinstance(u, Linear):
                # a linear round is its own single tangent
                tangents.append((np.array([u.c[0]]), np.array([0.0])))
                continue
            if upper[t] <= 0:
                tangents.append((np.array([0.0]), np.array([0.0])))
                continue
            p = np.linspace(0.0, upper[t], k)
            slopes = 1.0 / (1.0 + p / u.c)
            intercepts = eval_utility_batch(u, p) - slopes * p
            tangents.append((slopes, intercepts))
        res = _solve_single_resource_lp(
            instance.T, float(instance.b1[0]), float(instance.bmax[0]), upper,
            instance.replenishment[:, 0], "tangent", None, tangents)
        decisions[:, 0] = res.x[:instance.T]
        upper_total = -res.fun
        iterations = int(getattr(res, "nit", 0))
        converged = res.status == 0
    value, clamped, residual = _resimulate(instance, decisions)
    return OptResult(value=value, decisions=clamped, iterations=iterations,
                     residual=residual, converged=converged,
                     bracket=(value, max(value, upper_total)))


def _dp_tables(instance: Instance, grid: int, snap_up: bool):
    """Backward DP over a discretized budget; returns (values, policies)."""
    bmax = float(instance.bmax[0])
    xbar = float(instance.xbar[0])
    delta = bmax / (grid - 1)
    levels = np.arange(grid) * delta
    n_act = min(int(np.floor(xbar / delta + 1e-9)) + 1, grid)
    actions = np.arange(n_act) * delta
    value = np.zeros(grid)
    policies = []
    act_idx = np.arange(n_act)
    for t in reversed(range(instance.T)):
        u = instance.utilities[t]
        f_vals = eval_utility_batch(u, actions)
        avail = np.minimum(levels + instance.replenishment[t, 0], bmax)
        if snap_up:
            a_idx = np.minimum(np.ceil(avail / delta - 1e-9).astype(int), grid - 1)
        else:
            a_idx = np.floor(avail / delta + 1e-9).astype(int)
        nxt = a_idx[:, None] - act_idx[None, :]
        feasible = nxt >= 0
        cand = np.where(feasible, f_vals[None, :] + value[np.maximum(nxt, 0)], -np.inf)
        policy = np.argmax(cand, axis=1)
        value = cand[np.arange(grid), policy]
        policies.append(policy)
    policies.reverse()
    return value, policies, actions, delta


def solve_opt_dp(instance: Instance, grid: int = 1001) -> OptResult:
    """Exhaustive dynamic program over a budget grid (M=1, short horizons).

    The reported value replays the greedy-extracted policy under the exact
    dynamics, so it is always feasible; snapping budgets down makes it a
    lower bound of the true optimum.  The bracket's upper end comes from an
    optimistic (snap-up) pass padded by one action-resolution step per round.
    """
    if instance.M != 1:
        raise ValueError("the DP oracle supports M=1 instances only")
    if instance.T > DP_MAX_ROUNDS:
        raise ValueError(f"DP oracle is limited to T <= {DP_MAX_ROUNDS}, got {instance.T}")
    if not 2 <= grid <= DP_MAX_GRID:
        raise ValueError(f"grid must be in [2, {DP_MAX_GRID}], got {grid}")
    _, policies, actions, delta = _dp_tables(instance, grid, snap_up=False)
    up_value, _, _, _ = _dp_tables(instance, grid, snap_up=True)

    decisions = np.zeros((instance.T, 1))
    b = instance.b1.copy()
    total = 0.0
    for t, (u, e_hat) in enumerate(instance.rounds()):
        avail = min(float(b[0] + min(e_hat[0], instance.bmax[0] - b[0])), float(instance.bmax[0]))
        level = int(np.floor(float(b[0]) / delta + 1e-9))
        level = min(max(level, 0), len(policies[t]) - 1)
        x = min(actions[policies[t][level]], avail)
        decisions[t, 0] = x
        total += eval_utility(u, np.array([x]))
        _, b = step_budget(b, e_hat, np.array([x]), instance.bmax)
    upper = float(up_value[int(np.floor(float(instance.b1[0]) / delta + 1e-9))]
                  + instance.lipschitz * delta * instance.T)
    return OptResult(value=total, decisions=decisions, iterations=instance.T * len(actions),
                     residual=0.0, converged=True,
                     bracket=(total, max(total, upper)))


def run_baseline(kind: str, instance: Instance, reference: str = "l2",
                 eta="auto") -> Trace:
    """The comparison heuristics: equal split, greedy, and aggressive DMD.

    Equal spends the initial per-round share plus whatever just arrived
    (clamped into the available budget, which the raw rule can exceed).
    DMD prices with g_t = rho + E_t - xhat_t and clamps infeasible
    pre-selections instead of skipping the round.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}, expected one of {BASELINE_KINDS}")
    trace = empty_trace(instance.T, instance.M, diagnostics=True)
    b = instance.b1.copy()
    if kind == "dmd":
        ref = reference_for_instance(reference, instance)
        mu1 = initial_mu(reference, instance.M)
        eta_val = resolve_eta(instance, OacpConfig(reference=reference, eta=eta), ref, mu1)
        dual = DualState(mu=mu1, eta=eta_val, ref=ref)
    for t, (u, e_hat) in enumerate(instance.rounds()):
        trace.budget[t] = b
        e = np.clip(e_hat, 0.0, instance.bmax - b)
        if kind == "equal":
            x = np.minimum(instance.xbar, np.minimum(instance.rho + e, b + e))
        elif kind == "greedy":
            x = np.minimum(instance.xbar, b + e)
        else:
            xhat = preselect(u, dual.mu, instance.xbar)
            x = np.minimum(xhat, b + e)
            g = instance.rho + e - xhat
            dual = mirror_step(dual, g)
            trace.preselect[t] = xhat
            trace.mu[t] = dual.mu
        x = np.maximum(x, 0.0)
        trace.x[t] = x
        trace.replenishment[t] = e
        trace.utility[t] = eval_utility(u, x)
        _, b = step_budget(b, e_hat, x, instance.bmax)
    return trace
