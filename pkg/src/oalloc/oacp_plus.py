"""Doubling-frame budget batching on top of conservative pricing (OACP+).

The horizon is split into frames of doubling length.  Replenishment that
lands in frame i is deliberately not spent there; it feeds the budget
assigned to frame i+1, which the inner conservative-pricing loop then
treats as fixed.  A threshold keeps the assignment from front-loading
budget that later frames would need.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import FEAS_TOL, Instance, Trace, empty_trace, eval_utility, step_budget
from .dual import DualState, ReferenceFunction, initial_mu, mirror_step, reference_for_instance
from .oacp import candidate_dual_radius, preselect


@dataclass(frozen=True)
class FramePlan:
    """Partition of [1, T] into frames of lengths T*, 2T*, 4T*, ...

    Frame i ends at round (2^i - 1) T*; the final frame is truncated at T
    when the horizon is not an exact doubling sum.
    """

    t_star: int
    total_rounds: int
    frames: tuple[tuple[int, int], ...]

    @property
    def K(self) -> int:
        return len(self.frames)

    def length(self, i: int) -> int:
        start, end = self.frames[i - 1]
        return end - start + 1

    def nominal_length(self, i: int) -> int:
        return 2 ** (i - 1) * self.t_star


def build_frame_plan(T: int, t_star: int) -> FramePlan:
    if not 1 <= t_star <= T:
        raise ValueError(f"unit frame length must satisfy 1 <= T* <= T, got T*={t_star}, T={T}")
    frames = []
    start = 1
    i = 1
    while start <= T:
        end = min((2 ** i - 1) * t_star, T)
        frames.append((start, end))
        start = end + 1
        i += 1
    return FramePlan(t_star=t_star, total_rounds=T, frames=tuple(frames))


@dataclass
class FrameBudget:
    """Budget assigned to one frame and its bookkeeping.

    `additive` is the replenishment-derived part Omega_i; `clamped` flags
    the diagnostic case where the raw assignment came out negative and was
    floored at zero.
    """

    index: int
    assigned: np.ndarray
    additive: np.ndarray
    rho_hat: np.ndarray
    remaining: np.ndarray
    clamped: bool = False


def assign_frame_budget(i: int, b_actual: np.ndarray, plan: FramePlan,
                        rho: np.ndarray, rho_max: np.ndarray,
                        beta: np.ndarray) -> FrameBudget:
    """Frame-level budget: fixed share 2^{i-1} T* rho plus additive Omega_i.

    Omega_1 = 0.  Intermediate frames take the accumulated surplus
    B_start - (T - (2^{i-1} - 1) T*) rho, thresholded at Gamma_i =
    2^{i-2} T* rho_max * beta.  The final frame receives everything left.
    """
    K = plan.K
    t_star = plan.t_star
    T = plan.total_rounds
    length = plan.length(i)
    clamped = False
    if i == K:
        fixed = length * rho
        omega = b_actual - fixed
        if np.any(omega < -FEAS_TOL):
            clamped = True
        omega = np.maximum(omega, 0.0)
        assigned = b_actual.copy()
    elif i == 1:
        fixed = t_star * rho
        omega = np.zeros_like(rho)
        assigned = fixed.copy()
    else:
        fixed = 2 ** (i - 1) * t_star * rho
        surplus = b_actual - (T - (2 ** (i - 1) - 1) * t_star) * rho
        gamma = 2 ** (i - 2) * t_star * rho_max * beta
        omega = np.minimum(surplus, gamma)
        if np.any(omega < -FEAS_TOL):
            clamped = True
        omega = np.maximum(omega, 0.0)
        assigned = fixed + omega
    return FrameBudget(index=i, assigned=assigned, additive=omega,
                       rho_hat=assigned / length, remaining=assigned.copy(),
                       clamped=clamped)


def optimal_beta(rho: np.ndarray, rho_max: np.ndarray, T: int, t_star: int) -> np.ndarray:
    """Competitive-ratio-optimal threshold multiplier, per coordinate.

    The case split follows whether the cap B_max,m = T rho_max,m leaves room
    for a full horizon of replenishment above the initial budget.
    """
    rho = np.asarray(rho, dtype=float)
    rho_max = np.asarray(rho_max, dtype=float)
    roomy = T * rho_max >= (T + t_star) * rho
    b_roomy = 4.0 * T / (3.0 * (T + t_star)) - 2.0 * rho / (3.0 * rho_max)
    b_tight = T / (3.0 * t_star) - (T - t_star) / (3.0 * t_star) * rho / rho_max
    return np.maximum(np.where(roomy, b_roomy, b_tight), 0.0)


def delta_rho(e_min: np.ndarray, rho: np.ndarray, rho_max: np.ndarray,
              T: int, t_star: int) -> np.ndarray:
    """Effective per-round budget gain from guaranteed replenishment.

    Zero coordinates of e_min yield exactly zero gain.
    """
    e_min = np.asarray(e_min, dtype=float)
    rho = np.asarray(rho, dtype=float)
    rho_max = np.asarray(rho_max, dtype=float)
    roomy = T * rho_max >= (T + t_star) * rho
    cap_roomy = 2.0 * T * rho_max / (3.0 * (T + t_star)) - rho / 3.0
    cap_tight = T * rho_max / (6.0 * t_star) - (T - t_star) * rho / (6.0 * t_star)
    gain = np.minimum(e_min / (2.0 * t_star), np.where(roomy, cap_roomy, cap_tight))
    return np.where(e_min > 0, gain, 0.0)


def frame_eta(i: int, ref: ReferenceFunction, v_cap: float, rho_bar: float,
              rho_max_bar: float, beta_bar: float, xbar_inf: float,
              t_star: int, frame_len: int | None = None) -> float:
    """Per-frame step size; shrinks with sqrt of the (nominal) frame length.

    Uses the same worst-case Bregman radius convention as the single-frame
    step size; a degenerate radius falls back to 1/sqrt(frame length).
    """
    length = frame_len if frame_len is not None else 2 ** (i - 1) * t_star
    if v_cap <= 0:
        return 1.0 / np.sqrt(length)
    denom = rho_bar + 0.5 * beta_bar * rho_max_bar + xbar_inf
    return float(np.sqrt(2.0 * ref.sigma * v_cap / length) / denom)


def effective_additive_budget(i: int, plan: FramePlan, rho: np.ndarray,
                              rho_max: np.ndarray, beta: np.ndarray,
                              e_min: np.ndarray) -> np.ndarray:
    """Guaranteed lower bound on the additive budget Omega_i of frame i.

    Built from the minimum per-unit-frame replenishment; the realized
    Omega_i of a run must dominate it elementwise for frames 1..K-1.
    """
    T = plan.total_rounds
    t_star = plan.t_star
    if i == 1:
        return np.zeros_like(np.asarray(rho, dtype=float))
    e_min_eff = np.minimum(e_min, t_star * rho_max * beta)
    if i == 2:
        return np.minimum(T * rho_max - T * rho, e_min_eff)
    lhs = (T * rho_max
           - 2 ** (i - 3) * t_star * rho_max * beta
           - (T - (2 ** (i - 2) - 1) * t_star) * rho)
    return np.minimum(lhs, 2 ** (i - 2) * e_min_eff)


@dataclass
class PlusDiagnostics:
    plan: FramePlan
    frame_budgets: list[FrameBudget]
    etas: list[float]
    beta: np.ndarray


class OacpPlusRunner:
    """Frame-aware stepper; exposes the same step interface as OacpRunner."""

    def __init__(self, instance: Instance, t_star: int,
                 beta: Union[np.ndarray, float, str] = "auto",
                 reference: str = "l2", eta: Union[float, str] = "auto"):
        self.instance = instance
        self.plan = build_frame_plan(instance.T, t_star)
        if isinstance(beta, str):
            if beta != "auto":
                raise ValueError(f"beta must be a vector, scalar, or 'auto', got {beta!r}")
            self.beta = optimal_beta(instance.rho, instance.rho_max, instance.T, t_star)
        else:
            self.beta = np.broadcast_to(np.asarray(beta, dtype=float), (instance.M,)).copy()
        self.reference = reference
        self.eta_setting = eta
        self.ref = reference_for_instance(reference, instance)
        self.mu1 = initial_mu(reference, instance.M)
        self.budget = instance.b1.copy()
        self.t = 0
        self.frame_budgets: list[FrameBudget] = []
        self.etas: list[float] = []
        self._frame_idx = 0
        self._frame: FrameBudget | None = None
        self.dual: DualState | None = None

    def _enter_frame(self):
        self._frame_idx += 1
        i = self._frame_idx
        frame = assign_frame_budget(i, self.budget, self.plan,
                                    self.instance.rho, self.instance.rho_max, self.beta)
        if self.eta_setting == "auto":
            v_cap = candidate_dual_radius(self.instance, self.ref, self.mu1)
            eta = frame_eta(i, self.ref, v_cap,
                            float(np.max(self.instance.rho)),
                            float(np.max(self.instance.rho_max)),
                            float(np.max(self.beta)),
                            float(np.max(self.instance.xbar)),
                            self.plan.t_star, frame_len=self.plan.length(i))
        else:
            eta = float(self.eta_setting)
        self.dual = DualState(mu=self.mu1.copy(), eta=eta, ref=self.ref)
        self._frame = frame
        self.frame_budgets.append(frame)
        self.etas.append(eta)

    def step(self, u, e_hat: np.ndarray):
        """Advance one round; returns (x, e, xhat, mu_used, violated)."""
        self.t += 1
        if self._frame is None or self.t > self.plan.frames[self._frame_idx - 1][1]:
            self._enter_frame()
        frame = self._frame
        e = np.minimum(e_hat, self.instance.bmax - self.budget)
        np.maximum(e, 0.0, out=e)
        mu_used = self.dual.mu
        xhat = preselect(u, mu_used, self.instance.xbar)
        # allocation must fit the remaining frame budget AND the real budget
        if np.all(xhat <= frame.remaining + FEAS_TOL) and np.all(xhat <= self.budget + e + FEAS_TOL):
            x = np.minimum(xhat, np.minimum(frame.remaining, self.budget + e))
            np.maximum(x, 0.0, out=x)
            g = frame.rho_hat - xhat
            violated = False
        else:
            x = np.zeros_like(xhat)
            g = np.zeros_like(xhat)
            violated = True
        frame.remaining = frame.remaining - x
        _, self.budget = step_budget(self.budget, e_hat, x, self.instance.bmax)
        self.dual = mirror_step(self.dual, g)
        return x, e, xhat, mu_used, violated

    def diagnostics(self) -> PlusDiagnostics:
        return PlusDiagnostics(plan=self.plan, frame_budgets=list(self.frame_budgets),
                               etas=list(self.etas), beta=self.beta.copy())


def run_oacp_plus(instance: Instance, t_star: int,
                  beta: Union[np.ndarray, float, str] = "auto",
                  reference: str = "l2", eta: Union[float, str] = "auto",
                  record_diagnostics: bool = True) -> tuple[Trace, PlusDiagnostics]:
    """Run the frame-batched allocator over a full instance."""
    runner = OacpPlusRunner(instance, t_star, beta=beta, reference=reference, eta=eta)
    trace = empty_trace(instance.T, instance.M, record_diagnostics)
    for t, (u, e_hat) in enumerate(instance.rounds()):
        trace.budget[t] = runner.budget
        x, e, xhat, mu_used, violated = runner.step(u, e_hat)
        trace.x[t] = x
        trace.replenishment[t] = e
        trace.utility[t] = eval_utility(u, x)
        trace.violated[t] = violated
        if record_diagnostics:
            trace.preselect[t] = xhat
            trace.mu[t] = mu_used
    return trace, runner.diagnostics()
