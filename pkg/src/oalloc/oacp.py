"""Conservative-pricing online allocation (OACP) and its bound instrumentation.

Each round the allocator pre-selects the price-regularized best action,
spends it only if the opportunistically replenished budget covers it in
full, and otherwise sits the round out.  The dual price is updated as if no
replenishment existed (the conservative part), which keeps the allocator
frugal while still letting it spend arrivals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import (FEAS_TOL, Instance, Linear, Trace, UtilitySpec,
                   empty_trace, eval_utility, step_budget)
from .dual import DualState, ReferenceFunction, bregman, initial_mu, mirror_step, reference_for_instance


@dataclass(frozen=True)
class OacpConfig:
    reference: str = "l2"
    eta: Union[float, str] = "auto"
    record_diagnostics: bool = True

    def __post_init__(self):
        if self.eta != "auto":
            if not np.isfinite(self.eta) or self.eta <= 0:
                raise ValueError(f"explicit step size must be positive, got {self.eta}")


@dataclass
class TheoremMu:
    """Post-hoc dual certificate built from the run's violation events.

    mu_star is zero when no pre-selection ever exceeded the available
    budget; otherwise it is (f_bar / (alpha rho_j)) e_j for the violated
    resource j with the smallest divergence from the initial dual.
    """

    mu_star: np.ndarray
    violated_resources: set[int]
    violation_rounds: list[int]


def preselect(u: UtilitySpec, mu: np.ndarray, xbar: np.ndarray) -> np.ndarray:
    """argmax over [0, xbar] of f(x) - mu^T x, resolved in closed form.

    Linear utilities split per coordinate (spend the cap when the reduced
    gain is positive, nothing otherwise, ties resolve to zero).  Log-serve
    has the stationary point c (1/mu - 1) clamped into [0, min(xbar, c)].
    """
    if isinstance(u, Linear):
        return np.where(u.c > mu, xbar, 0.0)
    cap = min(xbar[0], u.c)
    m = mu[0]
    if m <= 0:
        return np.array([cap])
    return np.array([min(cap, max(0.0, u.c * (1.0 / m - 1.0)))])


def candidate_dual_radius(instance: Instance, ref: ReferenceFunction, mu1: np.ndarray) -> float:
    """Worst-case Bregman radius over the certificate candidates.

    The certificate dual is only known after the run, so the automatic step
    size sizes V_h by the largest candidate (f_bar/(alpha rho_m)) e_m.
    """
    f_bar = instance.f_bar
    alpha = instance.alpha
    best = 0.0
    for m in range(instance.M):
        cand = np.zeros(instance.M)
        cand[m] = f_bar / (alpha * instance.rho[m])
        best = max(best, bregman(ref, cand, mu1))
    return best


def optimal_eta(rho_bar: float, xbar_inf: float, sigma: float, v_cap: float, T: int) -> float:
    """Step size (1/(rho_bar + ||xbar||_inf)) sqrt(2 sigma V_cap / T).

    Degenerate radii (V_cap <= 0) fall back to 1/sqrt(T).
    """
    if v_cap <= 0:
        return 1.0 / np.sqrt(T)
    return float(np.sqrt(2.0 * sigma * v_cap / T) / (rho_bar + xbar_inf))


def resolve_eta(instance: Instance, cfg: OacpConfig, ref: ReferenceFunction,
                mu1: np.ndarray) -> float:
    if cfg.eta != "auto":
        return float(cfg.eta)
    v_cap = candidate_dual_radius(instance, ref, mu1)
    rho_bar = float(np.max(instance.rho))
    xbar_inf = float(np.max(instance.xbar))
    return optimal_eta(rho_bar, xbar_inf, ref.sigma, v_cap, instance.T)


def oacp_step(budget: np.ndarray, dual: DualState, u: UtilitySpec, e_hat: np.ndarray,
              rho: np.ndarray, xbar: np.ndarray, bmax: np.ndarray):
    """One conservative-pricing round.

    Returns (x, g, e, budget', dual', violated).  The pre-selection is spent
    only when it fits within B_t + E_t in every coordinate; a violating round
    allocates nothing and freezes the dual (g = 0).
    """
    e = np.minimum(e_hat, bmax - budget)
    np.maximum(e, 0.0, out=e)
    xhat = preselect(u, dual.mu, xbar)
    if np.all(xhat <= budget + e + FEAS_TOL):
        x = np.minimum(xhat, budget + e)
        g = rho - xhat
        violated = False
    else:
        x = np.zeros_like(xhat)
        g = np.zeros_like(xhat)
        violated = True
    _, nxt = step_budget(budget, e_hat, x, bmax)
    return x, g, e, nxt, mirror_step(dual, g), violated, xhat


class OacpRunner:
    """Stateful round-by-round driver, also used as the expert shadow run."""

    def __init__(self, instance: Instance, cfg: OacpConfig | None = None):
        self.instance = instance
        self.cfg = cfg or OacpConfig()
        self.ref = reference_for_instance(self.cfg.reference, instance)
        mu1 = initial_mu(self.cfg.reference, instance.M)
        self.mu1 = mu1
        self.eta = resolve_eta(instance, self.cfg, self.ref, mu1)
        self.dual = DualState(mu=mu1.copy(), eta=self.eta, ref=self.ref)
        self.budget = instance.b1.copy()
        self.t = 0
        self.violation_rounds: list[int] = []
        self.violated_resources: set[int] = set()

    def step(self, u: UtilitySpec, e_hat: np.ndarray):
        """Advance one round; returns (x, e, xhat, mu_used, violated)."""
        self.t += 1
        mu_used = self.dual.mu
        x, g, e, nxt, dual, violated, xhat = oacp_step(
            self.budget, self.dual, u, e_hat,
            self.instance.rho, self.instance.xbar, self.instance.bmax)
        if violated:
            self.violation_rounds.append(self.t)
            over = xhat > self.budget + e + FEAS_TOL
            self.violated_resources.update(int(m) for m in np.nonzero(over)[0])
        self.budget = nxt
        self.dual = dual
        return x, e, xhat, mu_used, violated

    def theorem_mu(self) -> TheoremMu:
        if not self.violated_resources:
            return TheoremMu(mu_star=np.zeros(self.instance.M),
                             violated_resources=set(),
                             violation_rounds=list(self.violation_rounds))
        f_bar = self.instance.f_bar
        alpha = self.instance.alpha
        best_j, best_v = None, np.inf
        for m in sorted(self.violated_resources):
            cand = np.zeros(self.instance.M)
            cand[m] = f_bar / (alpha * self.instance.rho[m])
            v = bregman(self.ref, cand, self.mu1)
            if v < best_v:
                best_j, best_v = m, v
        mu_star = np.zeros(self.instance.M)
        mu_star[best_j] = f_bar / (alpha * self.instance.rho[best_j])
        return TheoremMu(mu_star=mu_star,
                         violated_resources=set(self.violated_resources),
                         violation_rounds=list(self.violation_rounds))


def run_oacp(instance: Instance, cfg: OacpConfig | None = None) -> tuple[Trace, TheoremMu]:
    """Run the conservative-pricing allocator over a full instance."""
    cfg = cfg or OacpConfig()
    runner = OacpRunner(instance, cfg)
    trace = empty_trace(instance.T, instance.M, cfg.record_diagnostics)
    for t, (u, e_hat) in enumerate(instance.rounds()):
        trace.budget[t] = runner.budget
        x, e, xhat, mu_used, violated = runner.step(u, e_hat)
        trace.x[t] = x
        trace.replenishment[t] = e
        trace.utility[t] = eval_utility(u, x)
        trace.violated[t] = violated
        if cfg.record_diagnostics:
            trace.preselect[t] = xhat
            trace.mu[t] = mu_used
    return trace, runner.theorem_mu()


def theorem_bound(instance: Instance, opt_value: float, total_utility: float,
                  theorem_mu: TheoremMu, eta: float, ref: ReferenceFunction,
                  mu1: np.ndarray) -> tuple[float, float]:
    """Per-instance guarantee: returns (lhs, rhs) of

        OPT - alpha F_T  <=  alpha f_bar
                             + alpha (rho_bar + ||xbar||_inf)^2 eta T / (2 sigma)
                             + (alpha / eta) V_h(mu_star, mu_1).
    """
    alpha = instance.alpha
    rho_bar = float(np.max(instance.rho))
    xbar_inf = float(np.max(instance.xbar))
    lhs = opt_value - alpha * total_utility
    rhs = (alpha * instance.f_bar
           + alpha * (rho_bar + xbar_inf) ** 2 * eta * instance.T / (2.0 * ref.sigma)
           + alpha / eta * bregman(ref, theorem_mu.mu_star, mu1))
    return lhs, rhs
