"""Core domain types: utility functions, episodes, and capped budget dynamics.

Resource quantities are plain numpy arrays of shape (M,) and all comparisons
are elementwise.  An :class:`Instance` is one fully specified episode; every
algorithm in this package consumes instances and produces a :class:`Trace`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

import numpy as np

# Budget feasibility tolerance. Decisions within this slack of the available
# budget are clamped rather than rejected, to absorb solver round-off.
FEAS_TOL = 1e-9


class InfeasibleAllocationError(RuntimeError):
    """An allocation exceeded the available budget beyond FEAS_TOL."""


def as_vector(values, m: int | None = None) -> np.ndarray:
    """Coerce scalars/sequences to a validated non-negative (M,) float array."""
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"resource vector must be 1-d, got shape {v.shape}")
    if m is not None and v.shape[0] != m:
        raise ValueError(f"expected {m} resource entries, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("resource vector has non-finite entries")
    if np.any(v < 0):
        raise ValueError("resource vector has negative entries")
    return v


@dataclass(frozen=True)
class Linear:
    """f(x) = <c, x> with non-negative coefficients c."""

    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", as_vector(self.c))


@dataclass(frozen=True)
class LogServe:
    """f(x) = c * log(1 + min(1, x / c)) for a single resource (M = 1).

    Models serving a demand of size c: the utility saturates at c * log(2)
    once the full demand is served, and f(0) = 0.
    """

    c: float

    def __post_init__(self):
        c = float(self.c)
        if not np.isfinite(c) or c <= 0:
            raise ValueError(f"log-serve demand must be a positive real, got {self.c}")
        object.__setattr__(self, "c", c)


UtilitySpec = Union[Linear, LogServe]


def eval_utility(u: UtilitySpec, x) -> float:
    """Evaluate f(x) for an allocation x >= 0."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(u, Linear):
        if x.shape != u.c.shape:
            raise ValueError(f"allocation shape {x.shape} does not match coefficients {u.c.shape}")
        return float(u.c @ x)
    if x.shape != (1,):
        raise ValueError("log-serve utility is defined for M=1 allocations")
    return float(u.c * np.log1p(min(1.0, x[0] / u.c)))


def eval_utility_batch(u: UtilitySpec, xs: np.ndarray) -> np.ndarray:
    """Vectorized f over an array of scalar allocations (M=1 only)."""
    xs = np.asarray(xs, dtype=float)
    if isinstance(u, Linear):
        if u.c.shape != (1,):
            raise ValueError("batched evaluation supports M=1 only")
        return u.c[0] * xs
    return u.c * np.log1p(np.minimum(1.0, xs / u.c))


def utility_supergradient(u: UtilitySpec, x) -> np.ndarray:
    """A supergradient of the (concave) utility at x.

    At the log-serve kink x = c the left limit 1/2 is returned so results
    are deterministic; any value in [0, 1/2] would be a valid choice.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(u, Linear):
        if x.shape != u.c.shape:
            raise ValueError(f"allocation shape {x.shape} does not match coefficients {u.c.shape}")
        return u.c.copy()
    if x.shape != (1,):
        raise ValueError("log-serve utility is defined for M=1 allocations")
    x0 = x[0]
    if x0 < u.c:
        g = 1.0 / (1.0 + x0 / u.c)
    elif x0 == u.c:
        g = 0.5
    else:
        g = 0.0
    return np.array([g])


def utility_sup(u: UtilitySpec, xbar: np.ndarray) -> float:
    """sup of f over the decision box [0, xbar]."""
    if isinstance(u, Linear):
        return float(u.c @ xbar)
    return float(u.c * np.log1p(min(1.0, xbar[0] / u.c)))


def utility_lipschitz(u: UtilitySpec) -> float:
    """Lipschitz constant of f under the l1 pairing used by the robustness layer."""
    if isinstance(u, Linear):
        return float(np.max(u.c)) if u.c.size else 0.0
    # log-serve slope is 1/(1 + x/c) <= 1 everywhere
    return 1.0


def step_budget(remaining: np.ndarray, e_hat: np.ndarray, x: np.ndarray,
                b_max: np.ndarray, tol: float = FEAS_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Apply one round of the capped budget dynamics.

    Replenishment is capped by free storage, then the allocation draws the
    budget down: E_t = min(E_hat_t, B_max - B_t) and B_{t+1} = B_t + E_t - x_t.

    Returns (E_t, B_{t+1}). Raises InfeasibleAllocationError if x exceeds the
    available budget B_t + E_t beyond `tol`.
    """
    e = np.minimum(e_hat, b_max - remaining)
    np.maximum(e, 0.0, out=e)
    available = remaining + e
    if np.any(x > available + tol):
        raise InfeasibleAllocationError(
            f"allocation {x} exceeds available budget {available}")
    nxt = np.clip(available - x, 0.0, b_max)
    return e, nxt


@dataclass
class Instance:
    """One episode: horizon, budgets, caps, and per-round utility/replenishment.

    `replenishment` holds the potential (uncapped) per-round arrivals; the
    actual arrivals depend on the remaining budget and are computed online.
    """

    T: int
    M: int
    b1: np.ndarray
    bmax: np.ndarray
    xbar: np.ndarray
    utilities: list[UtilitySpec]
    replenishment: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"horizon must be >= 1, got {self.T}")
        if self.M < 1:
            raise ValueError(f"resource count must be >= 1, got {self.M}")
        self.b1 = as_vector(self.b1, self.M)
        self.bmax = as_vector(self.bmax, self.M)
        self.xbar = as_vector(self.xbar, self.M)
        self.replenishment = np.asarray(self.replenishment, dtype=float)
        if self.replenishment.shape != (self.T, self.M):
            raise ValueError(
                f"replenishment must have shape ({self.T}, {self.M}), "
                f"got {self.replenishment.shape}")
        if not np.all(np.isfinite(self.replenishment)) or np.any(self.replenishment < 0):
            raise ValueError("replenishment entries must be finite and >= 0")
        if len(self.utilities) != self.T:
            raise ValueError(f"need {self.T} utility specs, got {len(self.utilities)}")
        if np.any(self.b1 <= 0):
            raise ValueError("initial budget must be strictly positive")
        if np.any(self.b1 > self.bmax + FEAS_TOL):
            raise ValueError("initial budget exceeds the budget cap")
        if np.any(self.xbar > self.bmax + FEAS_TOL):
            raise ValueError("per-round allocation cap exceeds the budget cap")
        for u in self.utilities:
            if isinstance(u, LogServe) and self.M != 1:
                raise ValueError("log-serve utilities are defined for M=1 instances only")

    @property
    def rho(self) -> np.ndarray:
        return self.b1 / self.T

    @property
    def rho_max(self) -> np.ndarray:
        return self.bmax / self.T

    @property
    def alpha(self) -> float:
        """max_m xbar_m / rho_m, the budget-stringency constant."""
        return float(np.max(self.xbar / self.rho))

    @property
    def f_bar(self) -> float:
        """Per-round utility bound: max over rounds of sup f_t over [0, xbar]."""
        return max(utility_sup(u, self.xbar) for u in self.utilities)

    @property
    def lipschitz(self) -> float:
        return max(utility_lipschitz(u) for u in self.utilities)

    def rounds(self) -> Iterator[tuple[UtilitySpec, np.ndarray]]:
        for t in range(self.T):
            yield self.utilities[t], self.replenishment[t]


@dataclass
class Trace:
    """Full per-round record of one algorithm run on one instance.

    `budget` is the remaining budget at the start of each round,
    `replenishment` the actual (capped) arrivals E_t, and `violated` flags
    rounds where the pre-selected action exceeded the checked budget.
    """

    x: np.ndarray
    utility: np.ndarray
    budget: np.ndarray
    replenishment: np.ndarray
    violated: np.ndarray
    preselect: np.ndarray | None = None
    mu: np.ndarray | None = None

    @property
    def total_utility(self) -> float:
        return float(self.utility.sum())

    @property
    def total_spend(self) -> np.ndarray:
        return self.x.sum(axis=0)


def empty_trace(T: int, M: int, diagnostics: bool = True) -> Trace:
    return Trace(
        x=np.zeros((T, M)),
        utility=np.zeros(T),
        budget=np.zeros((T, M)),
        replenishment=np.zeros((T, M)),
        violated=np.zeros(T, dtype=bool),
        preselect=np.zeros((T, M)) if diagnostics else None,
        mu=np.zeros((T, M)) if diagnostics else None,
    )


def validate_trace(trace: Trace, instance: Instance, tol: float = 1e-7) -> None:
    """Assert budget safety for a recorded run; raises AssertionError on breach.

    Checks 0 <= B_t <= Bmax, x_t <= min(xbar, B_t + E_t), the capped
    replenishment rule, and the budget recursion itself.
    """
    b = instance.b1.copy()
    for t in range(instance.T):
        assert np.all(trace.budget[t] >= -tol), f"negative budget at round {t + 1}"
        assert np.all(trace.budget[t] <= instance.bmax + tol), f"budget above cap at round {t + 1}"
        assert np.allclose(trace.budget[t], b, atol=tol), f"budget mismatch at round {t + 1}"
        e_expected = np.clip(instance.replenishment[t], 0.0, instance.bmax - b)
        assert np.allclose(trace.replenishment[t], e_expected, atol=tol), \
            f"replenishment not capped correctly at round {t + 1}"
        x = trace.x[t]
        assert np.all(x >= -tol), f"negative allocation at round {t + 1}"
        assert np.all(x <= instance.xbar + tol), f"allocation above xbar at round {t + 1}"
        assert np.all(x <= b + trace.replenishment[t] + tol), \
            f"allocation above available budget at round {t + 1}"
        b = np.clip(b + trace.replenishment[t] - x, 0.0, instance.bmax)
    total = sum(eval_utility(u, trace.x[t]) for t, (u, _) in enumerate(instance.rounds()))
    assert abs(total - trace.total_utility) <= max(tol, 1e-9 * max(1.0, abs(total))), \
        "recorded utilities disagree with the utility function"
