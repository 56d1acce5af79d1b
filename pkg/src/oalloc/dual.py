"""Bregman reference functions and the mirror-descent dual price update.

The dual vector mu prices resources (utility units per resource unit).  Both
the conservative allocators and the DMD baseline advance it by one mirror
step per round; only the subgradient they feed in differs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REFERENCE_KINDS = ("l2", "entropy")

# Multiplicative updates can underflow to zero, which leaves the entropy
# reference stuck there; iterates are floored instead.
ENTROPY_FLOOR = 1e-12


@dataclass(frozen=True)
class ReferenceFunction:
    """Mirror-descent reference h with its strong-convexity modulus sigma.

    sigma is measured in the l1 norm: h(a) - h(b) >= grad h(b)^T (a - b)
    + sigma/2 * ||a - b||_1^2 on the relevant domain.
    """

    kind: str
    sigma: float

    def __post_init__(self):
        if self.kind not in REFERENCE_KINDS:
            raise ValueError(f"unknown reference function {self.kind!r}, expected one of {REFERENCE_KINDS}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class DualState:
    mu: np.ndarray
    eta: float
    ref: ReferenceFunction

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta <= 0:
            raise ValueError(f"step size must be positive, got {self.eta}")
        if np.any(self.mu < 0):
            raise ValueError("dual prices must be non-negative")
        if self.ref.kind == "entropy" and np.any(self.mu <= 0):
            raise ValueError("entropy reference requires strictly positive dual prices")


def initial_mu(kind: str, m: int) -> np.ndarray:
    """Conventional dual initialization: zeros for l2, ones for entropy."""
    if kind == "entropy":
        return np.ones(m)
    return np.zeros(m)


def bregman(ref: ReferenceFunction, mu, mu0) -> float:
    """Bregman divergence V_h(mu, mu0) = h(mu) - h(mu0) - grad h(mu0)^T (mu - mu0)."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    if mu.shape != mu0.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {mu0.shape}")
    if ref.kind == "l2":
        d = mu - mu0
        return float(0.5 * d @ d)
    if np.any(mu0 <= 0):
        raise ValueError("entropy reference point must be strictly positive")
    if np.any(mu < 0):
        raise ValueError("entropy divergence requires mu >= 0")
    # generalized KL; mu entries may be 0 with the 0*log(0) = 0 convention
    terms = np.where(mu > 0, mu * np.log(np.where(mu > 0, mu, 1.0) / mu0), 0.0)
    return float(np.sum(terms - mu + mu0))


def mirror_step(state: DualState, g) -> DualState:
    """One mirror-descent step: argmin over mu >= 0 of g^T mu + V_h(mu, mu_t) / eta.

    Closed forms: l2 gives the rectified gradient step [mu - eta g]^+,
    entropy gives the multiplicative update mu * exp(-eta g).
    """
    g = np.atleast_1d(np.asarray(g, dtype=float))
    if g.shape != state.mu.shape:
        raise ValueError(f"subgradient shape {g.shape} does not match dual {state.mu.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("subgradient has non-finite entries")
    if state.ref.kind == "l2":
        nxt = np.maximum(state.mu - state.eta * g, 0.0)
    else:
        nxt = np.maximum(state.mu * np.exp(-state.eta * g), ENTROPY_FLOOR)
    return DualState(mu=nxt, eta=state.eta, ref=state.ref)


def reference_for_instance(kind: str, instance) -> ReferenceFunction:
    """Bind a reference function to an instance with a concrete sigma.

    l2 is (1/M)-strongly convex in l1 on all of R^M.  The entropy reference
    is only (1/U)-strongly convex on {||mu||_1 <= U}; U is sized to cover the
    largest dual magnitude the analysis touches, f_bar/(alpha * min_m rho_m),
    plus the initial point.
    """
    if kind == "l2":
        return ReferenceFunction(kind="l2", sigma=1.0 / instance.M)
    if kind == "entropy":
        mu1 = initial_mu("entropy", instance.M)
        radius = instance.f_bar / (instance.alpha * float(np.min(instance.rho)))
        u = radius + float(np.sum(mu1))
        return ReferenceFunction(kind="entropy", sigma=1.0 / u)
    raise ValueError(f"unknown reference function {kind!r}")
