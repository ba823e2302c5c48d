"""Recursive (Epstein-Zin) utility: aggregator, certainty equivalents, value targets.

All powers with exponent (1 - gamma) or rho are evaluated in log space so that
gamma = 5 with small critic values does not overflow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

EPS_RHO = 1e-6
EPS_GAMMA = 1e-6


@dataclass(frozen=True)
class EZParams:
    beta: float = 0.99
    gamma: float = 5.0
    psi: float = 1.0
    kappa: float = 0.1
    K: int = 10

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.gamma <= 0.0 or abs(self.gamma - 1.0) <= EPS_GAMMA:
            raise ValueError(f"gamma must be positive and != 1, got {self.gamma}")
        if self.psi <= 0.0:
            raise ValueError(f"psi must be positive, got {self.psi}")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")

    @property
    def rho(self) -> float:
        return 1.0 - 1.0 / self.psi


def _check_gamma(gamma: float) -> None:
    if abs(gamma - 1.0) <= EPS_GAMMA:
        raise ValueError("gamma = 1 (log certainty equivalent) is not supported")


def _positive_log(x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x <= 0.0):
        raise ValueError(f"{what} must be finite and strictly positive")
    return np.log(x)


def ces_aggregate(c_term, ce_term, p: EZParams):
    """CES time aggregator ((1-b) c^rho + b ce^rho)^(1/rho).

    Falls back to the Cobb-Douglas limit c^(1-b) ce^b when |rho| < EPS_RHO.
    Broadcasts over array inputs.
    """
    log_c = _positive_log(c_term, "c_term")
    log_ce = _positive_log(ce_term, "ce_term")
    rho = p.rho
    if abs(rho) < EPS_RHO:
        out = np.exp((1.0 - p.beta) * log_c + p.beta * log_ce)
    else:
        log_mix = np.logaddexp(np.log1p(-p.beta) + rho * log_c, np.log(p.beta) + rho * log_ce)
        out = np.exp(log_mix / rho)
    return out if np.ndim(out) else float(out)


def ce_exact(values, probs, gamma: float) -> float:
    """Certainty equivalent (sum_i p_i v_i^(1-g))^(1/(1-g)) of a discrete distribution."""
    _check_gamma(gamma)
    log_v = _positive_log(values, "values")
    probs = np.asarray(probs, dtype=float)
    if probs.shape != log_v.shape:
        raise ValueError("values and probs must have the same shape")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be a probability distribution")
    a = 1.0 - gamma
    keep = probs > 0
    return float(np.exp(logsumexp(a * log_v[keep], b=probs[keep]) / a))


def ce_sample(next_values, gamma: float) -> float:
    """K-sample power-mean estimate of the certainty equivalent, uniform weights."""
    _check_gamma(gamma)
    log_v = _positive_log(next_values, "next_values").ravel()
    if log_v.size == 0:
        raise ValueError("need at least one sample")
    a = 1.0 - gamma
    return float(np.exp((logsumexp(a * log_v) - np.log(log_v.size)) / a))


def ez_target(w: float, next_values, p: EZParams, kappa: float | None = None) -> float:
    """One-step recursive value target from log wealth and K sampled critic values.

    `kappa` overrides p.kappa when consumption share is supplied per step.
    """
    k = p.kappa if kappa is None else kappa
    if not 0.0 < k < 1.0:
        raise ValueError(f"kappa must lie in (0, 1), got {k}")
    current = k * np.exp(w)
    return float(ces_aggregate(current, ce_sample(next_values, p.gamma), p))


def zero_consumption_value_step(next_values, probs, p: EZParams) -> float:
    """Value with zero current consumption, via the linear recursion Y = b~ E[Y'].

    Y = V^a with a = 1 - gamma and b~ = beta^(a / rho).
    """
    rho = p.rho
    a = 1.0 - p.gamma
    if abs(rho) < EPS_RHO or abs(a) < EPS_GAMMA:
        raise ValueError("zero-consumption reduction needs gamma != 1 and psi != 1")
    log_v = _positive_log(next_values, "next_values")
    probs = np.asarray(probs, dtype=float)
    log_beta_tilde = (a / rho) * np.log(p.beta)
    # log Y = log b~ + log E[V'^a]
    log_y = log_beta_tilde + logsumexp(a * log_v, b=probs)
    return float(np.exp(log_y / a))


@dataclass
class TabularMDP:
    transition: np.ndarray  # (n_states, n_actions, n_states)
    consumption: np.ndarray  # (n_states,)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.consumption = np.asarray(self.consumption, dtype=float)
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError("transition must have shape (S, A, S)")
        if self.consumption.shape != (self.transition.shape[0],):
            raise ValueError("consumption must have one entry per state")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("transition rows must be probability distributions")
        if np.any(self.consumption <= 0):
            raise ValueError("consumption must be positive")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @classmethod
    def random(cls, rng: np.random.Generator, n_states: int, n_actions: int,
               c_low: float = 0.5, c_high: float = 1.5) -> "TabularMDP":
        P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        P /= P.sum(axis=2, keepdims=True)
        c = rng.uniform(c_low, c_high, size=n_states)
        return cls(P, c)


def bellman_operator(V: np.ndarray, mdp: TabularMDP, p: EZParams) -> np.ndarray:
    """(TV)(s) = max_a CES(c(s), CE_{s'|s,a}[V(s')])."""
    a = 1.0 - p.gamma
    log_v = np.log(V)
    # log CE for every (s, a) pair; zero-probability successors drop out of the sum
    with np.errstate(divide="ignore"):
        log_p = np.log(mdp.transition)
    log_ce = logsumexp(log_p + a * log_v[None, None, :], axis=2) / a
    best = log_ce.max(axis=1)  # aggregator is increasing in the CE term
    return np.asarray(ces_aggregate(mdp.consumption, np.exp(best), p))


def ce_distance(V: np.ndarray, W: np.ndarray, gamma: float) -> float:
    """sup_s |V^(1-g) - W^(1-g)|."""
    a = 1.0 - gamma
    return float(np.max(np.abs(np.power(V, a) - np.power(W, a))))


def tabular_value_iteration(mdp: TabularMDP, p: EZParams, tol: float = 1e-10,
                            max_iter: int = 100_000, V0=None,
                            history: list | None = None) -> tuple[np.ndarray, int]:
    """Iterate the recursive Bellman operator to its fixed point.

    Convergence is measured in the certainty-equivalent metric. When `history`
    is a list, the successive-iterate distances are appended to it.
    """
    _check_gamma(p.gamma)
    V = np.asarray(mdp.consumption if V0 is None else V0, dtype=float).copy()
    for it in range(1, max_iter + 1):
        V_new = bellman_operator(V, mdp, p)
        d = ce_distance(V_new, V, p.gamma)
        if history is not None:
            history.append(d)
        V = V_new
        if d < tol:
            return V, it
    raise RuntimeError(f"value iteration did not converge in {max_iter} sweeps")


def two_period_euler_residual(alpha0: float, r_samples, rf: float, gamma: float) -> float:
    """Sample mean of (a R + (1-a) Rf)^(-gamma) (R - Rf), all returns gross."""
    R = np.asarray(r_samples, dtype=float)
    port = alpha0 * R + (1.0 - alpha0) * rf
    if np.any(port <= 0):
        raise ValueError("gross portfolio return must be positive")
    return float(np.mean(np.exp(-gamma * np.log(port)) * (R - rf)))


def two_period_optimal_share(r_samples, rf: float, gamma: float, tol: float = 1e-12) -> float:
    """Root of the two-period Euler residual on [0, 1] by bisection (corner if no sign change)."""
    lo, hi = 0.0, 1.0
    f_lo = two_period_euler_residual(lo, r_samples, rf, gamma)
    f_hi = two_period_euler_residual(hi, r_samples, rf, gamma)
    # the residual is decreasing in the risky share
    if f_lo <= 0:
        return 0.0
    if f_hi >= 0:
        return 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if two_period_euler_residual(mid, r_samples, rf, gamma) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
