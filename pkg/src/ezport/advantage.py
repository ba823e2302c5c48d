"""Advantage estimators: EZ Bellman residual, AAE, and plain GAE."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class StepRecord:
    value: float
    next_value: float
    ez_target: float | None = None
    reward: float | None = None
    done: bool = False


@dataclass(frozen=True)
class AAEConfig:
    beta: float = 0.99
    lam: float = 0.95
    gamma_risk: float = 5.0
    psi: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if abs(self.gamma_risk - 1.0) < 1e-6:
            raise ValueError("gamma_risk = 1 is not supported")


def td_error_ez(rec: StepRecord) -> float:
    if rec.ez_target is None:
        raise ValueError("step record carries no EZ target")
    return rec.ez_target - rec.value


def td_errors_ez(values, targets) -> np.ndarray:
    return np.asarray(targets, dtype=float) - np.asarray(values, dtype=float)


def omega_weight(next_value, cfg: AAEConfig):
    """State-dependent AAE weight

        w = beta * (V^(1-g))^((1 - 1/psi)/(1-g) - 1) * V^(-g) * (1-g)

    evaluated factor by factor in log space. Negative whenever gamma > 1.
    """
    v = np.asarray(next_value, dtype=float)
    if np.any(~np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("next_value must be finite and positive")
    g = cfg.gamma_risk
    a = 1.0 - g
    expo = (1.0 - 1.0 / cfg.psi) / a - 1.0
    log_v = np.log(v)
    log_mag = np.log(cfg.beta) + expo * (a * log_v) + (-g) * log_v + np.log(abs(a))
    out = np.sign(a) * np.exp(log_mag)
    return out if out.ndim else float(out)


def aae_from_arrays(deltas, omegas, beta: float, lam: float, dones=None) -> np.ndarray:
    """Backward recursion A_t = d_t + beta*lam*w_t*A_{t+1}, A_T = 0.

    A done flag at step t means s_{t+1} starts a new episode, so nothing is
    bootstrapped across it.
    """
    deltas = np.asarray(deltas, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    if deltas.size == 0:
        raise ValueError("empty trajectory")
    if omegas.shape != deltas.shape:
        raise ValueError("deltas and omegas must align")
    dones = np.zeros(deltas.shape, bool) if dones is None else np.asarray(dones, bool)
    adv = np.empty_like(deltas)
    nxt = 0.0
    for t in range(deltas.size - 1, -1, -1):
        carry = 0.0 if dones[t] else beta * lam * omegas[t] * nxt
        adv[t] = nxt = deltas[t] + carry
    return adv


def aae(records: Sequence[StepRecord], cfg: AAEConfig) -> np.ndarray:
    if len(records) == 0:
        raise ValueError("empty trajectory")
    deltas = np.array([td_error_ez(r) for r in records])
    omegas = omega_weight(np.array([r.next_value for r in records]), cfg)
    dones = np.array([r.done for r in records])
    return aae_from_arrays(deltas, np.atleast_1d(omegas), cfg.beta, cfg.lam, dones)


def gae(rewards, values, next_values, discount: float, lam: float, dones=None) -> np.ndarray:
    """GAE over one buffer. `dones` cut the trace; next_values are used as given,
    so callers pass 0 for absorbing states and V(s') for time-limit truncation."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    next_values = np.asarray(next_values, dtype=float)
    if not (rewards.shape == values.shape == next_values.shape):
        raise ValueError("rewards, values and next_values must have equal length")
    if rewards.size == 0:
        raise ValueError("empty trajectory")
    dones = np.zeros(rewards.shape, bool) if dones is None else np.asarray(dones, bool)
    notdone = 1.0 - dones
    deltas = rewards + discount * next_values - values
    adv = np.empty_like(deltas)
    nxt = 0.0
    for t in range(deltas.size - 1, -1, -1):
        adv[t] = nxt = deltas[t] + discount * lam * notdone[t] * nxt
    return adv


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance; rescaled by max |A| first so huge AAE traces cannot overflow."""
    adv = np.asarray(adv, dtype=float)
    scale = np.max(np.abs(adv)) if adv.size else 0.0
    if not np.isfinite(scale):
        raise FloatingPointError("non-finite advantages")
    if scale == 0.0:
        return np.zeros_like(adv)
    z = adv / scale
    sd = z.std()
    return (z - z.mean()) / (sd + 1e-8)
