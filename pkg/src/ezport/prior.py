"""Approximate analytical portfolio rules (myopic demand plus a hedging hook) used to initialize the actor.

The state x_t defaults to the trailing-window mean of log excess returns (one entry
per asset). A VAR(1) is fitted to x_t by OLS and expected log excess returns are
modelled as B x_t.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class VarModel:
    coef: np.ndarray  # (m, m): x_{t+1} = intercept + coef @ x_t + e
    intercept: np.ndarray  # (m,)
    resid_cov: np.ndarray  # (m, m)
    B: np.ndarray | None = None  # (n, m): E_t[r_{t+1}] = B @ x_t
    coef_se: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.coef.shape[0]


def _ols(X: np.ndarray, Y: np.ndarray):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise np.linalg.LinAlgError("rank-deficient regressors")
    beta, *_ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ beta
    return beta, resid


def fit_var(state_series, excess_returns=None) -> VarModel:
    """OLS VAR(1) with intercept, equation by equation.

    When `excess_returns` is given, row t must be the log excess return realized
    after state row t; B is then fitted by regressing it on x_t without intercept.
    """
    X = np.asarray(state_series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T, m = X.shape
    if T <= m + 2:
        raise ValueError(f"need more than m + 2 = {m + 2} observations, got {T}")
    design = np.hstack([np.ones((T - 1, 1)), X[:-1]])
    beta, resid = _ols(design, X[1:])
    dof = max(T - 1 - (m + 1), 1)
    resid_cov = resid.T @ resid / dof
    xtx_inv = np.linalg.inv(design.T @ design)
    se = np.sqrt(np.outer(np.diag(xtx_inv)[1:], np.diag(resid_cov)))  # (m, m) in design layout
    model = VarModel(coef=beta[1:].T, intercept=beta[0], resid_cov=resid_cov, coef_se=se.T)
    if excess_returns is not None:
        r = np.asarray(excess_returns, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        if r.shape[0] != T:
            raise ValueError("excess_returns must have one row per state row")
        Bt, _ = _ols(X[:-1], r[:-1])
        model.B = Bt.T
    return model


def log_excess_returns(returns, rf: float = 0.0) -> np.ndarray:
    R = np.asarray(getattr(returns, "returns", returns), dtype=float)
    return np.log1p(R) - np.log1p(rf)


def trailing_mean_state(log_excess: np.ndarray, window: int) -> np.ndarray:
    """x_t = mean of the `window` log excess returns ending at row t (rows before
    a full window use what is available)."""
    r = np.asarray(log_excess, dtype=float)
    c = np.cumsum(np.vstack([np.zeros((1, r.shape[1])), r]), axis=0)
    T = r.shape[0]
    idx = np.arange(1, T + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)[:, None]


def regularized_inverse(sigma: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    n = sigma.shape[0]
    S = sigma + ridge * np.trace(sigma) / n * np.eye(n) if ridge > 0 else sigma
    if np.linalg.matrix_rank(S) < n:
        raise np.linalg.LinAlgError("singular covariance")
    return np.linalg.inv(S)


def myopic_weights(model: VarModel, x_t, sigma, gamma: float, ridge: float = 1e-8) -> np.ndarray:
    if model.B is None:
        raise ValueError("VAR model has no return loading B")
    return regularized_inverse(sigma, ridge) @ (model.B @ np.asarray(x_t, dtype=float)) / gamma


def hedging_weights(sigma, psi: float, cov_rx=None, a_alpha=None, ridge: float = 1e-8) -> np.ndarray:
    """((1-psi)/psi) Sigma^-1 Cov(r, x) A_alpha; zero when psi = 1 or no A_alpha is supplied."""
    n = np.atleast_2d(sigma).shape[0]
    if psi == 1.0 or cov_rx is None or a_alpha is None:
        return np.zeros(n)
    return (1.0 - psi) / psi * regularized_inverse(sigma, ridge) @ (np.asarray(cov_rx) @ np.asarray(a_alpha))


def prior_weights(model: VarModel, x_t, sigma, p, cov_rx=None, a_alpha=None,
                  ridge: float = 1e-8) -> np.ndarray:
    """Unprojected approximate rule: myopic (1/gamma) Sigma^-1 B x_t plus hedging demand."""
    return (myopic_weights(model, x_t, sigma, p.gamma, ridge)
            + hedging_weights(sigma, p.psi, cov_rx, a_alpha, ridge))


def kappa_rule(a0: float, a1, x_t) -> float:
    return float(np.exp(a0 + np.dot(a1, x_t)))


@dataclass
class FittedPrior:
    model: VarModel
    sigma: np.ndarray
    x_last: np.ndarray
    window: int

    def weights(self, p, x_t=None) -> np.ndarray:
        return prior_weights(self.model, self.x_last if x_t is None else x_t, self.sigma, p)


def fit_prior(returns, window: int = 60, rf: float = 0.0) -> FittedPrior:
    """Fit the default prior on a training return table."""
    r = log_excess_returns(returns, rf)
    x = trailing_mean_state(r, window)
    # state row t predicts the return realized at row t + 1
    excess_next = np.vstack([r[1:], np.zeros((1, r.shape[1]))])
    model = fit_var(x, excess_next)
    sigma = np.atleast_2d(np.cov(r, rowvar=False, ddof=1))
    return FittedPrior(model, sigma, x[-1], window)


def write_prior_report(path: str | Path, prior: FittedPrior, p) -> None:
    alpha = prior.weights(p)
    with open(path, "w") as fh:
        fh.write(f"state: trailing {prior.window}-row mean log excess return\n")
        fh.write("B:\n" + np.array2string(prior.model.B, precision=6) + "\n")
        fh.write("Sigma:\n" + np.array2string(prior.sigma, precision=8) + "\n")
        fh.write("alpha_prior (unprojected, last state):\n" + np.array2string(alpha, precision=6) + "\n")
