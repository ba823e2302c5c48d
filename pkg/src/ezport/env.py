"""Portfolio MDP on the simplex with self-financing log-wealth dynamics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

REWARD_KINDS = ("naive", "markowitz", "none")


@dataclass
class EnvState:
    log_wealth: float
    prev_weights: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, n: int) -> "EnvState":
        return cls(0.0, np.full(n, 1.0 / n), 0)

    def observation(self) -> np.ndarray:
        return np.concatenate([[self.log_wealth], self.prev_weights])

    def copy(self) -> "EnvState":
        return EnvState(self.log_wealth, self.prev_weights.copy(), self.t)


@dataclass(frozen=True)
class EpisodeConfig:
    episode_length: int = 252
    reward_kind: str = "naive"
    markowitz_lambda: float = 1.0
    varcov_window: int = 60

    def __post_init__(self):
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"reward_kind must be one of {REWARD_KINDS}")
        if self.markowitz_lambda < 0:
            raise ValueError("markowitz_lambda must be >= 0")
        if self.varcov_window < 2:
            raise ValueError("varcov_window must be >= 2")


def project_simplex(weights_raw) -> np.ndarray:
    """Clip to [0, 1] then renormalize; all-zero after clipping maps to equal weight."""
    x = np.asarray(weights_raw, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("weights must be a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("weights must be finite")
    c = np.clip(x, 0.0, 1.0)
    s = c.sum()
    if s <= 0.0:
        return np.full(x.size, 1.0 / x.size)
    return c / s


def trailing_covariance(rows: np.ndarray, window: int) -> np.ndarray:
    n = rows.shape[1]
    tail = rows[-window:]
    if tail.shape[0] < 2:
        return np.zeros((n, n))
    return np.atleast_2d(np.cov(tail, rowvar=False, ddof=1))


def step(state: EnvState, action, realized_returns, cfg: EpisodeConfig,
         sigma: np.ndarray | None = None) -> tuple[EnvState, float, np.ndarray]:
    """Apply an increment, realize returns, and return (next state, reward, applied weights)."""
    if state.t >= cfg.episode_length:
        raise IndexError(f"step {state.t} beyond episode length {cfg.episode_length}")
    R = np.asarray(realized_returns, dtype=float)
    if np.any(R <= -1.0):
        raise ValueError("realized returns must be > -1")
    alpha = project_simplex(state.prev_weights + np.asarray(action, dtype=float))
    r_port = float(alpha @ R)
    if 1.0 + r_port <= 0.0:
        raise FloatingPointError("bankruptcy: non-positive gross portfolio return")
    nxt = EnvState(state.log_wealth + float(np.log1p(r_port)), alpha, state.t + 1)
    if cfg.reward_kind == "naive":
        reward = r_port
    elif cfg.reward_kind == "markowitz":
        if sigma is None:
            raise ValueError("markowitz reward needs a covariance estimate")
        reward = r_port - cfg.markowitz_lambda * float(alpha @ sigma @ alpha)
    else:
        reward = 0.0
    return nxt, reward, alpha


def peek_log_wealth(log_wealth: float, applied_weights, sampled_returns) -> np.ndarray:
    gross = 1.0 + np.atleast_2d(sampled_returns) @ np.asarray(applied_weights, dtype=float)
    if np.any(gross <= 0.0):
        raise FloatingPointError("sampled return row implies non-positive gross return")
    return log_wealth + np.log(gross)


def peek_next_states(state: EnvState, applied_weights, sampled_returns) -> list[EnvState]:
    """Hypothetical next states for K return rows; `state` is left untouched."""
    a = np.asarray(applied_weights, dtype=float)
    ws = peek_log_wealth(state.log_wealth, a, sampled_returns)
    return [EnvState(float(w), a.copy(), state.t + 1) for w in ws]


def sample_return_rows(train_returns, window: int, t_now: int, K: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Bootstrap K rows uniformly from the `window` rows ending at row `t_now` inclusive."""
    R = getattr(train_returns, "returns", train_returns)
    R = np.asarray(R)
    if K < 1:
        raise ValueError("K must be >= 1")
    if window < 1:
        raise ValueError("window must be >= 1")
    stop = min(t_now + 1, R.shape[0])
    start = max(0, stop - window)
    if stop <= start:
        raise ValueError("no historical return rows available")
    idx = rng.integers(start, stop, size=K)
    return R[idx]


class PortfolioEnv:
    """Steps through a return matrix.

    In training mode each reset draws a random start offset and runs
    `episode_length` steps; in evaluation mode the whole segment is consumed once.
    The covariance used by the Markowitz reward comes from `history` followed by the
    segment rows already seen (training) or from `history` alone (evaluation).
    """

    def __init__(self, returns, cfg: EpisodeConfig, history=None, training: bool = True):
        self.R = np.asarray(getattr(returns, "returns", returns), dtype=float)
        self.cfg = cfg
        self.training = training
        n = self.R.shape[1]
        self.history = (np.zeros((0, n)) if history is None
                        else np.asarray(getattr(history, "returns", history), dtype=float))
        if training and self.R.shape[0] < cfg.episode_length:
            raise ValueError(f"segment of {self.R.shape[0]} rows is shorter than episode_length")
        self.length = cfg.episode_length if training else self.R.shape[0]
        self._ep_cfg = cfg if training else EpisodeConfig(self.length, cfg.reward_kind,
                                                          cfg.markowitz_lambda, cfg.varcov_window)
        self.offset = 0
        self.state = EnvState.initial(n)

    @property
    def n_assets(self) -> int:
        return self.R.shape[1]

    @property
    def row(self) -> int:
        """Index of the return row realized by the next call to step()."""
        return self.offset + self.state.t

    def reset(self, rng: np.random.Generator | None = None) -> EnvState:
        if self.training and rng is not None:
            self.offset = int(rng.integers(0, self.R.shape[0] - self.length + 1))
        else:
            self.offset = 0
        self.state = EnvState.initial(self.n_assets)
        return self.state

    def covariance(self) -> np.ndarray:
        if self.training:
            rows = np.vstack([self.history, self.R[:self.row]])
        else:
            rows = self.history
        return trailing_covariance(rows, self.cfg.varcov_window)

    def step(self, action) -> tuple[EnvState, float, np.ndarray, bool]:
        sigma = self.covariance() if self.cfg.reward_kind == "markowitz" else None
        nxt, reward, alpha = step(self.state, action, self.R[self.row], self._ep_cfg, sigma)
        self.state = nxt
        return nxt, reward, alpha, nxt.t >= self.length


@dataclass
class EpisodeLog:
    weights: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    port_returns: list = field(default_factory=list)
    log_wealth: list = field(default_factory=lambda: [0.0])

    @property
    def final_wealth(self) -> float:
        return float(np.exp(self.log_wealth[-1]))

    def write(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            n = len(self.weights[0]) if self.weights else 0
            w.writerow(["step"] + [f"w{i}" for i in range(n)] + ["reward", "log_wealth"])
            for t, (a, r) in enumerate(zip(self.weights, self.rewards)):
                w.writerow([t] + [repr(float(x)) for x in a] + [repr(float(r)), repr(self.log_wealth[t + 1])])


def run_episode(policy: Callable[[EnvState, np.random.Generator], np.ndarray], returns_segment,
                cfg: EpisodeConfig, rng: np.random.Generator, history=None,
                training: bool = False) -> EpisodeLog:
    """Roll one episode; `policy(state, rng)` returns a weight increment."""
    env = PortfolioEnv(returns_segment, cfg, history=history, training=training)
    state = env.reset(rng)
    log = EpisodeLog()
    done = False
    while not done:
        action = np.asarray(policy(state, rng), dtype=float)
        R = env.R[env.row]
        state, reward, alpha, done = env.step(action)
        log.weights.append(alpha)
        log.actions.append(action)
        log.rewards.append(reward)
        log.port_returns.append(float(alpha @ R))
        log.log_wealth.append(state.log_wealth)
    return log
