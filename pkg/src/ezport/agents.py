"""Actor-critic training for the portfolio MDP under naive, Markowitz and recursive objectives."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .advantage import AAEConfig, aae_from_arrays, gae, normalize_advantages, omega_weight
from .env import EpisodeConfig, PortfolioEnv, peek_log_wealth, project_simplex, sample_return_rows
from .utility import EZParams, ces_aggregate, ce_sample

ALGORITHMS = ("ppo", "a2c", "reinforce", "random")
OBJECTIVES = ("naive", "markowitz", "recursive")
CRITIC_ALGORITHMS = ("ppo", "a2c")


class ConfigError(ValueError):
    pass


@dataclass
class AgentConfig:
    algorithm: str = "ppo"
    objective: str = "recursive"
    discount: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    time_horizon: int = 128
    minibatch_size: int = 64
    training_epochs: int = 4
    value_loss_coef: float = 0.1
    entropy_coef: float = 0.0
    max_frames: int = 2520
    hidden: tuple = (128, 128)
    lr: float = 0.02
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    log_std_init: float = -2.0
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    ce_window: int = 252
    random_std: float = 0.05
    reinforce_baseline: bool = True
    learn_kappa: bool = False
    prior_pretrain_steps: int = 0
    prior_window: int = 60
    seed: int = 0
    ez: EZParams = field(default_factory=EZParams)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.objective == "recursive" and self.algorithm not in CRITIC_ALGORITHMS:
            raise ConfigError(
                f"recursive utility is only defined for critic-based algorithms {CRITIC_ALGORITHMS}; "
                f"got algorithm={self.algorithm!r}")
        if not 0.0 <= self.discount <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise ConfigError("discount and lam must lie in [0, 1]")
        if self.time_horizon < 1 or self.minibatch_size < 1 or self.training_epochs < 1:
            raise ConfigError("time_horizon, minibatch_size and training_epochs must be >= 1")
        if self.max_frames < 1:
            raise ConfigError("max_frames must be >= 1")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")
        if self.ce_window < 1:
            raise ConfigError("ce_window must be >= 1")

    @property
    def uses_critic(self) -> bool:
        return self.algorithm in CRITIC_ALGORITHMS

    @property
    def reward_kind(self) -> str:
        return "markowitz" if self.objective == "markowitz" else "naive"


# Agent ----------------------------------------------------------------------

class Agent:
    """Actor MLP (mean increments) + Gaussian head, and an optional critic MLP.

    The recursive objective maps the critic output through a positive transform
    because the certainty equivalent raises V to the power 1 - gamma.
    """

    def __init__(self, n_assets: int, cfg: AgentConfig, rng: np.random.Generator | None = None):
        self.n_assets = n_assets
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        obs_dim = n_assets + 1
        act_dim = n_assets + (1 if cfg.learn_kappa else 0)
        self.actor = nn.Mlp([obs_dim, *cfg.hidden, act_dim], rng, out_gain=0.01)
        if cfg.learn_kappa:
            k = cfg.ez.kappa
            self.actor.params[-1][-1] = math.log(k / (1.0 - k))
        self.head = nn.GaussianPolicyHead(act_dim, cfg.log_std_init, (cfg.log_std_min, cfg.log_std_max))
        self.critic = None
        if cfg.uses_critic:
            self.critic = nn.Mlp([obs_dim, *cfg.hidden, 1], rng, out_gain=0.0)
            if cfg.objective == "recursive":
                # start near the zero-return fixed point V = kappa * exp(w)
                self.critic.params[-1][:] = nn.inverse_positive_value(cfg.ez.kappa)
        self.opt = nn.Adam(self.parameters(), lr=cfg.lr)

    @property
    def positive_critic(self) -> bool:
        return self.cfg.objective == "recursive"

    def parameters(self) -> list[np.ndarray]:
        ps = list(self.actor.params) + [self.head.log_std]
        if self.critic is not None:
            ps += list(self.critic.params)
        return ps

    def state_dict(self) -> dict[str, np.ndarray]:
        d = {f"actor.{i}": p for i, p in enumerate(self.actor.params)}
        d["log_std"] = self.head.log_std
        if self.critic is not None:
            d.update({f"critic.{i}": p for i, p in enumerate(self.critic.params)})
        return d

    def load_state_dict(self, d: dict[str, np.ndarray]) -> None:
        mine = self.state_dict()
        if set(mine) != set(d):
            raise ValueError("checkpoint does not match agent architecture")
        for k, v in mine.items():
            if v.shape != d[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {d[k].shape}")
            v[...] = d[k]

    def save(self, path: str | Path) -> None:
        nn.save_arrays(path, self.state_dict())

    def load(self, path: str | Path) -> None:
        self.load_state_dict(nn.load_arrays(path))

    # policy ---------------------------------------------------------------
    def policy_mean(self, obs) -> np.ndarray:
        return self.actor.forward(obs)

    def act(self, obs, rng: np.random.Generator, deterministic: bool = False):
        if self.cfg.algorithm == "random":
            return random_agent_action(self.n_assets, rng, self.cfg.random_std, deterministic), 0.0
        mean = self.policy_mean(obs)
        if deterministic:
            return mean, float(nn.gaussian_log_prob(mean, mean, self.head.effective_log_std())[0])
        return nn.policy_sample(mean, self.head.effective_log_std(), rng)

    def split_action(self, action) -> tuple[np.ndarray, float | None]:
        """Weight increment and (when learned) the consumption share kappa."""
        a = np.asarray(action, dtype=float)
        if self.cfg.learn_kappa:
            return a[:-1], float(nn.sigmoid(a[-1]))
        return a, None

    # critic ---------------------------------------------------------------
    def critic_raw(self, obs) -> np.ndarray:
        return self.critic.forward(np.atleast_2d(obs))[:, 0]

    def value(self, obs) -> np.ndarray:
        if self.critic is None:
            raise ConfigError("agent has no critic")
        raw = self.critic_raw(obs)
        return nn.positive_value(raw) if self.positive_critic else raw


def random_agent_action(n_assets: int, rng: np.random.Generator, std: float = 0.05,
                        deterministic: bool = False) -> np.ndarray:
    if deterministic or std == 0.0:
        return np.zeros(n_assets)
    return rng.normal(0.0, std, size=n_assets)


# Trajectories ---------------------------------------------------------------

@dataclass
class Trajectory:
    obs: np.ndarray
    next_obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    weights: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    ez_targets: np.ndarray | None = None
    ce_values: np.ndarray | None = None  # (T, K) critic values at sampled next states
    kappas: np.ndarray | None = None

    def __len__(self) -> int:
        return self.obs.shape[0]


def collect_rollout(agent: Agent, env: PortfolioEnv, horizon: int, rng: np.random.Generator,
                    sampler=None) -> Trajectory:
    """Run `horizon` steps, resetting the env at episode ends.

    For the recursive objective every step also bootstraps K return rows, peeks the
    K hypothetical next states and stores the EZ target built from their critic
    values. `sampler(env, row, K, rng)` may replace the bootstrap (used by tests).
    """
    cfg = agent.cfg
    recursive = cfg.objective == "recursive"
    p = cfg.ez
    obs_l, nobs_l, act_l, lp_l, w_l, r_l, d_l = [], [], [], [], [], [], []
    tgt_l, ce_l, k_l = [], [], []
    for _ in range(horizon):
        obs = env.state.observation()
        action, logp = agent.act(obs, rng)
        delta, kappa = agent.split_action(action)
        row = env.row
        w_now = env.state.log_wealth
        nxt, reward, alpha, done = env.step(delta)
        if recursive:
            if sampler is None:
                rows = sample_return_rows(env.R, cfg.ce_window, row, p.K, rng)
            else:
                rows = sampler(env, row, p.K, rng)
            ws = peek_log_wealth(w_now, alpha, rows)
            cand = np.hstack([ws[:, None], np.broadcast_to(alpha, (ws.size, alpha.size))])
            vals = agent.value(cand)
            k = p.kappa if kappa is None else kappa
            tgt_l.append(float(ces_aggregate(k * math.exp(w_now), ce_sample(vals, p.gamma), p)))
            ce_l.append(vals)
            k_l.append(k)
        obs_l.append(obs)
        nobs_l.append(nxt.observation())
        act_l.append(np.asarray(action, dtype=float))
        lp_l.append(logp)
        w_l.append(alpha)
        r_l.append(reward)
        d_l.append(done)
        if done:
            env.reset(rng)
    traj = Trajectory(np.array(obs_l), np.array(nobs_l), np.array(act_l), np.array(lp_l),
                      np.array(w_l), np.array(r_l), np.array(d_l, dtype=bool))
    if recursive:
        traj.ez_targets = np.array(tgt_l)
        traj.ce_values = np.array(ce_l)
        traj.kappas = np.array(k_l)
    return traj


# Losses and gradients -------------------------------------------------------

def critic_loss(agent: Agent, obs, targets) -> tuple[float, list[np.ndarray]]:
    """Mean squared error between V(obs) and fixed targets, with critic gradients."""
    if agent.critic is None:
        raise ConfigError("critic loss requested for an algorithm without a critic")
    targets = np.asarray(targets, dtype=float)
    raw = agent.critic_raw(obs)
    if agent.positive_critic:
        v = nn.positive_value(raw)
        dv = nn.positive_value_grad(raw)
    else:
        v, dv = raw, np.ones_like(raw)
    diff = v - targets
    loss = float(np.mean(diff ** 2))
    g_raw = (2.0 / diff.size) * diff * dv
    return loss, agent.critic.backward(g_raw[:, None])


def _head_grads(agent: Agent, obs, actions, coef_logp: np.ndarray, entropy_coef: float):
    """Gradients of sum_i coef_i * logp_i - entropy_coef * H w.r.t. actor params and log_std."""
    mean = agent.actor.forward(obs)
    ls = agent.head.effective_log_std()
    g_mean, g_ls = nn.gaussian_log_prob_grads(actions, mean, ls)
    actor_grads = agent.actor.backward(coef_logp[:, None] * g_mean)
    ls_grad = (coef_logp[:, None] * g_ls).sum(axis=0) - entropy_coef * np.ones_like(ls)
    ls_grad = ls_grad * agent.head.inside_bounds()
    return actor_grads, ls_grad


def ppo_policy_loss(agent: Agent, obs, actions, old_log_probs, advantages, clip_eps: float,
                    entropy_coef: float = 0.0):
    """Clipped surrogate -mean(min(r A, clip(r) A)) - c_H * entropy.

    Returns (loss, actor grads, log_std grad, diagnostics).
    """
    mean = agent.actor.forward(obs)
    ls = agent.head.effective_log_std()
    logp = nn.gaussian_log_prob(actions, mean, ls)
    ratio = np.exp(logp - old_log_probs)
    adv = np.asarray(advantages, dtype=float)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    surr = np.minimum(unclipped, clipped)
    ent = nn.gaussian_entropy(ls)
    loss = -float(np.mean(surr)) - entropy_coef * ent
    active = unclipped <= clipped  # gradient flows only through the unclipped branch
    coef = -(active * adv * ratio) / adv.size
    actor_grads, ls_grad = _head_grads(agent, obs, actions, coef, entropy_coef)
    diag = {
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "approx_kl": float(np.mean(old_log_probs - logp)),
        "entropy": ent,
    }
    return loss, actor_grads, ls_grad, diag


def pg_policy_loss(agent: Agent, obs, actions, weights, entropy_coef: float = 0.0):
    """Vanilla policy-gradient loss -mean(logp * weight) - c_H * entropy."""
    mean = agent.actor.forward(obs)
    ls = agent.head.effective_log_std()
    logp = nn.gaussian_log_prob(actions, mean, ls)
    w = np.asarray(weights, dtype=float)
    loss = -float(np.mean(logp * w)) - entropy_coef * nn.gaussian_entropy(ls)
    actor_grads, ls_grad = _head_grads(agent, obs, actions, -w / w.size, entropy_coef)
    return loss, actor_grads, ls_grad


# Advantages and targets -----------------------------------------------------

def compute_advantages(agent: Agent, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """(advantages, critic targets) under the current critic, frozen for the update."""
    cfg = agent.cfg
    values = agent.value(traj.obs)
    next_values = agent.value(traj.next_obs)
    if cfg.objective == "recursive":
        deltas = traj.ez_targets - values
        omegas = omega_weight(next_values, AAEConfig(cfg.ez.beta, cfg.lam, cfg.ez.gamma, cfg.ez.psi))
        adv = aae_from_arrays(deltas, np.atleast_1d(omegas), cfg.ez.beta, cfg.lam, traj.dones)
        return adv, traj.ez_targets.copy()
    # episode ends are time limits: bootstrap the value, cut the trace
    adv = gae(traj.rewards, values, next_values, cfg.discount, cfg.lam, traj.dones)
    return adv, traj.rewards + cfg.discount * next_values


def discounted_returns(rewards, dones, discount: float) -> np.ndarray:
    """Monte Carlo returns within each episode fragment of the buffer."""
    G = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            acc = 0.0
        acc = rewards[t] + discount * acc
        G[t] = acc
    return G


# Updates --------------------------------------------------------------------

def _apply(agent: Agent, actor_grads=None, ls_grad=None, critic_grads=None, scale_critic=1.0) -> float:
    grads = []
    grads += [g for g in actor_grads] if actor_grads is not None else [np.zeros_like(p) for p in agent.actor.params]
    grads.append(ls_grad if ls_grad is not None else np.zeros_like(agent.head.log_std))
    if agent.critic is not None:
        if critic_grads is not None:
            grads += [scale_critic * g for g in critic_grads]
        else:
            grads += [np.zeros_like(p) for p in agent.critic.params]
    norm = nn.clip_grad_norm(grads, agent.cfg.max_grad_norm)
    if not math.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    agent.opt.step(agent.parameters(), grads)
    return norm


def ppo_update(agent: Agent, traj: Trajectory, rng: np.random.Generator) -> dict:
    cfg = agent.cfg
    if cfg.algorithm != "ppo":
        raise ConfigError("ppo_update needs algorithm=ppo")
    adv, targets = compute_advantages(agent, traj)
    raw_mean = float(np.mean(adv))
    if cfg.normalize_advantages:
        adv = normalize_advantages(adv)
    T = len(traj)
    stats = {"policy_loss": [], "value_loss": [], "clip_frac": [], "approx_kl": []}
    for _ in range(cfg.training_epochs):
        perm = rng.permutation(T)
        for s in range(0, T, cfg.minibatch_size):
            idx = perm[s:s + cfg.minibatch_size]
            pl, ag, lg, diag = ppo_policy_loss(agent, traj.obs[idx], traj.actions[idx], traj.log_probs[idx],
                                               adv[idx], cfg.clip_eps, cfg.entropy_coef)
            vl, cg = critic_loss(agent, traj.obs[idx], targets[idx])
            if not (math.isfinite(pl) and math.isfinite(vl)):
                raise FloatingPointError(f"non-finite loss: policy={pl} value={vl}")
            _apply(agent, ag, lg, cg, cfg.value_loss_coef)
            stats["policy_loss"].append(pl)
            stats["value_loss"].append(vl)
            stats["clip_frac"].append(diag["clip_frac"])
            stats["approx_kl"].append(diag["approx_kl"])
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["mean_advantage"] = raw_mean
    return out


def a2c_update(agent: Agent, traj: Trajectory, rng: np.random.Generator | None = None) -> dict:
    cfg = agent.cfg
    if cfg.algorithm != "a2c":
        raise ConfigError("a2c_update needs algorithm=a2c")
    adv, targets = compute_advantages(agent, traj)
    raw_mean = float(np.mean(adv))
    if cfg.normalize_advantages:
        adv = normalize_advantages(adv)
    pl, ag, lg = pg_policy_loss(agent, traj.obs, traj.actions, adv, cfg.entropy_coef)
    vl, cg = critic_loss(agent, traj.obs, targets)
    if not (math.isfinite(pl) and math.isfinite(vl)):
        raise FloatingPointError(f"non-finite loss: policy={pl} value={vl}")
    _apply(agent, ag, lg, cg, cfg.value_loss_coef)
    return {"policy_loss": pl, "value_loss": vl, "clip_frac": 0.0, "approx_kl": 0.0,
            "mean_advantage": raw_mean}


def reinforce_update(agent: Agent, traj: Trajectory, rng: np.random.Generator | None = None) -> dict:
    cfg = agent.cfg
    if cfg.objective == "recursive":
        raise ConfigError("recursive utility is only defined for critic-based algorithms")
    G = discounted_returns(traj.rewards, traj.dones, cfg.discount)
    w = G - G.mean() if cfg.reinforce_baseline else G
    pl, ag, lg = pg_policy_loss(agent, traj.obs, traj.actions, w, cfg.entropy_coef)
    if not math.isfinite(pl):
        raise FloatingPointError(f"non-finite loss: policy={pl}")
    if np.any(w != 0.0) or cfg.entropy_coef != 0.0:
        _apply(agent, ag, lg)
    return {"policy_loss": pl, "value_loss": 0.0, "clip_frac": 0.0, "approx_kl": 0.0,
            "mean_advantage": float(np.mean(w))}


UPDATES = {"ppo": ppo_update, "a2c": a2c_update, "reinforce": reinforce_update}


# Actor initialization from the approximate rule -----------------------------

def pretrain_actor_to_prior(agent: Agent, target_weights, steps: int, rng: np.random.Generator,
                            batch: int = 64, lr: float | None = None) -> float:
    """Regress the actor mean onto increments that land on `target_weights` from
    random previous weights. Returns the final mean squared error."""
    target = project_simplex(target_weights)
    n = agent.n_assets
    opt = nn.Adam(agent.actor.params, lr=agent.cfg.lr if lr is None else lr)
    mse = float("nan")
    for _ in range(steps):
        prev = rng.dirichlet(np.ones(n), size=batch)
        w = rng.normal(0.0, 0.1, size=(batch, 1))
        obs = np.hstack([w, prev])
        want = target[None, :] - prev
        mean = agent.actor.forward(obs)
        diff = mean[:, :n] - want
        mse = float(np.mean(diff ** 2))
        g = np.zeros_like(mean)
        g[:, :n] = 2.0 * diff / diff.size
        grads = agent.actor.backward(g)
        nn.clip_grad_norm(grads, agent.cfg.max_grad_norm)
        opt.step(agent.actor.params, grads)
    return mse


# Training driver ------------------------------------------------------------

@dataclass
class TrainResult:
    agent: Agent
    diagnostics: list[dict]
    frames: int


def make_agent(n_assets: int, cfg: AgentConfig) -> tuple[Agent, np.random.Generator]:
    rng = np.random.default_rng(cfg.seed)
    init_rng, run_rng = rng.spawn(2)
    return Agent(n_assets, cfg, init_rng), run_rng


def train(train_returns, cfg: AgentConfig, env_cfg: EpisodeConfig, history=None,
          agent: Agent | None = None) -> TrainResult:
    """Train on the training segment for cfg.max_frames environment steps."""
    R = np.asarray(getattr(train_returns, "returns", train_returns), dtype=float)
    env_cfg = replace(env_cfg, reward_kind=cfg.reward_kind)
    if agent is None:
        agent, rng = make_agent(R.shape[1], cfg)
    else:
        rng = np.random.default_rng(cfg.seed + 1)
    if cfg.prior_pretrain_steps > 0 and cfg.algorithm != "random":
        from .prior import fit_prior, prior_weights

        fp = fit_prior(R, window=cfg.prior_window)
        target = prior_weights(fp.model, fp.x_last, fp.sigma, cfg.ez)
        pretrain_actor_to_prior(agent, project_simplex(target), cfg.prior_pretrain_steps, rng)
    env = PortfolioEnv(R, env_cfg, history=history, training=True)
    env.reset(rng)
    diags = []
    frames = 0
    update = UPDATES.get(cfg.algorithm)
    while frames < cfg.max_frames:
        h = min(cfg.time_horizon, cfg.max_frames - frames)
        traj = collect_rollout(agent, env, h, rng)
        frames += h
        d = update(agent, traj, rng) if update is not None else {}
        d = {"update": len(diags), "frames": frames, **d,
             "mean_reward": float(np.mean(traj.rewards)),
             "log_wealth": float(env.state.log_wealth)}
        diags.append(d)
    return TrainResult(agent, diags, frames)


def write_diagnostics(diags: list[dict], path: str | Path) -> None:
    keys = ["update", "frames", "policy_loss", "value_loss", "clip_frac", "approx_kl",
            "mean_advantage", "mean_reward", "log_wealth"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for d in diags:
            w.writerow([repr(d[k]) if k in d else "" for k in keys])


def evaluate_policy(agent: Agent, returns, env_cfg: EpisodeConfig, history=None) -> dict:
    """Single deterministic pass (policy mean) over a whole segment."""
    R = np.asarray(getattr(returns, "returns", returns), dtype=float)
    env = PortfolioEnv(R, replace(env_cfg, reward_kind=agent.cfg.reward_kind), history=history,
                       training=False)
    env.reset()
    rng = np.random.default_rng(0)
    weights, port = [], []
    done = False
    while not done:
        action, _ = agent.act(env.state.observation(), rng, deterministic=True)
        delta, _ = agent.split_action(action)
        r_row = env.R[env.row]
        _, _, alpha, done = env.step(delta)
        weights.append(alpha)
        port.append(float(alpha @ r_row))
    return {"weights": np.array(weights), "port_returns": np.array(port)}
