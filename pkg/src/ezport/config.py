"""Run configuration as a sectioned key-value file.

Key names follow the usual hyperparameter-file vocabulary (max_frame, episode_length,
ce_samples, hid_layers, ...). Note that
``gamma`` appears twice: under [ppo] it is the discount, under [recursive] it is
risk aversion.
"""
from __future__ import annotations

import configparser
import io
import os
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

from .agents import AgentConfig, ConfigError
from .env import EpisodeConfig
from .utility import EZParams

OUT_ENV_VAR = "EZPORT_OUT"


@dataclass
class DataConfig:
    prices: str = ""
    splits_dir: str = ""
    n_splits: int = 10
    ratio_min: float = 0.5
    ratio_max: float = 0.9
    winsor_q: float = 0.005


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    env: EpisodeConfig = field(default_factory=EpisodeConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    num_assets: int = 0  # 0: take from the data
    splits: tuple = ()  # empty: every split in the manifest
    seed: int = 0
    workers: int = 1
    out_dir: str = "runs"

    def validate(self) -> None:
        self.agent.validate()
        if self.num_assets < 0:
            raise ConfigError("num_assets must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(s < 1 for s in self.splits):
            raise ConfigError("split ids start at 1")
        if self.agent.minibatch_size > self.agent.time_horizon:
            warnings.warn("minibatch_size exceeds time_horizon; each epoch is a single batch")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, agent=replace(self.agent, seed=seed))

    def resolved_out(self, override: str | None = None) -> Path:
        """--out flag, then the environment variable, then the file value."""
        if override:
            return Path(override)
        return Path(os.environ.get(OUT_ENV_VAR) or self.out_dir)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _int_list(s: str) -> tuple:
    s = s.strip().strip("[]")
    return tuple(int(x) for x in s.replace(",", " ").split()) if s else ()


def _fmt_list(xs) -> str:
    return "[" + ", ".join(str(x) for x in xs) + "]"


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    known = {"data", "env", "ppo", "recursive", "network", "run"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")

    def get(sec, key, conv, default):
        if cp.has_option(sec, key):
            try:
                return conv(cp.get(sec, key))
            except ValueError as e:
                raise ConfigError(f"[{sec}] {key}: {e}") from e
        return default

    d0, e0, a0, z0 = DataConfig(), EpisodeConfig(), AgentConfig(), EZParams()
    data = DataConfig(
        prices=get("data", "prices", str, d0.prices),
        splits_dir=get("data", "splits_dir", str, d0.splits_dir),
        n_splits=get("data", "n_splits", int, d0.n_splits),
        ratio_min=get("data", "ratio_min", float, d0.ratio_min),
        ratio_max=get("data", "ratio_max", float, d0.ratio_max),
        winsor_q=get("data", "winsor_q", float, d0.winsor_q),
    )
    objective = get("env", "reward", str, a0.objective)
    try:
        env = EpisodeConfig(
            episode_length=get("env", "episode_length", int, e0.episode_length),
            reward_kind="markowitz" if objective == "markowitz" else "naive",
            markowitz_lambda=get("env", "markowitz_lambda", float, e0.markowitz_lambda),
            varcov_window=get("env", "varcov_window", int, e0.varcov_window),
        )
        ez = EZParams(
            beta=get("recursive", "beta", float, z0.beta),
            gamma=get("recursive", "gamma", float, z0.gamma),
            psi=get("recursive", "psi", float, z0.psi),
            kappa=get("recursive", "kappa_init", float, z0.kappa),
            K=get("recursive", "ce_samples", int, z0.K),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    seed = get("run", "seed", int, 0)
    agent = AgentConfig(
        algorithm=get("env", "algorithm", str, a0.algorithm),
        objective=objective,
        discount=get("ppo", "gamma", float, a0.discount),
        lam=get("ppo", "lam", float, a0.lam),
        clip_eps=get("ppo", "clip_eps", float, a0.clip_eps),
        time_horizon=get("ppo", "time_horizon", int, a0.time_horizon),
        minibatch_size=get("ppo", "minibatch_size", int, a0.minibatch_size),
        training_epochs=get("ppo", "training_epoch", int, a0.training_epochs),
        value_loss_coef=get("ppo", "val_loss_coef", float, a0.value_loss_coef),
        entropy_coef=get("ppo", "entropy_coef", float, a0.entropy_coef),
        max_grad_norm=get("ppo", "max_grad_norm", float, a0.max_grad_norm),
        normalize_advantages=get("ppo", "normalize_advantages", _bool, a0.normalize_advantages),
        max_frames=get("env", "max_frame", int, a0.max_frames),
        hidden=get("network", "hid_layers", _int_list, a0.hidden),
        lr=get("network", "lr", float, a0.lr),
        log_std_init=get("network", "log_std_init", float, a0.log_std_init),
        ce_window=get("recursive", "ce_window", int, a0.ce_window),
        learn_kappa=get("recursive", "learn_kappa", _bool, a0.learn_kappa),
        prior_pretrain_steps=get("recursive", "prior_pretrain_steps", int, a0.prior_pretrain_steps),
        prior_window=get("recursive", "prior_window", int, a0.prior_window),
        random_std=get("env", "random_std", float, a0.random_std),
        seed=seed,
        ez=ez,
    )
    cfg = RunConfig(
        data=data, env=env, agent=agent,
        num_assets=get("env", "num_assets", int, 0),
        splits=get("run", "splits", _int_list, ()),
        seed=seed,
        workers=get("run", "workers", int, 1),
        out_dir=get("run", "out_dir", str, "runs"),
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text())


def serialize_config(cfg: RunConfig) -> str:
    a, z, e, d = cfg.agent, cfg.agent.ez, cfg.env, cfg.data
    cp = configparser.ConfigParser(interpolation=None)
    cp["data"] = {
        "prices": d.prices, "splits_dir": d.splits_dir, "n_splits": str(d.n_splits),
        "ratio_min": repr(d.ratio_min), "ratio_max": repr(d.ratio_max), "winsor_q": repr(d.winsor_q),
    }
    cp["env"] = {
        "max_frame": str(a.max_frames), "episode_length": str(e.episode_length),
        "num_assets": str(cfg.num_assets), "reward": a.objective, "algorithm": a.algorithm,
        "markowitz_lambda": repr(e.markowitz_lambda), "varcov_window": str(e.varcov_window),
        "random_std": repr(a.random_std),
    }
    cp["ppo"] = {
        "gamma": repr(a.discount), "lam": repr(a.lam), "clip_eps": repr(a.clip_eps),
        "time_horizon": str(a.time_horizon), "minibatch_size": str(a.minibatch_size),
        "training_epoch": str(a.training_epochs), "val_loss_coef": repr(a.value_loss_coef),
        "entropy_coef": repr(a.entropy_coef), "max_grad_norm": repr(a.max_grad_norm),
        "normalize_advantages": str(a.normalize_advantages).lower(),
    }
    cp["recursive"] = {
        "beta": repr(z.beta), "gamma": repr(z.gamma), "psi": repr(z.psi),
        "kappa_init": repr(z.kappa), "ce_samples": str(z.K), "ce_window": str(a.ce_window),
        "learn_kappa": str(a.learn_kappa).lower(),
        "prior_pretrain_steps": str(a.prior_pretrain_steps), "prior_window": str(a.prior_window),
    }
    cp["network"] = {
        "hid_layers": _fmt_list(a.hidden), "lr": repr(a.lr), "log_std_init": repr(a.log_std_init),
    }
    cp["run"] = {
        "splits": _fmt_list(cfg.splits), "seed": str(cfg.seed), "workers": str(cfg.workers),
        "out_dir": cfg.out_dir,
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(cfg))
