"""Command-line harness: ingest, train, evaluate, ablate, report (plus synth for test data).

Output layout under the run directory::

    split_01/checkpoint.txt  diagnostics.csv  metrics.csv  metrics.json  weights.csv
    aggregate.csv  aggregate.json  aggregate.txt  config.ini
    ablation/w183_k10/...    ablation/ablation.csv  ablation.json  ablation.txt
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from .agents import Agent, ConfigError, evaluate_policy, train, write_diagnostics
from .config import RunConfig, load_config, save_config
from .metrics import (COLUMN_LABELS, TABLE_COLUMNS, UNDEFINED, MetricsReport, aggregate_splits,
                      compute_metrics, fmt, fmt_agg, write_report)

DEFAULT_WINDOWS = (183, 122, 61, 21)
DEFAULT_KS = (1, 2, 5, 10, 20)
WINDOW_LABELS = {183: "Whole year", 122: "Half year", 61: "Quarter", 21: "Month"}
ALGO_LABELS = {"random": "Random", "reinforce": "REINFORCE", "a2c": "A2C", "ppo": "PPO"}
ALGO_ORDER = ("random", "reinforce", "a2c", "ppo")
OBJ_ORDER = ("naive", "markowitz", "recursive")
MANIFEST_FIELDS = ["split", "train_ratio", "train_start", "train_stop", "test_start", "test_stop",
                   "train_first_date", "train_last_date", "test_first_date", "test_last_date"]


# ingest ---------------------------------------------------------------------

def cmd_ingest(prices_path, out_dir, n_splits: int = 10, ratio_min: float = 0.5,
               ratio_max: float = 0.9, winsor_q: float = 0.005) -> list[D.SplitSpec]:
    """Write split_XX/{train,test,history}.csv and manifest.csv.

    Winsorization bounds are fitted on each split's training rows only.
    """
    prices = D.load_prices(prices_path)
    raw = D.simple_returns(prices)
    specs = D.make_splits(raw, n_splits, ratio_min, ratio_max)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in specs:
        table = D.winsorize(raw, winsor_q, s.train_range)
        train_t = table.slice(*s.train_range)
        test_t = table.slice(*s.test_range)
        sd = out / f"split_{s.split_id:02d}"
        sd.mkdir(exist_ok=True)
        D.write_returns(train_t, sd / "train.csv")
        D.write_returns(test_t, sd / "test.csv")
        D.write_returns(train_t, sd / "history.csv")
        rows.append([s.split_id, repr(s.train_ratio), *s.train_range, *s.test_range,
                     train_t.dates[0].isoformat(), train_t.dates[-1].isoformat(),
                     test_t.dates[0].isoformat(), test_t.dates[-1].isoformat()])
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        w.writerows(rows)
    return specs


def read_manifest(splits_dir) -> list[int]:
    path = Path(splits_dir) / "manifest.csv"
    if not path.is_file():
        raise FileNotFoundError(f"no manifest.csv in {splits_dir}; run `ingest` first")
    with open(path, newline="") as fh:
        return [int(r["split"]) for r in csv.DictReader(fh)]


def _selected_splits(cfg: RunConfig) -> list[int]:
    avail = read_manifest(cfg.data.splits_dir)
    if not cfg.splits:
        return avail
    missing = sorted(set(cfg.splits) - set(avail))
    if missing:
        raise ConfigError(f"splits {missing} are not in the manifest")
    return sorted(cfg.splits)


# per-split jobs (top level so worker processes can pickle them) ---------------

def _split_dir(cfg: RunConfig, split: int) -> Path:
    return Path(cfg.data.splits_dir) / f"split_{split:02d}"


def _check_assets(cfg: RunConfig, n: int) -> None:
    if cfg.num_assets and cfg.num_assets != n:
        raise ConfigError(f"num_assets={cfg.num_assets} but the data has {n} assets")


def train_split(cfg: RunConfig, split: int, out_dir: str) -> str:
    sd = _split_dir(cfg, split)
    tr = D.read_returns(sd / "train.csv")
    _check_assets(cfg, tr.n_assets)
    if len(tr) < cfg.env.episode_length:
        raise ConfigError(f"split {split}: {len(tr)} training rows < episode_length {cfg.env.episode_length}")
    result = train(tr, cfg.agent, cfg.env)
    od = Path(out_dir) / f"split_{split:02d}"
    od.mkdir(parents=True, exist_ok=True)
    ckpt = od / "checkpoint.txt"
    result.agent.save(ckpt)
    write_diagnostics(result.diagnostics, od / "diagnostics.csv")
    return str(ckpt)


def evaluate_split(cfg: RunConfig, split: int, ckpt_dir: str, out_dir: str) -> MetricsReport:
    sd = _split_dir(cfg, split)
    te = D.read_returns(sd / "test.csv")
    hist = D.read_returns(sd / "history.csv")
    _check_assets(cfg, te.n_assets)
    if len(te) < cfg.env.episode_length:
        warnings.warn(f"split {split}: test segment ({len(te)} rows) is shorter than episode_length")
    ckpt = Path(ckpt_dir) / f"split_{split:02d}" / "checkpoint.txt"
    if not ckpt.is_file():
        raise FileNotFoundError(f"missing checkpoint {ckpt}")
    agent = Agent(te.n_assets, cfg.agent, np.random.default_rng(cfg.agent.seed))
    agent.load(ckpt)
    res = evaluate_policy(agent, te, cfg.env, history=hist)
    # equal-weight daily rebalanced portfolio as the information-ratio benchmark
    report = compute_metrics(res["port_returns"], benchmark=te.returns.mean(axis=1))
    od = Path(out_dir) / f"split_{split:02d}"
    od.mkdir(parents=True, exist_ok=True)
    write_report(report, od / "metrics.csv", _labels(cfg, split))
    with open(od / "weights.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + te.assets + ["port_return"])
        for d, a, r in zip(te.dates, res["weights"], res["port_returns"]):
            w.writerow([d.isoformat()] + [repr(float(x)) for x in a] + [repr(float(r))])
    return report


def _labels(cfg: RunConfig, split=None) -> dict:
    out = {"algorithm": cfg.agent.algorithm, "objective": cfg.agent.objective}
    if split is not None:
        out["split"] = str(split)
    return out


def _map(fn, args_list, workers: int):
    if workers <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(fn, *a) for a in args_list]
        return [f.result() for f in futs]


def _prepare(config_path, seed=None, workers=None, out=None) -> tuple[RunConfig, Path]:
    cfg = load_config(config_path)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if workers is not None:
        cfg = replace(cfg, workers=workers)
    cfg.validate()
    out_dir = cfg.resolved_out(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    return cfg, out_dir


# train / evaluate -----------------------------------------------------------

def run_train(cfg: RunConfig, out_dir: Path) -> list[str]:
    splits = _selected_splits(cfg)
    save_config(cfg, out_dir / "config.ini")
    return _map(train_split, [(cfg, s, str(out_dir)) for s in splits], cfg.workers)


def run_evaluate(cfg: RunConfig, out_dir: Path, ckpt_dir: Path | None = None) -> dict:
    splits = _selected_splits(cfg)
    ckpt_dir = out_dir if ckpt_dir is None else ckpt_dir
    reports = _map(evaluate_split, [(cfg, s, str(ckpt_dir), str(out_dir)) for s in splits], cfg.workers)
    agg = aggregate_splits(reports)
    write_aggregate(agg, out_dir, _labels(cfg), splits)
    return agg


def cmd_train(config_path, seed=None, workers=None, out=None) -> list[str]:
    cfg, out_dir = _prepare(config_path, seed, workers, out)
    return run_train(cfg, out_dir)


def cmd_evaluate(config_path, checkpoint=None, seed=None, workers=None, out=None) -> dict:
    cfg, out_dir = _prepare(config_path, seed, workers, out)
    return run_evaluate(cfg, out_dir, None if checkpoint is None else Path(checkpoint))


def _agg_json(agg: dict) -> dict:
    return {k: {"mean": a.mean, "std": a.std, "n": a.n, "n_undefined": a.n_undefined}
            for k, a in agg.items()}


def write_aggregate(agg: dict, out_dir: Path, labels: dict, splits) -> None:
    body = {**labels, "splits": list(splits), "metrics": _agg_json(agg)}
    with open(out_dir / "aggregate.json", "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "mean", "std", "n", "n_undefined"])
        for k, a in agg.items():
            w.writerow([k, UNDEFINED if a.mean is None else repr(a.mean),
                        UNDEFINED if a.std is None else repr(a.std), a.n, a.n_undefined])
    (out_dir / "aggregate.txt").write_text(render_main_table([body]))


# ablation -------------------------------------------------------------------

def cmd_ablate(config_path, windows=DEFAULT_WINDOWS, ks=DEFAULT_KS, seed=None, workers=None,
               out=None) -> dict:
    """Train and evaluate the configured agent on every (window, K) cell."""
    windows, ks = list(windows), list(ks)
    if not windows or not ks:
        raise ValueError("ablation needs at least one window and one K")
    cfg, out_dir = _prepare(config_path, seed, workers, out)
    if cfg.agent.objective != "recursive":
        warnings.warn("ablation varies K, which only affects the recursive objective")
    base = out_dir / "ablation"
    base.mkdir(exist_ok=True)
    jobs = []
    for w in windows:
        for k in ks:
            agent = replace(cfg.agent, ez=replace(cfg.agent.ez, K=k))
            cell = replace(cfg, env=replace(cfg.env, episode_length=w), agent=agent, workers=1)
            cell_dir = base / f"w{w}_k{k}"
            cell_dir.mkdir(exist_ok=True)
            jobs.append((cell, str(cell_dir)))
    aggs = _map(_ablate_cell, jobs, cfg.workers)
    grid = {"windows": windows, "ks": ks, "cells": {}}
    for (cell, _), agg in zip(jobs, aggs):
        key = f"{cell.env.episode_length},{cell.agent.ez.K}"
        grid["cells"][key] = _agg_json(agg)
    with open(base / "ablation.json", "w") as fh:
        json.dump(grid, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(base / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "K"] + list(TABLE_COLUMNS))
        for win in windows:
            for k in ks:
                m = grid["cells"][f"{win},{k}"]
                w.writerow([win, k] + [UNDEFINED if m[c]["mean"] is None else repr(m[c]["mean"])
                                       for c in TABLE_COLUMNS])
    (base / "ablation.txt").write_text(render_ablation_table(grid))
    return grid


def _ablate_cell(cell: RunConfig, cell_dir: str) -> dict:
    d = Path(cell_dir)
    run_train(cell, d)
    return run_evaluate(cell, d)


# report ---------------------------------------------------------------------

def _cell(m: dict, digits: int = 2) -> str:
    if m["mean"] is None:
        return UNDEFINED
    return f"{m['mean']:.{digits}f} ± {m['std']:.{digits}f}"


def render_main_table(bodies: list[dict]) -> str:
    """Algorithm x objective table, columns SR, Sortino, Calmar, MDD, CR, Vol."""
    def order(b):
        a, o = b["algorithm"], b["objective"]
        return (ALGO_ORDER.index(a) if a in ALGO_ORDER else 99, OBJ_ORDER.index(o) if o in OBJ_ORDER else 99)

    head = ["RL", "Objective"] + [COLUMN_LABELS[c] for c in TABLE_COLUMNS]
    rows = [[ALGO_LABELS.get(b["algorithm"], b["algorithm"]), b["objective"].capitalize()]
            + [_cell(b["metrics"][c]) for c in TABLE_COLUMNS] for b in sorted(bodies, key=order)]
    return _grid(head, rows)


def render_ablation_table(grid: dict) -> str:
    head = ["Training window"] + [f"K={k}" for k in grid["ks"]]
    rows = []
    for w in grid["windows"]:
        label = f"{WINDOW_LABELS[w]} (window = {w})" if w in WINDOW_LABELS else f"window = {w}"
        for i, c in enumerate(TABLE_COLUMNS):
            name = COLUMN_LABELS[c].replace(" (%)", "%")
            cells = []
            for k in grid["ks"]:
                m = grid["cells"][f"{w},{k}"][c]
                cells.append(f"{name}: {fmt(m['mean'])}")
            rows.append([label if i == 0 else ""] + cells)
    return _grid(head, rows)


def _grid(head: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    line = lambda r: "  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip()
    out = [line(head), "  ".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out) + "\n"


def cmd_report(results_dir) -> str:
    """Render stored aggregate and ablation files found under `results_dir`."""
    root = Path(results_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"no such results directory: {root}")
    mains = sorted(p for p in root.rglob("aggregate.json") if "ablation" not in p.relative_to(root).parts)
    ablations = sorted(root.rglob("ablation.json"))
    if not mains and not ablations:
        raise FileNotFoundError(f"no aggregate.json or ablation.json under {root}")
    parts = []
    if mains:
        bodies = [json.loads(p.read_text()) for p in mains]
        parts.append("Performance by algorithm and objective (mean ± std over splits)\n\n"
                     + render_main_table(bodies))
    for p in ablations:
        parts.append(f"Ablation ({p.parent.relative_to(root).as_posix()}): rows = training window, "
                     "columns = CE samples K\n\n" + render_ablation_table(json.loads(p.read_text())))
    text = "\n".join(parts)
    (root / "report.txt").write_text(text)
    return text


# synthetic data -------------------------------------------------------------

def cmd_synth(out_path, n_days: int, means, stds, seed: int = 0, crash_prob: float = 0.0,
              crash_size=None) -> Path:
    table = D.synthetic_prices(n_days, means, stds, seed=seed, crash_prob=crash_prob,
                               crash_size=crash_size)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    D.write_prices(table, out_path)
    return Path(out_path)


# argument parsing -----------------------------------------------------------

def _floats(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ezport", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--workers", type=int, default=None, help="parallel split/cell jobs")
        p.add_argument("--out", default=None, help="output directory (else $EZPORT_OUT, else [run] out_dir)")

    p = sub.add_parser("ingest", help="price table -> chronological split files")
    p.add_argument("prices")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="take split settings from [data]")
    p.add_argument("--n-splits", type=int, default=None)
    p.add_argument("--ratio-min", type=float, default=None)
    p.add_argument("--ratio-max", type=float, default=None)
    p.add_argument("--winsor-q", type=float, default=None)

    common(sub.add_parser("train", help="train one agent per split"))
    p = sub.add_parser("evaluate", help="deterministic test rollout per split")
    common(p)
    p.add_argument("--checkpoint", default=None, help="directory holding split_XX/checkpoint.txt")
    p = sub.add_parser("ablate", help="training window x K grid")
    common(p)
    p.add_argument("--windows", type=_ints, default=list(DEFAULT_WINDOWS))
    p.add_argument("--ks", type=_ints, default=list(DEFAULT_KS))
    p = sub.add_parser("report", help="render stored results")
    p.add_argument("results_dir")

    p = sub.add_parser("synth", help="write a synthetic i.i.d. price table")
    p.add_argument("out")
    p.add_argument("--days", type=int, default=1261)
    p.add_argument("--means", type=_floats, default=[0.0005, -0.0005])
    p.add_argument("--stds", type=_floats, default=[0.01, 0.01])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crash-prob", type=float, default=0.0)
    p.add_argument("--crash-size", type=_floats, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "ingest":
            d = load_config(args.config).data if args.config else None
            pick = lambda v, k, default: v if v is not None else (getattr(d, k) if d else default)
            specs = cmd_ingest(args.prices, args.out,
                               pick(args.n_splits, "n_splits", 10),
                               pick(args.ratio_min, "ratio_min", 0.5),
                               pick(args.ratio_max, "ratio_max", 0.9),
                               pick(args.winsor_q, "winsor_q", 0.005))
            print(f"wrote {len(specs)} splits to {args.out}")
        elif args.cmd == "train":
            paths = cmd_train(args.config, args.seed, args.workers, args.out)
            print("\n".join(paths))
        elif args.cmd == "evaluate":
            agg = cmd_evaluate(args.config, args.checkpoint, args.seed, args.workers, args.out)
            print("  ".join(f"{COLUMN_LABELS[c]}={fmt_agg(agg[c])}" for c in TABLE_COLUMNS))
        elif args.cmd == "ablate":
            grid = cmd_ablate(args.config, args.windows, args.ks, args.seed, args.workers, args.out)
            print(render_ablation_table(grid), end="")
        elif args.cmd == "report":
            print(cmd_report(args.results_dir), end="")
        elif args.cmd == "synth":
            cmd_synth(args.out, args.days, args.means, args.stds, args.seed, args.crash_prob,
                      args.crash_size)
            print(args.out)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
