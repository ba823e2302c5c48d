"""Test-period performance metrics and cross-split aggregation.

Degenerate denominators yield ``None`` (rendered as ``undefined``) instead of NaN.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

PERIODS_PER_YEAR = 252
UNDEFINED = "undefined"

# display order used by every table
TABLE_COLUMNS = ("sr", "sortino", "calmar", "mdd_pct", "cr_pct", "vol_pct")
COLUMN_LABELS = {
    "sr": "SR", "sortino": "Sortino", "calmar": "Calmar",
    "mdd_pct": "MDD (%)", "cr_pct": "CR (%)", "vol_pct": "Vol (%)", "ir": "IR",
}


@dataclass
class MetricsReport:
    sr: float | None
    sortino: float | None
    calmar: float | None
    mdd_pct: float
    cr_pct: float
    vol_pct: float | None
    ir: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        def conv(v):
            if v is None or v == UNDEFINED or v == "":
                return None
            return float(v)
        return cls(**{f.name: conv(d.get(f.name)) for f in fields(cls)})


def _validate(r) -> np.ndarray:
    r = np.asarray(r, dtype=float).ravel()
    if r.size == 0:
        raise ValueError("empty return series")
    if np.any(~np.isfinite(r)) or np.any(r <= -1.0):
        raise ValueError("returns must be finite and > -1")
    return r


def wealth_path(r) -> np.ndarray:
    """W_0 = 1 followed by the running product of gross returns (length T+1)."""
    r = _validate(r)
    return np.concatenate([[1.0], np.cumprod(1.0 + r)])


def max_drawdown(wealth: np.ndarray) -> float:
    peak = np.maximum.accumulate(wealth)
    return float(np.max((peak - wealth) / peak))


def _sample_std(x: np.ndarray) -> float:
    # a constant series has zero dispersion; np.std can leave rounding residue of order 1e-19
    if x.size < 2 or np.ptp(x) == 0.0:
        return 0.0
    return float(np.std(x, ddof=1))


def compute_metrics(r, benchmark=None, rf: float = 0.0,
                    periods: int = PERIODS_PER_YEAR) -> MetricsReport:
    r = _validate(r)
    T = r.size
    W = wealth_path(r)
    ann = math.sqrt(periods)
    excess = r - rf
    mean = float(np.mean(excess))

    sd = _sample_std(r)
    sr = mean / sd * ann if sd > 0 else None
    vol = sd * ann if T >= 2 else None

    downside = np.minimum(excess, 0.0)
    dd = math.sqrt(float(np.mean(downside ** 2))) if T >= 2 else 0.0
    sortino = mean / dd * ann if dd > 0 else None  # squares of subnormal losses can underflow

    mdd = max_drawdown(W)
    if mdd > 0:
        ann_ret = W[-1] ** (periods / T) - 1.0
        calmar = ann_ret / mdd
    else:
        calmar = None

    ir = None
    if benchmark is not None:
        b = _validate(benchmark)
        if b.size != T:
            raise ValueError("benchmark must align with the return series")
        a = r - b
        sa = _sample_std(a)
        ir = float(np.mean(a)) / sa * ann if sa > 0 else None

    return MetricsReport(sr=sr, sortino=sortino, calmar=calmar, mdd_pct=mdd * 100.0,
                         cr_pct=float(W[-1] - 1.0) * 100.0, vol_pct=None if vol is None else vol * 100.0,
                         ir=ir)


@dataclass
class Aggregate:
    mean: float | None
    std: float | None
    n: int
    n_undefined: int
    single: bool = False  # std set to 0 by convention for one report


def aggregate_splits(reports: Sequence[MetricsReport]) -> dict[str, Aggregate]:
    """Per-metric sample mean and std (ddof=1) over splits, skipping undefined entries."""
    if not reports:
        raise ValueError("no reports to aggregate")
    out = {}
    for f in fields(MetricsReport):
        vals = [getattr(rep, f.name) for rep in reports]
        ok = np.array([v for v in vals if v is not None], dtype=float)
        n_undef = len(vals) - ok.size
        if ok.size == 0:
            out[f.name] = Aggregate(None, None, 0, n_undef)
        elif ok.size == 1:
            out[f.name] = Aggregate(float(ok[0]), 0.0, 1, n_undef, single=True)
        else:
            out[f.name] = Aggregate(float(ok.mean()), float(ok.std(ddof=1)), int(ok.size), n_undef)
    return out


def fmt(v: float | None, digits: int = 2) -> str:
    return UNDEFINED if v is None else f"{v:.{digits}f}"


def fmt_agg(a: Aggregate, digits: int = 2) -> str:
    if a.mean is None:
        return UNDEFINED
    return f"{a.mean:.{digits}f} ± {a.std:.{digits}f}"


def write_report(report: MetricsReport, path: str | Path, labels: dict | None = None) -> None:
    """Write a metrics report as key,value rows; a JSON twin is written next to it."""
    path = Path(path)
    row = dict(labels or {})
    row.update({k: (UNDEFINED if v is None else repr(float(v))) for k, v in report.to_dict().items()})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in row.items():
            w.writerow([k, v])
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(row, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: str | Path) -> tuple[MetricsReport, dict]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    d = {k: v for k, v in rows}
    names = {f.name for f in fields(MetricsReport)}
    labels = {k: v for k, v in d.items() if k not in names}
    return MetricsReport.from_dict(d), labels
