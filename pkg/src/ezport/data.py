"""Price ingestion, simple returns, winsorization and chronological splits."""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class PriceTable:
    dates: list[dt.date]
    assets: list[str]
    prices: np.ndarray  # (T, n)

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        if self.prices.shape != (len(self.dates), len(self.assets)):
            raise ValueError("prices shape does not match dates x assets")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")


@dataclass
class ReturnsTable:
    dates: list[dt.date]  # date at which each return is realized
    assets: list[str]
    returns: np.ndarray  # (T-1, n); row t is the move from price row t to t+1

    def __post_init__(self):
        self.returns = np.asarray(self.returns, dtype=float)
        if self.returns.shape != (len(self.dates), len(self.assets)):
            raise ValueError("returns shape does not match dates x assets")

    def __len__(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    def slice(self, start: int, stop: int) -> "ReturnsTable":
        return ReturnsTable(self.dates[start:stop], list(self.assets), self.returns[start:stop].copy())


@dataclass(frozen=True)
class SplitSpec:
    split_id: int
    train_ratio: float
    train_range: tuple[int, int]  # half-open [start, stop)
    test_range: tuple[int, int]


def _parse_date(s: str) -> dt.date:
    return dt.date.fromisoformat(s.strip())


def load_prices(path: str | Path, delimiter: str = ",", max_missing_frac: float = 0.1) -> PriceTable:
    """Read a dated price table (header row, ISO dates in column 0, empty cell = missing).

    Assets missing in more than `max_missing_frac` of rows are dropped. Remaining gaps
    are forward-filled and leading rows that are still incomplete are removed.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r and any(c.strip() for c in r)]
    if len(rows) < 3:
        raise ValueError(f"{path}: need a header and at least 2 data rows")
    header = rows[0]
    assets = [a.strip() for a in header[1:]]
    if not assets:
        raise ValueError(f"{path}: no asset columns")
    body = {}
    for i, r in enumerate(rows[1:], start=2):
        try:
            d = _parse_date(r[0])
        except ValueError as e:
            raise ValueError(f"{path}:{i}: bad date {r[0]!r}") from e
        if d in body:
            raise ValueError(f"{path}:{i}: duplicate date {d}")
        cells = r[1:] + [""] * (len(assets) - len(r) + 1)
        vals = []
        for c in cells[:len(assets)]:
            c = c.strip()
            if not c:
                vals.append(np.nan)
                continue
            try:
                vals.append(float(c))
            except ValueError as e:
                raise ValueError(f"{path}:{i}: non-numeric cell {c!r}") from e
        body[d] = vals
    dates = sorted(body)
    P = np.array([body[d] for d in dates], dtype=float)
    P[P <= 0] = np.nan

    keep = np.isnan(P).mean(axis=0) <= max_missing_frac
    if not keep.any():
        raise ValueError(f"{path}: no asset has sufficient history")
    P = P[:, keep]
    assets = [a for a, k in zip(assets, keep) if k]

    P = forward_fill(P)
    complete = ~np.isnan(P).any(axis=1)
    first = int(np.argmax(complete)) if complete.any() else len(dates)
    P, dates = P[first:], dates[first:]
    if len(dates) < 2:
        raise ValueError(f"{path}: fewer than 2 complete rows after filling")
    return PriceTable(dates, assets, P)


def forward_fill(P: np.ndarray) -> np.ndarray:
    P = np.array(P, dtype=float)
    for t in range(1, P.shape[0]):
        miss = np.isnan(P[t])
        P[t, miss] = P[t - 1, miss]
    return P


def simple_returns(prices: PriceTable) -> ReturnsTable:
    P = prices.prices
    if P.shape[0] < 2:
        raise ValueError("need at least 2 price rows")
    R = (P[1:] - P[:-1]) / P[:-1]
    return ReturnsTable(list(prices.dates[1:]), list(prices.assets), R)


def winsor_bounds(returns: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 <= q < 0.5:
        raise ValueError(f"winsor quantile must lie in [0, 0.5), got {q}")
    return np.quantile(returns, q, axis=0), np.quantile(returns, 1.0 - q, axis=0)


def winsorize(table: ReturnsTable, q: float, fit_range: tuple[int, int] | None = None) -> ReturnsTable:
    """Clamp each column to its [q, 1-q] empirical quantiles, fitted on `fit_range` rows."""
    R = table.returns
    lo_i, hi_i = fit_range if fit_range is not None else (0, len(table))
    lo, hi = winsor_bounds(R[lo_i:hi_i], q)
    out = np.clip(R, lo, hi)
    if np.any(out <= -1.0):
        raise ValueError("a return <= -1 survived winsorization")
    return ReturnsTable(list(table.dates), list(table.assets), out)


def compute_returns(prices: PriceTable, winsor_q: float = 0.005,
                    fit_range: tuple[int, int] | None = None) -> ReturnsTable:
    """Simple returns (P_t - P_{t-1}) / P_{t-1}, winsorized per asset."""
    return winsorize(simple_returns(prices), winsor_q, fit_range)


def make_splits(returns: ReturnsTable | int, n_splits: int = 10, ratio_min: float = 0.5,
                ratio_max: float = 0.9) -> list[SplitSpec]:
    """Chronological train/test splits with train ratios spaced evenly in [min, max]."""
    n = returns if isinstance(returns, int) else len(returns)
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    if not 0.0 < ratio_min <= ratio_max < 1.0:
        raise ValueError("need 0 < ratio_min <= ratio_max < 1")
    specs = []
    for k in range(n_splits):
        frac = k / (n_splits - 1) if n_splits > 1 else 0.0
        ratio = ratio_min + (ratio_max - ratio_min) * frac
        # guard against 0.1 + 0.2 style representation error pushing floor down by one
        b = int(math.floor(ratio * n + 1e-9))
        if b <= 0 or b >= n:
            raise ValueError(f"split {k + 1}: empty train or test range (boundary {b} of {n})")
        specs.append(SplitSpec(k + 1, ratio, (0, b), (b, n)))
    return specs


def write_returns(table: ReturnsTable, path: str | Path, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["date"] + list(table.assets))
        for d, row in zip(table.dates, table.returns):
            w.writerow([d.isoformat()] + [repr(float(x)) for x in row])


def read_returns(path: str | Path, delimiter: str = ",") -> ReturnsTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    if len(rows) < 2:
        raise ValueError(f"{path}: empty returns file")
    assets = rows[0][1:]
    dates = [_parse_date(r[0]) for r in rows[1:]]
    R = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=float)
    return ReturnsTable(dates, assets, R)


def write_prices(table: PriceTable, path: str | Path, delimiter: str = ",") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["date"] + list(table.assets))
        for d, row in zip(table.dates, table.prices):
            w.writerow([d.isoformat()] + [repr(float(x)) for x in row])


def synthetic_prices(n_days: int, means, stds, seed: int = 0, start: str = "2015-01-02",
                     crash_prob: float = 0.0, crash_size=None) -> PriceTable:
    """I.i.d. normal daily returns per asset, optional rare crash jumps; business-day dates."""
    rng = np.random.default_rng(seed)
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    R = rng.normal(means, stds, size=(n_days - 1, means.size))
    if crash_prob > 0:
        jumps = rng.random(n_days - 1) < crash_prob
        R[jumps] += np.asarray(crash_size, dtype=float)
    R = np.maximum(R, -0.95)
    P = 100.0 * np.vstack([np.ones(means.size), np.cumprod(1.0 + R, axis=0)])
    d0 = dt.date.fromisoformat(start)
    dates = []
    d = d0
    while len(dates) < n_days:
        if d.weekday() < 5:
            dates.append(d)
        d += dt.timedelta(days=1)
    names = [chr(ord("A") + i) if means.size <= 26 else f"X{i:03d}" for i in range(means.size)]
    return PriceTable(dates, names, P)
