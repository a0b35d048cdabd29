"""Error metrics, persistence baselines and summary reports.

All metrics are computed on total active power (the sum of the three
active phases).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import ACTIVE, PowerSeries

HORIZON = 900
WEEK = 7 * 86400
MAPE_FLOOR = 10.0  # W; measured samples below this are left out of MAPE


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    mape: float
    energy_e: float
    samples: int
    mape_excluded: int = 0

    def as_row(self) -> dict:
        return asdict(self)


def _total(x) -> np.ndarray:
    if isinstance(x, PowerSeries):
        return x.total_active()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[:, ACTIVE].sum(axis=1)
    return x


def metrics(measured, predicted, a: int = 0, b: int | None = None) -> Metrics:
    """RMSE, MAE, MAPE and signed energy difference on ``[a, b)``.

    Series or ``(T, 6)`` arrays are reduced to total active power; 1-D
    arrays are taken as already reduced.  Energy_E is
    ``(sum(predicted) - sum(measured)) / sum(measured) * 100``.
    """
    m, p = _total(measured), _total(predicted)
    b = m.size if b is None else b
    if not 0 <= a < b <= min(m.size, p.size):
        raise ValueError(f"empty or out-of-range evaluation window [{a}, {b})")
    m, p = m[a:b], p[a:b]
    err = p - m
    rmse = math.sqrt(float(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    # the power-mean inequality; a violation means a bookkeeping bug
    assert rmse >= mae * (1 - 1e-12) - 1e-12, (rmse, mae)
    keep = np.abs(m) >= MAPE_FLOOR
    mape = float(np.mean(np.abs(err[keep]) / np.abs(m[keep])) * 100) if keep.any() else math.nan
    total = float(m.sum())
    energy_e = (float(p.sum()) - total) / total * 100 if total != 0 else math.nan
    return Metrics(rmse, mae, mape, energy_e, int(m.size), int((~keep).sum()))


def persistence_7d(history, t0: int, horizon: int = HORIZON) -> np.ndarray:
    """Copy of the ``horizon`` samples starting exactly one week before ``t0``."""
    v = history.values if isinstance(history, PowerSeries) else np.asarray(history, dtype=np.float64)
    if t0 - WEEK < 0 or t0 - WEEK + horizon > v.shape[0]:
        raise ValueError(f"need a week of history before t0={t0}")
    return v[t0 - WEEK : t0 - WEEK + horizon].copy()


def persistence_15min(history, t0: int, horizon: int = HORIZON) -> np.ndarray:
    """Copy of the ``horizon`` samples immediately before ``t0``."""
    v = history.values if isinstance(history, PowerSeries) else np.asarray(history, dtype=np.float64)
    if t0 - horizon < 0 or t0 > v.shape[0]:
        raise ValueError(f"need {horizon} s of history before t0={t0}")
    return v[t0 - horizon : t0].copy()


BASELINES = {"persistence-7d": persistence_7d, "persistence-15min": persistence_15min}


@dataclass(frozen=True)
class Summary:
    name: str
    n: int
    mean: dict
    spread: dict
    spread_kind: str  # "sem" or "std"


def summarize(name: str, rows: list[Metrics], spread: str = "std") -> Summary:
    """Mean and spread of each metric across evaluation windows or days.

    ``spread="sem"`` gives the standard deviation of the mean (used for the
    per-day disaggregation report); ``"std"`` the sample standard deviation
    (used across forecast windows).
    """
    if not rows:
        raise ValueError("nothing to summarise")
    if spread not in ("sem", "std"):
        raise ValueError("spread must be 'sem' or 'std'")
    keys = ("rmse", "mae", "mape", "energy_e")
    mean, dev = {}, {}
    for k in keys:
        x = np.array([getattr(r, k) for r in rows], dtype=np.float64)
        x = x[np.isfinite(x)]
        mean[k] = float(x.mean()) if x.size else math.nan
        sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
        dev[k] = sd / math.sqrt(x.size) if spread == "sem" and x.size else sd
    return Summary(name, len(rows), mean, dev, spread)


def daily_metrics(measured: PowerSeries, predicted: PowerSeries, day: int = 86400) -> list[Metrics]:
    """Metrics for each whole or partial day of the two series."""
    T = min(measured.T, predicted.T)
    return [metrics(measured, predicted, a, min(a + day, T)) for a in range(0, T, day) if min(a + day, T) - a >= 1]


def write_report(summaries: list[Summary], path) -> None:
    """One row per method: mean and spread of RMSE [W], MAE [W], MAPE [%], Energy_E [%]."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["method", "n", "spread", "rmse_w", "rmse_spread", "mae_w", "mae_spread", "mape_pct", "mape_spread", "energy_e_pct", "energy_e_spread"]
        )
        for s in summaries:
            row = [s.name, s.n, s.spread_kind]
            for k in ("rmse", "mae", "mape", "energy_e"):
                row += [_fmt(s.mean[k]), _fmt(s.spread[k])]
            w.writerow(row)


def write_rows(rows: list[Metrics], labels: list, path, label_name: str = "window") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label_name, "rmse_w", "mae_w", "mape_pct", "energy_e_pct", "samples", "mape_excluded"])
        for lab, r in zip(labels, rows):
            w.writerow([lab, _fmt(r.rmse), _fmt(r.mae), _fmt(r.mape), _fmt(r.energy_e), r.samples, r.mape_excluded])


def write_plot_data(measured, predicted, path, start: int = 0) -> None:
    """Two-series plot data: ``t,measured_w,predicted_w`` on total active power."""
    m, p = _total(measured), _total(predicted)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "measured_w", "predicted_w"])
        for i, (x, y) in enumerate(zip(m.tolist(), p.tolist())):
            w.writerow([start + i, _fmt(x), _fmt(y)])


def _fmt(x: float) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.6g}"
