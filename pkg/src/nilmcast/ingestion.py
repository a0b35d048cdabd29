"""CSV loading with last-known-value gap filling, and power derivatives."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import ACTIVE, CHANNEL_NAMES, N_CHANNELS, PowerSeries
from .errors import DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CsvSchema:
    timestamp: str = "timestamp"
    channels: tuple[str, ...] = CHANNEL_NAMES

    def __post_init__(self):
        if len(self.channels) != N_CHANNELS:
            raise ValueError(f"schema needs 6 channel columns, got {len(self.channels)}")


@dataclass
class GapFillReport:
    rows: int
    samples: int
    filled_samples: int
    filled_values: int
    duplicate_timestamps: int
    missing_percent: float = field(init=False)

    def __post_init__(self):
        total = self.samples * N_CHANNELS
        self.missing_percent = 100.0 * self.filled_values / total if total else 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def ingest(path, schema: CsvSchema | None = None) -> tuple[PowerSeries, GapFillReport]:
    """Load a measurement CSV into a gap-free 1 Hz series plus fill statistics.

    Missing seconds and empty cells take the most recent known value of their
    channel; cells before a channel's first value take that first value.
    Duplicate timestamps keep the last row.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    cols = [schema.timestamp, *schema.channels]
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: file is empty") from None
    missing = [c for c in cols if c not in raw.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}", line=1)
    if len(raw) == 0:
        raise DataError(f"{path}: no data rows")
    raw = raw[cols]

    numeric = {}
    for c in cols:
        s = raw[c].str.strip()
        num = pd.to_numeric(s, errors="coerce")
        bad = num.isna() & (s != "")
        if c == schema.timestamp:
            bad |= s == ""
        if bad.any():
            i = int(np.argmax(bad.to_numpy()))
            raise DataError(f"{path}: cannot parse {c}={raw[c].iloc[i]!r}", line=i + 2)
        numeric[c] = num.to_numpy(dtype=np.float64)

    ts = np.rint(numeric[schema.timestamp]).astype(np.int64)
    steps = np.diff(ts)
    if np.any(steps < 0):
        i = int(np.argmax(steps < 0)) + 1
        raise DataError(f"{path}: timestamp {ts[i]} goes backwards", line=i + 2)
    vals = np.column_stack([numeric[c] for c in schema.channels])

    dup = np.r_[steps == 0, False]
    n_dup = int(dup.sum())
    if n_dup:
        log.warning("%s: %d duplicate timestamps, keeping the last row of each", path, n_dup)
        ts, vals = ts[~dup], vals[~dup]

    T = int(ts[-1] - ts[0] + 1)
    grid = np.full((T, N_CHANNELS), np.nan)
    grid[ts - ts[0]] = vals
    n_missing = int(np.isnan(grid).sum())
    for ch in range(N_CHANNELS):
        col = grid[:, ch]
        known = ~np.isnan(col)
        if not known.any():
            raise DataError(f"{path}: channel {schema.channels[ch]} has no values")
        idx = np.where(known, np.arange(T), 0)
        np.maximum.accumulate(idx, out=idx)
        first = int(np.argmax(known))
        idx[:first] = first
        grid[:, ch] = col[idx]

    if T < 2:
        raise DataError(f"{path}: need at least 2 seconds of data")
    report = GapFillReport(
        rows=len(raw),
        samples=T,
        filled_samples=T - ts.size,
        filled_values=n_missing,
        duplicate_timestamps=n_dup,
    )
    return PowerSeries(grid, int(ts[0])), report


def load_series(path, schema: CsvSchema | None = None) -> PowerSeries:
    return ingest(path, schema)[0]


def write_series(series: PowerSeries, path, schema: CsvSchema | None = None, decimals: int = 6) -> None:
    schema = schema or CsvSchema()
    df = pd.DataFrame(series.values, columns=list(schema.channels))
    df.insert(0, schema.timestamp, series.start_timestamp + np.arange(series.T, dtype=np.int64))
    df.to_csv(path, index=False, float_format=f"%.{decimals}f", lineterminator="\n")


@dataclass(frozen=True, eq=False)
class DerivativeSeries:
    """``values[t] = P(t + 1) - P(t)`` in W/s; ``total`` sums the active channels."""

    values: np.ndarray
    total: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]


def derivative(series: PowerSeries) -> DerivativeSeries:
    v = np.asarray(series.values if isinstance(series, PowerSeries) else series, dtype=np.float64)
    if v.shape[0] < 2:
        raise ValueError("derivative needs at least 2 samples")
    dv = np.diff(v, axis=0)
    dv.setflags(write=False)
    tot = dv[:, ACTIVE].sum(axis=1)
    tot.setflags(write=False)
    return DerivativeSeries(dv, tot)
