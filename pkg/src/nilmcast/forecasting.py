"""15-minute load forecasts from integrated device states.

State changes are summed over time into per-device on/off states.  A network
sees the past hour of states, the same quarter hour one week earlier and the
time of day and week, and outputs the device states over the next 900 s.
Differentiating those states gives probabilistic state changes, which the
forward model turns into a power forecast on top of the last measured
sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DeviceProfile, PowerSeries, StateChangesMatrix, reconstruct
from .mlp import Mlp, TrainConfig, TrainLog, train

DAY = 86400
WEEK = 7 * DAY
HORIZON = 900


# -- states ------------------------------------------------------------------

def state_scale(S: StateChangesMatrix) -> np.ndarray:
    """Per-device maximum absolute state, 1 for devices that never change."""
    scale = np.ones(S.M)
    for i in range(S.M):
        _, v = S.column(i)
        if v.size:
            m = float(np.max(np.abs(np.cumsum(v))))
            scale[i] = m if m > 0 else 1.0
    return scale


def integrate_states(S: StateChangesMatrix, scale=None) -> np.ndarray:
    """Dense ``(T, M)`` running sum of the state changes, divided by ``scale``.

    A change at ``t`` is part of the state from ``t`` on, so ``+1`` at 5 and
    ``-1`` at 9 give state 1 on ``[5, 9)``.  ``scale=None`` leaves the raw sums.
    """
    dense = np.zeros((S.T, S.M))
    np.add.at(dense, (S.times, S.devices), S.values)
    states = np.cumsum(dense, axis=0)
    if scale is not None:
        states /= np.asarray(scale, dtype=np.float64)
    return states


def differentiate_states(states, initial=None, probabilistic: bool = False, scale=None) -> StateChangesMatrix:
    """Inverse of :func:`integrate_states`.

    ``initial`` is the state just before the first row (zeros by default);
    ``scale`` undoes the normalisation.  Float outputs give the probabilistic
    variant, clipped to ``[-1, 1]``.
    """
    x = np.asarray(states, dtype=np.float64)
    if scale is not None:
        x = x * np.asarray(scale, dtype=np.float64)
    prev = np.zeros(x.shape[1]) if initial is None else np.asarray(initial, dtype=np.float64)
    changes = np.diff(np.vstack([prev[None, :], x]), axis=0)
    if probabilistic:
        return StateChangesMatrix.from_dense(np.clip(changes, -1.0, 1.0), probabilistic=True)
    return StateChangesMatrix.from_dense(np.rint(changes), probabilistic=False)


class StateIntegral:
    """Window sums of device states without building the dense state matrix.

    For changes ``s`` at times ``tau``, the sum of the state over samples
    ``0 .. x-1`` is ``x * A(x) - B(x)`` with ``A(x) = sum_{tau < x} s`` and
    ``B(x) = sum_{tau < x} s * tau``.
    """

    def __init__(self, S: StateChangesMatrix, scale=None):
        self.T, self.M = S.T, S.M
        self.scale = np.ones(S.M) if scale is None else np.asarray(scale, dtype=np.float64)
        self._cols = []
        for i in range(S.M):
            t, v = S.column(i)
            t = t.astype(np.float64)
            self._cols.append((t, np.concatenate([[0.0], np.cumsum(v)]), np.concatenate([[0.0], np.cumsum(v * t)])))

    def cumulative(self, x: np.ndarray) -> np.ndarray:
        """``sum_{t < x} state(t)`` for each device, shape ``x.shape + (M,)``."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(x.shape + (self.M,))
        for i, (t, A, B) in enumerate(self._cols):
            k = np.searchsorted(t, x, side="left")
            out[..., i] = x * A[k] - B[k]
        return out / self.scale

    def state_at(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.cumulative(t + 1) - self.cumulative(t)

    def bin_means(self, starts: np.ndarray, bin_len: int, n_bins: int) -> np.ndarray:
        """Mean state over ``n_bins`` consecutive bins from each start: ``(len(starts), M, n_bins)``."""
        starts = np.asarray(starts, dtype=np.int64)
        edges = starts[:, None] + bin_len * np.arange(n_bins + 1)[None, :]
        C = self.cumulative(edges)  # (n, n_bins + 1, M)
        return np.transpose(np.diff(C, axis=1) / bin_len, (0, 2, 1))


# -- features ----------------------------------------------------------------

@dataclass(frozen=True)
class FeatureLayout:
    M: int
    past_seconds: int = 3600
    past_bins: int = 60
    week_bins: int = 15
    horizon: int = HORIZON
    out_bins: int = 60

    def __post_init__(self):
        if self.past_seconds % self.past_bins or self.horizon % self.week_bins or self.horizon % self.out_bins:
            raise ValueError("bin counts must divide their windows evenly")

    @property
    def n_inputs(self) -> int:
        return self.M * (self.past_bins + self.week_bins) + 3

    @property
    def n_outputs(self) -> int:
        return self.M * self.out_bins

    def describe(self) -> dict:
        """Human-readable map of the flattened input and output vectors."""
        past = self.M * self.past_bins
        week = self.M * self.week_bins
        return {
            **asdict(self),
            "inputs": [
                {"block": "past_hour", "offset": 0, "length": past, "order": "device-major",
                 "bin_seconds": self.past_seconds // self.past_bins, "window": [-self.past_seconds, 0]},
                {"block": "week_before", "offset": past, "length": week, "order": "device-major",
                 "bin_seconds": self.horizon // self.week_bins, "window": [-WEEK, -WEEK + self.horizon]},
                {"block": "time", "offset": past + week, "length": 3, "names": ["sin_time_of_day", "cos_time_of_day", "weekday"]},
            ],
            "outputs": {"length": self.n_outputs, "order": "device-major", "bin_seconds": self.horizon // self.out_bins,
                        "window": [0, self.horizon]},
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.describe(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "FeatureLayout":
        with open(path) as fh:
            d = json.load(fh)
        return cls(**{k: d[k] for k in ("M", "past_seconds", "past_bins", "week_bins", "horizon", "out_bins")})


def time_features(timestamp) -> np.ndarray:
    """``sin`` and ``cos`` of the time of day (UTC) and a weekday scalar.

    Monday is 0 and Friday 1 in equal steps; weekend days are clipped to 1.
    """
    ts = np.asarray(timestamp, dtype=np.int64)
    tau = np.mod(ts, DAY)
    weekday = np.mod(ts // DAY + 3, 7)  # 1970-01-01 was a Thursday
    phase = 2 * np.pi * tau / DAY
    return np.stack([np.sin(phase), np.cos(phase), np.minimum(weekday, 4) / 4.0], axis=-1)


def is_workday(timestamp) -> np.ndarray:
    ts = np.asarray(timestamp, dtype=np.int64)
    return np.mod(ts // DAY + 3, 7) < 5


def build_features(integral: StateIntegral, t0, start_timestamp: int, layout: FeatureLayout) -> np.ndarray:
    """Input rows for prediction starts ``t0`` (sample indices), shape ``(len(t0), n_inputs)``."""
    t0 = np.atleast_1d(np.asarray(t0, dtype=np.int64))
    if np.any(t0 - WEEK < 0) or np.any(t0 - layout.past_seconds < 0):
        raise ValueError("features need a full week of history before every start")
    if np.any(t0 - WEEK + layout.horizon > integral.T):
        raise ValueError("start lies beyond the state history")
    past = integral.bin_means(t0 - layout.past_seconds, layout.past_seconds // layout.past_bins, layout.past_bins)
    week = integral.bin_means(t0 - WEEK, layout.horizon // layout.week_bins, layout.week_bins)
    n = t0.size
    return np.hstack([past.reshape(n, -1), week.reshape(n, -1), time_features(start_timestamp + t0)])


def build_targets(integral: StateIntegral, t0, layout: FeatureLayout) -> np.ndarray:
    t0 = np.atleast_1d(np.asarray(t0, dtype=np.int64))
    if np.any(t0 + layout.horizon > integral.T):
        raise ValueError("target window runs past the state history")
    fut = integral.bin_means(t0, layout.horizon // layout.out_bins, layout.out_bins)
    return fut.reshape(t0.size, -1)


def workday_starts(T: int, start_timestamp: int, first: int, last: int, stride: int, horizon: int = HORIZON) -> np.ndarray:
    """Prediction starts in ``[first, last)`` every ``stride`` s on Monday to Friday with a full horizon."""
    t0 = np.arange(max(first, WEEK), min(last, T - horizon + 1), stride, dtype=np.int64)
    return t0[is_workday(start_timestamp + t0)]


# -- model -------------------------------------------------------------------

@dataclass(frozen=True)
class ForecastConfig:
    hidden: int = 214
    layers: int = 3
    dropout: float = 0.05
    lr: float = 0.01
    batch: int = 2048
    momentum: float = 0.0
    epochs: int = 300
    patience: int = 5
    val_fraction: float = 0.05
    loss: str = "msle"
    stride: int = 60
    out_bins: int = 60
    past_bins: int = 60
    week_bins: int = 15
    threshold: float = 0.1
    optimizer: str = "adam"  # plain "sgd" at lr 0.01 is far too slow here
    seed: int = 0


@dataclass
class Forecaster:
    model: Mlp
    layout: FeatureLayout
    scale: np.ndarray
    log: TrainLog = field(default_factory=TrainLog)

    def save(self, path, layout_path=None, log_path=None) -> None:
        self.model.save(path, {"layout": asdict(self.layout), "scale": self.scale.tolist()})
        if layout_path is not None:
            self.layout.to_json(layout_path)
        if log_path is not None:
            self.log.to_csv(log_path)

    @classmethod
    def load(cls, path) -> "Forecaster":
        model, meta = Mlp.load(path)
        return cls(model, FeatureLayout(**meta["layout"]), np.asarray(meta["scale"], dtype=np.float64))


def train_forecaster(S: StateChangesMatrix, start_timestamp: int, cfg: ForecastConfig = ForecastConfig(), train_end: int | None = None) -> Forecaster:
    """Fit the network on workday starts before ``train_end`` (default: whole matrix)."""
    train_end = S.T if train_end is None else train_end
    layout = FeatureLayout(S.M, past_bins=cfg.past_bins, week_bins=cfg.week_bins, out_bins=cfg.out_bins)
    scale = state_scale(S)
    integral = StateIntegral(S, scale)
    t0 = workday_starts(S.T, start_timestamp, WEEK, train_end - HORIZON + 1, cfg.stride)
    if t0.size < 2:
        raise ValueError("not enough workday history after the first week to train on")
    X = build_features(integral, t0, start_timestamp, layout)
    Y = build_targets(integral, t0, layout)
    sizes = (layout.n_inputs, *([cfg.hidden] * cfg.layers), layout.n_outputs)
    model = Mlp.create(sizes, seed=cfg.seed, dropout=cfg.dropout)
    tcfg = TrainConfig(cfg.lr, cfg.batch, cfg.momentum, cfg.epochs, cfg.patience, cfg.val_fraction, cfg.loss, cfg.seed, cfg.optimizer)
    model, log = train(model, X, Y, tcfg)
    return Forecaster(model, layout, scale, log)


@dataclass
class ForecastResult:
    changes: StateChangesMatrix  # probabilistic, (horizon, M)
    series: PowerSeries
    epsilon: np.ndarray
    states: np.ndarray  # (horizon, M) predicted normalised states


def predict_and_reconstruct(
    forecaster: Forecaster,
    features: np.ndarray,
    profiles: list[DeviceProfile],
    last_measured,
    current_state,
    threshold: float = 0.1,
    start_timestamp: int = 0,
) -> ForecastResult:
    """One 900 s forecast from a single feature row.

    ``current_state`` is the normalised device state at the last known
    second; the first predicted bin is differentiated against it.  The
    always-on term is the last measured power vector, held constant.
    """
    layout = forecaster.layout
    out = forecaster.model.predict(np.asarray(features, dtype=np.float64).reshape(1, -1))[0]
    bins = out.reshape(layout.M, layout.out_bins).T
    states = np.repeat(bins, layout.horizon // layout.out_bins, axis=0)
    changes = differentiate_states(states, initial=current_state, probabilistic=True, scale=forecaster.scale)
    eps = np.asarray(last_measured, dtype=np.float64).reshape(6)
    series = reconstruct(changes, profiles, eps, threshold=threshold, start_timestamp=start_timestamp)
    return ForecastResult(changes, series, eps, states)


def forecast_at(
    forecaster: Forecaster,
    history: StateChangesMatrix,
    measured: PowerSeries,
    profiles: list[DeviceProfile],
    t0: int,
    threshold: float = 0.1,
) -> ForecastResult:
    """Forecast ``[t0, t0 + 900)`` from state history and measurements before ``t0``."""
    if t0 < 1 or t0 > measured.T:
        raise ValueError(f"t0={t0} outside the measured series")
    integral = StateIntegral(history, forecaster.scale)
    X = build_features(integral, [t0], measured.start_timestamp, forecaster.layout)
    current = integral.state_at(np.array([t0 - 1]))[0]
    return predict_and_reconstruct(
        forecaster, X[0], profiles, measured.values[t0 - 1], current, threshold, measured.start_timestamp + t0
    )
