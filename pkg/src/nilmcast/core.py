"""Shared data types and the aggregate-signal forward model.

The aggregate power of a building is modelled as a sum of device profiles
placed at their switch-on times, a stable-state step that is cancelled at
switch-off, and an always-on component ``epsilon``.

Timing convention: a state change recorded at index ``t`` acts on the power
from ``t + 1`` onwards, because an event at ``t`` is detected from the
derivative ``P(t + 1) - P(t)``.  The dynamic profile sample ``l(k)``
(``k = 1..d``) therefore lands at ``t + k``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

N_CHANNELS = 6
ACTIVE = slice(0, 3)
CHANNEL_NAMES = ("P0", "P1", "P2", "P3", "P4", "P5")

#: a profile sample counts as "on" when its total active power exceeds this (W)
ZERO_TOLERANCE = 1.0
#: magnitude below which probabilistic state changes are ignored
PROBABILISTIC_THRESHOLD = 0.1


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PowerSample:
    t: int
    p: np.ndarray


@dataclass(frozen=True, eq=False)
class PowerSeries:
    """Gap-free 1 Hz six-channel record.

    ``values[t]`` holds ``[P0, P1, P2]`` (active, W) then ``[P3, P4, P5]``
    (reactive, var) for sample ``t``; ``start_timestamp`` is the epoch second
    of sample 0.
    """

    values: np.ndarray
    start_timestamp: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, order="C")
        if v.ndim != 2 or v.shape[1] != N_CHANNELS:
            raise DimensionError(f"power series must have shape (T, 6), got {v.shape}")
        if v.shape[0] < 2:
            raise ValueError(f"power series needs at least 2 samples, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("power series contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))
        object.__setattr__(self, "start_timestamp", int(self.start_timestamp))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    def __len__(self) -> int:
        return self.T

    def total_active(self) -> np.ndarray:
        return self.values[:, ACTIVE].sum(axis=1)

    def sample(self, t: int) -> PowerSample:
        return PowerSample(int(t), self.values[t].copy())

    def slice(self, a: int, b: int) -> "PowerSeries":
        return PowerSeries(self.values[a:b], self.start_timestamp + a)


def last_nonzero_sample(dynamic: np.ndarray, tol: float = ZERO_TOLERANCE) -> np.ndarray | None:
    """Last row of ``dynamic`` whose total active power exceeds ``tol``, or None."""
    on = np.nonzero(dynamic[:, ACTIVE].sum(axis=1) > tol)[0]
    if on.size == 0:
        return None
    return dynamic[on[-1]].copy()


@dataclass(frozen=True, eq=False)
class DeviceProfile:
    """Dynamic profile ``l(1..d)`` plus stable-state vector of one device mode.

    ``stable_state`` defaults to the last dynamic sample whose total active
    power exceeds :data:`ZERO_TOLERANCE` (zeros if there is none).
    """

    id: int
    dynamic: np.ndarray
    cluster_center: np.ndarray = field(default_factory=lambda: np.zeros(N_CHANNELS))
    stable_state: np.ndarray | None = None

    def __post_init__(self):
        dyn = np.array(self.dynamic, dtype=np.float64, order="C")
        if dyn.ndim != 2 or dyn.shape[1] != N_CHANNELS or dyn.shape[0] < 1:
            raise DimensionError(f"dynamic profile must have shape (d>=1, 6), got {dyn.shape}")
        if not np.all(np.isfinite(dyn)):
            raise ValueError("dynamic profile contains non-finite values")
        center = np.array(self.cluster_center, dtype=np.float64).reshape(-1)
        if center.shape != (N_CHANNELS,):
            raise DimensionError("cluster_center must be a 6-vector")
        expected = last_nonzero_sample(dyn)
        if expected is None:
            expected = np.zeros(N_CHANNELS)
        if self.stable_state is None:
            stable = expected
        else:
            stable = np.array(self.stable_state, dtype=np.float64).reshape(-1)
            if stable.shape != (N_CHANNELS,):
                raise DimensionError("stable_state must be a 6-vector")
            if not np.array_equal(stable, expected):
                raise ValueError("stable_state must equal the last non-zero dynamic sample")
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "dynamic", _readonly(dyn))
        object.__setattr__(self, "cluster_center", _readonly(center))
        object.__setattr__(self, "stable_state", _readonly(stable))

    @property
    def duration(self) -> int:
        return self.dynamic.shape[0]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "duration": self.duration,
            "cluster_center": self.cluster_center.tolist(),
            "stable_state": self.stable_state.tolist(),
            "dynamic": self.dynamic.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        prof = cls(d["id"], d["dynamic"], d["cluster_center"], d.get("stable_state"))
        if "duration" in d and int(d["duration"]) != prof.duration:
            raise ValueError(f"profile {prof.id}: duration {d['duration']} != len(dynamic) {prof.duration}")
        return prof


def save_profiles(profiles: Sequence[DeviceProfile], path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in profiles], indent=1) + "\n")


def load_profiles(path) -> list[DeviceProfile]:
    return [DeviceProfile.from_dict(d) for d in json.loads(Path(path).read_text())]


@dataclass(frozen=True, eq=False)
class StateChangesMatrix:
    """Sparse ``(T, M)`` matrix of device state changes.

    Entries are stored as triplets sorted by ``(time, device)``; zeros are
    never stored.  The discrete variant holds ``+1``/``-1`` and every device
    column must alternate ON, OFF, ON, ... starting from the off state.  The
    probabilistic variant holds reals in ``[-1, 1]``.
    """

    T: int
    M: int
    times: np.ndarray
    devices: np.ndarray
    values: np.ndarray
    probabilistic: bool = False

    def __post_init__(self):
        T, M = int(self.T), int(self.M)
        if T < 0 or M < 0:
            raise ValueError("matrix shape must be non-negative")
        t = np.asarray(self.times, dtype=np.int64).reshape(-1)
        dev = np.asarray(self.devices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not (t.size == dev.size == val.size):
            raise DimensionError("times, devices and values must have equal length")
        keep = val != 0
        t, dev, val = t[keep], dev[keep], val[keep]
        if t.size and (t.min() < 0 or t.max() >= T or dev.min() < 0 or dev.max() >= M):
            raise DimensionError(f"entry outside matrix shape ({T}, {M})")
        order = np.lexsort((dev, t))
        t, dev, val = t[order], dev[order], val[order]
        if t.size > 1:
            dup = (np.diff(t) == 0) & (np.diff(dev) == 0)
            if dup.any():
                i = int(np.nonzero(dup)[0][0])
                raise ValueError(f"duplicate entry at t={t[i]}, device={dev[i]}")
        if self.probabilistic:
            if np.any(np.abs(val) > 1.0) or not np.all(np.isfinite(val)):
                raise ValueError("probabilistic entries must lie in [-1, 1]")
        else:
            if not np.all((val == 1.0) | (val == -1.0)):
                raise ValueError("discrete entries must be -1, 0 or +1")
            _check_alternating(dev, val)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "devices", _readonly(dev))
        object.__setattr__(self, "values", _readonly(val))
        object.__setattr__(self, "probabilistic", bool(self.probabilistic))

    @classmethod
    def empty(cls, T: int, M: int, probabilistic: bool = False) -> "StateChangesMatrix":
        z = np.zeros(0)
        return cls(T, M, z, z, z, probabilistic)

    @classmethod
    def from_triplets(cls, T: int, M: int, triplets: Iterable[tuple], probabilistic: bool = False):
        rows = list(triplets)
        if not rows:
            return cls.empty(T, M, probabilistic)
        t, d, v = zip(*rows)
        return cls(T, M, np.array(t), np.array(d), np.array(v, dtype=float), probabilistic)

    @classmethod
    def from_dense(cls, dense: np.ndarray, probabilistic: bool = False) -> "StateChangesMatrix":
        dense = np.asarray(dense)
        if dense.ndim != 2:
            raise DimensionError("dense state changes must be 2-D")
        t, d = np.nonzero(dense)
        return cls(dense.shape[0], dense.shape[1], t, d, dense[t, d], probabilistic)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.T, self.M)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.nnz

    def triplets(self) -> list[tuple[int, int, float]]:
        return list(zip(self.times.tolist(), self.devices.tolist(), self.values.tolist()))

    def column(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        sel = self.devices == i
        return self.times[sel], self.values[sel]

    def equals(self, other: "StateChangesMatrix") -> bool:
        return (
            self.shape == other.shape
            and self.probabilistic == other.probabilistic
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.devices, other.devices)
            and np.array_equal(self.values, other.values)
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "device", "value"])
            for t, d, v in self.triplets():
                w.writerow([t, d, int(v) if not self.probabilistic else repr(v)])

    @classmethod
    def from_csv(cls, path, T: int | None = None, M: int | None = None, probabilistic: bool = False):
        rows = []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if header != ["t", "device", "value"]:
                raise ValueError(f"{path}: expected header t,device,value")
            for row in r:
                rows.append((int(row[0]), int(row[1]), float(row[2])))
        if T is None:
            T = max((r[0] for r in rows), default=-1) + 1
        if M is None:
            M = max((r[1] for r in rows), default=-1) + 1
        return cls.from_triplets(T, M, rows, probabilistic)


def _check_alternating(devices: np.ndarray, values: np.ndarray) -> None:
    if devices.size == 0:
        return
    order = np.argsort(devices, kind="stable")
    dev, val = devices[order], values[order]
    starts = np.r_[0, np.nonzero(np.diff(dev))[0] + 1]
    for s, e in zip(starts, np.r_[starts[1:], dev.size]):
        state = np.cumsum(val[s:e])
        if state.min() < 0 or state.max() > 1:
            raise ValueError(f"device {dev[s]}: state leaves {{0, 1}} (double ON or OFF while off)")


def densify(S: StateChangesMatrix) -> np.ndarray:
    """Dense ``(T, M)`` array; int8 for discrete, float64 for probabilistic."""
    out = np.zeros(S.shape, dtype=np.float64 if S.probabilistic else np.int8)
    out[S.times, S.devices] = S.values
    return out


def _as_epsilon(epsilon, T: int) -> np.ndarray:
    if isinstance(epsilon, PowerSeries):
        epsilon = epsilon.values
    eps = np.asarray(epsilon, dtype=np.float64)
    if eps.shape == (N_CHANNELS,):
        return np.broadcast_to(eps, (T, N_CHANNELS))
    if eps.shape != (T, N_CHANNELS):
        raise DimensionError(f"epsilon must be a 6-vector or shape ({T}, 6), got {eps.shape}")
    return eps


def accumulate(
    out: np.ndarray,
    start: int,
    times: np.ndarray,
    devices: np.ndarray,
    weights: np.ndarray,
    profiles: Sequence[DeviceProfile],
    paired: bool = True,
) -> np.ndarray:
    """Add device contributions to ``out``, which covers ``[start, start + len(out))``.

    Events may lie before ``start`` (devices carried in from earlier spans).
    With ``paired`` each ON is matched to the device's next OFF: the dynamic
    profile is cut at the OFF and the stable state runs until it, so the
    device contributes nothing afterwards.  Unpaired OFFs subtract the stable
    state.  Without ``paired`` (probabilistic changes) positive entries add
    ``w * (dynamic, then stable)`` and negative entries add ``w * stable``,
    both running to the end of the span.
    """
    end = start + out.shape[0]
    order = np.lexsort((times, devices))
    times, devices, weights = times[order], devices[order], weights[order]

    def add(lo, hi, value):
        # value applied on absolute times [lo, hi)
        lo, hi = max(lo, start), min(hi, end)
        if hi > lo:
            out[lo - start : hi - start] += value

    def add_dynamic(prof, t_on, stop, w):
        # dynamic sample k (0-based) at t_on + 1 + k, for absolute times < stop
        lo = max(t_on + 1, start)
        hi = min(t_on + 1 + prof.duration, stop, end)
        if hi > lo:
            seg = prof.dynamic[lo - t_on - 1 : hi - t_on - 1]
            out[lo - start : hi - start] += seg if w == 1.0 else w * seg

    n = times.size
    k = 0
    while k < n:
        i, t, w = int(devices[k]), int(times[k]), float(weights[k])
        prof = profiles[i]
        if not paired:
            if w > 0:
                add_dynamic(prof, t, end, w)
                add(t + 1 + prof.duration, end, w * prof.stable_state)
            else:
                add(t + 1, end, w * prof.stable_state)
            k += 1
            continue
        if w > 0:
            nxt = k + 1
            t_off = None
            if nxt < n and devices[nxt] == i and weights[nxt] < 0:
                t_off = int(times[nxt])
            stop = end if t_off is None else t_off + 1
            add_dynamic(prof, t, stop, w)
            add(t + 1 + prof.duration, stop, w * prof.stable_state)
            k += 2 if t_off is not None else 1
        else:
            add(t + 1, end, w * prof.stable_state)
            k += 1
    return out


def reconstruct(
    S: StateChangesMatrix,
    profiles: Sequence[DeviceProfile],
    epsilon,
    T: int | None = None,
    *,
    threshold: float = PROBABILISTIC_THRESHOLD,
    start_timestamp: int = 0,
) -> PowerSeries:
    """Forward model: power implied by state changes, profiles and ``epsilon``.

    For a probabilistic matrix only entries with ``|s| > threshold`` are used
    and each contributes linearly in ``s``.
    """
    if T is None:
        T = S.T
    if T < 0:
        raise ValueError(f"T must be non-negative, got {T}")
    if len(profiles) != S.M:
        raise DimensionError(f"{S.M} device columns but {len(profiles)} profiles")
    out = np.array(_as_epsilon(epsilon, T), dtype=np.float64, copy=True)
    t, d, v = S.times, S.devices, S.values
    if S.probabilistic:
        keep = np.abs(v) > threshold
        t, d, v = t[keep], d[keep], v[keep]
    sel = t < T
    accumulate(out, 0, t[sel], d[sel], v[sel], profiles, paired=not S.probabilistic)
    return PowerSeries(out, start_timestamp)
