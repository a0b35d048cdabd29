"""Switching-event detection on the total active power derivative."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import N_CHANNELS
from .ingestion import DerivativeSeries

ON = 1
OFF = -1
DEFAULT_THRESHOLD = 500.0


@dataclass(frozen=True)
class Event:
    t: int
    kind: int
    signature: np.ndarray

    @property
    def is_on(self) -> bool:
        return self.kind == ON


@dataclass(frozen=True, eq=False)
class EventSet:
    """Events ordered by time, stored column-wise."""

    times: np.ndarray
    kinds: np.ndarray
    signatures: np.ndarray
    threshold: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.int64).reshape(-1)
        k = np.asarray(self.kinds, dtype=np.int8).reshape(-1)
        sig = np.asarray(self.signatures, dtype=np.float64).reshape(-1, N_CHANNELS)
        if not (t.size == k.size == sig.shape[0]):
            raise ValueError("times, kinds and signatures must have equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("event times must be strictly increasing")
        for a in (t, k, sig):
            a.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "kinds", k)
        object.__setattr__(self, "signatures", sig)

    def __len__(self) -> int:
        return int(self.times.size)

    def __iter__(self) -> Iterator[Event]:
        for t, k, s in zip(self.times, self.kinds, self.signatures):
            yield Event(int(t), int(k), s)

    def select(self, mask) -> "EventSet":
        return EventSet(self.times[mask], self.kinds[mask], self.signatures[mask], self.threshold)

    def on(self) -> "EventSet":
        return self.select(self.kinds == ON)

    def off(self) -> "EventSet":
        return self.select(self.kinds == OFF)

    def between(self, a: int, b: int) -> "EventSet":
        return self.select((self.times >= a) & (self.times < b))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "kind", *(f"dP{i}" for i in range(N_CHANNELS))])
            for e in self:
                w.writerow([e.t, "ON" if e.is_on else "OFF", *map(repr, e.signature.tolist())])

    @classmethod
    def from_csv(cls, path, threshold: float = float("nan")) -> "EventSet":
        times, kinds, sigs = [], [], []
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            next(r)
            for row in r:
                times.append(int(row[0]))
                kinds.append(ON if row[1] == "ON" else OFF)
                sigs.append([float(x) for x in row[2:]])
        return cls(np.array(times), np.array(kinds), np.array(sigs).reshape(-1, N_CHANNELS), threshold)


def detect_events(deriv: DerivativeSeries, threshold: float = DEFAULT_THRESHOLD) -> EventSet:
    """Strict local maxima (ON) and minima (OFF) of the total derivative.

    ``t`` is an ON-event when ``d[t-1] < d[t] > d[t+1]`` and ``d[t] >= threshold``;
    OFF-events mirror this with reversed signs.  The first and last derivative
    samples never qualify.
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    d = deriv.total
    if d.size < 3:
        raise ValueError("need at least 3 derivative samples")
    c, left, right = d[1:-1], d[:-2], d[2:]
    on = (left < c) & (right < c) & (c >= threshold)
    off = (left > c) & (right > c) & (c <= -threshold)
    idx = np.nonzero(on | off)[0]
    times = idx + 1
    kinds = np.where(on[idx], ON, OFF)
    return EventSet(times, kinds, deriv.values[times], float(threshold))
