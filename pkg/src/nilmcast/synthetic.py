"""Labelled synthetic building scenarios.

A scenario is a fleet of devices with known profiles and weekly schedules.
The aggregate series is produced by the forward model in :mod:`nilmcast.core`
plus a slowly varying base load and Gaussian noise, so the ground truth is
exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import N_CHANNELS, DeviceProfile, PowerSeries, StateChangesMatrix, reconstruct, save_profiles
from .errors import GenerationError

DAY = 86400
WEEK = 7 * DAY
#: Monday 2019-01-07 00:00:00 UTC
DEFAULT_START = 1546819200

SHAPES = ("step", "exp_settle", "oscillating", "multi_spike")


@dataclass(frozen=True)
class DeviceSpec:
    """One device mode.

    ``amplitude`` is the stable-state power per channel; ``duration`` the
    profile length.  Runs last ``run_time`` seconds (default ``duration``)
    with relative jitter ``run_jitter``.  ``activations`` pins an explicit
    list of ``(on_time, run_time)`` pairs and bypasses the schedule model.
    """

    shape: str
    amplitude: tuple[float, ...]
    duration: int
    run_time: float | None = None
    run_jitter: float = 0.0
    workday_rate: float = 10.0
    weekend_rate: float = 2.0
    activations: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown profile shape {self.shape!r}")
        if len(self.amplitude) != N_CHANNELS:
            raise ValueError("amplitude must have 6 channels")
        if any(a < 0 for a in self.amplitude[:3]):
            raise ValueError("active-power amplitudes must be non-negative")
        if self.duration < 1:
            raise ValueError("duration must be at least 1 s")


@dataclass(frozen=True)
class Scenario:
    devices: tuple[DeviceSpec, ...]
    days: float = 1.0
    seed: int = 0
    start_timestamp: int = DEFAULT_START
    noise_sigma: float = 0.0
    base_level: tuple[float, ...] = (0.0,) * N_CHANNELS
    base_variation: float = 0.0
    periodic_fraction: float = 0.8
    work_start: float = 7.0
    work_end: float = 18.0
    work_share: float = 0.85

    @property
    def T(self) -> int:
        return int(round(self.days * DAY))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        devs = []
        for spec in d.pop("devices"):
            spec = dict(spec)
            spec["amplitude"] = tuple(spec["amplitude"])
            if spec.get("activations") is not None:
                spec["activations"] = tuple(tuple(a) for a in spec["activations"])
            devs.append(DeviceSpec(**spec))
        if "base_level" in d:
            d["base_level"] = tuple(d["base_level"])
        return cls(devices=tuple(devs), **d)


class SyntheticData(NamedTuple):
    series: PowerSeries
    truth: StateChangesMatrix
    profiles: list[DeviceProfile]
    base_load: np.ndarray


def make_profile(spec: DeviceSpec, device_id: int, rng: np.random.Generator | None = None) -> DeviceProfile:
    """Deterministic profile for ``spec``; ``rng`` only places multi-spike spikes."""
    a = np.asarray(spec.amplitude, dtype=np.float64)
    d = spec.duration
    k = np.arange(d, dtype=np.float64)
    if spec.shape == "step":
        shape = np.ones(d)
    elif spec.shape == "exp_settle":
        shape = 1.0 + 0.8 * np.exp(-k / max(2.0, d / 25.0))
    elif spec.shape == "oscillating":
        shape = 1.0 + 0.1 * np.sin(2 * math.pi * k / 90.0)
    else:
        shape = 1.0 + 0.6 * (1.0 - k / d)
        rng = rng or np.random.default_rng(device_id)
        n_spikes = max(1, d // 120)
        spikes = rng.choice(np.arange(1, d), size=min(n_spikes, d - 1), replace=False) if d > 1 else []
        shape[spikes] += 0.35
    dyn = shape[:, None] * a[None, :]
    return DeviceProfile(device_id, dyn, dyn[0].copy())


def _draw_times(rng, n, day_start, workday, sc: Scenario):
    t = []
    for _ in range(n):
        if workday and rng.random() < sc.work_share:
            h = rng.uniform(sc.work_start, sc.work_end)
        else:
            h = rng.uniform(0.0, 24.0)
        t.append(day_start + int(h * 3600))
    return t


def _run_time(rng, spec: DeviceSpec) -> int:
    base = spec.run_time if spec.run_time is not None else spec.duration
    r = base * (1.0 + spec.run_jitter * rng.standard_normal()) if spec.run_jitter else base
    return max(2, int(round(r)))


def schedule(sc: Scenario) -> list[list[tuple[int, int]]]:
    """Per device, the ``(on_time, run_time)`` activations, free of overlaps.

    A weekly template supplies ``periodic_fraction`` of the expected
    activations and repeats verbatim every week; the rest are drawn afresh
    each day.  Template runs win conflicts against random ones.
    """
    T = sc.T
    n_days = int(math.ceil(sc.days))
    first_weekday = int(((sc.start_timestamp // DAY) + 3) % 7)  # 1970-01-01 was a Thursday
    out = []
    for i, spec in enumerate(sc.devices):
        if spec.activations is not None:
            acts = sorted((int(a), int(b)) for a, b in spec.activations)
            for (t0, r0), (t1, _) in zip(acts, acts[1:]):
                if t1 <= t0 + r0:
                    raise GenerationError(f"device {i}: activation at {t1} while still on since {t0}")
            out.append([a for a in acts if 0 <= a[0] < T - 1])
            continue
        trng = np.random.default_rng([sc.seed, 0, i])
        template = {}
        for wd in range(7):
            workday = wd < 5
            rate = spec.workday_rate if workday else spec.weekend_rate
            n = trng.poisson(rate * sc.periodic_fraction)
            times = _draw_times(trng, n, 0, workday, sc)
            template[wd] = [(t, _run_time(trng, spec)) for t in times]
        fixed, extra = [], []
        for day in range(n_days):
            wd = (first_weekday + day) % 7
            workday = wd < 5
            fixed += [(day * DAY + t, r) for t, r in template[wd]]
            drng = np.random.default_rng([sc.seed, 1, i, day])
            rate = spec.workday_rate if workday else spec.weekend_rate
            n = drng.poisson(rate * (1.0 - sc.periodic_fraction))
            extra += [(t, _run_time(drng, spec)) for t in _draw_times(drng, n, day * DAY, workday, sc)]
        out.append(_resolve(fixed, extra, T))
    return out


def _resolve(fixed, extra, T):
    def overlaps(acts, t, r):
        return any(not (t + r + 1 < a or a + b + 1 < t) for a, b in acts)

    kept = []
    for t, r in sorted(fixed):
        if t < T - 1 and not overlaps(kept, t, r):
            kept.append((t, r))
    for t, r in sorted(extra):
        if t < T - 1 and not overlaps(kept, t, r):
            kept.append((t, r))
    return sorted(kept)


def base_load(sc: Scenario, T: int | None = None) -> np.ndarray:
    """Piecewise-linear always-on load with hourly knots."""
    T = sc.T if T is None else T
    level = np.asarray(sc.base_level, dtype=np.float64)
    rng = np.random.default_rng([sc.seed, 2])
    n_knots = T // 3600 + 2
    knots = level[None, :] * (1.0 + sc.base_variation * rng.uniform(-1.0, 1.0, size=(n_knots, N_CHANNELS)))
    t = np.arange(T) / 3600.0
    return np.column_stack([np.interp(t, np.arange(n_knots), knots[:, c]) for c in range(N_CHANNELS)])


def generate(sc: Scenario) -> SyntheticData:
    """Series, ground-truth state changes, profiles and base load for ``sc``."""
    T = sc.T
    if T < 2:
        raise GenerationError("scenario must span at least 2 seconds")
    profiles = [make_profile(spec, i, np.random.default_rng([sc.seed, 3, i])) for i, spec in enumerate(sc.devices)]
    rows = []
    for i, acts in enumerate(schedule(sc)):
        for t, r in acts:
            rows.append((t, i, 1.0))
            if t + r < T:
                rows.append((t + r, i, -1.0))
    truth = StateChangesMatrix.from_triplets(T, len(profiles), rows)
    base = base_load(sc, T)
    clean = reconstruct(truth, profiles, base, start_timestamp=sc.start_timestamp)
    values = clean.values
    if sc.noise_sigma > 0:
        rng = np.random.default_rng([sc.seed, 4])
        values = values + rng.normal(0.0, sc.noise_sigma, size=values.shape)
    series = PowerSeries(values, sc.start_timestamp)
    return SyntheticData(series, truth, profiles, base)


def write_truth(data: SyntheticData, scenario: Scenario, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_profiles(data.profiles, directory / "truth_profiles.json")
    data.truth.to_csv(directory / "truth_state_changes.csv")
    (directory / "scenario.json").write_text(json.dumps(scenario.to_dict(), indent=1) + "\n")


# -- ready-made scenarios ----------------------------------------------------

def random_fleet(
    n: int,
    seed: int = 0,
    power_range: tuple[float, float] = (1500.0, 9000.0),
    shapes: Sequence[str] = ("step", "exp_settle", "oscillating"),
    duration_range: tuple[int, int] = (120, 1800),
    workday_rate: float = 10.0,
    weekend_rate: float = 2.0,
    run_jitter: float = 0.0,
) -> tuple[DeviceSpec, ...]:
    """``n`` devices with distinct amplitudes and active/reactive ratios."""
    rng = np.random.default_rng([seed, 5])
    devs = []
    totals = np.exp(np.linspace(math.log(power_range[0]), math.log(power_range[1]), n))
    rng.shuffle(totals)
    for i in range(n):
        shape = shapes[i % len(shapes)]
        tot = float(totals[i])
        q_ratio = float(rng.uniform(0.05, 0.9))
        if shape == "oscillating":
            ph = int(rng.integers(3))
            amp = [0.0] * 6
            amp[ph] = tot
            amp[3 + ph] = tot * q_ratio
        else:
            split = rng.dirichlet([8.0, 8.0, 8.0]) * tot
            amp = [*split.tolist(), *(split * q_ratio).tolist()]
        dur = int(rng.integers(duration_range[0], duration_range[1] + 1))
        devs.append(
            DeviceSpec(
                shape=shape,
                amplitude=tuple(round(a, 1) for a in amp),
                duration=dur,
                run_jitter=run_jitter,
                workday_rate=workday_rate,
                weekend_rate=weekend_rate,
            )
        )
    return tuple(devs)


def default_scenario(days: float = 14.0, n_devices: int = 8, seed: int = 0) -> Scenario:
    """Small building used by the CLI and the end-to-end tests."""
    return Scenario(
        devices=random_fleet(n_devices, seed=seed),
        days=days,
        seed=seed,
        noise_sigma=15.0,
        base_level=(800.0, 700.0, 750.0, 200.0, 180.0, 210.0),
        base_variation=0.1,
    )


def large_building_scenario(days: float = 7.0, seed: int = 0) -> Scenario:
    """About fifty device modes calibrated to the measured building's headline statistics.

    Targets: mean total active power 22.27 kW, daily energy 534.5 kWh,
    minimum 2.261 kW, maximum 98.95 kW.
    """
    rng = np.random.default_rng([seed, 6])
    devs = list(
        random_fleet(
            46,
            seed=seed,
            power_range=(714.0, 9486.0),
            shapes=("step", "exp_settle", "exp_settle", "oscillating", "step", "multi_spike"),
            duration_range=(120, 3600),
            workday_rate=9.0,
            weekend_rate=3.0,
            run_jitter=0.1,
        )
    )
    # long-running machines that dominate working-hour load
    for k in range(4):
        tot = float(rng.uniform(4140.0, 5320.0))
        split = rng.dirichlet([10.0, 10.0, 10.0]) * tot
        devs.append(
            DeviceSpec(
                shape="exp_settle",
                amplitude=tuple(round(a, 1) for a in (*split, *(split * 0.4))),
                duration=1800,
                run_time=6 * 3600,
                run_jitter=0.1,
                workday_rate=1.0,
                weekend_rate=0.0,
            )
        )
    return Scenario(
        devices=tuple(devs),
        days=days,
        seed=seed,
        noise_sigma=25.0,
        base_level=(890.0, 840.0, 860.0, 260.0, 240.0, 250.0),
        base_variation=0.1,
        periodic_fraction=0.8,
    )
