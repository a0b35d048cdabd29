"""Device profiles from median-blended aggregate windows."""

from __future__ import annotations

import csv
import logging

import numpy as np

from .core import ACTIVE, N_CHANNELS, ZERO_TOLERANCE, DeviceProfile, PowerSeries, last_nonzero_sample
from .durations import MIN_GROUP_EVENTS, Group
from .errors import ExtractionError

log = logging.getLogger(__name__)


def lower_median(stack: np.ndarray, axis: int = 0) -> np.ndarray:
    """Order-statistic median; for an even count the lower of the two middle values."""
    n = stack.shape[axis]
    k = (n - 1) // 2
    return np.take(np.partition(stack, k, axis=axis), k, axis=axis)


def median_blend(
    group: Group,
    series: PowerSeries,
    center,
    profile_id: int = 0,
    min_events: int = MIN_GROUP_EVENTS,
    subtract_baseline: bool = True,
) -> DeviceProfile:
    """Blend the aggregate windows after a group's ON-events into one profile.

    For ON-event ``t_p`` the window holds ``P(t_p + 1 .. t_p + d)``, minus the
    pre-event sample ``P(t_p)`` when ``subtract_baseline`` is set.  Each window
    is divided by its largest total active power, the per-sample per-channel
    (lower) median is taken across windows, and the result is scaled so that
    its first sample carries the total active power of ``center`` -- the
    cluster's mean switch-on step integrated over one second.
    """
    center = np.asarray(center, dtype=np.float64).reshape(N_CHANNELS)
    d = int(group.duration)
    P = series.values
    if group.size < min_events:
        raise ExtractionError(f"group of cluster {group.cluster} has {group.size} < {min_events} events")
    windows = []
    skipped_bounds = skipped_zero = 0
    for t_p in group.on_times.tolist():
        if t_p < 0 or t_p + d >= series.T:
            skipped_bounds += 1
            continue
        w = P[t_p + 1 : t_p + 1 + d]
        if subtract_baseline:
            w = w - P[t_p]
        peak = float(w[:, ACTIVE].sum(axis=1).max())
        if not peak > 0:
            skipped_zero += 1
            continue
        windows.append(w / peak)
    if skipped_zero:
        log.info("cluster %d: skipped %d windows with non-positive peak", group.cluster, skipped_zero)
    if not windows:
        raise ExtractionError(f"group of cluster {group.cluster}: no usable windows ({skipped_bounds} out of bounds)")
    med = lower_median(np.stack(windows), axis=0)
    first = float(med[0, ACTIVE].sum())
    step = float(center[ACTIVE].sum())
    if first > 1e-9:
        scale = step / first
    else:
        log.info("cluster %d: blended profile starts at zero; scaling by the centre directly", group.cluster)
        scale = step
    return DeviceProfile(profile_id, med * scale, center)


def stable_state(profile: DeviceProfile, tol: float = ZERO_TOLERANCE) -> np.ndarray:
    """Last dynamic sample with total active power above ``tol``; zeros if none."""
    s = last_nonzero_sample(profile.dynamic, tol)
    if s is None:
        log.warning("profile %d never exceeds %.3g W; stable state is zero", profile.id, tol)
        return np.zeros(N_CHANNELS)
    return s


def write_catalog(profiles, member_counts, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "duration", "stable_norm", "members"])
        for p, n in zip(profiles, member_counts):
            w.writerow([p.id, p.duration, repr(float(np.linalg.norm(p.stable_state))), int(n)])
