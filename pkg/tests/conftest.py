import numpy as np
import pytest

from nilmcast.core import DeviceProfile


def brute_reconstruct(T, triplets, profiles, eps, probabilistic=False, threshold=0.1):
    """Per-sample evaluation of the aggregate model, one time step at a time.

    Discrete: a device switched on at ``t_on`` and off at ``t_off`` adds its
    dynamic sample ``l(t - t_on)`` (or the stable state once the dynamic part
    is over) for ``t_on < t <= t_off``.  Probabilistic: positive entries add
    ``s * (dynamic, then stable)`` forever, negative entries add ``s * stable``.
    """
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (T, 6))
    out = np.array(eps, dtype=float)
    by_dev = {}
    for t, i, v in sorted(triplets):
        by_dev.setdefault(i, []).append((t, v))
    for i, evs in by_dev.items():
        prof = profiles[i]
        d = prof.duration
        if probabilistic:
            for t0, v in evs:
                if abs(v) <= threshold:
                    continue
                for t in range(T):
                    k = t - t0
                    if k < 1:
                        continue
                    if v > 0:
                        out[t] += v * (prof.dynamic[k - 1] if k <= d else prof.stable_state)
                    else:
                        out[t] += v * prof.stable_state
            continue
        k = 0
        while k < len(evs):
            t_on, v = evs[k]
            if v < 0:
                for t in range(t_on + 1, T):
                    out[t] -= prof.stable_state
                k += 1
                continue
            t_off = evs[k + 1][0] if k + 1 < len(evs) else None
            for t in range(T):
                if t <= t_on or (t_off is not None and t > t_off):
                    continue
                j = t - t_on
                out[t] += prof.dynamic[j - 1] if j <= d else prof.stable_state
            k += 2
    return out


@pytest.fixture
def toy_profile():
    dyn = np.array(
        [
            [5, 4, 3, 2, 1, 0],
            [4, 4, 3, 2, 1, 0],
            [3, 3, 3, 1, 1, 1],
            [2, 2, 2, 1, 1, 1],
            [2, 2, 2, 1, 1, 1],
        ],
        dtype=float,
    )
    return DeviceProfile(0, dyn, dyn[0])


def random_profiles(rng, M, max_d=6, integer=True):
    profs = []
    for i in range(M):
        d = int(rng.integers(1, max_d + 1))
        dyn = rng.integers(1, 20, size=(d, 6)).astype(float) if integer else rng.uniform(1, 20, size=(d, 6))
        profs.append(DeviceProfile(i, dyn, dyn[0]))
    return profs


def random_discrete_triplets(rng, T, M, p_on=0.2):
    rows = []
    for i in range(M):
        on = False
        for t in range(T):
            if rng.random() < p_on:
                rows.append((t, i, -1.0 if on else 1.0))
                on = not on
    return rows
