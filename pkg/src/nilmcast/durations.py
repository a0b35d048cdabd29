"""ON-duration modelling: ON/OFF pairing, 1-D Gaussian mixtures, BIC selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1.0  # s^2
MAX_DURATION = 86400  # s; longer pairings are treated as artifacts
MIN_GROUP_EVENTS = 5


@dataclass(frozen=True)
class DurationSample:
    on_time: int
    duration: int


def pair_on_off(on_times, off_times, max_duration: int | None = MAX_DURATION) -> list[DurationSample]:
    """Pair each ON with the earliest later OFF not yet used; surplus events are dropped."""
    on_times = np.sort(np.asarray(on_times, dtype=np.int64))
    off_times = np.sort(np.asarray(off_times, dtype=np.int64))
    out = []
    j = 0
    for t_on in on_times.tolist():
        while j < off_times.size and off_times[j] <= t_on:
            j += 1
        if j == off_times.size:
            break
        d = int(off_times[j]) - t_on
        j += 1
        if max_duration is None or d <= max_duration:
            out.append(DurationSample(t_on, d))
    return out


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    n_samples: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.means.size)

    @property
    def n_params(self) -> int:
        return 3 * self.m - 1

    def bic(self) -> float:
        """``0.5 * n_params * ln N - log-likelihood`` (lower is better)."""
        return 0.5 * self.n_params * math.log(self.n_samples) - self.log_likelihood

    def weighted_log_density(self, x) -> np.ndarray:
        """``log(pi_i N(x | mu_i, var_i))`` with shape ``(len(x), m)``."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        return (
            np.log(self.weights)
            - 0.5 * np.log(2 * math.pi * self.variances)
            - 0.5 * (x - self.means) ** 2 / self.variances
        )

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "log_likelihood": self.log_likelihood,
            "bic": self.bic(),
        }


def _em(x, w, mu, var, floor, max_iter, tol):
    n = x.size
    prev = -math.inf
    clamped = False
    history = []
    for _ in range(max_iter):
        logp = np.log(w) - 0.5 * np.log(2 * math.pi * var) - 0.5 * (x[:, None] - mu) ** 2 / var
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        if ll < prev - 1e-9 * max(1.0, abs(prev)):
            raise AssertionError(f"EM log-likelihood decreased: {prev} -> {ll}")
        history.append(ll)
        if ll - prev <= tol * max(1.0, abs(ll)):
            break
        prev = ll
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-300)
        w = np.maximum(nk / n, 1e-300)
        w = w / w.sum()
        mu = np.where(nk > 0, resp.T @ x / nk_safe, mu)
        var = (resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk_safe
        var = np.where(nk > 0, var, floor)
        if np.any(var < floor):
            clamped = True
            var = np.maximum(var, floor)
    return w, mu, var, history[-1], clamped, len(history)


def fit_gmm(
    durations,
    m: int,
    seed: int = 0,
    n_init: int = 5,
    max_iter: int = 500,
    tol: float = 1e-10,
    variance_floor: float = VARIANCE_FLOOR,
) -> GmmModel:
    """Maximum-likelihood 1-D mixture of ``m`` Gaussians via EM.

    Restart 0 places the means at evenly spaced quantiles; later restarts
    draw them from the data.  The run with the highest log-likelihood wins.
    """
    x = np.asarray(durations, dtype=np.float64).reshape(-1)
    if m < 1:
        raise ValueError("m must be at least 1")
    if x.size < m:
        raise ValueError(f"{x.size} samples cannot support {m} components")
    rng = np.random.default_rng(seed)
    var0 = max(float(x.var()) / m, variance_floor)
    best = None
    for r in range(n_init):
        if r == 0:
            mu = np.quantile(x, (np.arange(m) + 0.5) / m)
        else:
            mu = rng.choice(x, size=m, replace=False)
        w = np.full(m, 1.0 / m)
        var = np.full(m, var0)
        res = _em(x, w, np.sort(mu), var, variance_floor, max_iter, tol)
        if best is None or res[3] > best[3]:
            best = res
    w, mu, var, ll, clamped, iters = best
    order = np.argsort(mu, kind="stable")
    if clamped:
        log.debug("GMM m=%d: variance clamped to floor %.3g", m, variance_floor)
    return GmmModel(w[order], mu[order], var[order], ll, x.size, {"variance_clamped": clamped, "iterations": iters})


def select_m_bic(durations, m_max: int = 5, delta_threshold: float = 2.0, seed: int = 0) -> tuple[int, GmmModel]:
    """Grow the mixture while each extra component lowers BIC by more than ``delta_threshold``.

    The BIC of every fitted model is kept in ``diagnostics["bic_curve"]``.
    """
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    x = np.asarray(durations, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("no durations to model")
    current = fit_gmm(x, 1, seed=seed)
    curve = {1: current.bic()}
    m = 1
    while m < m_max and x.size >= m + 1:
        nxt = fit_gmm(x, m + 1, seed=seed)
        curve[m + 1] = nxt.bic()
        if curve[m] - curve[m + 1] > delta_threshold:
            current, m = nxt, m + 1
        else:
            break
    current.diagnostics["bic_curve"] = curve
    return m, current


@dataclass(frozen=True, eq=False)
class Group:
    """Members of one cluster sharing a characteristic ON-duration."""

    cluster: int
    component: int
    duration: int
    on_times: np.ndarray
    durations: np.ndarray

    @property
    def size(self) -> int:
        return int(self.on_times.size)


def split_groups(cluster: int, samples: list[DurationSample], gmm: GmmModel) -> list[Group]:
    """Assign each sample to the component with the largest weighted density (lowest index on ties)."""
    if not samples:
        return []
    on = np.array([s.on_time for s in samples], dtype=np.int64)
    dur = np.array([s.duration for s in samples], dtype=np.int64)
    comp = np.argmax(gmm.weighted_log_density(dur), axis=1)
    groups = []
    for i in range(gmm.m):
        sel = comp == i
        if sel.any():
            d = max(1, int(round(float(gmm.means[i]))))
            groups.append(Group(cluster, i, d, on[sel], dur[sel]))
    return groups
