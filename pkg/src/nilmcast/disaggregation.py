"""Disaggregation by particle swarm optimisation over labelled events.

The swarm does not search the full ``T x M`` state-changes matrix.  Every
detected event receives one label: either "no device" or one of a few
candidate devices whose switching signature lies closest to the event's.
ON-events may only switch a device on, OFF-events only off, and a decoded
labelling is repaired so that each device alternates between the two.

The series is solved in overlapping windows.  Devices still on at the end of
a window's committed part are carried into the next window, where they may
only be switched off.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ACTIVE, N_CHANNELS, DeviceProfile, PowerSeries, StateChangesMatrix, accumulate
from .events import ON, EventSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DisaggConfig:
    alpha: float = 0.5
    beta: float = 0.5
    window: int = 3600
    overlap: int = 300
    particles: int = 40
    iterations: int = 200
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    candidates: int = 5
    patience: int = 50
    v_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta != 1.0:
            raise ValueError(f"alpha and beta must be non-negative and sum to 1, got {self.alpha}, {self.beta}")
        if self.window < 3:
            raise ValueError("window must cover at least 3 samples")
        if not 0 <= self.overlap < self.window:
            raise ValueError("overlap must lie in [0, window)")
        if self.particles < 1 or self.iterations < 0 or self.candidates < 1:
            raise ValueError("particles and candidates must be positive, iterations non-negative")


def disagg_error(P, P_S, alpha: float = 0.5, beta: float = 0.5, a: int = 0, b: int | None = None) -> float:
    """Weighted squared level error plus squared derivative error over ``[a, b)``.

    Both terms use squared Euclidean norms over all six channels; the
    derivative term covers ``t = a .. b - 2``.
    """
    P = P.values if isinstance(P, PowerSeries) else np.asarray(P, dtype=np.float64)
    P_S = P_S.values if isinstance(P_S, PowerSeries) else np.asarray(P_S, dtype=np.float64)
    if abs(alpha + beta - 1.0) > 1e-12:
        raise ValueError("alpha + beta must equal 1")
    b = P.shape[0] if b is None else b
    if not (0 <= a < b <= P.shape[0] and b <= P_S.shape[0]):
        raise ValueError(f"window [{a}, {b}) outside the series")
    r = P_S[a:b] - P[a:b]
    return _error(r, alpha, beta)


def _error(residual: np.ndarray, alpha: float, beta: float) -> float:
    level = float(np.einsum("ij,ij->", residual, residual))
    dr = np.diff(residual, axis=0)
    slope = float(np.einsum("ij,ij->", dr, dr))
    return alpha * level + beta * slope


def window_epsilon(residual: np.ndarray) -> np.ndarray:
    """Always-on vector for one window from the part of the signal not yet explained.

    ``residual`` is the measured window minus the devices a candidate
    labelling switches on.  The minimum of its total active power is shared among the active
    channels in proportion to their own minimums; reactive channels take
    their own minimums.
    """
    eps = residual.min(axis=0).astype(np.float64)
    act = np.maximum(eps[ACTIVE], 0.0)
    total = float(residual[:, ACTIVE].sum(axis=1).min())
    if act.sum() > 0:
        eps[ACTIVE] = total * act / act.sum()
    else:
        eps[ACTIVE] = total / 3.0
    return eps


@dataclass
class DisaggResult:
    matrix: StateChangesMatrix
    reconstruction: PowerSeries
    epsilon: np.ndarray
    window_errors: list = field(default_factory=list)
    total_error: float = 0.0
    empty_error: float = 0.0
    fell_back: bool = False


class _Window:
    """Fitness evaluation for the events of one window."""

    def __init__(self, P, a, b, profiles, ev_times, ev_kinds, ev_signatures, cand, carry, alpha, beta):
        self.P = P[a:b]
        self.a, self.b = a, b
        self.profiles = profiles
        self.times = ev_times
        self.kinds = ev_kinds
        self.signature = ev_signatures
        self.cand = cand  # (n_events, k) device ids, -1 padding
        self.carry = carry  # list of (t_on, device) switched on before a
        self.alpha, self.beta = alpha, beta
        self.cache: dict[tuple, float] = {}
        self.evaluations = 0

    def decode(self, scores: np.ndarray) -> tuple:
        """Argmax per event, then drop labels that would break ON/OFF alternation."""
        choice = np.argmax(scores, axis=1)
        on = {dev for _, dev in self.carry}
        labels = []
        for e, c in enumerate(choice.tolist()):
            dev = int(self.cand[e, c - 1]) if c > 0 else -1
            if dev >= 0:
                if self.kinds[e] == ON:
                    if dev in on:
                        dev = -1
                    else:
                        on.add(dev)
                elif dev in on:
                    on.discard(dev)
                else:
                    dev = -1
            labels.append(dev)
        return tuple(labels)

    def triplets(self, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = [t_on for t_on, _ in self.carry]
        d = [dev for _, dev in self.carry]
        w = [1.0] * len(self.carry)
        for e, dev in enumerate(labels):
            if dev >= 0:
                t.append(int(self.times[e]))
                d.append(dev)
                w.append(1.0 if self.kinds[e] == ON else -1.0)
        return np.array(t, dtype=np.int64), np.array(d, dtype=np.int64), np.array(w, dtype=np.float64)

    def render(self, labels) -> tuple[np.ndarray, np.ndarray]:
        """Reconstruction of the window and the always-on vector fitted under it."""
        out = np.zeros_like(self.P)
        t, d, w = self.triplets(labels)
        accumulate(out, self.a, t, d, w, self.profiles, paired=True)
        eps = window_epsilon(self.P - out)
        out += eps
        return out, eps

    def error(self, labels) -> float:
        hit = self.cache.get(labels)
        if hit is not None:
            return hit
        self.evaluations += 1
        err = _error(self.render(labels)[0] - self.P, self.alpha, self.beta)
        self.cache[labels] = err
        return err

    def scores_for(self, labels) -> np.ndarray:
        """Score matrix that decodes to ``labels`` (one-hot on the chosen option)."""
        n, k = self.cand.shape
        s = np.zeros((n, k + 1))
        for e, dev in enumerate(labels):
            hits = np.flatnonzero(self.cand[e] == dev) if dev >= 0 else []
            s[e, hits[0] + 1 if len(hits) else 0] = 1.0
        return s

    def track(self) -> tuple:
        """Chronological labelling that follows which devices are running.

        An ON-event goes to the nearest candidate that is currently off; an
        OFF-event to the running candidate whose present power best matches
        the drop.
        """
        running = {dev: t for t, dev in self.carry}
        labels = []
        for e in range(self.cand.shape[0]):
            t = int(self.times[e])
            pick = -1
            if self.kinds[e] == ON:
                for dev in self.cand[e].tolist():
                    if dev >= 0 and dev not in running:
                        pick = dev
                        running[dev] = t
                        break
            else:
                best = math.inf
                for dev in self.cand[e].tolist():
                    if dev < 0 or dev not in running:
                        continue
                    prof = self.profiles[dev]
                    k = t - running[dev]
                    level = prof.dynamic[k - 1] if 1 <= k <= prof.duration else prof.stable_state
                    dist = float(np.sum((self.signature[e] + level) ** 2))
                    if dist < best:
                        best, pick = dist, dev
                if pick >= 0:
                    del running[pick]
            labels.append(pick)
        return tuple(labels)

    def pair_search(self, labels=None, max_offs: int = 4, passes: int = 3) -> tuple:
        """Coordinate descent over ON-events, each move also choosing the matching OFF.

        A lone ON keeps its device running to the end of the window, so moves
        that label an ON also try the first ``max_offs`` later OFF-events that
        list the same device as a candidate (or none of them).
        """
        n = self.cand.shape[0]
        labels = list(labels) if labels is not None else [-1] * n
        best = self.error(self.decode(self.scores_for(labels)))
        on_events = [e for e in range(n) if self.kinds[e] == ON]
        off_events = [e for e in range(n) if self.kinds[e] != ON]
        for _ in range(passes):
            changed = False
            for e in on_events:
                base = list(labels)
                old = base[e]
                if old >= 0:
                    # detach the OFF paired with the current assignment
                    for f in off_events:
                        if f > e and base[f] == old:
                            base[f] = -1
                            break
                base[e] = -1
                trials = [base]
                for dev in self.cand[e].tolist():
                    if dev < 0:
                        continue
                    offs = [f for f in off_events if f > e and dev in self.cand[f] and base[f] < 0][:max_offs]
                    for f in [None, *offs]:
                        trial = list(base)
                        trial[e] = dev
                        if f is not None:
                            trial[f] = dev
                        trials.append(trial)
                for trial in trials:
                    lab = self.decode(self.scores_for(trial))
                    err = self.error(lab)
                    if err < best:
                        best, labels, changed = err, list(lab), True
            for f in off_events:
                for dev in [-1, *self.cand[f].tolist()]:
                    trial = list(labels)
                    trial[f] = dev
                    lab = self.decode(self.scores_for(trial))
                    err = self.error(lab)
                    if err < best:
                        best, labels, changed = err, list(lab), True
            # exchanging the devices of two same-kind events is a single move here
            for e in range(n):
                for f in range(e + 1, n):
                    a_, b_ = labels[e], labels[f]
                    if self.kinds[e] != self.kinds[f] or a_ == b_ or a_ not in self.cand[f] and a_ >= 0:
                        continue
                    if b_ >= 0 and b_ not in self.cand[e]:
                        continue
                    trial = list(labels)
                    trial[e], trial[f] = b_, a_
                    lab = self.decode(self.scores_for(trial))
                    err = self.error(lab)
                    if err < best:
                        best, labels, changed = err, list(lab), True
            if not changed:
                break
        return self.decode(self.scores_for(labels))


def _candidates(events: EventSet, profiles, k: int) -> np.ndarray:
    """Nearest ``k`` devices per event by signature distance (ties broken by device index)."""
    on_sig = np.stack([p.dynamic[0] for p in profiles])
    off_sig = -np.stack([p.stable_state for p in profiles])
    k = min(k, len(profiles))
    cand = np.full((len(events), k), -1, dtype=np.int64)
    for e in range(len(events)):
        ref = on_sig if events.kinds[e] == ON else off_sig
        dist = np.sum((ref - events.signatures[e]) ** 2, axis=1)
        cand[e] = np.lexsort((np.arange(dist.size), dist))[:k]
    return cand


def _swarm(win: _Window, cfg: DisaggConfig, rng: np.random.Generator, seeds: list) -> tuple[tuple, float, list]:
    n, k = win.cand.shape
    width = k + 1
    X = rng.uniform(0.0, 1.0, size=(cfg.particles, n, width))
    # unused candidate slots can never win the argmax
    pad = np.concatenate([np.zeros((n, 1), dtype=bool), win.cand < 0], axis=1)
    for i, labels in enumerate(seeds[: cfg.particles]):
        X[i] = win.scores_for(labels)
    X[:, pad] = -np.inf
    V = np.zeros_like(X)
    V[:, pad] = 0.0
    decoded = [win.decode(x) for x in X]
    fit = np.array([win.error(lab) for lab in decoded])
    pbest, pfit, plab = X.copy(), fit.copy(), list(decoded)
    g = int(np.argmin(fit))
    gbest, gfit, glab = X[g].copy(), float(fit[g]), decoded[g]
    history = [gfit]
    stale = 0
    live = ~pad
    for _ in range(cfg.iterations):
        r1 = rng.uniform(size=X.shape)
        r2 = rng.uniform(size=X.shape)
        diff_p = np.where(live, pbest - np.where(live, X, 0.0), 0.0)
        diff_g = np.where(live, gbest[None] - np.where(live, X, 0.0), 0.0)
        V = cfg.inertia * V + cfg.cognitive * r1 * diff_p + cfg.social * r2 * diff_g
        np.clip(V, -cfg.v_max, cfg.v_max, out=V)
        X = np.where(live, X + V, -np.inf)
        improved = False
        for i in range(cfg.particles):
            lab = win.decode(X[i])
            f = win.error(lab)
            if f < pfit[i]:
                pfit[i], pbest[i], plab[i] = f, X[i].copy(), lab
            if f < gfit:
                gfit, gbest, glab = f, X[i].copy(), lab
                improved = True
        if gfit > history[-1]:
            raise AssertionError(f"global best error increased: {history[-1]} -> {gfit}")
        history.append(gfit)
        stale = 0 if improved else stale + 1
        if stale >= cfg.patience:
            break
    return glab, gfit, history


def _carry_state(committed: list, before: int) -> list:
    """Devices whose last committed change before ``before`` was an ON, with that ON time."""
    last = {}
    for t, dev, w in committed:
        if t < before:
            last[dev] = (t, w)
    return sorted((t, dev) for dev, (t, w) in last.items() if w > 0)


def pso_disaggregate(
    series: PowerSeries,
    profiles: list[DeviceProfile],
    events: EventSet,
    cfg: DisaggConfig = DisaggConfig(),
    truth: StateChangesMatrix | None = None,
) -> DisaggResult:
    """Find a discrete state-changes matrix whose reconstruction fits ``series``.

    ``truth``, when given, is translated into event labels and injected as an
    initial particle in every window; the returned error can then never exceed
    the error of that labelling.  The result is never worse than the empty
    matrix over the whole series.
    """
    if not profiles:
        raise ValueError("at least one profile is required")
    T, M = series.T, len(profiles)
    P = series.values
    cand = _candidates(events, profiles, cfg.candidates) if len(events) else np.zeros((0, 1), dtype=np.int64)
    truth_at = {}
    if truth is not None:
        for t, i, v in truth.triplets():
            truth_at[int(t)] = int(i)

    committed: list[tuple[int, int, float]] = []
    eps_series = np.zeros((T, N_CHANNELS))
    reports = []
    a, w_index = 0, 0
    step = cfg.window - cfg.overlap
    while a < T:
        b = min(a + cfg.window, T)
        last = b >= T
        commit_end = T if last else b - cfg.overlap
        carry = _carry_state(committed, a)
        sel = (events.times >= a) & (events.times < b - 1)
        idx = np.flatnonzero(sel)
        win = _Window(P, a, b, profiles, events.times[idx], events.kinds[idx], events.signatures[idx], cand[idx], carry, cfg.alpha, cfg.beta)
        if idx.size == 0:
            labels, err, history = (), win.error(()), []
        else:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, w_index]))
            seeds = [win.pair_search(win.track()), win.pair_search(), tuple([-1] * idx.size)]
            if truth is not None:
                seeds.append(win.decode(win.scores_for([truth_at.get(int(t), -1) for t in events.times[idx]])))
            labels, err, history = _swarm(win, cfg, rng, seeds)
            polished = win.pair_search(labels)
            if win.error(polished) < err:
                labels, err = polished, win.error(polished)
        eps_series[a:commit_end] = win.render(labels)[1]
        for e, dev in enumerate(labels):
            t = int(events.times[idx[e]])
            if dev >= 0 and t < commit_end:
                committed.append((t, dev, 1.0 if events.kinds[idx[e]] == ON else -1.0))
        reports.append(
            {
                "window": w_index,
                "start": a,
                "end": b,
                "events": int(idx.size),
                "error": err,
                "iterations": max(0, len(history) - 1),
                "evaluations": win.evaluations,
            }
        )
        log.debug("window %d [%d, %d): %d events, error %.6g", w_index, a, b, idx.size, err)
        if last:
            break
        a += step
        w_index += 1

    matrix = StateChangesMatrix.from_triplets(T, M, committed)
    recon = eps_series.copy()
    accumulate(recon, 0, matrix.times, matrix.devices, matrix.values.astype(np.float64), profiles, paired=True)
    total = _error(recon - P, cfg.alpha, cfg.beta)
    empty = _error(eps_series - P, cfg.alpha, cfg.beta)
    fell_back = total > empty
    if fell_back:
        log.warning("swarm result (%.6g) worse than the empty matrix (%.6g); returning no state changes", total, empty)
        matrix, recon, total = StateChangesMatrix.empty(T, M), eps_series.copy(), empty
    return DisaggResult(
        matrix,
        PowerSeries(recon, series.start_timestamp),
        eps_series,
        reports,
        total,
        empty,
        fell_back,
    )
