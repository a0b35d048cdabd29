"""End-to-end profile extraction from an aggregate series.

Events are detected on the derivative, ON-signatures clustered (with outlier
cleaning and one merge pass), OFF-events attached to the nearest negated
centre, ON-durations per cluster split by a Gaussian mixture, and each
resulting group median-blended into a profile.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .clustering import Clustering, assign_off_events, clean_outliers, merge_clusters, select_k
from .core import DeviceProfile, PowerSeries
from .durations import MAX_DURATION, MIN_GROUP_EVENTS, pair_on_off, select_m_bic, split_groups
from .errors import ExtractionError
from .events import DEFAULT_THRESHOLD, EventSet, detect_events
from .ingestion import derivative
from .profiles import median_blend

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractionConfig:
    threshold: float = DEFAULT_THRESHOLD
    k_max: int = 50
    n_init: int = 10
    sigma_factor: float = 2.0
    k_outlier: int = 10
    rho_min: float = 0.9
    ape_max: float = 0.1
    m_max: int = 5
    delta_bic: float = 2.0
    max_duration: int = MAX_DURATION
    min_group_events: int = MIN_GROUP_EVENTS
    seed: int = 0


@dataclass
class ExtractionResult:
    events: EventSet
    clustering: Clustering
    profiles: list[DeviceProfile]
    members: list[int]
    groups: list[dict] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def write_diagnostics(self, path) -> None:
        doc = {
            "events": {"on": int(len(self.events.on())), "off": int(len(self.events.off()))},
            "clusters": self.clustering.K,
            "groups": self.groups,
            **self.diagnostics,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True, default=_jsonable)
            fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def extract_profiles(series: PowerSeries, cfg: ExtractionConfig = ExtractionConfig()) -> ExtractionResult:
    events = detect_events(derivative(series), cfg.threshold)
    on, off = events.on(), events.off()
    if len(on) < 3:
        raise ExtractionError(f"only {len(on)} ON-events above {cfg.threshold} W/s; nothing to cluster")
    points = on.signatures
    cl = select_k(points, k_max=cfg.k_max, seed=cfg.seed, n_init=cfg.n_init)
    diag = {
        "k_selected": cl.K,
        "ch_curve": {str(k): v for k, v in cl.diagnostics.get("ch_curve", {}).items()},
        "weak_structure": bool(cl.diagnostics.get("weak_structure", False)),
    }
    cl = clean_outliers(cl, points, cfg.sigma_factor, cfg.k_outlier, seed=cfg.seed)
    diag["outliers"] = int(cl.diagnostics.get("outliers", 0))
    cl = assign_off_events(cl, off.signatures)
    cl = merge_clusters(cl, cfg.rho_min, cfg.ape_max)
    diag["merges"] = [list(p) for p in cl.diagnostics.get("merges", [])]
    diag["clusters_after_merge"] = cl.K

    profiles, members, groups = [], [], []
    for k in range(cl.K):
        on_t = on.times[cl.labels == k]
        off_t = off.times[cl.off_labels == k]
        samples = pair_on_off(on_t, off_t, cfg.max_duration)
        entry = {"cluster": k, "on_events": int(on_t.size), "off_events": int(off_t.size), "durations": len(samples)}
        if len(samples) < cfg.min_group_events:
            entry["skipped"] = "too few paired durations"
            groups.append(entry)
            continue
        m, gmm = select_m_bic([s.duration for s in samples], cfg.m_max, cfg.delta_bic, seed=cfg.seed)
        entry["components"] = m
        entry["bic_curve"] = {str(j): v for j, v in gmm.diagnostics["bic_curve"].items()}
        entry["gmm"] = gmm.to_dict()
        center = cl.centers[k]
        for g in split_groups(k, samples, gmm):
            sub = {"component": g.component, "duration": g.duration, "members": g.size}
            if g.size < cfg.min_group_events:
                sub["skipped"] = "too few members"
            else:
                try:
                    prof = median_blend(g, series, center, len(profiles), cfg.min_group_events)
                except ExtractionError as exc:
                    sub["skipped"] = str(exc)
                else:
                    sub["profile"] = prof.id
                    profiles.append(prof)
                    members.append(g.size)
            entry.setdefault("groups", []).append(sub)
        groups.append(entry)
    if not profiles:
        raise ExtractionError("no group had enough events to form a profile")
    log.info("extracted %d profiles from %d clusters", len(profiles), cl.K)
    return ExtractionResult(events, cl, profiles, members, groups, diag)
