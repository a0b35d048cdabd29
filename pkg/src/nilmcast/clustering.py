"""Clustering of ON-event signatures.

k-means with Calinski-Harabasz model selection, 2-sigma outlier cleaning,
OFF-event assignment by sign reversal and correlation-based cluster merging.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Clustering:
    """Partition of ON-event signatures.

    ``labels[n]`` is the cluster of ON-event ``n``; ``off_labels`` is filled
    by :func:`assign_off_events`.
    """

    centers: np.ndarray
    labels: np.ndarray
    inertia: float = math.nan
    off_labels: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return int(self.centers.shape[0])

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)

    def members(self, k: int) -> np.ndarray:
        return np.nonzero(self.labels == k)[0]

    def to_csv(self, centers_path, assignments_path) -> None:
        with open(centers_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cluster", "size", *(f"c{i}" for i in range(self.centers.shape[1]))])
            for k, (c, n) in enumerate(zip(self.centers, self.sizes())):
                w.writerow([k, int(n), *map(repr, c.tolist())])
        with open(assignments_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["event", "kind", "cluster"])
            for n, k in enumerate(self.labels.tolist()):
                w.writerow([n, "ON", k])
            if self.off_labels is not None:
                for n, k in enumerate(self.off_labels.tolist()):
                    w.writerow([n, "OFF", k])


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    return np.maximum(d, 0.0)


def _seed_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # k-means++ (D^2 sampling)
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    closest = _sq_dists(points, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers.append(points[idx])
        closest = np.minimum(closest, _sq_dists(points, points[idx][None, :])[:, 0])
    return np.array(centers)


def _lloyd(points, centers, max_iter, check):
    prev = math.inf
    labels = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d = _sq_dists(points, centers)
        labels = np.argmin(d, axis=1)
        obj = float(d[np.arange(points.shape[0]), labels].sum())
        if check and obj > prev * (1 + 1e-9) + 1e-9:
            raise AssertionError(f"k-means objective increased: {prev} -> {obj}")
        counts = np.bincount(labels, minlength=centers.shape[0])
        new = np.zeros_like(centers)
        np.add.at(new, labels, points)
        filled = counts > 0
        new[filled] /= counts[filled, None]
        for k in np.nonzero(~filled)[0]:
            # reseed an empty cluster at the worst-fitted point
            far = int(np.argmax(d[np.arange(points.shape[0]), labels]))
            new[k] = points[far]
            labels[far] = k
            d[far, labels[far]] = 0.0
        if np.array_equal(new, centers) and obj == prev:
            break
        centers = new
        prev = obj
    d = _sq_dists(points, centers)
    labels = np.argmin(d, axis=1)
    obj = float(d[np.arange(points.shape[0]), labels].sum())
    if check and obj > prev * (1 + 1e-9) + 1e-9:
        raise AssertionError(f"k-means objective increased: {prev} -> {obj}")
    return centers, labels, obj


def kmeans(points, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300, check: bool = True) -> Clustering:
    """Best of ``n_init`` seeded Lloyd runs minimising within-cluster squared distance."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points {n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        init = _seed_centers(points, k, rng)
        centers, labels, obj = _lloyd(points, init, max_iter, check)
        if best is None or obj < best[2]:
            best = (centers, labels, obj)
    centers, labels, obj = best
    return Clustering(centers, labels, obj)


def _member_means(points, labels, K):
    counts = np.bincount(labels, minlength=K)
    means = np.zeros((K, points.shape[1]))
    np.add.at(means, labels, points)
    nz = counts > 0
    means[nz] /= counts[nz, None]
    return means, counts


def calinski_harabasz(clustering: Clustering, points) -> float:
    """Between/within scatter ratio scaled by ``(N - K) / (K - 1)``.

    K counts non-empty clusters. Returns ``inf`` when within-cluster scatter
    vanishes.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(clustering.labels)
    means, counts = _member_means(points, labels, clustering.K)
    nz = counts > 0
    K = int(nz.sum())
    N = points.shape[0]
    if K < 2:
        raise ValueError("Calinski-Harabasz score is undefined for fewer than 2 clusters")
    overall = points.mean(axis=0)
    between = float(np.sum(counts[nz] * np.sum((means[nz] - overall) ** 2, axis=1)))
    within = float(np.sum((points - means[labels]) ** 2))
    if within == 0.0:
        return math.inf
    return (N - K) / (K - 1) * between / within


def select_k(points, k_max: int = 50, seed: int = 0, n_init: int = 10) -> Clustering:
    """k-means for K = 2..min(k_max, N-1), keeping the K with the highest CH score.

    The CH curve lands in ``diagnostics["ch_curve"]``.  A split whose
    between/within scatter ratio stays below 1 is flagged as
    ``weak_structure`` (data that is probably a single cluster).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        raise ValueError("select_k needs at least 2 points")
    curve = {}
    best, best_score = None, -math.inf
    for K in range(2, min(k_max, n - 1) + 1):
        cl = kmeans(points, K, seed=seed + K, n_init=n_init)
        score = calinski_harabasz(cl, points)
        curve[K] = score
        if score > best_score:
            best, best_score = cl, score
    if best is None:
        best = kmeans(points, 1, seed=seed, n_init=n_init)
        return replace(best, diagnostics={"ch_curve": {}, "weak_structure": True, "reason": "too few points"})
    K = best.K
    ratio = best_score * (K - 1) / (n - K) if math.isfinite(best_score) else math.inf
    weak = K == 2 and ratio < 1.0
    if weak:
        log.info("CH selection picked K=2 with scatter ratio %.3f; data may be a single cluster", ratio)
    return replace(best, diagnostics={"ch_curve": curve, "weak_structure": weak, "scatter_ratio": ratio})


def clean_outliers(clustering: Clustering, points, sigma_factor: float = 2.0, k_outlier: int = 10, seed: int = 0) -> Clustering:
    """Move members farther than ``sigma_factor`` RMS radii from their centre into new clusters.

    The removed points are re-clustered among themselves with a fixed
    ``min(k_outlier, n_outliers)`` clusters, appended after the existing ones.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.array(clustering.labels, copy=True)
    K = clustering.K
    means, counts = _member_means(points, labels, K)
    dist = np.sqrt(np.sum((points - means[labels]) ** 2, axis=1))
    sq = np.bincount(labels, weights=dist**2, minlength=K)
    sigma = np.sqrt(np.divide(sq, counts, out=np.zeros(K), where=counts > 0))
    outlier = dist > sigma_factor * sigma[labels]
    n_out = int(outlier.sum())
    if n_out == 0:
        return clustering
    labels_kept = labels.copy()
    centers = means.copy()
    kept_means, kept_counts = _member_means(points[~outlier], labels[~outlier], K)
    centers[kept_counts > 0] = kept_means[kept_counts > 0]
    sub = kmeans(points[outlier], min(k_outlier, n_out), seed=seed)
    labels_kept[outlier] = K + sub.labels
    centers = np.vstack([centers, sub.centers])
    # drop clusters that lost all members, keeping label order
    used = np.unique(labels_kept)
    remap = np.full(centers.shape[0], -1)
    remap[used] = np.arange(used.size)
    diag = dict(clustering.diagnostics, outliers=n_out)
    return Clustering(centers[used], remap[labels_kept], math.nan, clustering.off_labels, diag)


def assign_off_events(clustering: Clustering, off_signatures) -> Clustering:
    """Label each OFF-event with the cluster whose negated centre is nearest (lowest index on ties)."""
    if clustering.K == 0:
        raise ValueError("cannot assign OFF-events to an empty clustering")
    off = np.asarray(off_signatures, dtype=np.float64).reshape(-1, clustering.centers.shape[1])
    if off.shape[0] == 0:
        return replace(clustering, off_labels=np.zeros(0, dtype=np.int64))
    d = np.sum((off[:, None, :] + clustering.centers[None, :, :]) ** 2, axis=2)
    return replace(clustering, off_labels=np.argmin(d, axis=1))


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation over vector components; NaN when either is constant."""
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        return math.nan
    return float(a @ b) / den


def ape(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    return math.inf if na == 0.0 else float(np.linalg.norm(a - b)) / na


def merge_clusters(clustering: Clustering, rho_min: float = 0.9, ape_max: float = 0.1) -> Clustering:
    """Merge pairs of similar clusters once.

    A pair is a candidate when the correlation of its centres exceeds
    ``rho_min`` and the relative deviation is below ``ape_max`` in at least
    one direction.  Candidates are taken in order of decreasing correlation,
    then increasing deviation, then index; a cluster joins at most one merge.
    The merged centre is the plain average of the two centres and takes the
    lower index.
    """
    K = clustering.K
    if K < 2:
        return clustering
    c = clustering.centers
    candidates = []
    skipped = []
    for i in range(K):
        for j in range(i + 1, K):
            rho = pearson(c[i], c[j])
            if math.isnan(rho):
                skipped.append((i, j))
                continue
            e_ij, e_ji = ape(c[i], c[j]), ape(c[j], c[i])
            if rho > rho_min and (e_ij < ape_max or e_ji < ape_max):
                # rounding keeps float noise in rho from overriding the deviation tie-break
                candidates.append((-round(rho, 12), e_ij, i, j))
    if skipped:
        log.info("skipped %d cluster pairs with constant centres", len(skipped))
    candidates.sort()
    taken = np.zeros(K, dtype=bool)
    merges = []
    for _, _, i, j in candidates:
        if not taken[i] and not taken[j]:
            taken[i] = taken[j] = True
            merges.append((i, j))
    diag = dict(clustering.diagnostics, merges=merges, skipped_pairs=skipped)
    if not merges:
        return replace(clustering, diagnostics=diag)
    target = np.arange(K)
    centers = c.copy()
    for i, j in merges:
        centers[i] = 0.5 * (c[i] + c[j])
        target[j] = i
    keep = np.array([target[k] == k for k in range(K)])
    remap = np.cumsum(keep) - 1
    new_index = remap[target]
    off = None if clustering.off_labels is None else new_index[clustering.off_labels]
    return Clustering(centers[keep], new_index[clustering.labels], math.nan, off, diag)
