"""Wavelet energy features and K-means clustering of link time series."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .roadnet import SeriesSet

log = logging.getLogger(__name__)

# Daubechies wavelet with 6 vanishing moments (12 taps), scaling filter.
DB6_LO = np.array([
    0.11154074335008017, 0.4946238903983854, 0.7511339080215775,
    0.3152503517092432, -0.22626469396516913, -0.12976686756709563,
    0.09750160558707936, 0.02752286553001629, -0.031582039318031156,
    0.0005538422009938016, 0.004777257511010651, -0.00107730108499558,
])
DB6_HI = np.array([(-1) ** k * DB6_LO[len(DB6_LO) - 1 - k] for k in range(len(DB6_LO))])

N_SELECTED = 3


def standardize(values: np.ndarray) -> np.ndarray:
    """Zero mean, unit sample standard deviation (ddof=1)."""
    x = np.asarray(values, dtype=np.float64)
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    if not sd > 0:
        raise ValidationError("cannot standardise a constant series")
    return (x - x.mean()) / sd


@dataclass
class Pyramid:
    details: list[np.ndarray]  # details[j] has 2**j * (n / 2**J) coefficients; j = 0 is coarsest
    approximation: np.ndarray

    @property
    def levels(self) -> int:
        return len(self.details)

    def coefficients(self) -> np.ndarray:
        """Flat coefficient vector ``[approximation, d_0, d_1, ...]``."""
        return np.concatenate([self.approximation, *self.details])


def _analysis_step(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[-1]
    taps = len(DB6_LO)
    # index matrix: row m covers x[(2m + k) mod n]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(taps)[None, :]) % n
    windows = x[..., idx]
    return windows @ DB6_LO, windows @ DB6_HI


def dwt_db6(values: np.ndarray, levels: int) -> Pyramid:
    """Periodised orthonormal fast wavelet transform.

    The input length must be a multiple of ``2**levels``.
    """
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[-1]
    if levels < 1:
        raise ValidationError("levels must be >= 1")
    if n < 2 ** levels or n % 2 ** levels:
        raise ValidationError(f"length {n} does not support {levels} levels (needs a multiple of {2 ** levels})")
    details = []
    approx = x
    for _ in range(levels):
        approx, d = _analysis_step(approx)
        details.append(d)
    return Pyramid(details[::-1], approx)


def truncate_pow2(values: np.ndarray) -> np.ndarray:
    """Keep the leading ``2**floor(log2(n))`` samples."""
    n = np.asarray(values).shape[-1]
    if n < 2:
        raise ValidationError("need at least 2 samples")
    return np.asarray(values)[..., : 1 << (n.bit_length() - 1)]


@dataclass
class WaveletFeatures:
    link_id: int
    rel: np.ndarray
    selected: np.ndarray


def relative_energies(pyramid: Pyramid, link_id: int = -1) -> WaveletFeatures:
    """Share of detail energy per scale; the approximation is left out."""
    energy = np.array([float(d @ d) for d in pyramid.details])
    total = energy.sum()
    if total <= 0:
        raise ValidationError("all detail coefficients are zero")
    rel = energy / total
    return WaveletFeatures(link_id, rel, rel[:N_SELECTED].copy())


def link_features(sset: SeriesSet, time_range: tuple[int, int] | None = None) -> tuple[list[int], np.ndarray]:
    """Selected wavelet features for every link: standardise, truncate to a
    power of two, transform at full depth."""
    lo, hi = time_range or (0, sset.axis.count)
    links = sset.link_ids
    rows = []
    for lid in links:
        x = truncate_pow2(standardize(sset.series[lid].values[lo:hi]))
        levels = x.size.bit_length() - 1
        rows.append(relative_energies(dwt_db6(x, levels), lid).selected)
    return links, np.array(rows)


@dataclass
class ClusterAssignment:
    K: int
    assignment: dict[int, int]
    centroids: np.ndarray
    inertia: float
    history: list[float] = field(default_factory=list)

    def labels(self, links: Sequence[int]) -> np.ndarray:
        return np.array([self.assignment[l] for l in links])

    def members(self, cluster: int) -> list[int]:
        return [l for l, c in self.assignment.items() if c == cluster]


def _sq_dists(points: np.ndarray, centres: np.ndarray) -> np.ndarray:
    d = points[:, None, :] - centres[None, :, :]
    return np.einsum("nkd,nkd->nk", d, d)


def _plus_plus(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centres = [int(rng.integers(n))]
    closest = _sq_dists(points, points[centres])[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a centre; take the lowest unused index
            used = set(centres)
            centres.append(next(i for i in range(n) if i not in used))
        else:
            r = rng.random() * total
            centres.append(int(min(np.searchsorted(np.cumsum(closest), r, side="right"), n - 1)))
        closest = np.minimum(closest, _sq_dists(points, points[centres[-1:]])[:, 0])
    return points[centres].copy()


def _assign(points: np.ndarray, centres: np.ndarray) -> tuple[np.ndarray, float]:
    d = _sq_dists(points, centres)
    labels = np.argmin(d, axis=1)  # first minimum = lowest centre index on ties
    return labels, float(d[np.arange(len(points)), labels].sum())


def _update(points: np.ndarray, centres: np.ndarray, labels: np.ndarray) -> np.ndarray:
    new = centres.copy()
    for c in range(len(centres)):
        members = points[labels == c]
        if len(members):
            new[c] = members.mean(axis=0)
        else:
            # re-seed an empty cluster at the worst-served point
            d = _sq_dists(points, centres)[np.arange(len(points)), labels]
            new[c] = points[int(np.argmax(d))]
    return new


def _lloyd(points: np.ndarray, centres: np.ndarray, max_iter: int, tol: float):
    labels, inertia = _assign(points, centres)
    history = [inertia]
    for it in range(max_iter):
        centres = _update(points, centres, labels)
        new_labels, new_inertia = _assign(points, centres)
        history.append(new_inertia)
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable or history[-2] - new_inertia < tol:
            break
    # polish to a fixed point: centroids are member means and labels are nearest centroids
    for _ in range(max_iter):
        centres = _update(points, centres, labels)
        new_labels, inertia = _assign(points, centres)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        history.append(inertia)
    return labels, centres, inertia, history


def kmeans(points: np.ndarray, K: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
           links: Sequence[int] | None = None, n_init: int = 1) -> ClusterAssignment:
    """Lloyd iterations from k-means++ seeds; best of ``n_init`` restarts."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 0 < K <= n:
        raise ValidationError(f"K must be in [1, {n}], got {K}")
    links = list(range(n)) if links is None else list(links)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        result = _lloyd(points, _plus_plus(points, K, rng), max_iter, tol)
        if best is None or result[2] < best[2]:
            best = result
    labels, centres, inertia, history = best
    return ClusterAssignment(K, dict(zip(links, labels.tolist())), centres, inertia, history)


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette, Euclidean distance; points in singleton clusters score 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    clusters = np.unique(labels)
    if len(clusters) < 2:
        raise ValidationError("silhouette needs at least two clusters")
    d = np.sqrt(np.maximum(_sq_dists(points, points), 0.0))
    if not d.any():
        raise ValidationError("degenerate input: all points identical")
    n = len(points)
    s = np.zeros(n)
    sizes = {c: int(np.sum(labels == c)) for c in clusters}
    mean_to = np.stack([d[:, labels == c].sum(axis=1) for c in clusters], axis=1)
    for i in range(n):
        own = int(np.searchsorted(clusters, labels[i]))
        size = sizes[labels[i]]
        if size == 1:
            continue
        a = mean_to[i, own] / (size - 1)
        others = [mean_to[i, j] / sizes[c] for j, c in enumerate(clusters) if j != own]
        b = min(others)
        denom = max(a, b)
        s[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(s.mean())


@dataclass
class KSelection:
    K: int
    ks: np.ndarray
    inertia: np.ndarray
    silhouettes: np.ndarray
    elbow: int


def select_k(points: np.ndarray, k_max: int = 50, seed: int = 0, n_init: int = 4) -> KSelection:
    """Pick K among 2..k_max: the best silhouette at or beyond the elbow.

    The elbow is the K with the largest second difference of the inertia
    curve (K = 1 included so K = 2 can be an elbow). Each K uses seed + K.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) <= k_max:
        raise ValidationError(f"need more than k_max={k_max} points, got {len(points)}")
    if k_max < 2:
        raise ValidationError("k_max must be >= 2")
    ks = np.arange(2, k_max + 1)
    inertia, sil = [], []
    for K in ks:
        res = kmeans(points, int(K), seed=seed + int(K), n_init=n_init)
        inertia.append(res.inertia)
        sil.append(silhouette(points, res.labels(range(len(points)))))
        log.debug("K=%d inertia=%.6g silhouette=%.4f", K, inertia[-1], sil[-1])
    inertia = np.array(inertia)
    sil = np.array(sil)
    curve = np.r_[float(((points - points.mean(axis=0)) ** 2).sum()), inertia]  # K = 1..k_max
    second = curve[:-2] - 2 * curve[1:-1] + curve[2:]  # at K = 2..k_max-1
    elbow = int(2 + np.argmax(second)) if second.size else 2
    eligible = ks >= elbow
    K = int(ks[eligible][np.argmax(sil[eligible])])
    log.info("select_k: elbow at K=%d, chosen K=%d (silhouette %.3f)", elbow, K, sil[ks == K][0])
    return KSelection(K, ks, inertia, sil, elbow)


def cluster_links(sset: SeriesSet, time_range: tuple[int, int] | None = None, k_max: int = 50,
                  seed: int = 0, K: int | None = None) -> tuple[ClusterAssignment, KSelection | None]:
    """Wavelet features of each link, then K-means; K chosen automatically unless given."""
    links, pts = link_features(sset, time_range)
    selection = None
    if K is None:
        selection = select_k(pts, min(k_max, len(pts) - 1), seed)
        K = selection.K
    return kmeans(pts, K, seed=seed + K, links=links, n_init=4), selection


def write_clusters_csv(assign: ClusterAssignment, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["link_id", "cluster"])
        for lid in sorted(assign.assignment):
            w.writerow([lid, assign.assignment[lid]])


def read_clusters_csv(path: str | Path) -> ClusterAssignment:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(r["link_id"]), int(r["cluster"])) for r in csv.DictReader(fh)]
    assignment = dict(rows)
    K = max(assignment.values()) + 1 if assignment else 0
    return ClusterAssignment(K, assignment, np.zeros((K, 0)), float("nan"))


def write_curves_csv(sel: KSelection, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "inertia", "silhouette"])
        for K, i, s in zip(sel.ks.tolist(), sel.inertia.tolist(), sel.silhouettes.tolist()):
            w.writerow([K, repr(i), repr(s)])
