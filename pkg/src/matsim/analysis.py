"""Feature-space applications: banded nearest-neighbor suggestions, 2D
principal-components projection, k-means with elbow selection, the Hopkins
clustering-tendency statistic, and database summarization."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DatasetBundle
from .encoder import EncoderModel


class AnalysisError(ValueError):
    pass


@dataclass
class FeatureIndex:
    material_ids: list[str]
    representatives: np.ndarray   # (n_materials, D), mean of view features
    view_features: np.ndarray     # (n_views, D)
    view_materials: list[str]

    @classmethod
    def from_model(cls, model: EncoderModel, bundle: DatasetBundle) -> "FeatureIndex":
        feats = model.forward(bundle.descriptors)
        if feats.ndim == 1:
            feats = feats[None, :]
        ids = bundle.material_ids
        reps = np.zeros((len(ids), feats.shape[1]))
        view_materials = [v.material_id for v in bundle.views]
        for i, mid in enumerate(ids):
            rows = [v.descriptor_row for v in bundle.views if v.material_id == mid]
            reps[i] = feats[rows].mean(axis=0)
        return cls(list(ids), reps, feats, view_materials)

    def representative(self, mid: str) -> np.ndarray:
        return self.representatives[self.material_ids.index(mid)]


BANDS = {"near": (0.0, 1 / 3), "mid": (1 / 3, 2 / 3), "far": (2 / 3, 1.0)}


def ranked_by_distance(index: FeatureIndex, reference: str) -> list[tuple[str, float]]:
    ref = index.representative(reference)
    d = np.sum((index.representatives - ref) ** 2, axis=1)
    order = np.argsort(d, kind="stable")
    return [(index.material_ids[i], float(d[i])) for i in order
            if index.material_ids[i] != reference]


def band_slice(n: int, band) -> tuple[int, int]:
    if isinstance(band, str):
        if band not in BANDS:
            raise AnalysisError(f"unknown band {band!r}")
        lo, hi = BANDS[band]
    else:
        lo, hi = band
        if not (0 <= lo < hi <= 1):
            raise AnalysisError("band quantiles must satisfy 0 <= lo < hi <= 1")
    start = int(np.floor(lo * n))
    stop = n if hi >= 1.0 else int(np.floor(hi * n))
    return start, stop


def suggest(index: FeatureIndex, reference: str, band="near", count: int = 1,
            seed: int = 0) -> list[str]:
    """Sample materials from a distance-rank band around the reference."""
    if count < 1:
        raise AnalysisError("count must be >= 1")
    ranked = ranked_by_distance(index, reference)
    start, stop = band_slice(len(ranked), band)
    pool = ranked[start:stop]
    if not pool:
        raise AnalysisError(f"band {band!r} is empty for this dataset size")
    rng = np.random.default_rng(seed)
    take = min(count, len(pool))
    picks = rng.choice(len(pool), size=take, replace=False)
    return [pool[i][0] for i in sorted(picks)]


def project_2d(index: FeatureIndex) -> np.ndarray:
    """Mean-centered projection onto the top two principal axes; the
    largest-magnitude coordinate of each axis is made positive."""
    x = index.representatives
    if x.shape[0] < 3:
        raise AnalysisError("projection needs at least 3 materials")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] <= 1e-15:
        raise AnalysisError("degenerate covariance: all points identical")
    axes = eigvecs[:, ::-1][:, :2]
    coords = centered @ axes
    for j in range(coords.shape[1]):
        k = np.argmax(np.abs(coords[:, j]))
        if coords[k, j] < 0:
            coords[:, j] = -coords[:, j]
    return coords


@dataclass
class ClusteringResult:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    within_ss: float
    explained_variance: float


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iters: int, tol: float):
    for _ in range(max_iters):
        d = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
        assign = np.argmin(d, axis=1)
        new = centroids.copy()
        for j in range(centroids.shape[0]):
            members = x[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:  # re-seed empty cluster on the farthest point
                far = np.argmax(np.min(d, axis=1))
                new[j] = x[far]
        shift = np.max(np.linalg.norm(new - centroids, axis=1))
        centroids = new
        if shift < tol:
            break
    d = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
    assign = np.argmin(d, axis=1)
    ssw = float(np.sum(np.min(d, axis=1)))
    return assign, centroids, ssw


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = [x[rng.integers(n)]]
    for _ in range(1, k):
        d = np.min(np.sum((x[:, None, :] - np.array(centroids)[None, :, :]) ** 2,
                          axis=-1), axis=1)
        total = d.sum()
        if total == 0:
            centroids.append(x[rng.integers(n)])
            continue
        centroids.append(x[rng.choice(n, p=d / total)])
    return np.array(centroids)


def _result(x: np.ndarray, assign, centroids, ssw) -> ClusteringResult:
    sst = float(np.sum((x - x.mean(axis=0)) ** 2))
    ev = 1.0 - ssw / sst if sst > 0 else 1.0
    return ClusteringResult(centroids.shape[0], assign, centroids, ssw,
                            min(max(ev, 0.0), 1.0))


def kmeans(index: FeatureIndex, k: int, restarts: int = 10, max_iters: int = 300,
           tol: float = 1e-6, seed: int = 0) -> ClusteringResult:
    x = index.representatives
    n = x.shape[0]
    if k > n or k < 1:
        raise AnalysisError(f"k={k} invalid for {n} materials")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        init = _kmeanspp_init(x, k, rng)
        assign, centroids, ssw = _lloyd(x, init, max_iters, tol)
        if best is None or ssw < best[2]:
            best = (assign, centroids, ssw)
    return _result(x, *best)


def elbow_k(index: FeatureIndex, variance_threshold: float = 0.95,
            k_max: int | None = None, max_iters: int = 300, tol: float = 1e-6,
            seed: int = 0) -> tuple[int, list[ClusteringResult], bool]:
    """Smallest k whose clustering explains >= threshold of the variance.

    Solutions are nested: k+1 starts from k's centroids plus the point
    farthest from its centroid, so explained variance never decreases.
    Returns (k, per-k results, reached) where reached is False when the
    threshold is unattainable within k_max.
    """
    x = index.representatives
    n = x.shape[0]
    k_max = min(k_max or n, n)
    centroids = x.mean(axis=0)[None, :]
    assign, centroids, ssw = _lloyd(x, centroids, max_iters, tol)
    results = [_result(x, assign, centroids, ssw)]
    while results[-1].explained_variance < variance_threshold and len(results) < k_max:
        res = results[-1]
        d = np.sum((x - res.centroids[res.assignments]) ** 2, axis=1)
        init = np.vstack([res.centroids, x[np.argmax(d)]])
        assign, centroids, ssw = _lloyd(x, init, max_iters, tol)
        nxt = _result(x, assign, centroids, ssw)
        if nxt.within_ss > res.within_ss:  # keep monotone: fall back to split-only init
            nxt = res
        results.append(nxt)
        if len(results) >= 2 and results[-1].explained_variance < results[-2].explained_variance:
            raise AnalysisError("explained variance decreased under nested init")
    reached = results[-1].explained_variance >= variance_threshold
    return len(results), results, reached


def hopkins(index: FeatureIndex, sample_fraction: float = 0.1,
            repetitions: int = 100, seed: int = 0) -> float:
    """Hopkins clustering-tendency statistic, mean over repetitions.

    Per repetition, m data points (nearest-neighbor distance w_i, self
    excluded) and m uniform points in the data bounding box (nearest-data
    distance u_i); H = sum(u) / (sum(u) + sum(w)).
    """
    x = index.representatives
    n = x.shape[0]
    if n < 10:
        raise AnalysisError("hopkins needs at least 10 materials")
    m = int(np.clip(round(sample_fraction * n), 5, 50))
    m = min(m, n - 1)
    lo, hi = x.min(axis=0), x.max(axis=0)
    if np.all(hi - lo <= 0):
        raise AnalysisError("degenerate bounding box")
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(repetitions):
        sample_idx = rng.choice(n, size=m, replace=False)
        w = []
        for i in sample_idx:
            d = np.sum((x - x[i]) ** 2, axis=1)
            d[i] = np.inf
            w.append(np.sqrt(d.min()))
        uniform = rng.uniform(lo, hi, size=(m, x.shape[1]))
        u = np.sqrt(np.min(np.sum((uniform[:, None, :] - x[None, :, :]) ** 2,
                                  axis=-1), axis=1))
        su, sw = float(np.sum(u)), float(np.sum(w))
        values.append(su / (su + sw))
    return float(np.mean(values))


def summarize(index: FeatureIndex, k: int, restarts: int = 10, seed: int = 0,
              ) -> list[str]:
    """Closest material to each cluster centroid; ties break by id order."""
    res = kmeans(index, k, restarts=restarts, seed=seed)
    x = index.representatives
    out = []
    for j in range(res.k):
        members = np.flatnonzero(res.assignments == j)
        d = np.sum((x[members] - res.centroids[j]) ** 2, axis=1)
        best = min(zip(d, (index.material_ids[i] for i in members)),
                   key=lambda t: (t[0], t[1]))
        out.append(best[1])
    return out


# ---------------------------------------------------------------------------
# Delimited outputs


def save_projection(path: Path, index: FeatureIndex, coords: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("material_id,x,y\n")
        for mid, (px, py) in zip(index.material_ids, coords):
            fh.write(f"{mid},{float(px)!r},{float(py)!r}\n")


def save_clusters(path: Path, index: FeatureIndex, result: ClusteringResult) -> None:
    with open(path, "w") as fh:
        fh.write("material_id,cluster\n")
        for mid, c in zip(index.material_ids, result.assignments):
            fh.write(f"{mid},{int(c)}\n")


def save_hopkins(path: Path, value: float, sample_fraction: float,
                 repetitions: int, seed: int) -> None:
    with open(path, "w") as fh:
        json.dump({"hopkins": value, "sample_fraction": sample_fraction,
                   "repetitions": repetitions, "seed": seed}, fh, indent=2)
        fh.write("\n")
