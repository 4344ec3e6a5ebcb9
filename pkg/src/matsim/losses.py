"""Loss terms over feature vectors, with analytic gradients.

All distances are squared Euclidean in feature space.  Similarity is
s = 1/(1+d) and the choice probability is the quotient p_ra = s_ra/(s_ra+s_rb).
Batch reductions always run in index order so results are bit-reproducible;
an optional thread pool only computes per-item contributions, never changes
the reduction order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

_P_FLOOR = 1e-12  # clamp before log; unreachable for finite features


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class TripletGeometry:
    d_ra: float
    d_rb: float
    s_ra: float
    s_rb: float
    p_ra: float
    p_rb: float


@dataclass(frozen=True)
class LossConfig:
    margin_mu: float = 0.3
    weight_tl: float = 1.0
    weight_p: float = 1.0
    weight_ce: float = 0.0
    weight_btl: float = 0.0
    label_smoothing_epsilon: float = 0.1
    n_classes: int = 0

    def __post_init__(self):
        if self.margin_mu < 0:
            raise LossError("margin must be >= 0")
        if min(self.weight_tl, self.weight_p, self.weight_ce, self.weight_btl) < 0:
            raise LossError("loss weights must be >= 0")
        if not (0 <= self.label_smoothing_epsilon < 1):
            raise LossError("label smoothing epsilon must be in [0, 1)")


def _as_batch(f) -> np.ndarray:
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if not np.all(np.isfinite(arr)):
        raise LossError("non-finite feature input")
    return arr


def _check_dims(*arrays):
    dims = {a.shape[1] for a in arrays}
    if len(dims) != 1:
        raise LossError(f"feature dimension mismatch: {sorted(dims)}")
    ns = {a.shape[0] for a in arrays}
    if len(ns) != 1:
        raise LossError(f"batch size mismatch: {sorted(ns)}")


def triplet_geometry(f_r, f_a, f_b) -> TripletGeometry:
    """Distances, similarities and choice probabilities for one triplet."""
    r, a, b = _as_batch(f_r), _as_batch(f_a), _as_batch(f_b)
    _check_dims(r, a, b)
    d_ra = float(np.sum((r - a) ** 2))
    d_rb = float(np.sum((r - b) ** 2))
    s_ra = 1.0 / (1.0 + d_ra)
    s_rb = 1.0 / (1.0 + d_rb)
    p_ra = s_ra / (s_ra + s_rb)
    return TripletGeometry(d_ra, d_rb, s_ra, s_rb, p_ra, 1.0 - p_ra)


def _triplet_arrays(batch_triplets):
    if len(batch_triplets) == 0:
        raise LossError("empty triplet batch")
    f_r = _as_batch(np.array([t[0] for t in batch_triplets], dtype=np.float64))
    f_a = _as_batch(np.array([t[1] for t in batch_triplets], dtype=np.float64))
    f_b = _as_batch(np.array([t[2] for t in batch_triplets], dtype=np.float64))
    _check_dims(f_r, f_a, f_b)
    return f_r, f_a, f_b


def _sqdist(x, y):
    return np.sum((x - y) ** 2, axis=1)


def loss_triplet_TL(batch_triplets, mu: float = 0.3, parallel: bool = False):
    """Mean hinge(d_ra - d_rb + mu); subgradient zero where the hinge is off."""
    f_r, f_a, f_b = _triplet_arrays(batch_triplets)
    n = f_r.shape[0]

    def contrib(idx):
        r, a, b = f_r[idx], f_a[idx], f_b[idx]
        arg = np.sum((r - a) ** 2) - np.sum((r - b) ** 2) + mu
        active = arg > 0
        val = arg if active else 0.0
        if active:
            g_r = 2.0 * (f_b[idx] - f_a[idx])
            g_a = -2.0 * (r - a)
            g_b = 2.0 * (r - b)
        else:
            g_r = np.zeros_like(r)
            g_a = np.zeros_like(r)
            g_b = np.zeros_like(r)
        return val, g_r, g_a, g_b

    return _reduce_triplet_contribs(contrib, n, f_r.shape[1], parallel)


def loss_similarity_P(batch_triplets, parallel: bool = False):
    """Negative mean log-likelihood of the human-chosen side, natural log."""
    f_r, f_a, f_b = _triplet_arrays(batch_triplets)
    n = f_r.shape[0]

    def contrib(idx):
        r, a, b = f_r[idx], f_a[idx], f_b[idx]
        d_ra = np.sum((r - a) ** 2)
        d_rb = np.sum((r - b) ** 2)
        s_ra = 1.0 / (1.0 + d_ra)
        s_rb = 1.0 / (1.0 + d_rb)
        p_ra = s_ra / (s_ra + s_rb)
        val = -np.log(max(p_ra, _P_FLOOR))
        # dL/dd_ra = s_ra * p_rb ; dL/dd_rb = -s_rb * p_rb
        p_rb = 1.0 - p_ra
        dd_ra = s_ra * p_rb
        dd_rb = -s_rb * p_rb
        g_r = dd_ra * 2.0 * (r - a) + dd_rb * 2.0 * (r - b)
        g_a = dd_ra * -2.0 * (r - a)
        g_b = dd_rb * -2.0 * (r - b)
        return val, g_r, g_a, g_b

    return _reduce_triplet_contribs(contrib, n, f_r.shape[1], parallel)


def _reduce_triplet_contribs(contrib, n, dim, parallel):
    if parallel:
        with ThreadPoolExecutor() as pool:
            parts = list(pool.map(contrib, range(n)))
    else:
        parts = [contrib(i) for i in range(n)]
    vals = np.array([p[0] for p in parts])
    g_r = np.stack([p[1] for p in parts])
    g_a = np.stack([p[2] for p in parts])
    g_b = np.stack([p[3] for p in parts])
    value = float(np.sum(vals) / n)
    return value, (g_r / n, g_a / n, g_b / n)


def loss_cross_entropy_CE(predicted, labels, epsilon: float = 0.1):
    """Soft-label cross entropy smoothed against the uniform distribution."""
    p = np.asarray(predicted, dtype=np.float64)
    if p.ndim != 2:
        raise LossError("predicted distributions must be a 2-d array")
    n, k = p.shape
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (n,):
        raise LossError("one label per distribution required")
    if np.any((labels < 0) | (labels >= k)):
        raise LossError("label out of range")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9) or np.any(p < 0):
        raise LossError("rows must be probability distributions")
    logp = np.log(np.maximum(p, _P_FLOOR))
    picked = logp[np.arange(n), labels]
    value = float(np.mean(-(1.0 - epsilon) * picked - (epsilon / k) * logp.sum(axis=1)))
    safe = np.maximum(p, _P_FLOOR)
    grad = -(epsilon / k) / safe
    grad[np.arange(n), labels] -= (1.0 - epsilon) / safe[np.arange(n), labels]
    return value, grad / n


def loss_batch_mining_BTL(features, labels, mu: float = 0.3):
    """Hardest-example triplet loss: per anchor, hinge(max same-class distance
    - min different-class distance + mu), averaged over the batch."""
    feats = _as_batch(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels)
    n = feats.shape[0]
    if labels.shape != (n,):
        raise LossError("one label per feature required")
    d = np.sum((feats[:, None, :] - feats[None, :, :]) ** 2, axis=-1)
    total = 0.0
    grads = np.zeros_like(feats)
    for r in range(n):
        same = np.flatnonzero((labels == labels[r]) & (np.arange(n) != r))
        diff = np.flatnonzero(labels != labels[r])
        if same.size == 0 or diff.size == 0:
            raise LossError(f"anchor {r}: batch lacks a positive or negative")
        pos = same[np.argmax(d[r, same])]
        neg = diff[np.argmin(d[r, diff])]
        arg = d[r, pos] - d[r, neg] + mu
        if arg > 0:
            total += arg
            grads[r] += 2.0 * (feats[neg] - feats[pos])
            grads[pos] += -2.0 * (feats[r] - feats[pos])
            grads[neg] += 2.0 * (feats[r] - feats[neg])
    return total / n, grads / n


@dataclass
class LossBatch:
    """Inputs for the combined loss; only the parts needed by enabled terms
    have to be present."""
    triplets: list = field(default_factory=list)        # (f_r, f_a, f_b) rows
    features: np.ndarray | None = None                  # for BTL
    labels: np.ndarray | None = None                    # for BTL / CE
    class_probs: np.ndarray | None = None               # for CE


@dataclass
class CombinedGradients:
    triplet: tuple | None = None      # (g_r, g_a, g_b)
    features: np.ndarray | None = None
    class_probs: np.ndarray | None = None


def loss_combined(batch: LossBatch, config: LossConfig, parallel: bool = False):
    """Weighted sum of the enabled terms; gradients add linearly."""
    value = 0.0
    grads = CombinedGradients()
    if config.weight_tl > 0 or config.weight_p > 0:
        if not batch.triplets:
            raise LossError("triplet terms enabled but batch has no triplets")
        dim = len(batch.triplets[0][0])
        g_sum = [np.zeros((len(batch.triplets), dim)) for _ in range(3)]
        if config.weight_tl > 0:
            v, g = loss_triplet_TL(batch.triplets, config.margin_mu, parallel)
            value += config.weight_tl * v
            for acc, part in zip(g_sum, g):
                acc += config.weight_tl * part
        if config.weight_p > 0:
            v, g = loss_similarity_P(batch.triplets, parallel)
            value += config.weight_p * v
            for acc, part in zip(g_sum, g):
                acc += config.weight_p * part
        grads.triplet = tuple(g_sum)
    if config.weight_ce > 0:
        if batch.class_probs is None or batch.labels is None:
            raise LossError("cross-entropy enabled but class_probs/labels missing")
        v, g = loss_cross_entropy_CE(batch.class_probs, batch.labels,
                                     config.label_smoothing_epsilon)
        value += config.weight_ce * v
        grads.class_probs = config.weight_ce * g
    if config.weight_btl > 0:
        if batch.features is None or batch.labels is None:
            raise LossError("batch-mining loss enabled but features/labels missing")
        v, g = loss_batch_mining_BTL(batch.features, batch.labels, config.margin_mu)
        value += config.weight_btl * v
        grads.features = config.weight_btl * g
    return value, grads
