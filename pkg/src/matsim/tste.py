"""t-Distributed Stochastic Triplet Embedding over collected answers.

Places one point per material so that a Student-t kernel ratio reproduces the
votes; the resulting pairwise distances serve as the human-derived reference
when comparing distance matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AnswerStore


class TsteError(RuntimeError):
    pass


@dataclass(frozen=True)
class TsteConfig:
    alpha: float = 5.0
    dim: int = 2
    learning_rate: float = 0.1
    max_iters: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0 or self.dim < 1:
            raise TsteError("alpha must be > 0 and dim >= 1")


@dataclass
class TsteEmbedding:
    material_ids: list[str]
    points: np.ndarray          # (n, dim)
    log_likelihood: float
    satisfied_fraction: float
    converged: bool
    alpha: float
    seed: int

    def save(self, csv_path: Path) -> None:
        dim = self.points.shape[1]
        with open(csv_path, "w") as fh:
            fh.write("material_id," + ",".join(f"x{i}" for i in range(dim)) + "\n")
            for mid, row in zip(self.material_ids, self.points):
                fh.write(mid + "," + ",".join(repr(float(x)) for x in row) + "\n")
        sidecar = Path(csv_path).with_suffix(".json")
        with open(sidecar, "w") as fh:
            json.dump({
                "alpha": self.alpha,
                "dim": dim,
                "loglik": self.log_likelihood,
                "satisfied_fraction": self.satisfied_fraction,
                "seed": self.seed,
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _kernel(sqdist: np.ndarray, alpha: float) -> np.ndarray:
    # k(d) = (1 + d^2/alpha)^(-(alpha+1)/2) with d the Euclidean distance,
    # so the argument here is the squared distance.
    return (1.0 + sqdist / alpha) ** (-(alpha + 1.0) / 2.0)


def tste_probability(x_r, x_a, x_b, alpha: float = 5.0) -> float:
    x_r, x_a, x_b = (np.asarray(x, dtype=np.float64) for x in (x_r, x_a, x_b))
    k_ra = _kernel(np.sum((x_r - x_a) ** 2), alpha)
    k_rb = _kernel(np.sum((x_r - x_b) ** 2), alpha)
    return float(k_ra / (k_ra + k_rb))


def _loglik_and_grad(points: np.ndarray, votes: np.ndarray, alpha: float):
    """Sum of log p over votes (rows: r, chosen, other) and its gradient."""
    r, c, o = votes[:, 0], votes[:, 1], votes[:, 2]
    diff_rc = points[r] - points[c]
    diff_ro = points[r] - points[o]
    d_rc = np.sum(diff_rc ** 2, axis=1)
    d_ro = np.sum(diff_ro ** 2, axis=1)
    k_rc = _kernel(d_rc, alpha)
    k_ro = _kernel(d_ro, alpha)
    p = k_rc / (k_rc + k_ro)
    loglik = float(np.sum(np.log(np.maximum(p, 1e-300))))
    # d log k / d d2 = coef / (1 + d2/alpha)
    coef = -(alpha + 1.0) / (2.0 * alpha)
    dl_drc = (1.0 - p) * coef / (1.0 + d_rc / alpha)   # d loglik / d d2_rc
    dl_dro = -(1.0 - p) * coef / (1.0 + d_ro / alpha)
    grad = np.zeros_like(points)
    g_rc = (2.0 * dl_drc)[:, None] * diff_rc
    g_ro = (2.0 * dl_dro)[:, None] * diff_ro
    np.add.at(grad, r, g_rc + g_ro)
    np.add.at(grad, c, -g_rc)
    np.add.at(grad, o, -g_ro)
    return loglik, grad


def _vote_array(answers: AnswerStore) -> tuple[list[str], np.ndarray]:
    ids: dict[str, int] = {}
    for ans in answers.answers:
        for m in (ans.reference, ans.option_a, ans.option_b):
            ids.setdefault(m, len(ids))
    votes = np.array(
        [(ids[a.reference], ids[a.chosen_material], ids[a.rejected_material])
         for a in answers.answers], dtype=int)
    return list(ids), votes


def tste_fit(answers: AnswerStore, config: TsteConfig = TsteConfig()) -> TsteEmbedding:
    """Gradient ascent on the vote log-likelihood with step-halving acceptance;
    the accepted-likelihood trace is non-decreasing by construction."""
    if len(answers) == 0:
        raise TsteError("no answers to embed")
    material_ids, votes = _vote_array(answers)
    rng = np.random.default_rng(config.seed)
    points = rng.standard_normal((len(material_ids), config.dim)) * 0.1
    loglik, grad = _loglik_and_grad(points, votes, config.alpha)
    step = config.learning_rate
    converged = True
    min_step = 1e-12
    for _ in range(config.max_iters):
        if np.linalg.norm(grad) * step < 1e-12:
            break
        while True:
            candidate = points + step * grad
            new_loglik, new_grad = _loglik_and_grad(candidate, votes, config.alpha)
            if new_loglik >= loglik:
                points, loglik, grad = candidate, new_loglik, new_grad
                step *= 1.2
                break
            step *= 0.5
            if step < min_step:
                converged = False
                break
        if not converged:
            break
    satisfied = _satisfied_fraction(points, votes)
    return TsteEmbedding(material_ids, points, loglik, satisfied, converged,
                         config.alpha, config.seed)


def _satisfied_fraction(points: np.ndarray, votes: np.ndarray) -> float:
    d_rc = np.sum((points[votes[:, 0]] - points[votes[:, 1]]) ** 2, axis=1)
    d_ro = np.sum((points[votes[:, 0]] - points[votes[:, 2]]) ** 2, axis=1)
    return float(np.mean(d_rc < d_ro))


def tste_distance_matrix(embedding: TsteEmbedding) -> np.ndarray:
    pts = embedding.points
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1))
