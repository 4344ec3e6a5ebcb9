"""Gamut mapping as feature-space distance minimization: find simplex mixing
weights over basis descriptors so the mixture's feature is closest to the
target's feature.  Projected gradient descent with step halving guarantees a
non-increasing objective trace."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import EncoderModel


class GamutError(ValueError):
    pass


@dataclass(frozen=True)
class GamutProblem:
    target_descriptor: np.ndarray
    basis_descriptors: np.ndarray  # (n_basis, input_dim)

    def __post_init__(self):
        t = np.asarray(self.target_descriptor, dtype=np.float64)
        g = np.asarray(self.basis_descriptors, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] < 2:
            raise GamutError("need at least 2 basis descriptors")
        if t.shape != (g.shape[1],):
            raise GamutError("target/basis dimension mismatch")
        object.__setattr__(self, "target_descriptor", t)
        object.__setattr__(self, "basis_descriptors", g)


@dataclass
class GamutSolution:
    weights: np.ndarray
    objective: float
    iterations: int
    trace: list = field(default_factory=list)

    def save(self, path: Path) -> None:
        with open(path, "w") as fh:
            json.dump({"weights": self.weights.tolist(),
                       "objective": self.objective,
                       "iterations": self.iterations}, fh, indent=2)
            fh.write("\n")


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise GamutError("non-finite input to simplex projection")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, len(v) + 1) > (css - 1.0))[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def box_project(v: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)


def gamut_solve(problem: GamutProblem, model: EncoderModel, max_iters: int = 500,
                step: float = 0.05, tol: float = 1e-8, seed: int = 0,
                simplex: bool = True) -> GamutSolution:
    """Minimize ||f(target) - f(sum_i w_i g_i)||^2 over the simplex (or the
    unit box with --no-simplex semantics when simplex=False)."""
    g = problem.basis_descriptors
    if g.shape[1] != model.input_dim:
        raise GamutError(
            f"basis dim {g.shape[1]} != encoder input {model.input_dim}")
    project = simplex_project if simplex else box_project
    f_target = model.forward(problem.target_descriptor)
    n_basis = g.shape[0]
    w = project(np.full(n_basis, 1.0 / n_basis))

    def objective_and_grad(weights):
        mixed = weights @ g
        f_mixed, acts = model.forward(mixed, cache=True)
        resid = f_mixed - f_target
        obj = float(np.sum(resid ** 2))
        _, input_grad = model.backward(acts, 2.0 * resid)
        if not np.all(np.isfinite(input_grad)):
            raise GamutError("non-finite gradient")
        return obj, g @ input_grad.ravel()

    obj, grad = objective_and_grad(w)
    trace = [obj]
    iters = 0
    cur_step = step
    for iters in range(1, max_iters + 1):
        moved = False
        while cur_step > 1e-18:
            candidate = project(w - cur_step * grad)
            displacement = float(np.linalg.norm(candidate - w))
            new_obj, new_grad = objective_and_grad(candidate)
            if new_obj <= obj:
                w, obj, grad = candidate, new_obj, new_grad
                trace.append(obj)
                cur_step *= 1.5
                moved = True
                break
            cur_step *= 0.5
        # converged when the accepted move is tiny or no move improves
        if not moved or displacement < tol:
            break
    return GamutSolution(w, obj, iters, trace)


def load_problem(path: Path, bundle=None) -> GamutProblem:
    """Problem file: {"target": view_id | [floats], "basis": [view_id | [floats], ...]}."""
    with open(path) as fh:
        obj = json.load(fh)

    def resolve(entry):
        if isinstance(entry, list):
            return np.asarray(entry, dtype=np.float64)
        if bundle is None:
            raise GamutError(f"view reference {entry!r} but no dataset given")
        view = bundle.view(entry)
        return bundle.descriptors[view.descriptor_row]

    target = resolve(obj["target"])
    basis = np.vstack([resolve(e) for e in obj["basis"]])
    return GamutProblem(target, basis)
