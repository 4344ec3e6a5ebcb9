"""Information-gain-driven selection of the next triplet queries, HIT
composition (training trials, side-swapped control repeats) and the
control-consistency worker rejection rule.

The posterior over a reference's location is supported on the current
embedding points (all other materials plus the reference's own point),
weighted by the likelihood of that reference's past answers under the
Student-t choice model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AnswerStore, TripletAnswer
from .tste import TsteConfig, TsteEmbedding, tste_fit, tste_probability, _kernel


class SamplingError(RuntimeError):
    pass


@dataclass
class PosteriorModel:
    embedding: TsteEmbedding
    # per reference material: (candidate locations (m, dim), weights (m,))
    support: dict = field(default_factory=dict)

    def tau(self, reference: str):
        return self.support[reference]


@dataclass(frozen=True)
class PlannedPair:
    reference: str
    a: str
    b: str


@dataclass
class SamplingPlan:
    iteration: int
    pairs: list[PlannedPair]
    mean_information_gain: float
    dropped_references: list[str] = field(default_factory=list)

    def save(self, path: Path) -> None:
        with open(path, "w") as fh:
            json.dump({
                "iteration": self.iteration,
                "mean_information_gain": self.mean_information_gain,
                "pairs": [{"reference": p.reference, "a": p.a, "b": p.b}
                          for p in self.pairs],
            }, fh, indent=2)
            fh.write("\n")


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def information_gain(tau_locations: np.ndarray, tau_weights: np.ndarray,
                     x_a: np.ndarray, x_b: np.ndarray,
                     alpha: float = 5.0) -> float:
    """Mutual information (bits) between the answer to (a, b) and the
    reference's location under the posterior tau."""
    w = np.asarray(tau_weights, dtype=np.float64)
    if w.size == 0 or abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
        raise SamplingError("posterior weights must be normalized")
    locs = np.asarray(tau_locations, dtype=np.float64)
    k_a = _kernel(np.sum((locs - x_a) ** 2, axis=1), alpha)
    k_b = _kernel(np.sum((locs - x_b) ** 2, axis=1), alpha)
    p = k_a / (k_a + k_b)
    marginal = float(np.dot(w, p))
    cond = float(np.dot(w, [binary_entropy(pi) for pi in p]))
    ig = binary_entropy(marginal) - cond
    return max(ig, 0.0)  # clip float round-off below zero


def build_posterior(answers: AnswerStore, embedding: TsteEmbedding) -> PosteriorModel:
    """Posterior per reference: weight on each candidate location proportional
    to the likelihood of the reference's answers if it sat there."""
    ids = embedding.material_ids
    index = {m: i for i, m in enumerate(ids)}
    pts = embedding.points
    model = PosteriorModel(embedding)
    by_ref: dict[str, list[TripletAnswer]] = {m: [] for m in ids}
    for ans in answers.answers:
        if ans.reference in by_ref:
            by_ref[ans.reference].append(ans)
    for m in ids:
        locs = pts  # all current embedding points, own point included
        logw = np.zeros(len(ids))
        for ans in by_ref[m]:
            ic = index.get(ans.chosen_material)
            io = index.get(ans.rejected_material)
            if ic is None or io is None:
                continue
            k_c = _kernel(np.sum((locs - pts[ic]) ** 2, axis=1), embedding.alpha)
            k_o = _kernel(np.sum((locs - pts[io]) ** 2, axis=1), embedding.alpha)
            logw += np.log(np.maximum(k_c / (k_c + k_o), 1e-300))
        logw -= logw.max()
        w = np.exp(logw)
        w /= w.sum()
        model.support[m] = (locs, w)
    return model


def asked_pairs(answers: AnswerStore) -> dict[str, set]:
    out: dict[str, set] = {}
    for ans in answers.answers:
        out.setdefault(ans.reference, set()).add(
            frozenset((ans.option_a, ans.option_b)))
    return out


def select_next_pairs(answers: AnswerStore, material_ids: list[str],
                      pairs_per_reference: int = 10, candidate_pool: int = 200,
                      rng: np.random.Generator | None = None,
                      bootstrap: bool = False,
                      tste_config: TsteConfig = TsteConfig(),
                      iteration: int = 0,
                      exhaustive: bool = False) -> SamplingPlan:
    """Refit the embedding, score a candidate pool of unasked pairs per
    reference by information gain, and keep the top pairs_per_reference."""
    rng = rng or np.random.default_rng(0)
    already = asked_pairs(answers)
    n = len(material_ids)
    if n < 3:
        raise SamplingError("need at least 3 materials")

    def unasked(reference):
        others = [m for m in material_ids if m != reference]
        seen = already.get(reference, set())
        pool = [(a, b) for i, a in enumerate(others) for b in others[i + 1:]
                if frozenset((a, b)) not in seen]
        return pool

    pairs: list[PlannedPair] = []
    dropped: list[str] = []
    gains: list[float] = []
    if bootstrap or len(answers) == 0:
        for reference in material_ids:
            pool = unasked(reference)
            if not pool:
                dropped.append(reference)
                continue
            take = min(pairs_per_reference, len(pool))
            picks = rng.choice(len(pool), size=take, replace=False)
            pairs.extend(PlannedPair(reference, *pool[i]) for i in picks)
        return SamplingPlan(iteration, pairs, 0.0, dropped)

    embedding = tste_fit(answers, tste_config)
    posterior = build_posterior(answers, embedding)
    index = {m: i for i, m in enumerate(embedding.material_ids)}
    pts = embedding.points
    for reference in material_ids:
        if reference not in index:
            dropped.append(reference)
            continue
        pool = unasked(reference)
        if not pool:
            dropped.append(reference)
            continue
        if not exhaustive and len(pool) > candidate_pool:
            picks = rng.choice(len(pool), size=candidate_pool, replace=False)
            pool = [pool[i] for i in picks]
        locs, w = posterior.tau(reference)
        scored = []
        for a, b in pool:
            ia, ib = index.get(a), index.get(b)
            if ia is None or ib is None:
                continue
            scored.append((information_gain(locs, w, pts[ia], pts[ib],
                                            embedding.alpha), a, b))
        scored.sort(key=lambda t: -t[0])
        for ig, a, b in scored[:pairs_per_reference]:
            pairs.append(PlannedPair(reference, a, b))
            gains.append(ig)
    mean_ig = float(np.mean(gains)) if gains else 0.0
    return SamplingPlan(iteration, pairs, mean_ig, dropped)


# ---------------------------------------------------------------------------
# HIT composition and worker judging


@dataclass(frozen=True)
class HitTrial:
    reference: str
    a: str
    b: str
    kind: str                  # trial | control | training
    control_of: int = -1       # index of the duplicated trial, controls only


@dataclass
class HitPlan:
    trials: list[HitTrial]

    def __len__(self):
        return len(self.trials)


def build_hit(plan: SamplingPlan, hit_size: int = 110, n_training: int = 5,
              n_control: int = 10, rng: np.random.Generator | None = None,
              embedding: TsteEmbedding | None = None,
              start: int = 0) -> HitPlan:
    """Compose one HIT: training trials with obvious answers first, then
    unique trials with side-swapped control repeats mixed in.

    `start` selects which slice of the plan's unique trials to use, so
    successive HITs consume disjoint trials.
    """
    rng = rng or np.random.default_rng(0)
    n_unique = hit_size - n_training - n_control
    if n_unique <= 0:
        raise SamplingError("hit_size must exceed training + control counts")
    if n_control > n_unique:
        raise SamplingError("more controls than unique trials to duplicate")
    available = plan.pairs[start:start + n_unique]
    if len(available) < n_unique:
        raise SamplingError(
            f"plan supplies {len(plan.pairs) - start} unique trials, "
            f"{n_unique} needed")

    training = _training_trials(n_training, embedding, rng)
    unique = [HitTrial(p.reference, p.a, p.b, "trial") for p in available]

    # place each control after its original: build the main sequence as
    # (unique-index | None, src) slots, then resolve final positions
    sequence: list[tuple[str, int]] = [("trial", i) for i in range(len(unique))]
    control_sources = sorted(rng.choice(len(unique), size=n_control, replace=False)) \
        if n_control else []
    for src in control_sources:
        orig_pos = next(i for i, (kind, ref) in enumerate(sequence)
                        if kind == "trial" and ref == src)
        pos = int(rng.integers(orig_pos + 1, len(sequence) + 1))
        sequence.insert(pos, ("control", src))
    position_of_src = {}
    for pos, (kind, ref) in enumerate(sequence):
        if kind == "trial":
            position_of_src[ref] = len(training) + pos
    resolved = []
    for kind, ref in sequence:
        t = unique[ref]
        if kind == "trial":
            resolved.append(t)
        else:
            resolved.append(HitTrial(t.reference, t.b, t.a, "control",
                                     position_of_src[ref]))
    return HitPlan(training + resolved)


def _training_trials(n_training: int, embedding: TsteEmbedding | None,
                     rng: np.random.Generator) -> list[HitTrial]:
    """Obvious-answer trials: triples maximizing the far/near distance ratio
    in the current embedding; random distinct triples when no embedding yet."""
    if n_training == 0:
        return []
    if embedding is None or len(embedding.material_ids) < 3:
        raise SamplingError("training trials need an embedding with >= 3 points")
    ids = embedding.material_ids
    pts = embedding.points
    n = len(ids)
    scored = []
    for r in range(n):
        d = np.sum((pts - pts[r]) ** 2, axis=1)
        order = np.argsort(d)
        near = order[1]               # closest other material
        far = order[-1]
        ratio = d[far] / max(d[near], 1e-12)
        scored.append((ratio, r, near, far))
    scored.sort(key=lambda t: -t[0])
    trials = []
    for _, r, near, far in scored[:n_training]:
        side = rng.integers(2)
        a, b = (ids[near], ids[far]) if side == 0 else (ids[far], ids[near])
        trials.append(HitTrial(ids[r], a, b, "training"))
    if len(trials) < n_training:
        raise SamplingError("not enough materials for the training session")
    return trials


def judge_worker(hit_answers: list[TripletAnswer], plan: HitPlan,
                 ) -> dict:
    """Consistency check: a control trial is inconsistent when it chooses a
    different material than its paired original; two or more inconsistencies
    reject the worker."""
    by_index = {i: a for i, a in enumerate(hit_answers)}
    inconsistencies = 0
    for i, trial in enumerate(plan.trials):
        if trial.kind != "control":
            continue
        if i not in by_index or trial.control_of not in by_index:
            raise SamplingError(f"missing control answer for trial {i}")
        if by_index[i].chosen_material != by_index[trial.control_of].chosen_material:
            inconsistencies += 1
    return {"valid": inconsistencies <= 1, "inconsistencies": inconsistencies}


def append_convergence_log(path: Path, iteration: int, mean_ig: float) -> None:
    path = Path(path)
    new = not path.exists()
    with open(path, "a") as fh:
        if new:
            fh.write("iteration,mean_ig\n")
        fh.write(f"{iteration},{mean_ig!r}\n")
