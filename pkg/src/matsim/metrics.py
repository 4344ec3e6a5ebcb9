"""Evaluation of a similarity predictor against collected 2AFC answers:
raw/majority accuracy, oracle, perplexity, per-category breakdown and the
normalized distance-matrix error."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AnswerStore, DatasetBundle
from .encoder import EncoderModel

_P_FLOOR = 1e-12


class MetricError(ValueError):
    pass


# Reference values from the original large-scale study, for report
# formatting only; they depend on the full rendered corpus and crowd
# answers and are not reproduction targets.
STUDY_REFERENCE = {
    "human_raw": 73.10,
    "human_majority": 77.53,
    "model_raw": 73.97,
    "model_majority": 80.69,
    "model_perplexity_raw": 1.74,
    "model_perplexity_majority": 1.55,
    "tste_satisfied_percent": 87.36,
    "hopkins_full": 0.9585,
    "hopkins_metals": 0.6935,
    "summary_clusters": 7,
}


@dataclass
class EvaluationReport:
    raw_accuracy: float
    majority_accuracy: float
    perplexity_raw: float
    perplexity_majority: float
    n_answers: int
    per_category: dict = field(default_factory=dict)
    clamped_probabilities: int = 0

    def to_dict(self) -> dict:
        return {
            "raw_accuracy": self.raw_accuracy,
            "majority_accuracy": self.majority_accuracy,
            "perplexity_raw": self.perplexity_raw,
            "perplexity_majority": self.perplexity_majority,
            "n_answers": self.n_answers,
            "per_category": self.per_category,
            "clamped_probabilities": self.clamped_probabilities,
        }

    def save(self, path: Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: Path) -> "EvaluationReport":
        with open(path) as fh:
            obj = json.load(fh)
        return cls(
            raw_accuracy=obj["raw_accuracy"],
            majority_accuracy=obj["majority_accuracy"],
            perplexity_raw=obj["perplexity_raw"],
            perplexity_majority=obj["perplexity_majority"],
            n_answers=obj["n_answers"],
            per_category=obj.get("per_category", {}),
            clamped_probabilities=obj.get("clamped_probabilities", 0),
        )


def accuracy(answers: AnswerStore, predict) -> tuple[float, float]:
    """Raw accuracy over individual votes and majority accuracy over non-tied
    comparisons.  `predict(r, a, b)` returns the predicted more-similar
    material (a or b)."""
    if len(answers) == 0:
        raise MetricError("no answers to evaluate")
    raw_hits = 0
    for ans in answers.answers:
        pred = predict(ans.reference, ans.option_a, ans.option_b)
        if pred not in (ans.option_a, ans.option_b):
            raise MetricError(f"predictor returned invalid side {pred!r}")
        raw_hits += pred == ans.chosen_material
    maj_hits = maj_total = 0
    for r, a, b in answers.comparisons():
        modal = answers.majority(r, a, b)
        if modal is None:
            continue
        maj_total += 1
        maj_hits += predict(r, a, b) == modal
    if maj_total == 0:
        raise MetricError("every comparison is tied; majority accuracy undefined")
    return raw_hits / len(answers), maj_hits / maj_total


def oracle_predictor(answers: AnswerStore):
    """Predictor that returns the modal vote (first side on ties)."""
    def predict(r, a, b):
        modal = answers.majority(r, a, b)
        return modal if modal is not None else a
    return predict


def distance_predictor(distances: "np.ndarray", material_ids: list[str]):
    """argmin-distance side predictor over a material distance matrix."""
    idx = {m: i for i, m in enumerate(material_ids)}

    def predict(r, a, b):
        return a if distances[idx[r], idx[a]] <= distances[idx[r], idx[b]] else b
    return predict


def distance_probability(distances: "np.ndarray", material_ids: list[str]):
    """p_ra from distance-matrix entries via the similarity quotient."""
    idx = {m: i for i, m in enumerate(material_ids)}

    def prob(r, a, b):
        s_ra = 1.0 / (1.0 + distances[idx[r], idx[a]])
        s_rb = 1.0 / (1.0 + distances[idx[r], idx[b]])
        return s_ra / (s_ra + s_rb)
    return prob


def perplexity(answers: AnswerStore, prob, mode: str = "raw") -> float:
    """Q = 2^(-mean log2 p of the chosen side).  In majority mode one term per
    non-tied comparison, with p of the modal side."""
    terms = []
    clamped = 0
    if mode == "raw":
        items = [(a.reference, a.option_a, a.option_b, a.chosen_material)
                 for a in answers.answers]
    elif mode == "majority":
        items = []
        for r, a, b in answers.comparisons():
            modal = answers.majority(r, a, b)
            if modal is not None:
                items.append((r, a, b, modal))
    else:
        raise MetricError(f"unknown perplexity mode {mode!r}")
    if not items:
        raise MetricError("no answers to evaluate")
    for r, a, b, chosen in items:
        p = prob(r, a, b)
        p_chosen = p if chosen == a else 1.0 - p
        if p_chosen < _P_FLOOR:
            p_chosen = _P_FLOOR
            clamped += 1
        terms.append(np.log2(p_chosen))
    q = float(2.0 ** (-np.mean(terms)))
    perplexity.last_clamped = clamped  # inspected when building reports
    return q


def distance_matrix_from_model(model: EncoderModel, bundle: DatasetBundle) -> np.ndarray:
    """Material distance matrix: mean squared feature distance over all view
    pairs (one view of each material); zero diagonal."""
    feats = model.forward(bundle.descriptors)
    rows_by_material = {}
    for v in bundle.views:
        rows_by_material.setdefault(v.material_id, []).append(v.descriptor_row)
    ids = bundle.material_ids
    for m in ids:
        if not rows_by_material.get(m):
            raise MetricError(f"material {m!r} has no views")
    n = len(ids)
    out = np.zeros((n, n))
    for i in range(n):
        fi = feats[rows_by_material[ids[i]]]
        for j in range(i + 1, n):
            fj = feats[rows_by_material[ids[j]]]
            d = np.sum((fi[:, None, :] - fj[None, :, :]) ** 2, axis=-1)
            out[i, j] = out[j, i] = d.mean()
    return out


def check_distance_matrix(mat: np.ndarray) -> None:
    if not np.all(np.isfinite(mat)):
        raise MetricError("non-finite distance matrix")
    if np.any(np.abs(mat - mat.T) > 1e-9):
        raise MetricError("distance matrix not symmetric")
    if np.any(mat < 0) or np.any(np.abs(np.diag(mat)) > 0):
        raise MetricError("distances must be non-negative with zero diagonal")


def mean_matrix_error(candidate: np.ndarray, reference: np.ndarray,
                      ) -> tuple[float, float]:
    """Mean absolute difference of max-normalized matrices over the upper
    triangle, with a normal-approximation 95% CI half-width."""
    check_distance_matrix(candidate)
    check_distance_matrix(reference)
    if candidate.shape != reference.shape:
        raise MetricError("matrices must cover the same material set")
    if candidate.max() == 0 or reference.max() == 0:
        raise MetricError("all-zero distance matrix cannot be normalized")
    iu = np.triu_indices(candidate.shape[0], k=1)
    errs = np.abs(candidate[iu] / candidate.max() - reference[iu] / reference.max())
    mean = float(errs.mean())
    ci95 = float(1.96 * errs.std(ddof=1) / np.sqrt(errs.size)) if errs.size > 1 else 0.0
    return mean, ci95


def per_category_breakdown(answers: AnswerStore, predict,
                           bundle: DatasetBundle) -> dict:
    """Raw/majority accuracy split by the reference material's category."""
    cat_of = {m.id: m.category for m in bundle.materials}
    out = {}
    for cat in bundle.categories:
        sub = AnswerStore([a for a in answers.answers
                           if cat_of.get(a.reference) == cat])
        if len(sub) == 0:
            continue
        try:
            raw, maj = accuracy(sub, predict)
        except MetricError:
            continue
        out[cat] = {
            "materials": sum(1 for m in bundle.materials if m.category == cat),
            "answers": len(sub),
            "raw": raw,
            "majority": maj,
        }
    return out


def evaluate(answers: AnswerStore, predict, prob,
             bundle: DatasetBundle | None = None) -> EvaluationReport:
    raw, maj = accuracy(answers, predict)
    q_raw = perplexity(answers, prob, "raw")
    clamped = perplexity.last_clamped
    q_maj = perplexity(answers, prob, "majority")
    clamped += perplexity.last_clamped
    per_cat = per_category_breakdown(answers, predict, bundle) if bundle else {}
    return EvaluationReport(raw, maj, q_raw, q_maj, len(answers), per_cat, clamped)
