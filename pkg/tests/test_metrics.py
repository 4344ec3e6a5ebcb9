import numpy as np
import pytest

from matsim.data import AnswerStore, TripletAnswer, generate_synthetic
from matsim.encoder import EncoderModel
from matsim.metrics import (EvaluationReport, MetricError, accuracy,
                            distance_matrix_from_model, distance_predictor,
                            evaluate, mean_matrix_error, oracle_predictor,
                            per_category_breakdown, perplexity)


def votes(r, a, b, n_a, n_b):
    out = [TripletAnswer(r, a, b, "A", f"w{i}") for i in range(n_a)]
    out += [TripletAnswer(r, a, b, "B", f"w{i + n_a}") for i in range(n_b)]
    return out


class TestAccuracy:
    def test_raw_and_majority_definition(self):
        store = AnswerStore(votes("r", "a", "b", 4, 1))
        raw, maj = accuracy(store, lambda r, a, b: a)
        assert raw == pytest.approx(0.8)
        assert maj == 1.0

    def test_oracle_majority_always_one(self):
        rng = np.random.default_rng(0)
        mats = [f"m{i}" for i in range(8)]
        store = AnswerStore()
        for _ in range(60):
            r, a, b = (mats[i] for i in rng.choice(8, 3, replace=False))
            store.extend(votes(r, a, b, int(rng.integers(0, 5)) + 3,
                               int(rng.integers(0, 3))))
        _, maj = accuracy(store, oracle_predictor(store))
        assert maj == 1.0

    def test_oracle_raw_below_one_with_disagreement(self):
        store = AnswerStore(votes("r", "a", "b", 4, 1))
        raw, _ = accuracy(store, oracle_predictor(store))
        assert raw == pytest.approx(0.8)
        # raw oracle accuracy = total majority votes / total votes
        assert raw < 1.0

    def test_ties_excluded_from_majority(self):
        store = AnswerStore(votes("r", "a", "b", 2, 2) + votes("r", "a", "c", 3, 0))
        raw, maj = accuracy(store, lambda r, a, b: a)
        assert maj == 1.0  # only the (a, c) comparison counts

    def test_invalid_prediction(self):
        store = AnswerStore(votes("r", "a", "b", 1, 0))
        with pytest.raises(MetricError):
            accuracy(store, lambda r, a, b: "nope")

    def test_per_category_aggregates_to_overall(self):
        bundle, truth = generate_synthetic(8, 1, 2, 4, 0.0, seed=1)
        ids = bundle.material_ids
        rng = np.random.default_rng(2)
        store = AnswerStore()
        for _ in range(80):
            r, a, b = (ids[i] for i in rng.choice(8, 3, replace=False))
            store.extend(votes(r, a, b, int(rng.integers(1, 5)),
                               int(rng.integers(0, 3))))
        predict = oracle_predictor(store)
        overall_raw, _ = accuracy(store, predict)
        cats = per_category_breakdown(store, predict, bundle)
        weighted = sum(c["raw"] * c["answers"] for c in cats.values())
        assert sum(c["answers"] for c in cats.values()) == len(store)
        assert weighted / len(store) == pytest.approx(overall_raw, abs=1e-12)


class TestPerplexity:
    @pytest.mark.parametrize("p", [0.25, 0.5, 0.8, 1.0])
    def test_constant_p_inverse(self, p):
        store = AnswerStore(votes("r", "a", "b", 5, 0))
        q = perplexity(store, lambda r, a, b: p, "raw")
        assert q == pytest.approx(1.0 / p, rel=1e-12)

    def test_derived_two_answers(self):
        store = AnswerStore([TripletAnswer("r", "a", "b", "A", "w1"),
                             TripletAnswer("r", "a", "c", "A", "w2")])

        def prob(r, a, b):
            return 0.8 if b == "b" else 0.4
        q = perplexity(store, prob, "raw")
        assert q == pytest.approx(2 ** ((0.321928 + 1.321928) / 2), abs=1e-5)
        assert q == pytest.approx(1.767767, abs=1e-5)

    def test_majority_mode_one_term_per_comparison(self):
        store = AnswerStore(votes("r", "a", "b", 4, 1))
        q = perplexity(store, lambda r, a, b: 0.8, "majority")
        assert q == pytest.approx(1.25, rel=1e-12)

    def test_clamp_flagged(self):
        store = AnswerStore(votes("r", "a", "b", 1, 0))
        perplexity(store, lambda r, a, b: 0.0, "raw")
        assert perplexity.last_clamped == 1


class TestDistanceMatrix:
    def test_identical_descriptors_zero(self):
        bundle, _ = generate_synthetic(3, 2, 2, 4, 0.0, seed=0)
        desc = bundle.descriptors.copy()
        rows0 = [v.descriptor_row for v in bundle.views_of("m000")]
        rows1 = [v.descriptor_row for v in bundle.views_of("m001")]
        desc[rows0] = desc[rows0[0]]
        desc[rows1] = desc[rows0[0]]
        bundle = type(bundle)(bundle.name, bundle.materials, bundle.views, desc,
                              bundle.categories)
        model = EncoderModel([4, 8, 4], seed=0)
        d = distance_matrix_from_model(model, bundle)
        assert d[0, 1] == pytest.approx(0.0, abs=1e-18)

    def test_matches_bruteforce(self):
        bundle, _ = generate_synthetic(3, 2, 2, 4, 0.1, seed=3)
        model = EncoderModel([4, 6, 3], seed=1)
        d = distance_matrix_from_model(model, bundle)
        feats = model.forward(bundle.descriptors)
        ids = bundle.material_ids
        for i in range(3):
            for j in range(3):
                if i == j:
                    assert d[i, j] == 0
                    continue
                vals = []
                for vi in bundle.views_of(ids[i]):
                    for vj in bundle.views_of(ids[j]):
                        vals.append(np.sum((feats[vi.descriptor_row]
                                            - feats[vj.descriptor_row]) ** 2))
                assert d[i, j] == pytest.approx(np.mean(vals), rel=1e-12)

    def test_single_view_reduction(self):
        bundle, _ = generate_synthetic(4, 1, 2, 4, 0.0, seed=5)
        from matsim.encoder import identity_model
        model = identity_model(4)
        d = distance_matrix_from_model(model, bundle)
        x = bundle.descriptors
        for i in range(4):
            for j in range(4):
                if i != j:
                    assert d[i, j] == pytest.approx(np.sum((x[i] - x[j]) ** 2))


class TestMatrixError:
    def mat(self, vals):
        m = np.array(vals, dtype=float)
        return (m + m.T) / 2 * (1 - np.eye(m.shape[0]))

    def test_identity_zero(self):
        m = self.mat([[0, 1, 2], [1, 0, 3], [2, 3, 0]])
        err, ci = mean_matrix_error(m, m)
        assert err == 0.0

    def test_scale_invariance(self):
        m = self.mat([[0, 1, 2], [1, 0, 3], [2, 3, 0]])
        err, _ = mean_matrix_error(3.7 * m, m)
        assert err == pytest.approx(0.0, abs=1e-15)

    def test_hand_computation(self):
        a = self.mat([[0, 1, 2], [1, 0, 4], [2, 4, 0]])
        b = self.mat([[0, 2, 2], [2, 0, 2], [2, 2, 0]])
        # normalized: a/4 upper = (0.25, 0.5, 1.0); b/2 upper = (1, 1, 1)
        expected = np.mean([abs(0.25 - 1), abs(0.5 - 1), abs(1 - 1)])
        err, _ = mean_matrix_error(a, b)
        assert err == pytest.approx(expected, rel=1e-12)

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(4)
        x = rng.random((5, 5))
        a = self.mat(x)
        b = self.mat(rng.random((5, 5)))
        assert mean_matrix_error(a, b)[0] == pytest.approx(
            mean_matrix_error(b, a)[0], rel=1e-12)

    def test_all_zero_rejected(self):
        z = np.zeros((3, 3))
        with pytest.raises(MetricError):
            mean_matrix_error(z, z)


class TestReport:
    def test_roundtrip_with_reference_values(self, tmp_path):
        rep = EvaluationReport(raw_accuracy=0.7310, majority_accuracy=0.7753,
                               perplexity_raw=1.74, perplexity_majority=1.55,
                               n_answers=114840)
        rep.save(tmp_path / "r.json")
        again = EvaluationReport.load(tmp_path / "r.json")
        assert again.raw_accuracy == 0.7310
        assert again.majority_accuracy == 0.7753
        again.save(tmp_path / "r2.json")
        assert (tmp_path / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()

    def test_evaluate_oracle(self):
        bundle, _ = generate_synthetic(5, 1, 2, 4, 0.0, seed=6)
        ids = bundle.material_ids
        store = AnswerStore(votes(ids[0], ids[1], ids[2], 4, 1)
                            + votes(ids[1], ids[2], ids[3], 5, 0))
        predict = oracle_predictor(store)

        def prob(r, a, b):
            return 1 - 1e-9 if predict(r, a, b) == a else 1e-9
        rep = evaluate(store, predict, prob, bundle)
        assert rep.majority_accuracy == 1.0
        assert rep.n_answers == 10
