import json

import numpy as np
import pytest

from matsim.analysis import (AnalysisError, FeatureIndex, band_slice, elbow_k,
                             hopkins, kmeans, project_2d, ranked_by_distance,
                             save_clusters, save_hopkins, save_projection,
                             suggest, summarize)


def index_from_points(pts, ids=None):
    pts = np.asarray(pts, dtype=np.float64)
    ids = ids or [f"m{i:03d}" for i in range(len(pts))]
    return FeatureIndex(list(ids), pts, pts.copy(), list(ids))


def three_blobs(per_blob=10, scale=0.05, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    pts = np.concatenate([c + rng.normal(scale=scale, size=(per_blob, 2))
                          for c in centers])
    return index_from_points(pts), per_blob


class TestRankingAndBands:
    def test_ranked_excludes_reference_sorted(self):
        idx = index_from_points([[0, 0], [1, 0], [3, 0], [2, 0]])
        ranked = ranked_by_distance(idx, "m000")
        assert [m for m, _ in ranked] == ["m001", "m003", "m002"]
        dists = [d for _, d in ranked]
        assert dists == sorted(dists)
        assert dists == [1.0, 4.0, 9.0]

    def test_bands_partition(self):
        # near/mid/far slices cover 0..n exactly once for a spread of sizes
        for n in range(1, 40):
            edges = []
            for band in ("near", "mid", "far"):
                edges.append(band_slice(n, band))
            assert edges[0][0] == 0
            assert edges[-1][1] == n
            for (a0, a1), (b0, b1) in zip(edges, edges[1:]):
                assert a1 == b0

    def test_custom_band_and_errors(self):
        assert band_slice(9, (0.0, 1 / 3)) == (0, 3)
        with pytest.raises(AnalysisError):
            band_slice(10, "nowhere")
        with pytest.raises(AnalysisError):
            band_slice(10, (0.5, 0.2))

    def test_suggest_from_band(self):
        idx = index_from_points([[float(i), 0.0] for i in range(10)])
        # m000's ranking is m001..m009; the near band is the closest third
        got = suggest(idx, "m000", band="near", count=3, seed=1)
        assert set(got) <= {"m001", "m002", "m003"}
        assert len(got) == 3
        far = suggest(idx, "m000", band="far", count=1, seed=1)
        assert far[0] in {"m007", "m008", "m009"}

    def test_suggest_deterministic(self):
        idx = index_from_points(np.random.default_rng(2).normal(size=(15, 3)))
        a = suggest(idx, "m004", band="mid", count=2, seed=9)
        b = suggest(idx, "m004", band="mid", count=2, seed=9)
        assert a == b

    def test_suggest_count_invalid(self):
        idx = index_from_points(np.eye(4))
        with pytest.raises(AnalysisError):
            suggest(idx, "m000", count=0)


class TestProjection:
    def test_lossless_when_already_2d(self):
        # 2D inputs: the projection is a rigid change of basis, so all
        # pairwise distances are preserved exactly
        pts = np.random.default_rng(3).normal(size=(12, 2))
        idx = index_from_points(pts)
        coords = project_2d(idx)
        d_in = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        d_out = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
        np.testing.assert_allclose(d_out, d_in, atol=1e-10)

    def test_collinear_second_axis_zero(self):
        pts = np.array([[float(i), 2.0 * i, -i] for i in range(6)])
        coords = project_2d(index_from_points(pts))
        np.testing.assert_allclose(coords[:, 1], 0.0, atol=1e-10)

    def test_matches_eigendecomposition(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(20, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.1])
        coords = project_2d(index_from_points(pts))
        centered = pts - pts.mean(axis=0)
        # brute-force: top-2 eigenvectors of the covariance
        vals, vecs = np.linalg.eigh(centered.T @ centered / len(pts))
        expected = centered @ vecs[:, ::-1][:, :2]
        for j in range(2):
            k = np.argmax(np.abs(expected[:, j]))
            if expected[k, j] < 0:
                expected[:, j] = -expected[:, j]
        np.testing.assert_allclose(coords, expected, atol=1e-10)

    def test_sign_convention(self):
        coords = project_2d(index_from_points(
            np.random.default_rng(5).normal(size=(10, 4))))
        for j in range(2):
            assert coords[np.argmax(np.abs(coords[:, j])), j] > 0

    def test_degenerate_rejected(self):
        with pytest.raises(AnalysisError):
            project_2d(index_from_points(np.ones((5, 3))))
        with pytest.raises(AnalysisError):
            project_2d(index_from_points(np.random.normal(size=(2, 3))))


class TestKmeans:
    def test_k_equals_n_zero_ssw(self):
        pts = np.random.default_rng(6).normal(size=(7, 2))
        res = kmeans(index_from_points(pts), k=7)
        assert res.within_ss == pytest.approx(0.0, abs=1e-12)
        assert res.explained_variance == pytest.approx(1.0)
        assert sorted(res.assignments) == list(range(7))

    def test_k_one_centroid_is_mean(self):
        pts = np.random.default_rng(7).normal(size=(9, 3))
        res = kmeans(index_from_points(pts), k=1)
        np.testing.assert_allclose(res.centroids[0], pts.mean(axis=0),
                                   atol=1e-9)
        assert res.explained_variance == pytest.approx(0.0, abs=1e-12)

    def test_three_blobs_recovered(self):
        idx, per_blob = three_blobs()
        res = kmeans(idx, k=3, seed=0)
        labels = res.assignments
        # each planted blob maps to exactly one cluster label
        for b in range(3):
            blob = labels[b * per_blob:(b + 1) * per_blob]
            assert len(set(blob.tolist())) == 1
        assert len({labels[0], labels[per_blob], labels[2 * per_blob]}) == 3
        assert res.explained_variance > 0.99

    def test_invalid_k(self):
        idx = index_from_points(np.eye(4))
        with pytest.raises(AnalysisError):
            kmeans(idx, k=0)
        with pytest.raises(AnalysisError):
            kmeans(idx, k=5)

    def test_deterministic(self):
        idx, _ = three_blobs(seed=8)
        a = kmeans(idx, k=3, seed=3)
        b = kmeans(idx, k=3, seed=3)
        np.testing.assert_array_equal(a.assignments, b.assignments)
        np.testing.assert_array_equal(a.centroids, b.centroids)


class TestElbow:
    def test_three_blobs_elbow_at_three(self):
        idx, _ = three_blobs()
        k, results, reached = elbow_k(idx, variance_threshold=0.95)
        assert k == 3
        assert reached is True
        assert len(results) == 3

    def test_explained_variance_monotone(self):
        rng = np.random.default_rng(9)
        idx = index_from_points(rng.normal(size=(25, 3)))
        _, results, _ = elbow_k(idx, variance_threshold=0.999, k_max=12)
        evs = [r.explained_variance for r in results]
        assert all(b >= a - 1e-12 for a, b in zip(evs, evs[1:]))

    def test_threshold_unreachable_flag(self):
        rng = np.random.default_rng(10)
        idx = index_from_points(rng.normal(size=(30, 4)))
        k, results, reached = elbow_k(idx, variance_threshold=0.999, k_max=2)
        assert k == 2
        assert reached is False


class TestHopkins:
    def test_uniform_near_half(self):
        rng = np.random.default_rng(11)
        idx = index_from_points(rng.uniform(0, 1, size=(500, 2)))
        h = hopkins(idx, repetitions=100, seed=0)
        assert h == pytest.approx(0.5, abs=0.05)

    def test_clustered_high(self):
        rng = np.random.default_rng(12)
        pts = np.concatenate([
            np.array([0.0, 0.0]) + rng.normal(scale=0.01, size=(50, 2)),
            np.array([10.0, 10.0]) + rng.normal(scale=0.01, size=(50, 2)),
        ])
        h = hopkins(index_from_points(pts), repetitions=100, seed=0)
        assert h > 0.8

    def test_sample_size_clamped(self):
        # 20 points at 10% would be 2 samples; the floor of 5 applies, so
        # the statistic is still defined and in range
        rng = np.random.default_rng(13)
        idx = index_from_points(rng.uniform(size=(20, 2)))
        h = hopkins(idx, sample_fraction=0.1, repetitions=10, seed=0)
        assert 0.0 < h < 1.0

    def test_too_few_points(self):
        with pytest.raises(AnalysisError):
            hopkins(index_from_points(np.random.normal(size=(5, 2))))

    def test_deterministic(self):
        rng = np.random.default_rng(14)
        idx = index_from_points(rng.uniform(size=(60, 2)))
        assert hopkins(idx, seed=7) == hopkins(idx, seed=7)


class TestSummarize:
    def test_one_per_blob(self):
        idx, per_blob = three_blobs(seed=15)
        picks = summarize(idx, k=3, seed=0)
        assert len(picks) == 3
        blobs = {m: int(m[1:]) // per_blob for m in idx.material_ids}
        assert sorted(blobs[m] for m in picks) == [0, 1, 2]

    def test_picked_material_is_closest_to_centroid(self):
        idx, _ = three_blobs(seed=16)
        res = kmeans(idx, k=3, seed=0)
        picks = summarize(idx, k=3, seed=0)
        x = idx.representatives
        for j, mid in enumerate(picks):
            members = np.flatnonzero(res.assignments == j)
            d = np.sum((x[members] - res.centroids[j]) ** 2, axis=1)
            best = members[np.argmin(d)]
            assert idx.material_ids[best] == mid


class TestOutputs:
    def test_projection_roundtrip(self, tmp_path):
        idx = index_from_points(np.random.default_rng(17).normal(size=(8, 2)))
        coords = project_2d(idx)
        path = tmp_path / "projection.csv"
        save_projection(path, idx, coords)
        lines = path.read_text().splitlines()
        assert lines[0] == "material_id,x,y"
        assert len(lines) == 9
        mid, x, y = lines[3].split(",")
        assert mid == "m002"
        assert float(x) == coords[2, 0]
        assert float(y) == coords[2, 1]

    def test_clusters_csv(self, tmp_path):
        idx, _ = three_blobs()
        res = kmeans(idx, k=3, seed=0)
        path = tmp_path / "clusters.csv"
        save_clusters(path, idx, res)
        lines = path.read_text().splitlines()
        assert lines[0] == "material_id,cluster"
        assert len(lines) == len(idx.material_ids) + 1

    def test_hopkins_json(self, tmp_path):
        path = tmp_path / "hopkins.json"
        save_hopkins(path, 0.77, 0.1, 100, 3)
        loaded = json.loads(path.read_text())
        assert loaded == {"hopkins": 0.77, "sample_fraction": 0.1,
                          "repetitions": 100, "seed": 3}
