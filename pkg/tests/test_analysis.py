import numpy as np
import pytest

from plitex.analysis import (ClusterModel, Dendrogram, assign, cross_section_iou,
                             cut, evaluate_probe_classifier, evaluate_probe_regressor,
                             fit_probe_classifier, fit_probe_regressor, inertia,
                             kmeans, macro_f1, predict_classes, predict_regression,
                             rbf_retrieve, repeated_probe_f1, silhouette,
                             subsample_per_class, ward_agglomerate)
from plitex.errors import DataError


def blobs(rng, centers, n_per=100, scale=0.05):
    data = []
    labels = []
    for i, c in enumerate(centers):
        data.append(rng.normal(c, scale, size=(n_per, len(c))))
        labels.append(np.full(n_per, i))
    return np.concatenate(data), np.concatenate(labels)


class TestKmeans:
    def test_k1_is_mean(self, rng):
        samples = rng.normal(size=(50, 3))
        model = kmeans(samples, 1, seed=0)
        assert np.allclose(model.centroids[0], samples.mean(axis=0), atol=1e-9)

    def test_two_blobs(self, rng):
        samples, _ = blobs(rng, [(0.0, 0.0), (5.0, 5.0)])
        model = kmeans(samples, 2, seed=0)
        got = sorted(map(tuple, np.round(model.centroids, 1).tolist()))
        assert np.allclose(got[0], (0.0, 0.0), atol=0.1)
        assert np.allclose(got[1], (5.0, 5.0), atol=0.1)

    def test_k_equals_n_zero_inertia(self, rng):
        samples = rng.normal(size=(12, 2))
        model = kmeans(samples, 12, seed=1)
        assert inertia(samples, model) == pytest.approx(0.0, abs=1e-18)

    def test_inertia_non_increasing(self, rng):
        samples, _ = blobs(rng, [(0, 0), (3, 0), (0, 3)], n_per=60, scale=0.5)
        # re-run Lloyd manually to watch inertia
        from plitex.analysis import _kmeans_pp_init, _squared_distances
        gen = np.random.default_rng(0)
        centroids = _kmeans_pp_init(samples, 3, gen)
        last = np.inf
        for _ in range(20):
            d2 = _squared_distances(samples, centroids)
            labels = np.argmin(d2, axis=1)
            current = d2[np.arange(len(samples)), labels].sum()
            assert current <= last + 1e-9
            last = current
            for c in range(3):
                if (labels == c).any():
                    centroids[c] = samples[labels == c].mean(axis=0)


class TestAssign:
    def test_centroid_points_assign_to_self(self, rng):
        centroids = rng.normal(size=(5, 3))
        labels = assign(centroids, ClusterModel(centroids))
        assert np.array_equal(labels, np.arange(5))

    def test_tie_goes_to_lowest_index(self):
        model = ClusterModel(np.array([[0.0, 0.0], [2.0, 0.0]]))
        assert assign(np.array([[1.0, 0.0]]), model)[0] == 0

    def test_matches_brute_force(self, rng):
        centroids = rng.normal(size=(7, 4))
        samples = rng.normal(size=(200, 4))
        got = assign(samples, ClusterModel(centroids))
        brute = np.array([int(np.argmin([np.sum((s - c) ** 2) for c in centroids]))
                          for s in samples])
        assert np.array_equal(got, brute)


def brute_force_ward(points):
    """O(n^3) reference: explicit clusters, SSE-increase merge heights."""
    clusters = [[i] for i in range(len(points))]
    ids = list(range(len(points)))
    next_id = len(points)
    merges = []
    while len(clusters) > 1:
        best = (np.inf, None, None)
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                pa = points[clusters[a]]
                pb = points[clusters[b]]
                na, nb = len(pa), len(pb)
                delta = (na * nb / (na + nb)) * np.sum(
                    (pa.mean(axis=0) - pb.mean(axis=0)) ** 2)
                if delta < best[0]:
                    best = (delta, a, b)
        delta, a, b = best
        merges.append((ids[a], ids[b], float(np.sqrt(2.0 * delta)),
                       len(clusters[a]) + len(clusters[b])))
        clusters[a] = clusters[a] + clusters[b]
        ids[a] = next_id
        next_id += 1
        del clusters[b], ids[b]
    return merges


class TestWard:
    def test_two_points_merge_at_distance(self):
        pts = np.array([[0.0, 0.0], [3.0, 4.0]])
        dendro = ward_agglomerate(pts)
        assert len(dendro.merges) == 1
        assert dendro.merges[0][2] == pytest.approx(5.0, abs=1e-12)

    def test_collinear_first_merge(self):
        pts = np.array([[0.0], [1.0], [10.0]])
        dendro = ward_agglomerate(pts)
        assert set(dendro.merges[0][:2]) == {0, 1}

    def test_matches_brute_force_on_random_points(self, rng):
        points = rng.normal(size=(16, 3))
        dendro = ward_agglomerate(points)
        reference = brute_force_ward(points)
        for got, ref in zip(dendro.merges, reference):
            assert set(got[:2]) == set(ref[:2])
            assert got[2] == pytest.approx(ref[2], rel=1e-9)
            assert got[3] == ref[3]

    def test_heights_monotone(self, rng):
        points = rng.normal(size=(24, 5))
        heights = ward_agglomerate(points).heights()
        assert np.all(np.diff(heights) >= -1e-9)

    def test_weighted_variant(self, rng):
        # centroid weights reproduce agglomerating the expanded point set
        # (whose first merge joins the two coincident points at height 0)
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]])
        sizes = np.array([2.0, 1.0, 1.0])
        dendro = ward_agglomerate(pts, sizes)
        expanded = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [10.0, 0.0]])
        ref = brute_force_ward(expanded)
        assert ref[0][2] == pytest.approx(0.0)
        assert dendro.merges[0][2] == pytest.approx(ref[1][2], rel=1e-9)
        assert dendro.merges[1][2] == pytest.approx(ref[2][2], rel=1e-9)

    def test_text_round_trip(self, rng):
        dendro = ward_agglomerate(rng.normal(size=(8, 2)))
        again = Dendrogram.from_text(dendro.to_text())
        assert again.n_leaves == dendro.n_leaves
        for a, b in zip(again.merges, dendro.merges):
            assert a[:2] == b[:2] and a[2] == pytest.approx(b[2]) and a[3] == b[3]


class TestCut:
    def test_identity_cut(self, rng):
        dendro = ward_agglomerate(rng.normal(size=(6, 2)))
        assert np.array_equal(cut(dendro, 6), np.arange(6))

    def test_single_cluster(self, rng):
        dendro = ward_agglomerate(rng.normal(size=(6, 2)))
        assert np.array_equal(cut(dendro, 1), np.zeros(6, dtype=int))

    def test_two_blob_partition(self, rng):
        pts = np.concatenate([rng.normal(0.0, 0.1, (5, 2)),
                              rng.normal(8.0, 0.1, (5, 2))])
        dendro = ward_agglomerate(pts)
        labels = cut(dendro, 2)
        assert len(set(labels[:5])) == 1 and len(set(labels[5:])) == 1
        assert labels[0] != labels[5]

    def test_bad_cut_size(self, rng):
        dendro = ward_agglomerate(rng.normal(size=(4, 2)))
        with pytest.raises(DataError):
            cut(dendro, 0)
        with pytest.raises(DataError):
            cut(dendro, 5)


class TestSilhouette:
    def test_separated_blobs_high_score(self, rng):
        samples, labels = blobs(rng, [(0, 0), (10, 10)], n_per=200)
        assert silhouette(samples, labels) > 0.9

    def test_random_labels_near_zero(self):
        rng = np.random.default_rng(0)
        samples = rng.normal(size=(10_000, 3))
        labels = rng.integers(0, 2, size=10_000)
        assert abs(silhouette(samples, labels)) < 0.05

    def test_singleton_scores_zero(self):
        samples = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]])
        labels = np.array([0, 0, 1])
        # singleton cluster contributes 0; the pair is tight and far from it
        score = silhouette(samples, labels)
        by_hand = (((1 - 0.1 / np.hypot(4.9, 5.0)) + (1 - 0.1 / np.hypot(4.9, 5.0))) / 3
                   if False else None)
        a01 = 0.1
        b0 = np.linalg.norm([5.0, 5.0])
        b1 = np.linalg.norm([4.9, 5.0])
        expect = ((b0 - a01) / b0 + (b1 - a01) / b1 + 0.0) / 3
        assert score == pytest.approx(expect, abs=1e-12)


class TestCrossSectionIou:
    def test_identical_sections_full_score(self, rng):
        labels = np.tile(rng.integers(0, 4, size=(1, 8, 8)), (3, 1, 1))
        masks = np.ones((3, 8, 8), dtype=bool)
        assert cross_section_iou(labels, masks) == pytest.approx(100.0)

    def test_disjoint_labelings_zero(self):
        labels = np.stack([np.zeros((4, 4), dtype=int), np.ones((4, 4), dtype=int)])
        masks = np.ones((2, 4, 4), dtype=bool)
        assert cross_section_iou(labels, masks) == pytest.approx(0.0)

    def test_hand_counted_example(self):
        a = np.array([[0, 0, 1, 1],
                      [0, 0, 1, 1],
                      [2, 2, 3, 3],
                      [2, 2, 3, 3]])
        b = np.array([[0, 0, 1, 1],
                      [0, 1, 1, 1],
                      [2, 2, 3, 3],
                      [2, 3, 3, 3]])
        labels = np.stack([a, b])
        masks = np.ones((2, 4, 4), dtype=bool)
        # cluster IoUs: 0: 3/4; 1: 4/5; 2: 3/4; 3: 4/5
        expect = 100.0 * np.mean([3 / 4, 4 / 5, 3 / 4, 4 / 5])
        assert cross_section_iou(labels, masks) == pytest.approx(expect)

    def test_symmetric_and_relabel_invariant(self, rng):
        labels = rng.integers(0, 3, size=(3, 6, 6))
        masks = rng.uniform(size=(3, 6, 6)) > 0.2
        forward = cross_section_iou(labels, masks)
        backward = cross_section_iou(labels[::-1].copy(), masks[::-1].copy())
        relabeled = cross_section_iou(2 - labels, masks)
        assert forward == pytest.approx(backward)
        assert forward == pytest.approx(relabeled)


class TestProbeClassifier:
    def test_separable_blobs(self, rng):
        x, y = blobs(rng, [(0, 0), (4, 4)], n_per=150, scale=0.3)
        model = fit_probe_classifier(x[::2], y[::2])
        assert evaluate_probe_classifier(model, x[1::2], y[1::2]) > 0.99

    def test_permuted_labels_near_half(self):
        # labels independent of features, exactly balanced: the fitted probe
        # degenerates to a chance hyperplane, macro F1 ~ 0.5
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4000, 5))
        y = np.tile([0, 1], 2000)
        model = fit_probe_classifier(x[:2000], y[:2000])
        f1 = evaluate_probe_classifier(model, x[2000:], y[2000:])
        assert abs(f1 - 0.5) < 0.05

    def test_single_point_per_class_memorized(self, rng):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
        y = np.array([0, 1, 2])
        model = fit_probe_classifier(x, y, l2=1e-4)
        assert evaluate_probe_classifier(model, x, y) == pytest.approx(1.0)

    def test_affine_rescaling_invariance(self, rng):
        x, y = blobs(rng, [(0, 0), (2, 2), (0, 3)], n_per=80, scale=0.4)
        scale = np.array([3.0, 0.2])
        shift = np.array([-5.0, 7.0])
        base = predict_classes(fit_probe_classifier(x, y), x)
        moved = predict_classes(fit_probe_classifier(x * scale + shift, y),
                                x * scale + shift)
        assert np.array_equal(base, moved)

    def test_repeated_fits_report_stderr(self, rng):
        x, y = blobs(rng, [(0, 0), (3, 3)], n_per=200, scale=0.5)
        mean, stderr = repeated_probe_f1(x[::2], y[::2], x[1::2], y[1::2],
                                         n_per_class=10, repeats=8, seed=0)
        assert 0.8 < mean <= 1.0
        assert stderr >= 0.0

    def test_macro_f1_zero_denominator_convention(self):
        assert macro_f1(np.array([0, 0]), np.array([0, 0]),
                        classes=np.array([0, 1])) == pytest.approx(0.5)


class TestProbeRegressor:
    def test_exact_linear_target(self, rng):
        x = rng.normal(size=(200, 4))
        w = np.array([1.0, -2.0, 0.5, 3.0])
        y = x @ w + 0.7
        model = fit_probe_regressor(x[:100], y[:100], l2=1e-8)
        assert evaluate_probe_regressor(model, x[100:], y[100:]) == pytest.approx(1.0, abs=1e-6)

    def test_independent_target_no_skill(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(20_000, 5))
        y = rng.normal(size=20_000)
        model = fit_probe_regressor(x[:10_000], y[:10_000], l2=10.0)
        assert evaluate_probe_regressor(model, x[10_000:], y[10_000:]) <= 0.02

    def test_constant_target_r2_zero(self, rng):
        x = rng.normal(size=(50, 3))
        model = fit_probe_regressor(x, np.ones(50))
        assert evaluate_probe_regressor(model, x, np.ones(50)) == 0.0

    def test_heavy_regularization_shrinks(self, rng):
        x = rng.normal(size=(100, 3))
        y = x @ np.array([1.0, 1.0, 1.0])
        strong = fit_probe_regressor(x, y, l2=1e6)
        assert np.abs(strong.weights).max() < 1e-2


class TestRbfRetrieve:
    def test_single_query_point_unit_affinity(self, rng):
        volume = rng.normal(size=(2, 4, 4, 3))
        masks = np.ones((2, 4, 4), dtype=bool)
        affinity = rbf_retrieve(volume, masks, [(1, 2, 3)], sigma=2.0)
        assert affinity[1, 2, 3] == pytest.approx(1.0)

    def test_distance_sigma_sqrt2_gives_inverse_e(self):
        volume = np.zeros((1, 1, 2, 1))
        volume[0, 0, 1, 0] = 3.5 * np.sqrt(2.0)
        masks = np.ones((1, 1, 2), dtype=bool)
        affinity = rbf_retrieve(volume, masks, [(0, 0, 0)], sigma=3.5)
        assert affinity[0, 0, 1] == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_matches_double_loop(self, rng):
        volume = rng.normal(size=(1, 16, 16, 4))
        masks = np.ones((1, 16, 16), dtype=bool)
        points = [(0, 3, 4), (0, 10, 12)]
        affinity = rbf_retrieve(volume, masks, points, sigma=1.5)
        q = (volume[0, 3, 4] + volume[0, 10, 12]) / 2
        for y in range(16):
            for x in range(16):
                expect = np.exp(-np.sum((volume[0, y, x] - q) ** 2) / (2 * 1.5 ** 2))
                assert affinity[0, y, x] == pytest.approx(expect, abs=1e-10)

    def test_background_zero_and_duplicate_invariance(self, rng):
        volume = rng.normal(size=(1, 8, 8, 2))
        masks = np.zeros((1, 8, 8), dtype=bool)
        masks[0, :4] = True
        points = [(0, 1, 1), (0, 2, 2)]
        base = rbf_retrieve(volume, masks, points, sigma=1.0)
        dup = rbf_retrieve(volume, masks, points + points, sigma=1.0)
        assert np.array_equal(base, dup)
        assert np.all(base[0, 4:] == 0.0)
        assert np.all(base[0, :4] > 0.0) and np.all(base[0, :4] <= 1.0)

    def test_zero_points_rejected(self, rng):
        with pytest.raises(DataError):
            rbf_retrieve(np.zeros((1, 2, 2, 1)), np.ones((1, 2, 2), dtype=bool), [], 1.0)
