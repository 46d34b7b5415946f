import numpy as np
import pytest

from plitex.classical import (FeatureVector, TexturePatch, _glcm, _glcm_stats,
                              _lbp_codes, circular_sobel, combined_features,
                              glcm_features, histogram_features, lbp_features,
                              SOBEL_X, SOBEL_Y)
from plitex.signal import direction_phasor


def random_patch(rng, side=32):
    return TexturePatch(rng.uniform(0, 1, (side, side)),
                        rng.uniform(0, 1, (side, side)),
                        rng.uniform(0, 180, (side, side)))


def scalar_sobel(phi_deg):
    """Brute-force kernel sum with reflect padding."""
    z = direction_phasor(phi_deg)
    h, w = z.shape
    pad = np.pad(z, 1, mode="symmetric")  # edge-duplicating reflect, as in the implementation
    out = np.zeros((h, w))
    kernel = SOBEL_X + SOBEL_Y
    for y in range(h):
        for x in range(w):
            acc = 0.0 + 0.0j
            for dy in range(3):
                for dx in range(3):
                    acc += kernel[dy, dx] * pad[y + dy, x + dx]
            out[y, x] = abs(acc) / 12.0
    return out


class TestCircularSobel:
    def test_constant_direction_is_zero(self):
        phi = np.full((8, 8), 67.0)
        assert np.allclose(circular_sobel(phi), 0.0)

    def test_vertical_edge_against_scalar_oracle(self):
        phi = np.zeros((8, 8))
        phi[:, 4:] = 90.0
        got = circular_sobel(phi)
        ref = scalar_sobel(phi)
        assert np.allclose(got, ref, atol=1e-12)
        # orthogonal halves: |(Kx+Ky) * z| = 8 on the two edge columns
        assert np.allclose(got[:, 3:5], 8.0 / 12.0, atol=1e-12)
        assert np.allclose(got[:, :3], 0.0) and np.allclose(got[:, 5:], 0.0)

    def test_bounded_by_one(self, rng):
        phi = rng.uniform(0, 180, (16, 16))
        got = circular_sobel(phi)
        assert np.allclose(got, scalar_sobel(phi), atol=1e-12)
        assert got.min() >= 0.0 and got.max() <= 1.0

    def test_diagonal_edge_attains_bound(self):
        y, x = np.mgrid[0:8, 0:8]
        phi = np.where(x + y < 7, 0.0, 90.0)
        assert circular_sobel(phi).max() == pytest.approx(1.0, abs=1e-12)


class TestHistogramFeatures:
    def test_length_and_labels(self, rng):
        vec = histogram_features(random_patch(rng))
        assert vec.values.shape == (15,)
        assert len(vec.labels) == 15

    def test_constant_patch(self):
        patch = TexturePatch(np.full((16, 16), 0.5), np.full((16, 16), 0.5),
                             np.full((16, 16), 45.0))
        vec = histogram_features(patch)
        values = vec.values.reshape(3, 5)
        assert np.allclose(values[:2, 1], 0.0)   # variance of constant maps
        assert np.allclose(values[:2, 4], 0.0)   # entropy of constant maps

    def test_two_valued_entropy(self):
        it = np.zeros((16, 16))
        it[:, 8:] = 0.9
        patch = TexturePatch(it, np.zeros((16, 16)), np.zeros((16, 16)))
        entropy = histogram_features(patch).values[4]
        assert entropy == pytest.approx(np.log(2.0), abs=1e-12)

    def test_matches_direct_moment_computation(self, rng):
        patch = random_patch(rng, side=24)
        values = histogram_features(patch).values[:5]
        hist, edges = np.histogram(np.clip(patch.transmittance, 0, 1), bins=128,
                                   range=(0, 1))
        p = hist / hist.sum()
        centers = (edges[:-1] + edges[1:]) / 2
        mean = (p * centers).sum()
        var = (p * (centers - mean) ** 2).sum()
        std = np.sqrt(var)
        skew = (p * ((centers - mean) / std) ** 3).sum()
        kurt = (p * ((centers - mean) / std) ** 4).sum() - 3.0
        entropy = -(p[p > 0] * np.log(p[p > 0])).sum()
        assert np.allclose(values, [mean, var, skew, kurt, entropy], atol=1e-12)

    def test_permutation_invariance(self, rng):
        patch = random_patch(rng)
        flat = patch.transmittance.ravel().copy()
        rng.shuffle(flat)
        shuffled = TexturePatch(flat.reshape(patch.transmittance.shape),
                                patch.retardation, patch.direction)
        assert np.allclose(histogram_features(patch).values[0:2],
                           histogram_features(shuffled).values[0:2])


class TestLbpFeatures:
    def test_dimension(self, rng):
        vec = lbp_features(random_patch(rng))
        assert vec.values.shape == (90,)

    def test_constant_patch_all_zero_code(self):
        patch = TexturePatch(np.full((16, 16), 0.3), np.full((16, 16), 0.3),
                             np.full((16, 16), 10.0))
        vec = lbp_features(patch).values.reshape(9, 10)
        for row in vec[:6]:  # transmittance & retardation histograms
            assert row[0] == pytest.approx(1.0)
        # constant direction: sobel plane is 0 -> also all-zeros code
        for row in vec[6:]:
            assert row[0] == pytest.approx(1.0)

    def test_rotation_invariance(self, rng):
        plane = rng.uniform(0, 1, (20, 20))
        base = _lbp_codes(plane, 2)
        rotated = _lbp_codes(np.rot90(plane), 2)
        assert np.array_equal(np.bincount(base.ravel(), minlength=10),
                              np.bincount(rotated.ravel(), minlength=10))

    def test_flip_invariance(self, rng):
        plane = rng.uniform(0, 1, (20, 20))
        base = np.bincount(_lbp_codes(plane, 3).ravel(), minlength=10)
        flipped = np.bincount(_lbp_codes(plane[:, ::-1], 3).ravel(), minlength=10)
        assert np.array_equal(base, flipped)

    def test_matches_naive_enumeration(self, rng):
        plane = rng.uniform(0, 1, (12, 12))
        radius, points = 1, 8
        codes = _lbp_codes(plane, radius)
        c = np.sqrt(0.5)
        offsets = [(1, 0), (c, c), (0, 1), (-c, c), (-1, 0), (-c, -c), (0, -1), (c, -c)]

        def bilinear(yy, xx):
            y0 = min(int(np.floor(yy)), plane.shape[0] - 2)
            x0 = min(int(np.floor(xx)), plane.shape[1] - 2)
            fy, fx = yy - y0, xx - x0
            return ((1 - fy) * ((1 - fx) * plane[y0, x0] + fx * plane[y0, x0 + 1])
                    + fy * ((1 - fx) * plane[y0 + 1, x0] + fx * plane[y0 + 1, x0 + 1]))

        for y in range(radius, 12 - radius):
            for x in range(radius, 12 - radius):
                bits = [1 if bilinear(y + radius * oy, x + radius * ox) - plane[y, x] > 1e-12 else 0
                        for ox, oy in offsets]
                trans = sum(bits[i] != bits[i - 1] for i in range(points))
                expect = sum(bits) if trans <= 2 else points + 1
                assert codes[y - radius, x - radius] == expect


class TestGlcmFeatures:
    def test_dimension(self, rng):
        vec = glcm_features(random_patch(rng))
        assert vec.values.shape == (36,)

    def test_constant_patch_statistics(self):
        patch = TexturePatch(np.full((16, 16), 0.4), np.full((16, 16), 0.4),
                             np.full((16, 16), 0.0))
        values = glcm_features(patch).values.reshape(3, 3, 4)
        assert np.allclose(values[..., 0], 0.0)   # contrast
        assert np.allclose(values[..., 1], 0.0)   # correlation convention
        assert np.allclose(values[..., 2], 1.0)   # energy
        assert np.allclose(values[..., 3], 1.0)   # homogeneity

    def test_rotation_invariance_of_descriptor(self, rng):
        quantized = rng.integers(0, 32, (20, 20))
        for distance in (1, 2, 4):
            stats = np.mean([_glcm_stats(_glcm(quantized, distance, a, 32))
                             for a in (0, 45, 90, 135)], axis=0)
            rotated = np.mean([_glcm_stats(_glcm(np.rot90(quantized), distance, a, 32))
                               for a in (0, 45, 90, 135)], axis=0)
            assert np.allclose(stats, rotated, atol=1e-12)

    def test_hand_enumerated_counts(self):
        quantized = np.array([[0, 0, 1, 1],
                              [0, 0, 1, 1],
                              [0, 2, 2, 2],
                              [2, 2, 3, 3]])
        mat = _glcm(quantized, 1, 0, 4)
        # horizontal neighbor pairs, symmetric: count both directions
        pairs = {}
        for y in range(4):
            for x in range(3):
                a, b = quantized[y, x], quantized[y, x + 1]
                pairs[(a, b)] = pairs.get((a, b), 0) + 1
                pairs[(b, a)] = pairs.get((b, a), 0) + 1
        total = sum(pairs.values())
        for (a, b), count in pairs.items():
            assert mat[a, b] == pytest.approx(count / total)
        assert mat.sum() == pytest.approx(1.0)


class TestCombined:
    def test_dimension_is_141(self, rng):
        vec = combined_features(random_patch(rng))
        assert vec.values.shape == (141,)
        assert len(vec.labels) == 141

    def test_slices_equal_parts(self, rng):
        patch = random_patch(rng)
        vec = combined_features(patch)
        assert np.array_equal(vec.values[:15], histogram_features(patch).values)
        assert np.array_equal(vec.values[15:105], lbp_features(patch).values)
        assert np.array_equal(vec.values[105:], glcm_features(patch).values)

    def test_deterministic(self, rng):
        patch = random_patch(rng)
        assert np.array_equal(combined_features(patch).values,
                              combined_features(patch).values)

    def test_all_finite_on_zero_patch(self):
        patch = TexturePatch(np.zeros((16, 16)), np.zeros((16, 16)), np.zeros((16, 16)))
        for fn in (histogram_features, lbp_features, glcm_features, combined_features):
            assert np.isfinite(fn(patch).values).all()
