import numpy as np
import pytest

from camloc.errors import DegenerateMap, ShapeError
from camloc.saliency import (
    SOURCE_FORCED,
    SOURCE_PREDICTED,
    SaliencyMap,
    binarize,
    compute_cam,
    connected_components,
    extract_pseudo_box,
    largest_component_box,
    otsu_threshold,
    predict_class,
    upsample_bilinear,
)
from camloc.tensorio import Matrix2, Tensor3

from oracles import (
    cam_triple_loop,
    flood_fill_components,
    gap_scores_loop,
    largest_component_box_flood,
    otsu_exhaustive,
)


def random_instance(rng, classes=8, channels=16, h=4, w=4):
    features = Tensor3(rng.standard_normal((channels, h, w)).astype(np.float32))
    weights = Matrix2(rng.standard_normal((classes, channels)).astype(np.float32))
    return features, weights


class TestPredictClass:
    def test_all_zero_features_tie_breaks_low(self):
        features = Tensor3(np.zeros((4, 3, 3), dtype=np.float32))
        weights = Matrix2(np.ones((5, 4), dtype=np.float32))
        assert predict_class(features, weights) == 0

    def test_dominant_row_wins(self):
        features = Tensor3(np.ones((4, 3, 3), dtype=np.float32))
        weights = np.full((6, 4), 0.1, dtype=np.float32)
        weights[3] = 50.0
        assert predict_class(features, Matrix2(weights)) == 3

    def test_matches_exhaustive_scoring(self):
        rng = np.random.default_rng(20)
        for _ in range(30):
            features, weights = random_instance(rng)
            scores = gap_scores_loop(features.data, weights.data)
            best = max(range(len(scores)), key=lambda c: (scores[c], -c))
            assert predict_class(features, weights) == best

    def test_invariant_under_positive_feature_scaling(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            features, weights = random_instance(rng)
            for alpha in (0.25, 3.0, 17.5):
                scaled = Tensor3(features.data * np.float32(alpha))
                assert predict_class(scaled, weights) == predict_class(features, weights)

    def test_shape_mismatch(self):
        features = Tensor3(np.zeros((4, 3, 3), dtype=np.float32))
        weights = Matrix2(np.zeros((5, 6), dtype=np.float32))
        with pytest.raises(ShapeError):
            predict_class(features, weights)


class TestComputeCam:
    def test_single_channel_identity(self):
        rng = np.random.default_rng(22)
        channel = rng.standard_normal((1, 5, 7)).astype(np.float32)
        sal = compute_cam(Tensor3(channel), Matrix2(np.ones((1, 1), np.float32)), 0)
        assert np.array_equal(sal.values, channel[0])

    def test_zero_row_annihilates(self):
        rng = np.random.default_rng(23)
        features, _ = random_instance(rng)
        weights = np.ones((3, 16), dtype=np.float32)
        weights[1] = 0.0
        sal = compute_cam(features, Matrix2(weights), 1)
        assert np.all(sal.values == 0.0)

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(24)
        for _ in range(20):
            features, weights = random_instance(rng)
            c = int(rng.integers(0, weights.rows))
            expected = cam_triple_loop(features.data, weights.data, c)
            got = compute_cam(features, weights, c)
            assert got.class_index == c
            assert np.allclose(got.values, expected, rtol=1e-5, atol=1e-7)

    def test_linearity_and_scale_equivariance(self):
        rng = np.random.default_rng(25)
        features, w1 = random_instance(rng)
        w2 = Matrix2(rng.standard_normal(w1.shape).astype(np.float32))
        summed = Matrix2(w1.data + w2.data)
        lhs = compute_cam(features, summed, 2).values
        rhs = compute_cam(features, w1, 2).values + compute_cam(features, w2, 2).values
        assert np.allclose(lhs, rhs, rtol=1e-4, atol=1e-5)
        alpha = 7.5
        scaled = compute_cam(features, Matrix2(w1.data * np.float32(alpha)), 2).values
        assert np.allclose(scaled, alpha * compute_cam(features, w1, 2).values, rtol=1e-4, atol=1e-5)
        # argmax location is invariant under positive weight scaling
        base = compute_cam(features, w1, 2).values
        assert np.argmax(scaled) == np.argmax(base)

    def test_class_out_of_range(self):
        rng = np.random.default_rng(26)
        features, weights = random_instance(rng)
        with pytest.raises(ShapeError):
            compute_cam(features, weights, 8)


class TestUpsample:
    def test_constant_preserved(self):
        sal = SaliencyMap(np.full((3, 4), 2.5, dtype=np.float32))
        up = upsample_bilinear(sal, 17, 31)
        assert np.all(up.values == np.float32(2.5))

    def test_identity_size(self):
        rng = np.random.default_rng(27)
        sal = SaliencyMap(rng.standard_normal((6, 5)).astype(np.float32))
        up = upsample_bilinear(sal, 6, 5)
        assert np.array_equal(up.values, sal.values)

    def test_closed_form_2x3(self):
        sal = SaliencyMap(np.array([[0.0, 1.0], [0.0, 1.0]], dtype=np.float32))
        up = upsample_bilinear(sal, 2, 3)
        assert np.allclose(up.values, [[0.0, 0.5, 1.0], [0.0, 0.5, 1.0]])

    def test_extremes_bounded(self):
        rng = np.random.default_rng(28)
        sal = SaliencyMap(rng.standard_normal((7, 9)).astype(np.float32))
        up = upsample_bilinear(sal, 50, 60)
        assert up.values.max() <= sal.values.max()
        assert up.values.min() >= sal.values.min()

    def test_preserves_class_and_source(self):
        sal = SaliencyMap(np.eye(3, dtype=np.float32), 5, SOURCE_PREDICTED)
        up = upsample_bilinear(sal, 9, 9)
        assert up.class_index == 5 and up.source == SOURCE_PREDICTED


class TestOtsu:
    def test_bimodal_separates(self):
        values = np.array([0.1] * 50 + [0.9] * 50, dtype=np.float32).reshape(10, 10)
        t = otsu_threshold(SaliencyMap(values))
        assert 0.1 < t < 0.9

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(29)
        for _ in range(40):
            h, w = rng.integers(4, 24, size=2)
            values = rng.standard_normal((h, w)).astype(np.float32)
            sal = SaliencyMap(values)
            assert otsu_threshold(sal) == otsu_exhaustive(sal.values, 256)

    def test_matches_oracle_other_bin_counts(self):
        rng = np.random.default_rng(30)
        for bins in (8, 64, 512):
            values = rng.random((12, 12)).astype(np.float32)
            sal = SaliencyMap(values)
            assert otsu_threshold(sal, bins) == otsu_exhaustive(sal.values, bins)

    def test_constant_map_degenerate(self):
        with pytest.raises(DegenerateMap):
            otsu_threshold(SaliencyMap(np.full((4, 4), 1.25, dtype=np.float32)))

    def test_threshold_splits_foreground_and_background(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            sal = SaliencyMap(rng.standard_normal((10, 10)).astype(np.float32))
            t = otsu_threshold(sal)
            mask = binarize(sal, t)
            assert mask.bits.any() and not mask.bits.all()
            assert mask.threshold_used == t


class TestComponents:
    def test_matches_flood_fill_oracle(self):
        rng = np.random.default_rng(32)
        for _ in range(40):
            bits = rng.random((20, 20)) < 0.35
            labels, counts = connected_components(bits)
            oracle_labels, oracle_counts = flood_fill_components(bits)
            assert np.array_equal(labels, oracle_labels)
            assert counts == oracle_counts
            if not bits.any():
                continue
            box, area = largest_component_box(binarize(SaliencyMap(bits.astype(np.float32)), 0.5))
            expected_box, expected_area = largest_component_box_flood(bits)
            assert (box.x1, box.y1, box.x2, box.y2) == tuple(float(v) for v in expected_box)
            assert area == expected_area

    def test_single_blob_box(self):
        bits = np.zeros((64, 64), dtype=bool)
        bits[20:30, 30:40] = True
        sal = SaliencyMap(bits.astype(np.float32))
        box, area = largest_component_box(binarize(sal, 0.5))
        assert (box.x1, box.y1, box.x2, box.y2) == (30.0, 20.0, 39.0, 29.0)
        assert area == 100

    def test_largest_area_rule(self):
        bits = np.zeros((64, 64), dtype=bool)
        bits[5:15, 5:15] = True  # 100 px
        bits[40:43, 40:43] = True  # 9 px
        box, area = largest_component_box(binarize(SaliencyMap(bits.astype(np.float32)), 0.5))
        assert area == 100
        assert (box.x1, box.y1, box.x2, box.y2) == (5.0, 5.0, 14.0, 14.0)

    def test_diagonal_pixels_are_one_component(self):
        bits = np.eye(6, dtype=bool)
        _, counts = connected_components(bits)
        assert counts == [6]

    def test_tie_breaks_by_row_major_discovery(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[1, 1:4] = True  # discovered first, 3 px
        bits[5, 5:8] = True  # same size, later
        box, area = largest_component_box(binarize(SaliencyMap(bits.astype(np.float32)), 0.5))
        assert area == 3
        assert (box.x1, box.y1) == (1.0, 1.0)


class TestExtractPseudoBox:
    def test_containment_and_edge_touching(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            sal = SaliencyMap(rng.standard_normal((7, 7)).astype(np.float32))
            pseudo = extract_pseudo_box(sal, 56, 56)
            up = upsample_bilinear(sal, 56, 56)
            t = otsu_threshold(up)
            labels, counts = connected_components(up.values >= t)
            best = int(np.argmax(counts)) + 1
            ys, xs = np.nonzero(labels == best)
            box = pseudo.box
            assert box.x1 == xs.min() and box.x2 == xs.max()
            assert box.y1 == ys.min() and box.y2 == ys.max()
            # inside image bounds, component non-empty
            assert 0 <= box.x1 <= box.x2 <= 55
            assert 0 <= box.y1 <= box.y2 <= 55
            assert pseudo.component_area >= 1

    def test_propagates_degenerate(self):
        with pytest.raises(DegenerateMap):
            extract_pseudo_box(SaliencyMap(np.zeros((4, 4), dtype=np.float32)), 32, 32)

    def test_carries_class(self):
        rng = np.random.default_rng(34)
        sal = SaliencyMap(rng.standard_normal((5, 5)).astype(np.float32), 42, SOURCE_FORCED)
        pseudo = extract_pseudo_box(sal, 40, 40)
        assert pseudo.saliency_class == 42
