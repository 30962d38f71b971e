import math

import numpy as np
import pytest

from camloc.errors import DeltaOutOfRange, InvalidProbability, ShapeError
from camloc.geometry import Box, generate_anchors, iou
from camloc.rpn import (
    IGNORE,
    NEGATIVE,
    POSITIVE,
    AnchorTargets,
    RpnPrediction,
    decode_box,
    encode_box,
    label_anchors,
    rpn_loss,
    sample_anchor_minibatch,
    smooth_l1,
)
from camloc.saliency import PseudoBox

from oracles import encode_scalar, rpn_loss_scalar, scalar_iou


def random_box(rng, max_coord=512, min_side=4, max_side=512):
    w = float(rng.uniform(min_side, max_side))
    h = float(rng.uniform(min_side, max_side))
    x1 = float(rng.uniform(0, max_coord - w))
    y1 = float(rng.uniform(0, max_coord - h))
    return Box(x1, y1, x1 + w - 1.0, y1 + h - 1.0)


class TestEncodeDecode:
    def test_target_equals_anchor(self):
        b = Box(10, 20, 40, 60)
        assert encode_box(b, b) == (0.0, 0.0, 0.0, 0.0)

    def test_shift_by_anchor_width(self):
        anchor = Box(0, 0, 15, 15)
        target = Box(16, 0, 31, 15)
        tx, ty, tw, th = encode_box(anchor, target)
        assert tx == pytest.approx(1.0)
        assert (ty, tw, th) == (0.0, 0.0, 0.0)

    def test_matches_scalar_formula(self):
        rng = np.random.default_rng(40)
        for _ in range(50):
            anchor, target = random_box(rng), random_box(rng)
            assert encode_box(anchor, target) == pytest.approx(
                encode_scalar(anchor.as_list(), target.as_list()), rel=1e-12
            )

    def test_roundtrip_identity(self):
        rng = np.random.default_rng(41)
        for _ in range(200):
            anchor, target = random_box(rng), random_box(rng)
            back = decode_box(anchor, encode_box(anchor, target))
            for got, want in zip(back.as_list(), target.as_list()):
                assert abs(got - want) < 1e-4

    def test_zero_deltas_reproduce_anchor(self):
        anchor = Box(3, 7, 30, 21)
        assert decode_box(anchor, (0, 0, 0, 0)) == anchor

    def test_log_width_doubles(self):
        anchor = Box(0, 0, 15, 15)
        out = decode_box(anchor, (0, 0, math.log(2.0), 0))
        assert out.width == pytest.approx(32.0)
        assert out.height == pytest.approx(16.0)

    def test_clip_extent(self):
        anchor = Box(200, 200, 255, 255)
        out = decode_box(anchor, (2.0, 2.0, 1.0, 1.0), clip_extent=(224, 224))
        assert out.x2 <= 223 and out.y2 <= 223 and out.x1 >= 0 and out.y1 >= 0

    def test_delta_overflow(self):
        with pytest.raises(DeltaOutOfRange):
            decode_box(Box(0, 0, 10, 10), (0, 0, 25.0, 0))


class TestLabelAnchors:
    def grid(self):
        return generate_anchors(14, 14, stride=16)

    def test_exact_match_anchor_positive_zero_deltas(self):
        grid = self.grid()
        # pick an interior anchor fully inside 224x224
        inside = np.nonzero(grid.inside_mask(224, 224))[0]
        idx = int(inside[len(inside) // 2])
        pseudo = PseudoBox(grid.box(idx), 50, 0)
        targets = label_anchors(grid, pseudo, 224, 224)
        assert targets.labels[idx] == POSITIVE
        assert targets.deltas[idx] == pytest.approx((0.0, 0.0, 0.0, 0.0))
        assert targets.matched[idx] == 0

    def test_disjoint_anchor_negative(self):
        grid = self.grid()
        pseudo = PseudoBox(Box(0, 0, 30, 30), 10, 0)
        targets = label_anchors(grid, pseudo, 224, 224)
        inside = grid.inside_mask(224, 224)
        for idx in np.nonzero(inside)[0][:200]:
            if iou(grid.box(int(idx)), pseudo.box) == 0.0:
                assert targets.labels[idx] == NEGATIVE

    def test_border_anchors_ignored(self):
        grid = self.grid()
        pseudo = PseudoBox(Box(80, 80, 150, 150), 10, 0)
        targets = label_anchors(grid, pseudo, 224, 224)
        outside = ~grid.inside_mask(224, 224)
        assert np.all(targets.labels[outside] == IGNORE)

    def test_matches_brute_force_rule(self):
        rng = np.random.default_rng(42)
        grid = self.grid()
        boxes = [tuple(row) for row in grid.boxes]
        inside = [
            b[0] >= 0 and b[1] >= 0 and b[2] <= 223 and b[3] <= 223 for b in boxes
        ]
        for _ in range(10):
            pseudo = PseudoBox(random_box(rng, max_coord=224, max_side=200), 10, 0)
            targets = label_anchors(grid, pseudo, 224, 224, 0.7, 0.3)
            overlaps = [scalar_iou(b, pseudo.box.as_list()) for b in boxes]
            best = max(o for o, ok in zip(overlaps, inside) if ok)
            for i, b in enumerate(boxes):
                if not inside[i]:
                    expected = IGNORE
                elif overlaps[i] > 0.7 or overlaps[i] == best:
                    expected = POSITIVE
                elif overlaps[i] < 0.3:
                    expected = NEGATIVE
                else:
                    expected = IGNORE
                assert targets.labels[i] == expected, f"anchor {i}"

    def test_at_least_one_positive_and_partition(self):
        rng = np.random.default_rng(43)
        grid = self.grid()
        for _ in range(20):
            pseudo = PseudoBox(random_box(rng, max_coord=224, max_side=220), 10, 0)
            targets = label_anchors(grid, pseudo, 224, 224)
            assert (targets.labels == POSITIVE).sum() >= 1
            assert set(np.unique(targets.labels)) <= {POSITIVE, NEGATIVE, IGNORE}

    def test_threshold_ordering_enforced(self):
        grid = self.grid()
        pseudo = PseudoBox(Box(10, 10, 40, 40), 10, 0)
        with pytest.raises(ShapeError):
            label_anchors(grid, pseudo, 224, 224, pos_iou=0.3, neg_iou=0.7)


class TestSampling:
    def test_deterministic_and_balanced(self):
        # 448px extent keeps enough anchors fully inside that the negative
        # pool exceeds the requested 128 and real subsampling happens
        grid = generate_anchors(28, 28, stride=16)
        pseudo = PseudoBox(Box(120, 120, 330, 330), 10, 0)
        targets = label_anchors(grid, pseudo, 448, 448)
        assert len(targets.negative_indices) > 128
        first = sample_anchor_minibatch(targets, 128, 128, seed=7)
        second = sample_anchor_minibatch(targets, 128, 128, seed=7)
        assert np.array_equal(first, second)
        other = sample_anchor_minibatch(targets, 128, 128, seed=8)
        assert not np.array_equal(first, other)
        labels = targets.labels[first]
        n_pos = int((labels == POSITIVE).sum())
        n_neg = int((labels == NEGATIVE).sum())
        assert n_pos == min(128, int((targets.labels == POSITIVE).sum()))
        assert n_neg == 128
        assert not np.any(labels == IGNORE)
        assert len(set(first.tolist())) == len(first)


class TestSmoothL1:
    def test_values(self):
        assert smooth_l1(0.0) == 0.0
        assert smooth_l1(0.5) == 0.125
        assert smooth_l1(2.0) == 1.5
        assert smooth_l1(-2.0) == 1.5

    def test_branch_agreement_at_one(self):
        assert 0.5 * 1.0 * 1.0 == abs(1.0) - 0.5 == smooth_l1(1.0)
        assert smooth_l1(-1.0) == 0.5

    def test_even_nonnegative_continuous(self):
        for x in np.linspace(-3, 3, 61):
            assert smooth_l1(float(x)) == smooth_l1(float(-x))
            assert smooth_l1(float(x)) >= 0.0

    def test_c1_at_joint_by_finite_differences(self):
        eps = 1e-7
        for x0 in (1.0, -1.0):
            inner = (smooth_l1(x0) - smooth_l1(x0 - math.copysign(eps, x0))) / math.copysign(
                eps, x0
            )
            outer = (smooth_l1(x0 + math.copysign(eps, x0)) - smooth_l1(x0)) / math.copysign(
                eps, x0
            )
            assert abs(inner - math.copysign(1.0, x0)) < 1e-6
            assert abs(outer - math.copysign(1.0, x0)) < 1e-6


def make_targets(labels, deltas=None):
    labels = np.asarray(labels, dtype=np.int8)
    if deltas is None:
        deltas = np.zeros((labels.shape[0], 4))
    matched = np.where(labels == POSITIVE, 0, -1).astype(np.int64)
    return AnchorTargets(labels, np.asarray(deltas, dtype=np.float64), matched)


class TestRpnLoss:
    def test_perfect_predictions_vanish(self):
        eps = 1e-7
        labels = [POSITIVE, NEGATIVE, NEGATIVE, IGNORE]
        targets = make_targets(labels)
        scores = np.array([1 - eps, eps, eps, 0.5])
        pred = RpnPrediction(scores, np.zeros((4, 4)))
        out = rpn_loss(pred, targets, lam=10.0, n_cls=3, n_reg=4)
        assert out.total < 1e-5
        assert out.reg_term == 0.0

    def test_single_anchor_half_probability(self):
        targets = make_targets([POSITIVE])
        pred = RpnPrediction(np.array([0.5]), np.zeros((1, 4)))
        out = rpn_loss(pred, targets, lam=10.0, n_cls=1, n_reg=1)
        assert out.cls_term == pytest.approx(math.log(2.0), abs=1e-9)
        assert out.reg_term == 0.0
        assert out.total == pytest.approx(math.log(2.0), abs=1e-9)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(44)
        for _ in range(30):
            n = int(rng.integers(4, 60))
            labels = rng.choice([POSITIVE, NEGATIVE, IGNORE], size=n)
            target_deltas = rng.standard_normal((n, 4))
            pred_deltas = rng.standard_normal((n, 4))
            scores = rng.uniform(1e-6, 1 - 1e-6, size=n)
            targets = make_targets(labels, target_deltas)
            pred = RpnPrediction(scores, pred_deltas)
            n_cls = int(rng.integers(1, 300))
            n_reg = int(rng.integers(1, 3000))
            lam = float(rng.uniform(0.1, 20))
            out = rpn_loss(pred, targets, lam, n_cls, n_reg)
            cls_ref, reg_ref, total_ref = rpn_loss_scalar(
                scores, pred_deltas, labels, target_deltas, lam, n_cls, n_reg
            )
            assert out.cls_term == pytest.approx(cls_ref, rel=1e-6, abs=1e-9)
            assert out.reg_term == pytest.approx(reg_ref, rel=1e-6, abs=1e-9)
            assert out.total == pytest.approx(total_ref, rel=1e-6, abs=1e-9)
            assert out.total == pytest.approx(
                out.cls_term / n_cls + lam * out.reg_term / n_reg, rel=1e-12
            )

    def test_monotone_in_probability_and_deltas(self):
        targets = make_targets([POSITIVE, NEGATIVE], np.zeros((2, 4)))
        worse = RpnPrediction(np.array([0.6, 0.4]), np.full((2, 4), 0.8))
        better = RpnPrediction(np.array([0.7, 0.3]), np.full((2, 4), 0.5))
        loss_worse = rpn_loss(worse, targets, 10, 2, 2)
        loss_better = rpn_loss(better, targets, 10, 2, 2)
        assert loss_better.cls_term < loss_worse.cls_term
        assert loss_better.reg_term < loss_worse.reg_term

    def test_probability_bounds_enforced(self):
        with pytest.raises(InvalidProbability):
            RpnPrediction(np.array([0.0]), np.zeros((1, 4)))
        with pytest.raises(InvalidProbability):
            RpnPrediction(np.array([1.0]), np.zeros((1, 4)))

    def test_misaligned_sets_rejected(self):
        targets = make_targets([POSITIVE, NEGATIVE])
        pred = RpnPrediction(np.array([0.5]), np.zeros((1, 4)))
        with pytest.raises(ShapeError):
            rpn_loss(pred, targets, 10, 1, 1)
