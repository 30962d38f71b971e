"""Anchor labeling, box regression coding, and the proposal loss.

Anchors are labeled against the pseudo ground-truth box instead of a human
object annotation: border-crossing anchors are ignored, anchors above the
positive IoU cut (or attaining the best IoU anywhere) are positive, anchors
below the negative cut are negative, and the rest do not contribute. The
loss is mean log loss over labeled anchors plus a weighted mean smooth-L1
over the regression targets of the positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DeltaOutOfRange, InvalidProbability, ShapeError
from .geometry import AnchorGrid, Box, iou_matrix
from .saliency import PseudoBox

POSITIVE = 1
NEGATIVE = 0
IGNORE = -1

DEFAULT_POS_IOU = 0.7
DEFAULT_NEG_IOU = 0.3
DEFAULT_LAMBDA = 10.0
DEFAULT_N_CLS = 256
DEFAULT_N_REG = 2400


@dataclass(frozen=True)
class AnchorTargets:
    """Per-anchor supervision for one image.

    labels holds POSITIVE/NEGATIVE/IGNORE; deltas rows are regression
    targets (tx, ty, tw, th), meaningful only where labels == POSITIVE;
    matched holds the pseudo-box id for positives and -1 elsewhere.
    """

    labels: np.ndarray = field(repr=False)
    deltas: np.ndarray = field(repr=False)
    matched: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def positive_indices(self) -> np.ndarray:
        return np.nonzero(self.labels == POSITIVE)[0]

    @property
    def negative_indices(self) -> np.ndarray:
        return np.nonzero(self.labels == NEGATIVE)[0]


@dataclass(frozen=True)
class RpnPrediction:
    """Predicted objectness probability and box deltas per anchor."""

    scores: np.ndarray = field(repr=False)
    deltas: np.ndarray = field(repr=False)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        deltas = np.asarray(self.deltas, dtype=np.float64)
        if scores.ndim != 1 or deltas.shape != (scores.shape[0], 4):
            raise ShapeError("scores must be (N,), deltas (N, 4)")
        if not np.isfinite(scores).all() or np.any(scores <= 0.0) or np.any(scores >= 1.0):
            raise InvalidProbability("probabilities must lie strictly inside (0, 1)")
        if not np.isfinite(deltas).all():
            raise ShapeError("deltas must be finite")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "deltas", deltas)


@dataclass(frozen=True)
class LossBreakdown:
    cls_term: float
    reg_term: float
    total: float
    n_cls: int
    n_reg: int
    lam: float

    def to_dict(self) -> dict:
        return {
            "cls_term": self.cls_term,
            "reg_term": self.reg_term,
            "total": self.total,
            "n_cls": self.n_cls,
            "n_reg": self.n_reg,
            "lambda": self.lam,
        }


def encode_box(anchor: Box, target: Box) -> tuple[float, float, float, float]:
    """Express a target box relative to an anchor.

    Offsets are center shifts normalized by the anchor size, spans are log
    size ratios; widths and heights use the inclusive convention so they are
    strictly positive.
    """
    cxa, cya = anchor.center
    cx, cy = target.center
    return (
        (cx - cxa) / anchor.width,
        (cy - cya) / anchor.height,
        math.log(target.width / anchor.width),
        math.log(target.height / anchor.height),
    )


def decode_box(anchor: Box, deltas, clip_extent: tuple[float, float] | None = None) -> Box:
    """Invert encode_box; optionally clip to a (width, height) pixel extent."""
    tx, ty, tw, th = (float(d) for d in deltas)
    if abs(tw) > 20.0 or abs(th) > 20.0:
        raise DeltaOutOfRange(f"log-size delta too large: tw={tw}, th={th}")
    cxa, cya = anchor.center
    cx = tx * anchor.width + cxa
    cy = ty * anchor.height + cya
    w = math.exp(tw) * anchor.width
    h = math.exp(th) * anchor.height
    x1 = cx - (w - 1.0) / 2.0
    y1 = cy - (h - 1.0) / 2.0
    x2 = x1 + w - 1.0
    y2 = y1 + h - 1.0
    if clip_extent is not None:
        ew, eh = clip_extent
        x1 = min(max(x1, 0.0), ew - 1.0)
        y1 = min(max(y1, 0.0), eh - 1.0)
        x2 = min(max(x2, 0.0), ew - 1.0)
        y2 = min(max(y2, 0.0), eh - 1.0)
    return Box(x1, y1, x2, y2)


def label_anchors(
    anchors: AnchorGrid,
    pseudo: PseudoBox,
    image_w: float,
    image_h: float,
    pos_iou: float = DEFAULT_POS_IOU,
    neg_iou: float = DEFAULT_NEG_IOU,
) -> AnchorTargets:
    """Assign positive/negative/ignore labels and regression targets.

    Border-crossing anchors are ignored outright. Among the rest, positive
    means IoU > pos_iou or attaining the maximum IoU (so at least one anchor
    is always positive); negative means IoU < neg_iou and not positive.
    """
    if pos_iou <= neg_iou:
        raise ShapeError(f"pos_iou {pos_iou} must exceed neg_iou {neg_iou}")
    n = len(anchors)
    labels = np.full(n, IGNORE, dtype=np.int8)
    deltas = np.zeros((n, 4), dtype=np.float64)
    matched = np.full(n, -1, dtype=np.int64)

    inside = anchors.inside_mask(image_w, image_h)
    overlaps = iou_matrix(anchors.boxes, pseudo.box)
    overlaps_inside = np.where(inside, overlaps, -1.0)
    max_iou = overlaps_inside.max() if inside.any() else -1.0

    positive = inside & (overlaps > pos_iou)
    if max_iou >= 0.0:
        positive |= inside & (overlaps_inside == max_iou)
    negative = inside & (overlaps < neg_iou) & ~positive

    labels[positive] = POSITIVE
    labels[negative] = NEGATIVE
    matched[positive] = 0
    for idx in np.nonzero(positive)[0]:
        deltas[idx] = encode_box(anchors.box(int(idx)), pseudo.box)
    return AnchorTargets(labels, deltas, matched)


def sample_anchor_minibatch(
    targets: AnchorTargets,
    num_positives: int = 128,
    num_negatives: int = 128,
    seed: int = 0,
) -> np.ndarray:
    """Deterministic balanced subsample of labeled anchor indices.

    Draws up to num_positives positives and up to num_negatives negatives
    without replacement from a fixed-seed generator; the shortfall on either
    side is not backfilled from the other. Returned indices are sorted.
    """
    rng = np.random.default_rng(seed)
    pos = targets.positive_indices
    neg = targets.negative_indices
    take_pos = min(num_positives, pos.shape[0])
    take_neg = min(num_negatives, neg.shape[0])
    chosen_pos = rng.choice(pos, size=take_pos, replace=False) if take_pos else pos[:0]
    chosen_neg = rng.choice(neg, size=take_neg, replace=False) if take_neg else neg[:0]
    return np.sort(np.concatenate([chosen_pos, chosen_neg]))


def smooth_l1(x: float) -> float:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; continuous at the joint."""
    ax = abs(x)
    return 0.5 * x * x if ax < 1.0 else ax - 0.5


def rpn_loss(
    pred: RpnPrediction,
    targets: AnchorTargets,
    lam: float = DEFAULT_LAMBDA,
    n_cls: int = DEFAULT_N_CLS,
    n_reg: int = DEFAULT_N_REG,
) -> LossBreakdown:
    """Log loss over labeled anchors plus smooth-L1 over positive deltas.

    cls_term sums -[p* log p + (1 - p*) log(1 - p)] over non-ignored
    anchors; reg_term sums smooth_l1 per coordinate of (pred - target) over
    positives; total = cls_term / n_cls + lam * reg_term / n_reg.
    """
    if len(pred.scores) != len(targets):
        raise ShapeError("prediction and targets cover different anchor sets")
    if n_cls < 1 or n_reg < 1:
        raise ShapeError("n_cls and n_reg must be positive")

    labeled = targets.labels != IGNORE
    p = pred.scores[labeled]
    p_star = (targets.labels[labeled] == POSITIVE).astype(np.float64)
    cls_term = float(-(p_star * np.log(p) + (1.0 - p_star) * np.log(1.0 - p)).sum())

    pos = targets.labels == POSITIVE
    diff = pred.deltas[pos] - targets.deltas[pos]
    reg_term = float(sum(smooth_l1(d) for d in diff.ravel()))

    total = cls_term / n_cls + lam * reg_term / n_reg
    return LossBreakdown(cls_term, reg_term, total, n_cls, n_reg, lam)
