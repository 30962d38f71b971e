"""Evaluation suite: accuracy, localization accuracy, PCL, confusion.

A prediction localizes correctly when its IoU with the ground-truth object
box strictly exceeds the cut (0.5 by default). PCL counts, per annotated
part, the fraction of images whose part center lies inside the predicted
box, boundary inclusive, restricted to images where the part is visible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEvaluation, ShapeError
from .geometry import Box, iou

IOU_HISTOGRAM_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_IOU_CUT = 0.5


@dataclass(frozen=True)
class PartLocation:
    part_id: int
    x: float
    y: float
    visible: bool


@dataclass(frozen=True)
class EvalRecord:
    """One image's ground truth and predictions."""

    image_id: int | str
    true_class: int
    predicted_class: int
    predicted_box: Box | None = None
    gt_box: Box | None = None
    part_locations: tuple[PartLocation, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    localization_accuracy: float
    iou_histogram: tuple[int, int, int, int, int]
    pcl_per_part: dict[int, float]
    pcl_average: float
    confusion: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "localization_accuracy": self.localization_accuracy,
            "iou_histogram": list(self.iou_histogram),
            "iou_histogram_edges": list(IOU_HISTOGRAM_EDGES),
            "pcl_per_part": {str(k): v for k, v in sorted(self.pcl_per_part.items())},
            "pcl_average": self.pcl_average,
            "confusion": self.confusion.tolist(),
        }


def accuracy(records: list[EvalRecord]) -> float:
    """Correctly classified fraction."""
    if not records:
        raise EmptyEvaluation("no records")
    correct = sum(1 for r in records if r.predicted_class == r.true_class)
    return correct / len(records)


def iou_histogram_bin(value: float) -> int:
    """Index of the 5-bin histogram cell containing an IoU value.

    Bins are [0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8), [0.8,1.0]; the top
    edge closes so 1.0 lands in the last bin.
    """
    return min(int(value / 0.2), 4)


def localization_accuracy(
    records: list[EvalRecord], iou_cut: float = DEFAULT_IOU_CUT
) -> tuple[float, tuple[int, int, int, int, int]]:
    """Fraction of box pairs with IoU strictly above the cut, plus histogram.

    Only records carrying both a predicted and a ground-truth box count;
    each contributes to exactly one histogram bin.
    """
    if not 0.0 <= iou_cut <= 1.0:
        raise ShapeError(f"iou_cut {iou_cut} outside [0, 1]")
    paired = [r for r in records if r.predicted_box is not None and r.gt_box is not None]
    if not paired:
        raise EmptyEvaluation("no records with both boxes")
    hist = [0, 0, 0, 0, 0]
    correct = 0
    for r in paired:
        value = iou(r.predicted_box, r.gt_box)
        hist[iou_histogram_bin(value)] += 1
        if value > iou_cut:
            correct += 1
    return correct / len(paired), tuple(hist)


def pcl(records: list[EvalRecord]) -> tuple[dict[int, float], float]:
    """Per-part fraction of visible part centers falling inside the box.

    A part that is never visible in any eligible record is reported absent
    and excluded from the unweighted average.
    """
    eligible = [r for r in records if r.predicted_box is not None]
    visible_counts: dict[int, int] = {}
    inside_counts: dict[int, int] = {}
    for r in eligible:
        for part in r.part_locations:
            if not part.visible:
                continue
            visible_counts[part.part_id] = visible_counts.get(part.part_id, 0) + 1
            if r.predicted_box.contains_point(part.x, part.y):
                inside_counts[part.part_id] = inside_counts.get(part.part_id, 0) + 1
    if not visible_counts:
        raise EmptyEvaluation("no record with a predicted box and a visible part")
    per_part = {
        pid: inside_counts.get(pid, 0) / visible_counts[pid] for pid in sorted(visible_counts)
    }
    average = sum(per_part.values()) / len(per_part)
    return per_part, average


def confusion(records: list[EvalRecord], num_classes: int) -> np.ndarray:
    """Count matrix M[true][predicted]."""
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for r in records:
        if not (0 <= r.true_class < num_classes and 0 <= r.predicted_class < num_classes):
            raise ShapeError(
                f"record {r.image_id}: classes ({r.true_class}, {r.predicted_class}) "
                f"outside [0, {num_classes})"
            )
        matrix[r.true_class, r.predicted_class] += 1
    return matrix


def top_confused_pairs(matrix: np.ndarray, k: int) -> list[tuple[int, int, int]]:
    """Largest off-diagonal counts as (true, predicted, count).

    Ranked by count descending, ties broken by lower true then predicted
    index; zero-count pairs are never reported.
    """
    pairs = [
        (t, p, int(matrix[t, p]))
        for t in range(matrix.shape[0])
        for p in range(matrix.shape[1])
        if t != p and matrix[t, p] > 0
    ]
    pairs.sort(key=lambda tp: (-tp[2], tp[0], tp[1]))
    return pairs[:k]


def evaluate(
    records: list[EvalRecord], num_classes: int, iou_cut: float = DEFAULT_IOU_CUT
) -> EvalReport:
    """Run the full metric suite over one record set."""
    acc = accuracy(records)
    loc, hist = localization_accuracy(records, iou_cut)
    per_part, avg = pcl(records)
    matrix = confusion(records, num_classes)
    return EvalReport(acc, loc, hist, per_part, avg, matrix)
