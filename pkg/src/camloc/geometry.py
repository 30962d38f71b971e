"""Boxes, anchors, IoU, NMS, and RoI pooling geometry.

All boxes are axis-aligned with inclusive corners, so a box spanning pixel
columns x1..x2 has width x2 - x1 + 1. The +1 convention matters for IoU on
small boxes and is applied everywhere, including real-valued coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRoI, ShapeError
from .tensorio import Tensor3

DEFAULT_STRIDE = 16
DEFAULT_SCALES = (8.0, 16.0, 32.0)
DEFAULT_RATIOS = (0.5, 1.0, 2.0)


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates, corners inclusive."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ShapeError(f"degenerate box {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1 + 1.0

    @property
    def height(self) -> float:
        return self.y2 - self.y1 + 1.0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def contains_point(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2


@dataclass(frozen=True)
class ScoredBox:
    box: Box
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ShapeError(f"non-finite score {self.score}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union with inclusive-pixel areas; 0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1) + 1.0
    ih = min(a.y2, b.y2) - max(a.y1, b.y1) + 1.0
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(boxes: np.ndarray, ref: Box) -> np.ndarray:
    """IoU of every row of an (N, 4) x1,y1,x2,y2 array against one box."""
    boxes = np.asarray(boxes, dtype=np.float64)
    iw = np.minimum(boxes[:, 2], ref.x2) - np.maximum(boxes[:, 0], ref.x1) + 1.0
    ih = np.minimum(boxes[:, 3], ref.y2) - np.maximum(boxes[:, 1], ref.y1) + 1.0
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    areas = (boxes[:, 2] - boxes[:, 0] + 1.0) * (boxes[:, 3] - boxes[:, 1] + 1.0)
    return inter / (areas + ref.area - inter)


@dataclass(frozen=True)
class AnchorGrid:
    """All reference boxes for one feature map.

    boxes is (feature_h * feature_w * 9, 4) ordered cell row-major, then
    ratio, then scale; base_anchors is the 9 shapes centered at the origin.
    """

    feature_h: int
    feature_w: int
    stride: float
    base_anchors: np.ndarray
    boxes: np.ndarray

    def __len__(self) -> int:
        return self.boxes.shape[0]

    def box(self, idx: int) -> Box:
        x1, y1, x2, y2 = self.boxes[idx]
        return Box(float(x1), float(y1), float(x2), float(y2))

    def inside_mask(self, image_w: float, image_h: float) -> np.ndarray:
        """True for anchors fully inside a (image_w, image_h) pixel extent."""
        b = self.boxes
        return (
            (b[:, 0] >= 0.0)
            & (b[:, 1] >= 0.0)
            & (b[:, 2] <= image_w - 1.0)
            & (b[:, 3] <= image_h - 1.0)
        )


def base_anchor_shapes(stride: float, scales, ratios) -> np.ndarray:
    """The 9 (or len(ratios)*len(scales)) anchor boxes centered at the origin.

    Each has area (stride*scale)**2 and aspect ratio h/w equal to the ratio,
    expressed as an inclusive-corner box around center (0, 0).
    """
    shapes = []
    for r in ratios:
        for s in scales:
            side = stride * s
            w = side / math.sqrt(r)
            h = side * math.sqrt(r)
            shapes.append((-(w - 1.0) / 2.0, -(h - 1.0) / 2.0, (w - 1.0) / 2.0, (h - 1.0) / 2.0))
    return np.array(shapes, dtype=np.float64)


def generate_anchors(
    feature_h: int,
    feature_w: int,
    stride: float = DEFAULT_STRIDE,
    scales=DEFAULT_SCALES,
    ratios=DEFAULT_RATIOS,
) -> AnchorGrid:
    """Tile the base anchors over every feature cell.

    Anchor centers sit at (cell + 0.5) * stride on each axis. Border-crossing
    anchors are kept; callers filter or clip downstream.
    """
    if feature_h < 1 or feature_w < 1 or stride <= 0:
        raise ShapeError("feature dims and stride must be positive")
    if any(s <= 0 for s in scales) or any(r <= 0 for r in ratios):
        raise ShapeError("scales and ratios must be positive")
    base = base_anchor_shapes(stride, scales, ratios)
    cy = (np.arange(feature_h, dtype=np.float64) + 0.5) * stride
    cx = (np.arange(feature_w, dtype=np.float64) + 0.5) * stride
    # cell row-major: y outer, x inner; per cell the 9 base shapes in order
    centers = np.stack(
        [
            np.repeat(cx[None, :], feature_h, axis=0).ravel(),
            np.repeat(cy[:, None], feature_w, axis=1).ravel(),
        ],
        axis=1,
    )
    shifts = centers[:, [0, 1, 0, 1]]
    boxes = (shifts[:, None, :] + base[None, :, :]).reshape(-1, 4)
    return AnchorGrid(feature_h, feature_w, float(stride), base, boxes)


def nms(candidates: list[ScoredBox], iou_threshold: float, max_keep: int) -> list[ScoredBox]:
    """Greedy non-maximum suppression.

    Candidates are visited in score-descending order (ties broken by smaller
    original index); one is kept iff its IoU with every already-kept box is
    <= iou_threshold, stopping once max_keep boxes are kept.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ShapeError(f"iou_threshold {iou_threshold} outside [0, 1]")
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))
    kept: list[ScoredBox] = []
    for i in order:
        if len(kept) >= max_keep:
            break
        cand = candidates[i]
        if all(iou(cand.box, k.box) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


def roi_pool(features: Tensor3, roi: Box, stride: float, out_h: int, out_w: int) -> Tensor3:
    """Max-pool a projected region of interest into a fixed (out_h, out_w) grid.

    The image-space roi maps to feature cells via floor(x1/stride),
    floor(y1/stride) and ceil(x2/stride), ceil(y2/stride), giving a half-open
    cell span; each output bin covers cells [floor(i*span/out), ceil((i+1)*
    span/out)) and takes the per-channel maximum, 0 for empty bins.
    """
    if out_h < 1 or out_w < 1 or stride <= 0:
        raise ShapeError("output dims and stride must be positive")
    fx1 = math.floor(roi.x1 / stride)
    fy1 = math.floor(roi.y1 / stride)
    fx2 = math.ceil(roi.x2 / stride)
    fy2 = math.ceil(roi.y2 / stride)
    fx1 = max(fx1, 0)
    fy1 = max(fy1, 0)
    fx2 = min(fx2, features.width)
    fy2 = min(fy2, features.height)
    span_w = fx2 - fx1
    span_h = fy2 - fy1
    if span_w <= 0 or span_h <= 0:
        raise DegenerateRoI(f"roi {roi} covers no feature cells at stride {stride}")

    out = np.zeros((features.channels, out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        y_lo = fy1 + math.floor(i * span_h / out_h)
        y_hi = fy1 + math.ceil((i + 1) * span_h / out_h)
        for j in range(out_w):
            x_lo = fx1 + math.floor(j * span_w / out_w)
            x_hi = fx1 + math.ceil((j + 1) * span_w / out_w)
            if y_hi > y_lo and x_hi > x_lo:
                out[:, i, j] = features.data[:, y_lo:y_hi, x_lo:x_hi].max(axis=(1, 2))
    return Tensor3(out)
