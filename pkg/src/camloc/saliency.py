"""Class-activation saliency maps and pseudo ground-truth boxes.

The map for class c is the weighted sum over feature channels
sum_u w[c, u] * f[u, y, x]; the class is the argmax of the global-average-
pooled classifier scores unless a caller forces one. Binarizing the
upsampled map with an adaptive threshold and boxing the largest connected
foreground component yields the pseudo ground-truth box that stands in for
a human object annotation downstream.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMap, ShapeError
from .geometry import Box
from .tensorio import Matrix2, Tensor3

SOURCE_PREDICTED = "argmax-predicted"
SOURCE_FORCED = "caller-forced"

DEFAULT_OTSU_BINS = 256


@dataclass(frozen=True)
class SaliencyMap:
    """Single-channel importance grid for one class.

    values is float32 (height, width) so a map passed through the tensor
    file format comes back bit-identical; class_index records the weight row
    used; source says whether that row came from the argmax prediction or
    was forced by the caller. Arithmetic on maps promotes to float64.
    """

    values: np.ndarray = field(repr=False)
    class_index: int = 0
    source: str = SOURCE_FORCED

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 2 or arr.size == 0:
            raise ShapeError(f"saliency map must be non-empty 2-d, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("saliency map contains NaN or Inf")
        if self.source not in (SOURCE_PREDICTED, SOURCE_FORCED):
            raise ShapeError(f"unknown source {self.source!r}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """Foreground mask produced by thresholding a saliency map."""

    bits: np.ndarray = field(repr=False)
    threshold_used: float = 0.0

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class PseudoBox:
    """Tight box of the largest high-saliency connected component."""

    box: Box
    component_area: int
    saliency_class: int


def _check_shapes(features: Tensor3, weights: Matrix2, class_index: int | None = None):
    if weights.cols != features.channels:
        raise ShapeError(
            f"weights have {weights.cols} columns but features {features.channels} channels"
        )
    if class_index is not None and not 0 <= class_index < weights.rows:
        raise ShapeError(f"class {class_index} outside [0, {weights.rows})")


def predict_class(features: Tensor3, weights: Matrix2) -> int:
    """Argmax class of the global-average-pooled classifier scores.

    score(c) = sum_u w[c, u] * mean_{y,x} f[u, y, x]; ties resolve to the
    lowest class index.
    """
    _check_shapes(features, weights)
    pooled = features.data.astype(np.float64).mean(axis=(1, 2))
    scores = weights.data.astype(np.float64) @ pooled
    return int(np.argmax(scores))


def compute_cam(
    features: Tensor3, weights: Matrix2, class_index: int, source: str = SOURCE_FORCED
) -> SaliencyMap:
    """Weight the feature channels by one classifier row and sum them."""
    _check_shapes(features, weights, class_index)
    row = weights.data[class_index].astype(np.float64)
    values = np.tensordot(row, features.data.astype(np.float64), axes=1)
    return SaliencyMap(values, class_index, source)


def upsample_bilinear(sal: SaliencyMap, target_h: int, target_w: int) -> SaliencyMap:
    """Corner-aligned bilinear resampling to (target_h, target_w)."""
    if target_h < 1 or target_w < 1:
        raise ShapeError("target dims must be >= 1")
    src = sal.values.astype(np.float64)
    h, w = src.shape

    def axis_coords(n_out: int, n_in: int) -> np.ndarray:
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out, dtype=np.float64)
        return np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)

    ys = axis_coords(target_h, h)
    xs = axis_coords(target_w, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    out = (
        src[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + src[np.ix_(y0, x1)] * (1 - fy) * fx
        + src[np.ix_(y1, x0)] * fy * (1 - fx)
        + src[np.ix_(y1, x1)] * fy * fx
    )
    return SaliencyMap(out, sal.class_index, sal.source)


def otsu_threshold(sal: SaliencyMap, histogram_bins: int = DEFAULT_OTSU_BINS) -> float:
    """Adaptive threshold maximizing between-class variance.

    Values are min-max normalized and histogrammed into histogram_bins bins;
    candidate thresholds are the interior bin edges, scored with levels equal
    to bin indices, and the winning edge is mapped back to the original value
    range. Ties pick the lowest threshold. A constant map has no threshold
    and raises DegenerateMap.
    """
    if histogram_bins < 2:
        raise ShapeError("need at least 2 histogram bins")
    values = sal.values.astype(np.float64).ravel()
    vmin = float(values.min())
    vmax = float(values.max())
    if vmax == vmin:
        raise DegenerateMap("constant saliency map has no threshold")
    norm = (values - vmin) / (vmax - vmin)
    bin_idx = np.minimum((norm * histogram_bins).astype(int), histogram_bins - 1)
    hist = np.bincount(bin_idx, minlength=histogram_bins).astype(np.float64)

    total = hist.sum()
    levels = np.arange(histogram_bins, dtype=np.float64)
    cum_w = np.cumsum(hist)
    cum_lvl = np.cumsum(hist * levels)
    best_edge = None
    best_sigma = -1.0
    for k in range(1, histogram_bins):  # edge between bins k-1 and k
        w0 = cum_w[k - 1]
        w1 = total - w0
        if w0 == 0.0 or w1 == 0.0:
            continue
        mu0 = cum_lvl[k - 1] / w0
        mu1 = (cum_lvl[-1] - cum_lvl[k - 1]) / w1
        sigma = (w0 / total) * (w1 / total) * (mu0 - mu1) ** 2
        if sigma > best_sigma:
            best_sigma = sigma
            best_edge = k
    assert best_edge is not None
    return vmin + (best_edge / histogram_bins) * (vmax - vmin)


def binarize(sal: SaliencyMap, threshold: float) -> BinaryMask:
    """Foreground = saliency >= threshold."""
    bits = sal.values >= threshold
    bits.flags.writeable = False
    return BinaryMask(bits, float(threshold))


def connected_components(bits: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Label 8-connected foreground components in row-major discovery order.

    Returns (labels, counts): labels holds 0 for background and 1..n in the
    order components are first reached scanning rows then columns; counts[i]
    is the pixel count of component i+1.
    """
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    labels = np.zeros((h, w), dtype=np.int32)
    counts: list[int] = []
    neighbors = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    for sy in range(h):
        for sx in range(w):
            if not bits[sy, sx] or labels[sy, sx]:
                continue
            label = len(counts) + 1
            queue = deque([(sy, sx)])
            labels[sy, sx] = label
            count = 0
            while queue:
                y, x = queue.popleft()
                count += 1
                for dy, dx in neighbors:
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = label
                        queue.append((ny, nx))
            counts.append(count)
    return labels, counts


def largest_component_box(mask: BinaryMask) -> tuple[Box, int]:
    """Tight box of the biggest component; earliest-discovered wins ties."""
    labels, counts = connected_components(mask.bits)
    assert counts, "binary mask has no foreground"
    best = int(np.argmax(counts)) + 1  # argmax takes the first max: earliest label
    ys, xs = np.nonzero(labels == best)
    box = Box(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))
    return box, counts[best - 1]


def extract_pseudo_box(
    sal: SaliencyMap,
    image_h: int,
    image_w: int,
    histogram_bins: int = DEFAULT_OTSU_BINS,
) -> PseudoBox:
    """Upsample, threshold, and box the largest connected salient region.

    Thresholding happens in image space so the box is directly comparable
    with anchors. Otsu guarantees non-empty foreground and background, so a
    missing component is a programming error, not a data condition.
    """
    up = upsample_bilinear(sal, image_h, image_w)
    threshold = otsu_threshold(up, histogram_bins)
    mask = binarize(up, threshold)
    box, area = largest_component_box(mask)
    return PseudoBox(box, area, sal.class_index)
