"""Saliency-guided discriminative localization toolkit.

From feature tensors and classifier weights to class-activation saliency
maps, pseudo ground-truth boxes, RPN supervision targets and losses,
proposal post-processing, and the localization evaluation suite.
"""

from . import errors
from .cub import DatasetIndex, IndexEntry, load_features, load_index
from .geometry import (
    AnchorGrid,
    Box,
    ScoredBox,
    generate_anchors,
    iou,
    nms,
    roi_pool,
)
from .metrics import (
    EvalRecord,
    EvalReport,
    PartLocation,
    accuracy,
    confusion,
    evaluate,
    localization_accuracy,
    pcl,
    top_confused_pairs,
)
from .rpn import (
    AnchorTargets,
    LossBreakdown,
    RpnPrediction,
    decode_box,
    encode_box,
    label_anchors,
    rpn_loss,
    sample_anchor_minibatch,
    smooth_l1,
)
from .saliency import (
    BinaryMask,
    PseudoBox,
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
from .tensorio import Matrix2, Tensor3, read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "AnchorGrid",
    "AnchorTargets",
    "BinaryMask",
    "Box",
    "DatasetIndex",
    "EvalRecord",
    "EvalReport",
    "IndexEntry",
    "LossBreakdown",
    "Matrix2",
    "PartLocation",
    "PseudoBox",
    "RpnPrediction",
    "SaliencyMap",
    "ScoredBox",
    "Tensor3",
    "accuracy",
    "binarize",
    "compute_cam",
    "confusion",
    "connected_components",
    "decode_box",
    "encode_box",
    "errors",
    "evaluate",
    "extract_pseudo_box",
    "generate_anchors",
    "iou",
    "label_anchors",
    "largest_component_box",
    "load_features",
    "load_index",
    "localization_accuracy",
    "nms",
    "otsu_threshold",
    "pcl",
    "predict_class",
    "read_tensor",
    "roi_pool",
    "rpn_loss",
    "sample_anchor_minibatch",
    "smooth_l1",
    "top_confused_pairs",
    "upsample_bilinear",
    "write_tensor",
]
