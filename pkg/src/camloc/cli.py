"""Command-line orchestration of the localization pipeline.

Subcommands: index, cam, pseudo-box, rpn-targets, nms, roipool, eval,
confusion, render. Numeric parameters come from built-in defaults, then a
flat key=value config file (--config), then explicit flags, later sources
winning. All outputs are written atomically (temp file + rename) and are
byte-deterministic for a fixed config and input set.

Exit codes: 0 on success, 1 when some per-image items failed (the rest are
still produced, failures listed on stderr), 2 on fatal configuration or IO
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import geometry, rpn, saliency
from .cub import load_features, load_index
from .errors import CamlocError, ImageError, ShapeError
from .geometry import Box, ScoredBox, generate_anchors, nms, roi_pool
from .metrics import (
    IOU_HISTOGRAM_EDGES,
    EvalRecord,
    PartLocation,
    confusion,
    evaluate,
    top_confused_pairs,
)
from .rpn import label_anchors
from .saliency import (
    SOURCE_FORCED,
    SOURCE_PREDICTED,
    PseudoBox,
    SaliencyMap,
    binarize,
    compute_cam,
    largest_component_box,
    otsu_threshold,
    predict_class,
    upsample_bilinear,
)
from .tensorio import Matrix2, Tensor3, read_tensor, write_tensor

PRED_BOX_COLOR = (255, 255, 0)  # yellow, predicted discriminative region
GT_BOX_COLOR = (255, 0, 0)  # red, ground-truth object box
PART_DOT_COLOR = (0, 0, 255)


@dataclass(frozen=True)
class PipelineConfig:
    dataset_root: str = ""
    feature_dir: str = ""
    output_dir: str = ""
    stride: float = geometry.DEFAULT_STRIDE
    scales: tuple[float, float, float] = geometry.DEFAULT_SCALES
    ratios: tuple[float, float, float] = geometry.DEFAULT_RATIOS
    pos_iou: float = rpn.DEFAULT_POS_IOU
    neg_iou: float = rpn.DEFAULT_NEG_IOU
    nms_iou: float = 0.7
    iou_cut: float = 0.5
    otsu_bins: int = saliency.DEFAULT_OTSU_BINS
    lam: float = rpn.DEFAULT_LAMBDA
    n_cls: int = rpn.DEFAULT_N_CLS
    n_reg: int = rpn.DEFAULT_N_REG
    seed: int = 0

    def __post_init__(self):
        for name in ("pos_iou", "neg_iou", "nms_iou", "iou_cut"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ShapeError(f"config {name}={value} outside [0, 1]")


_CONFIG_KEYS = {
    "dataset_root": str,
    "feature_dir": str,
    "output_dir": str,
    "stride": float,
    "scales": "floats",
    "ratios": "floats",
    "pos_iou": float,
    "neg_iou": float,
    "nms_iou": float,
    "iou_cut": float,
    "otsu_bins": int,
    "lambda": float,
    "n_cls": int,
    "n_reg": int,
    "seed": int,
}


def load_config(path) -> PipelineConfig:
    """Parse a flat key=value config file; '#' starts a comment line."""
    values = {}
    for line_number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ShapeError(f"{path}:{line_number}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _CONFIG_KEYS:
            raise ShapeError(f"{path}:{line_number}: unknown config key {key!r}")
        kind = _CONFIG_KEYS[key]
        if kind == "floats":
            values[key] = tuple(float(v) for v in raw.split(","))
        else:
            values[key] = kind(raw)
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    return PipelineConfig(**values)


def _merge_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {}
    for f in fields(PipelineConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = tuple(value) if isinstance(value, list) else value
    return replace(cfg, **overrides) if overrides else cfg


def format_float(value: float) -> str:
    """Shortest exact decimal form, shared by every CSV/JSON writer."""
    return repr(float(value))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(", ", ": ")) + "\n"


# per-image faults that should not abort the batch
_ITEM_ERRORS = (CamlocError, OSError, json.JSONDecodeError, KeyError)


def _run_per_image(ids, worker, jobs: int) -> list[tuple[int, str]]:
    """Apply worker to each id, collecting (id, message) per failure."""
    failures = []
    if jobs <= 1:
        for image_id in ids:
            try:
                worker(image_id)
            except _ITEM_ERRORS as exc:
                failures.append((image_id, str(exc)))
        return failures
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {image_id: pool.submit(worker, image_id) for image_id in ids}
    for image_id, future in futures.items():
        exc = future.exception()
        if isinstance(exc, _ITEM_ERRORS):
            failures.append((image_id, str(exc)))
        elif exc is not None:
            raise exc
    failures.sort(key=lambda f: f[0])
    return failures


def _report_failures(failures) -> int:
    for image_id, message in failures:
        print(f"error: image {image_id}: {message}", file=sys.stderr)
    return 1 if failures else 0


def _select_ids(args) -> list[int]:
    if args.ids:
        return list(dict.fromkeys(args.ids))
    if args.index:
        ids = []
        for line in Path(args.index).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if args.split == "all":
                ids.append(rec["image_id"])
            elif (args.split == "train") == bool(rec["is_train"]):
                ids.append(rec["image_id"])
        return ids
    raise ShapeError("need --ids or --index to select images")


def _ids_from_suffix(directory: Path, suffix: str) -> list[int]:
    ids = []
    for p in directory.glob(f"*{suffix}"):
        stem = p.name[: -len(suffix)]
        if stem.isdigit():
            ids.append(int(stem))
    return sorted(ids)


# ---------------------------------------------------------------- subcommands


def cmd_index(args) -> int:
    index = load_index(args.root or _merge_config(args).dataset_root)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    index.to_jsonl(out)
    return 0


def cmd_cam(args) -> int:
    cfg = _merge_config(args)
    feature_dir = Path(args.features or cfg.feature_dir)
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = _select_ids(args)

    def worker(image_id: int) -> None:
        features, weights = load_features(feature_dir, image_id)
        if args.force_class is not None:
            class_index, source = args.force_class, SOURCE_FORCED
        else:
            class_index, source = predict_class(features, weights), SOURCE_PREDICTED
        sal = compute_cam(features, weights, class_index, source)
        cam_name = f"{image_id}_cam.npy"
        write_tensor(Matrix2(sal.values), out_dir / cam_name)
        record = {
            "cam": cam_name,
            "class_index": class_index,
            "image_id": image_id,
            "source": source,
        }
        _atomic_write_text(out_dir / f"{image_id}_cam.json", _dump_json(record))

    return _report_failures(_run_per_image(ids, worker, args.jobs))


def _load_cam(cam_dir: Path, image_id: int) -> SaliencyMap:
    record = json.loads((cam_dir / f"{image_id}_cam.json").read_text())
    grid = read_tensor(cam_dir / record["cam"])
    if not isinstance(grid, Matrix2):
        raise ShapeError(f"{record['cam']} is not a 2-d saliency grid")
    return SaliencyMap(grid.data, record["class_index"], record["source"])


def cmd_pseudo_box(args) -> int:
    cfg = _merge_config(args)
    cam_dir = Path(args.cams)
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_w, image_h = args.image_size
    ids = args.ids or _ids_from_suffix(cam_dir, "_cam.json")

    def worker(image_id: int) -> None:
        sal = _load_cam(cam_dir, image_id)
        up = upsample_bilinear(sal, image_h, image_w)
        threshold = otsu_threshold(up, cfg.otsu_bins)
        box, area = largest_component_box(binarize(up, threshold))
        record = {
            "box": box.as_list(),
            "class_index": sal.class_index,
            "component_area": area,
            "image_id": image_id,
            "threshold": threshold,
        }
        _atomic_write_text(out_dir / f"{image_id}_box.json", _dump_json(record))

    return _report_failures(_run_per_image(ids, worker, args.jobs))


def cmd_rpn_targets(args) -> int:
    cfg = _merge_config(args)
    boxes_dir = Path(args.boxes)
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image_w, image_h = args.image_size
    feature_h = max(1, int(image_h // cfg.stride))
    feature_w = max(1, int(image_w // cfg.stride))
    anchors = generate_anchors(feature_h, feature_w, cfg.stride, cfg.scales, cfg.ratios)
    ids = args.ids or _ids_from_suffix(boxes_dir, "_box.json")

    def worker(image_id: int) -> None:
        record = json.loads((boxes_dir / f"{image_id}_box.json").read_text())
        pseudo = PseudoBox(Box(*record["box"]), record["component_area"], record["class_index"])
        targets = label_anchors(anchors, pseudo, image_w, image_h, cfg.pos_iou, cfg.neg_iou)
        lines = ["anchor_idx,label,tx,ty,tw,th"]
        for i in range(len(targets)):
            if targets.labels[i] == rpn.POSITIVE:
                deltas = ",".join(format_float(d) for d in targets.deltas[i])
            else:
                deltas = ",,,"
            lines.append(f"{i},{int(targets.labels[i])},{deltas}")
        _atomic_write_text(out_dir / f"{image_id}_targets.csv", "\n".join(lines) + "\n")

    return _report_failures(_run_per_image(ids, worker, args.jobs))


def _read_proposals(path: Path) -> dict[int, list[ScoredBox]]:
    """Parse image_id,x1,y1,x2,y2,score rows, grouped in first-seen order."""
    groups: dict[int, list[ScoredBox]] = {}
    lines = path.read_text().splitlines()
    for line_number, line in enumerate(lines, start=1):
        if line_number == 1 and line.startswith("image_id"):
            continue
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ShapeError(f"{path}:{line_number}: expected 6 fields")
        image_id = int(parts[0])
        box = Box(*(float(v) for v in parts[1:5]))
        groups.setdefault(image_id, []).append(ScoredBox(box, float(parts[5])))
    return groups


def proposals_csv(groups: dict[int, list[ScoredBox]]) -> str:
    lines = ["image_id,x1,y1,x2,y2,score"]
    for image_id, boxes in groups.items():
        for sb in boxes:
            coords = ",".join(format_float(v) for v in sb.box.as_list())
            lines.append(f"{image_id},{coords},{format_float(sb.score)}")
    return "\n".join(lines) + "\n"


def cmd_nms(args) -> int:
    cfg = _merge_config(args)
    groups = _read_proposals(Path(args.proposals))
    kept = {
        image_id: nms(candidates, cfg.nms_iou, args.max_keep)
        for image_id, candidates in groups.items()
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out, proposals_csv(kept))
    return 0


def cmd_roipool(args) -> int:
    cfg = _merge_config(args)
    features = read_tensor(Path(args.features))
    if not isinstance(features, Tensor3):
        raise ShapeError(f"{args.features} is not a 3-d feature tensor")
    roi = Box(*args.roi)
    out_h, out_w = args.out_size
    pooled = roi_pool(features, roi, cfg.stride, out_h, out_w)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tensor(pooled, out)
    return 0


def _parse_records(path: Path) -> list[EvalRecord]:
    records = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        records.append(
            EvalRecord(
                image_id=rec["image_id"],
                true_class=rec["true_class"],
                predicted_class=rec["predicted_class"],
                predicted_box=Box(*rec["predicted_box"]) if rec.get("predicted_box") else None,
                gt_box=Box(*rec["gt_box"]) if rec.get("gt_box") else None,
                part_locations=tuple(
                    PartLocation(int(p[0]), float(p[1]), float(p[2]), bool(p[3]))
                    for p in rec.get("parts", [])
                ),
            )
        )
    return records


def confusion_csv(matrix: np.ndarray) -> str:
    return "\n".join(",".join(str(int(v)) for v in row) for row in matrix) + "\n"


def histogram_csv(hist) -> str:
    lines = ["bin_lo,bin_hi,count"]
    for i, count in enumerate(hist):
        lo, hi = IOU_HISTOGRAM_EDGES[i], IOU_HISTOGRAM_EDGES[i + 1]
        lines.append(f"{format_float(lo)},{format_float(hi)},{count}")
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    cfg = _merge_config(args)
    records = _parse_records(Path(args.records))
    report = evaluate(records, args.num_classes, cfg.iou_cut)
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_dir / "report.json", _dump_json(report.to_dict()))
    _atomic_write_text(out_dir / "confusion.csv", confusion_csv(report.confusion))
    _atomic_write_text(out_dir / "iou_histogram.csv", histogram_csv(report.iou_histogram))
    return 0


def cmd_confusion(args) -> int:
    records = _parse_records(Path(args.records))
    matrix = confusion(records, args.num_classes)
    pairs = top_confused_pairs(matrix, args.top)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_dir / "confusion.csv", confusion_csv(matrix))
    _atomic_write_text(
        out_dir / "top_confused.json",
        _dump_json([{"count": c, "predicted": p, "true": t} for t, p, c in pairs]),
    )
    return 0


def cmd_render(args) -> int:
    from PIL import Image, ImageDraw, UnidentifiedImageError

    try:
        image = Image.open(args.image).convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"cannot decode {args.image}: {exc}") from exc
    draw = ImageDraw.Draw(image)
    if args.gt_box:
        x1, y1, x2, y2 = args.gt_box
        draw.rectangle((round(x1), round(y1), round(x2), round(y2)), outline=GT_BOX_COLOR, width=2)
    if args.pred_box:
        x1, y1, x2, y2 = args.pred_box
        draw.rectangle(
            (round(x1), round(y1), round(x2), round(y2)), outline=PRED_BOX_COLOR, width=2
        )
    for part in args.part or []:
        _, x, y, visible = part
        if visible:
            cx, cy = round(x), round(y)
            draw.rectangle((cx - 1, cy - 1, cx + 1, cy + 1), fill=PART_DOT_COLOR)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    import io

    buf = io.BytesIO()
    image.save(buf, format="PNG")
    _atomic_write_bytes(out, buf.getvalue())
    return 0


# -------------------------------------------------------------------- parser


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--stride", type=float)
    p.add_argument("--scales", type=float, nargs=3)
    p.add_argument("--ratios", type=float, nargs=3)
    p.add_argument("--pos-iou", dest="pos_iou", type=float)
    p.add_argument("--neg-iou", dest="neg_iou", type=float)
    p.add_argument("--nms-iou", dest="nms_iou", type=float)
    p.add_argument("--iou-cut", dest="iou_cut", type=float)
    p.add_argument("--otsu-bins", dest="otsu_bins", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--n-cls", dest="n_cls", type=int)
    p.add_argument("--n-reg", dest="n_reg", type=int)
    p.add_argument("--seed", type=int)


def _add_id_selection(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ids", type=int, nargs="+", help="explicit image ids")
    p.add_argument("--index", help="index JSONL produced by the index subcommand")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="parse a CUB-style annotation root into JSONL")
    _add_config_flags(p)
    p.add_argument("--root", help="dataset root directory")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("cam", help="compute class-activation saliency maps")
    _add_config_flags(p)
    _add_id_selection(p)
    p.add_argument("--features", help="directory of <id>.npy plus weights.npy")
    p.add_argument("--out", help="output directory")
    p.add_argument("--class", dest="force_class", type=int, help="force this class index")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_cam)

    p = sub.add_parser("pseudo-box", help="binarize saliency and box the largest component")
    _add_config_flags(p)
    p.add_argument("--cams", required=True, help="directory produced by the cam subcommand")
    p.add_argument("--out", help="output directory")
    p.add_argument("--image-size", type=int, nargs=2, default=(224, 224), metavar=("W", "H"))
    p.add_argument("--ids", type=int, nargs="+")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_pseudo_box)

    p = sub.add_parser("rpn-targets", help="label anchors against pseudo boxes")
    _add_config_flags(p)
    p.add_argument("--boxes", required=True, help="directory produced by pseudo-box")
    p.add_argument("--out", help="output directory")
    p.add_argument("--image-size", type=int, nargs=2, default=(224, 224), metavar=("W", "H"))
    p.add_argument("--ids", type=int, nargs="+")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_rpn_targets)

    p = sub.add_parser("nms", help="suppress overlapping scored proposals")
    _add_config_flags(p)
    p.add_argument("--proposals", required=True, help="CSV image_id,x1,y1,x2,y2,score")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--max-keep", dest="max_keep", type=int, default=300)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("roipool", help="max-pool a region of interest to a fixed grid")
    _add_config_flags(p)
    p.add_argument("--features", required=True, help="feature tensor NPY path")
    p.add_argument("--roi", type=float, nargs=4, required=True, metavar=("X1", "Y1", "X2", "Y2"))
    p.add_argument("--out-size", dest="out_size", type=int, nargs=2, default=(7, 7))
    p.add_argument("--out", required=True, help="output NPY path")
    p.set_defaults(func=cmd_roipool)

    p = sub.add_parser("eval", help="run the full metric suite over a record file")
    _add_config_flags(p)
    p.add_argument("--records", required=True, help="JSONL evaluation records")
    p.add_argument("--num-classes", dest="num_classes", type=int, default=200)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("confusion", help="confusion matrix and most-confused pairs")
    _add_config_flags(p)
    p.add_argument("--records", required=True, help="JSONL evaluation records")
    p.add_argument("--num-classes", dest="num_classes", type=int, default=200)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser("render", help="draw boxes and part dots onto an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pred-box", dest="pred_box", type=float, nargs=4)
    p.add_argument("--gt-box", dest="gt_box", type=float, nargs=4)
    p.add_argument(
        "--part",
        type=float,
        nargs=4,
        action="append",
        metavar=("ID", "X", "Y", "VISIBLE"),
        help="repeatable part location; drawn when VISIBLE is nonzero",
    )
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CamlocError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
