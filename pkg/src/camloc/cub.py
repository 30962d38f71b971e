"""CUB-200-2011 annotation parsing and feature-directory loading.

The dataset root holds whitespace-separated text files: images.txt
("id path"), image_class_labels.txt ("id class"), bounding_boxes.txt
("id x y w h"), train_test_split.txt ("id is_train") and
parts/part_locs.txt ("image_id part_id x y visible"). Joins are validated
strictly: an id present in one file and missing in another raises instead
of silently dropping the image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import InconsistentIndex, MissingAnnotation, ParseError, ShapeError
from .geometry import Box
from .metrics import PartLocation
from .tensorio import Matrix2, Tensor3, read_tensor

NUM_CLASSES = 200
PARTS_PER_IMAGE = 15


@dataclass(frozen=True)
class IndexEntry:
    path: str
    class_index: int  # 0-based; the annotation files carry 1-based labels
    is_train: bool
    gt_box: Box
    parts: tuple[PartLocation, ...]


@dataclass(frozen=True)
class DatasetIndex:
    entries: dict[int, IndexEntry]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def train_ids(self) -> list[int]:
        return sorted(i for i, e in self.entries.items() if e.is_train)

    @property
    def test_ids(self) -> list[int]:
        return sorted(i for i, e in self.entries.items() if not e.is_train)

    def to_jsonl(self, path) -> None:
        """Cache the index, one JSON record per image, sorted by id."""
        lines = []
        for image_id in sorted(self.entries):
            e = self.entries[image_id]
            lines.append(
                json.dumps(
                    {
                        "image_id": image_id,
                        "path": e.path,
                        "class_index": e.class_index,
                        "is_train": e.is_train,
                        "gt_box": e.gt_box.as_list(),
                        "parts": [[p.part_id, p.x, p.y, int(p.visible)] for p in e.parts],
                    },
                    sort_keys=True,
                )
            )
        Path(path).write_text("\n".join(lines) + "\n")


def _read_rows(path: Path, num_fields: int, numeric: tuple[int, ...]):
    """Yield (line_number, fields) with the given columns parsed as floats."""
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise MissingAnnotation(f"missing annotation file {path}") from exc
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != num_fields:
            raise ParseError(path, line_number, f"expected {num_fields} fields, got {len(fields)}")
        parsed = list(fields)
        for col in numeric:
            try:
                parsed[col] = float(fields[col])
            except ValueError:
                raise ParseError(path, line_number, f"non-numeric field {fields[col]!r}") from None
        yield line_number, parsed


def _int_field(path: Path, line_number: int, value: float, what: str) -> int:
    if value != int(value):
        raise ParseError(path, line_number, f"{what} must be an integer, got {value}")
    return int(value)


def load_index(root) -> DatasetIndex:
    """Parse and join the five annotation files under a CUB-style root."""
    root = Path(root)

    paths: dict[int, str] = {}
    images_file = root / "images.txt"
    for ln, (image_id, rel_path) in _read_rows(images_file, 2, (0,)):
        image_id = _int_field(images_file, ln, image_id, "image id")
        if image_id in paths:
            raise InconsistentIndex(f"duplicate image id {image_id} in images.txt")
        paths[image_id] = rel_path

    labels: dict[int, int] = {}
    labels_file = root / "image_class_labels.txt"
    for ln, (image_id, label) in _read_rows(labels_file, 2, (0, 1)):
        image_id = _int_field(labels_file, ln, image_id, "image id")
        label = _int_field(labels_file, ln, label, "class label")
        if image_id in labels:
            raise InconsistentIndex(f"duplicate image id {image_id} in image_class_labels.txt")
        if not 1 <= label <= NUM_CLASSES:
            raise InconsistentIndex(f"class label {label} outside [1, {NUM_CLASSES}]")
        labels[image_id] = label - 1

    boxes: dict[int, Box] = {}
    boxes_file = root / "bounding_boxes.txt"
    for ln, (image_id, x, y, w, h) in _read_rows(boxes_file, 5, (0, 1, 2, 3, 4)):
        image_id = _int_field(boxes_file, ln, image_id, "image id")
        if image_id in boxes:
            raise InconsistentIndex(f"duplicate image id {image_id} in bounding_boxes.txt")
        if w <= 0 or h <= 0:
            raise ParseError(boxes_file, ln, f"non-positive box size {w}x{h}")
        # (x, y, w, h) to inclusive corners; exact inverse is (x1, y1, x2-x1+1, y2-y1+1)
        boxes[image_id] = Box(x, y, x + w - 1.0, y + h - 1.0)

    split: dict[int, bool] = {}
    split_file = root / "train_test_split.txt"
    for ln, (image_id, flag) in _read_rows(split_file, 2, (0, 1)):
        image_id = _int_field(split_file, ln, image_id, "image id")
        flag = _int_field(split_file, ln, flag, "train flag")
        if image_id in split:
            raise InconsistentIndex(f"duplicate image id {image_id} in train_test_split.txt")
        if flag not in (0, 1):
            raise ParseError(split_file, ln, f"train flag must be 0 or 1, got {flag}")
        split[image_id] = bool(flag)

    parts: dict[int, dict[int, PartLocation]] = {}
    parts_file = root / "parts" / "part_locs.txt"
    for ln, (image_id, part_id, x, y, visible) in _read_rows(parts_file, 5, (0, 1, 2, 3, 4)):
        image_id = _int_field(parts_file, ln, image_id, "image id")
        part_id = _int_field(parts_file, ln, part_id, "part id")
        visible = _int_field(parts_file, ln, visible, "visible flag")
        if visible not in (0, 1):
            raise ParseError(parts_file, ln, f"visible flag must be 0 or 1, got {visible}")
        per_image = parts.setdefault(image_id, {})
        if part_id in per_image:
            raise InconsistentIndex(f"duplicate part {part_id} for image {image_id}")
        per_image[part_id] = PartLocation(part_id, x, y, bool(visible))

    ids = set(paths)
    for name, mapping in (
        ("image_class_labels.txt", labels),
        ("bounding_boxes.txt", boxes),
        ("train_test_split.txt", split),
        ("parts/part_locs.txt", parts),
    ):
        if set(mapping) != ids:
            missing = ids ^ set(mapping)
            raise InconsistentIndex(f"{name} disagrees with images.txt on ids {sorted(missing)[:5]}")
    for image_id, per_image in parts.items():
        if len(per_image) != PARTS_PER_IMAGE:
            raise InconsistentIndex(
                f"image {image_id} has {len(per_image)} part rows, expected {PARTS_PER_IMAGE}"
            )

    entries = {
        image_id: IndexEntry(
            path=paths[image_id],
            class_index=labels[image_id],
            is_train=split[image_id],
            gt_box=boxes[image_id],
            parts=tuple(parts[image_id][pid] for pid in sorted(parts[image_id])),
        )
        for image_id in sorted(ids)
    }
    return DatasetIndex(entries)


def load_features(feature_dir, image_id: int) -> tuple[Tensor3, Matrix2]:
    """Load one image's feature tensor plus the shared classifier weights.

    Expects <image_id>.npy and weights.npy under feature_dir; validates that
    the weight columns match the feature channels.
    """
    feature_dir = Path(feature_dir)
    features = read_tensor(feature_dir / f"{image_id}.npy")
    if not isinstance(features, Tensor3):
        raise ShapeError(f"{image_id}.npy is not a 3-d feature tensor")
    weights = read_tensor(feature_dir / "weights.npy")
    if not isinstance(weights, Matrix2) or weights.data.ndim != 2:
        raise ShapeError("weights.npy is not a 2-d matrix")
    if weights.cols != features.channels:
        raise ShapeError(
            f"weights have {weights.cols} columns but features {features.channels} channels"
        )
    return features, weights
