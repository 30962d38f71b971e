"""Dense tensor containers and the NPY-subset interchange format.

Every tensor that crosses a process boundary in this pipeline travels as an
NPY v1.0 file restricted to little-endian 32-bit floats in C order. The
reader and writer below implement that subset byte for byte:

    magic 0x93 'N' 'U' 'M' 'P' 'Y', version 0x01 0x00,
    2-byte little-endian header length,
    ASCII header dict with keys 'descr' ('<f4'), 'fortran_order' (False)
    and 'shape' (tuple of 1..3 positive ints),
    header space-padded so the whole preamble is a multiple of 64 bytes
    and terminated by a newline,
    then raw '<f4' payload in C order.

Files produced here load with numpy.load, and numpy.save output of a C-order
float32 array reads back here; neither library call is used on the hot path
so the format stays pinned to the subset above.
"""

from __future__ import annotations

import ast
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptFile,
    FormatError,
    InvalidValue,
    IoError,
    UnsupportedDtype,
    UnsupportedSize,
)

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
MAX_ELEMENTS = 2**31 - 1


def _as_payload(data, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(data, dtype="<f4").reshape(shape)
    if not np.isfinite(arr).all():
        raise InvalidValue("tensor contains NaN or Inf")
    if arr.size > MAX_ELEMENTS:
        raise UnsupportedSize(f"{arr.size} elements exceeds cap {MAX_ELEMENTS}")
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Tensor3:
    """Channel-major feature volume of shape (channels, height, width).

    Element (c, y, x) sits at flat offset c*H*W + y*W + x. Values are stored
    as float32, are finite, and the array is frozen after construction.
    """

    data: np.ndarray = field(repr=False)

    def __init__(self, data, shape: tuple[int, int, int] | None = None):
        arr = np.asarray(data)
        if shape is not None:
            arr = arr.reshape(shape)
        if arr.ndim != 3:
            raise FormatError(f"Tensor3 needs 3 dims, got {arr.ndim}")
        object.__setattr__(self, "data", _as_payload(arr, arr.shape))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Matrix2:
    """Row-major real matrix, float32, finite, frozen after construction."""

    data: np.ndarray = field(repr=False)

    def __init__(self, data, shape: tuple[int, int] | None = None):
        arr = np.asarray(data)
        if shape is not None:
            arr = arr.reshape(shape)
        if arr.ndim != 2:
            raise FormatError(f"Matrix2 needs 2 dims, got {arr.ndim}")
        object.__setattr__(self, "data", _as_payload(arr, arr.shape))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def _build_header(shape: tuple[int, ...]) -> bytes:
    if len(shape) == 1:
        shape_repr = f"({shape[0]},)"
    else:
        shape_repr = "(" + ", ".join(str(s) for s in shape) + ")"
    header = f"{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_repr}, }}"
    header_bytes = header.encode("ascii")
    # magic(6) + version(2) + header-length field(2) + header + newline,
    # padded with spaces to a multiple of 64
    unpadded = len(_MAGIC) + len(_VERSION) + 2 + len(header_bytes) + 1
    pad = (64 - unpadded % 64) % 64
    header_bytes += b" " * pad + b"\n"
    return _MAGIC + _VERSION + struct.pack("<H", len(header_bytes)) + header_bytes


def _parse_header(fh) -> tuple[int, ...]:
    magic = fh.read(len(_MAGIC))
    if magic != _MAGIC:
        raise FormatError("bad magic bytes")
    version = fh.read(2)
    if version != _VERSION:
        raise FormatError(f"unsupported version {version!r}")
    length_field = fh.read(2)
    if len(length_field) != 2:
        raise FormatError("truncated header length field")
    (header_len,) = struct.unpack("<H", length_field)
    header_bytes = fh.read(header_len)
    if len(header_bytes) != header_len or not header_bytes.endswith(b"\n"):
        raise FormatError("truncated or unterminated header")
    try:
        header = ast.literal_eval(header_bytes.decode("ascii").strip())
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise FormatError(f"unparseable header dict: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError("header must have exactly descr/fortran_order/shape keys")
    if header["descr"] != "<f4":
        raise UnsupportedDtype(f"dtype {header['descr']!r}, only '<f4' supported")
    if header["fortran_order"] is not False:
        raise FormatError("fortran_order must be False")
    shape = header["shape"]
    if (
        not isinstance(shape, tuple)
        or not 1 <= len(shape) <= 3
        or not all(isinstance(s, int) and s > 0 for s in shape)
    ):
        raise FormatError(f"shape {shape!r} not a tuple of 1..3 positive ints")
    return shape


def read_tensor(path) -> Tensor3 | Matrix2:
    """Read an NPY-subset file into a Tensor3 (3-d) or Matrix2 (2-d).

    A 1-d file is returned as a single-row Matrix2. Raises FormatError /
    UnsupportedDtype / UnsupportedSize / CorruptFile / InvalidValue per the
    failure, IoError when the file cannot be read at all.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    import io

    fh = io.BytesIO(raw)
    shape = _parse_header(fh)
    count = math.prod(shape)
    if count > MAX_ELEMENTS:
        raise UnsupportedSize(f"{count} elements exceeds cap {MAX_ELEMENTS}")
    payload = fh.read()
    if len(payload) != count * 4:
        raise CorruptFile(
            f"shape {shape} wants {count} elements, payload holds {len(payload) // 4}"
        )
    values = np.frombuffer(payload, dtype="<f4")
    if not np.isfinite(values).all():
        raise InvalidValue(f"{path} payload contains NaN or Inf")
    if len(shape) == 3:
        return Tensor3(values, shape)
    if len(shape) == 2:
        return Matrix2(values, shape)
    return Matrix2(values, (1, shape[0]))


def write_tensor(t: Tensor3 | Matrix2, path) -> None:
    """Write a tensor so that read_tensor reproduces it bit for bit."""
    if not isinstance(t, (Tensor3, Matrix2)):
        raise FormatError(f"cannot write object of type {type(t).__name__}")
    # construction already guarantees finiteness; re-check so a file is never
    # created for a tensor mutated through the raw buffer
    if not np.isfinite(t.data).all():
        raise InvalidValue("tensor contains NaN or Inf")
    blob = _build_header(t.data.shape) + t.data.astype("<f4", copy=False).tobytes("C")
    path = Path(path)
    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(blob)
        tmp.replace(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
