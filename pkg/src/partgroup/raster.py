"""Raster types, label taxonomies and the on-disk codecs.

Grids are plain numpy arrays. The ``as_*`` helpers coerce and validate:

* label grid    -- ``(H, W)`` uint8, values below the taxonomy size, 0 = background
* prob grid     -- ``(H, W)`` float32, values in [0, 1]
* score stack   -- ``(K, H, W)`` float32, finite
* edge grid     -- ``(H, W)`` bool
* instance grid -- ``(H, W)`` int32, 0 = background

On disk, label rasters are 8-bit binary PGM, instance rasters 16-bit binary
PGM (big-endian samples), and float data uses the little-endian ``FGR1`` /
``FGS1`` containers.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, FormatError, LengthError, ValidationError

MAX_SIDE = 2**16 - 1
LABEL_SENTINEL = 255
MAX_INSTANCE_ID = 65535

KINDS = ("label", "prob", "instance", "stack")


@dataclass(frozen=True)
class Taxonomy:
    name: str
    labels: tuple[str, ...]
    flip_pairs: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "flip_pairs", tuple(tuple(p) for p in self.flip_pairs))
        if len(labels) < 2:
            raise ValidationError("taxonomy needs background plus at least one part label")
        if labels[0] != "Background":
            raise ValidationError(f"label 0 must be 'Background', got {labels[0]!r}")
        if len(set(labels)) != len(labels):
            raise ValidationError("taxonomy label names must be unique")
        if len(labels) >= LABEL_SENTINEL:
            raise ValidationError("taxonomy too large for 8-bit label rasters")
        seen = set()
        for a, b in self.flip_pairs:
            if not (0 < a < len(labels) and 0 < b < len(labels)) or a == b:
                raise ValidationError(f"bad flip pair ({a}, {b})")
            if a in seen or b in seen:
                raise ValidationError("flip pairs must be disjoint")
            seen.update((a, b))

    @property
    def K(self) -> int:
        return len(self.labels)

    def index(self, name: str) -> int:
        return self.labels.index(name)

    def to_dict(self) -> dict:
        return {"name": self.name, "labels": list(self.labels),
                "flip_pairs": [list(p) for p in self.flip_pairs]}


# Part order follows the usual CIHP part listing; it is not claimed to match
# the benchmark server's internal numbering.
CIHP = Taxonomy(
    "cihp",
    ("Background", "Hat", "Hair", "Sunglasses", "Upper-clothes", "Dress", "Coat",
     "Socks", "Pants", "Gloves", "Scarf", "Skirt", "Torso-skin", "Face",
     "Right-arm", "Left-arm", "Right-leg", "Left-leg", "Right-shoe", "Left-shoe"),
    flip_pairs=((14, 15), (16, 17), (18, 19)),
)

PASCAL_PERSON_PART = Taxonomy(
    "pascal-person-part",
    ("Background", "Head", "Torso", "Upper-arms", "Lower-arms", "Upper-legs", "Lower-legs"),
)

BUILTIN_TAXONOMIES = {t.name: t for t in (CIHP, PASCAL_PERSON_PART)}


def load_taxonomy(source: str | os.PathLike) -> Taxonomy:
    """Resolve a built-in taxonomy name or read a JSON taxonomy file."""
    if str(source) in BUILTIN_TAXONOMIES:
        return BUILTIN_TAXONOMIES[str(source)]
    path = Path(source)
    if not path.is_file():
        raise ValidationError(f"unknown taxonomy {str(source)!r}")
    doc = json.loads(path.read_text())
    try:
        return Taxonomy(doc.get("name", path.stem), tuple(doc["labels"]),
                        tuple(tuple(p) for p in doc.get("flip_pairs", ())))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed taxonomy file {path}: {exc}") from exc


# --------------------------------------------------------------------------
# validation


def _check_dims(shape):
    for side in shape:
        if side < 1:
            raise ValidationError(f"grid dimensions must be positive, got {tuple(shape)}")
        if side > MAX_SIDE:
            raise ValidationError(f"grid side {side} exceeds {MAX_SIDE}")


def as_label_grid(a, num_classes: int | None = None) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise ValidationError(f"label grid must be 2-D, got shape {arr.shape}")
    _check_dims(arr.shape)
    if arr.dtype.kind not in "ui":
        if arr.dtype.kind == "b":
            arr = arr.astype(np.uint8)
        else:
            raise ValidationError(f"label grid must hold integers, got {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() >= LABEL_SENTINEL):
        raise ValidationError("label values must lie in [0, 254]")
    if num_classes is not None and arr.size and arr.max() >= num_classes:
        raise ValidationError(f"label {int(arr.max())} out of range for K={num_classes}")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def as_prob_grid(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise ValidationError(f"prob grid must be 2-D, got shape {arr.shape}")
    _check_dims(arr.shape)
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("prob grid contains non-finite values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValidationError("prob grid values must lie in [0, 1]")
    return arr


def as_score_stack(a, num_classes: int | None = None) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 3:
        raise ValidationError(f"score stack must be (K, H, W), got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValidationError("score stack needs at least one channel")
    _check_dims(arr.shape[1:])
    if num_classes is not None and arr.shape[0] != num_classes:
        raise ValidationError(f"score stack has {arr.shape[0]} channels, expected {num_classes}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("score stack contains non-finite values")
    return arr


def as_edge_grid(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise ValidationError(f"edge grid must be 2-D, got shape {arr.shape}")
    _check_dims(arr.shape)
    if arr.dtype == np.bool_:
        return np.ascontiguousarray(arr)
    if arr.dtype.kind == "f":
        return np.ascontiguousarray(arr > 0.5)
    return np.ascontiguousarray(arr != 0)


def as_instance_grid(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise ValidationError(f"instance grid must be 2-D, got shape {arr.shape}")
    _check_dims(arr.shape)
    if arr.dtype.kind not in "ui":
        raise ValidationError(f"instance grid must hold integers, got {arr.dtype}")
    if arr.size and arr.min() < 0:
        raise ValidationError("instance ids must be non-negative")
    return np.ascontiguousarray(arr, dtype=np.int32)


def check_same_shape(*grids, what="grids"):
    shapes = {g.shape[-2:] for g in grids}
    if len(shapes) != 1:
        raise ValidationError(f"{what} must share dimensions, got {sorted(shapes)}")


# --------------------------------------------------------------------------
# codecs


def _pgm_header(height, width, maxval):
    return b"P5\n%d %d\n%d\n" % (width, height, maxval)


def _parse_pgm_header(data: bytes):
    if data[:2] != b"P5":
        raise FormatError("not a binary PGM (missing 'P5' magic)")
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        # whitespace and comments between header fields
        while pos < n and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("truncated or malformed PGM header")
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos:pos + 1].isspace():
        raise FormatError("PGM header must end with a single whitespace byte")
    width, height, maxval = fields
    return height, width, maxval, pos + 1


def _check_payload(data, offset, expected):
    got = len(data) - offset
    if got != expected:
        raise LengthError(f"payload is {got} bytes, header implies {expected}")


def sniff_kind(data: bytes) -> str:
    """Guess the raster kind from its leading bytes."""
    if data[:4] == b"FGR1":
        return "prob"
    if data[:4] == b"FGS1":
        return "stack"
    if data[:2] == b"P5":
        _, _, maxval, _ = _parse_pgm_header(data)
        if maxval == 255:
            return "label"
        if maxval == 65535:
            return "instance"
        raise FormatError(f"unsupported PGM maxval {maxval}")
    raise FormatError("unrecognised raster magic")


def decode_raster(data: bytes, kind: str | None = None) -> np.ndarray:
    """Decode raster bytes into a validated grid.

    ``kind`` is one of ``label``, ``prob``, ``instance``, ``stack``; when
    omitted it is sniffed from the magic bytes.
    """
    data = bytes(data)
    if kind is None:
        kind = sniff_kind(data)
    if kind not in KINDS:
        raise ValidationError(f"unknown raster kind {kind!r}")

    if kind in ("label", "instance"):
        height, width, maxval, offset = _parse_pgm_header(data)
        want = 255 if kind == "label" else 65535
        if maxval != want:
            raise FormatError(f"{kind} raster requires maxval {want}, got {maxval}")
        _check_dims((height, width))
        if kind == "label":
            _check_payload(data, offset, height * width)
            grid = np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(height, width)
            return as_label_grid(grid.copy())
        _check_payload(data, offset, 2 * height * width)
        grid = np.frombuffer(data, dtype=">u2", offset=offset).reshape(height, width)
        return grid.astype(np.int32)

    magic = b"FGR1" if kind == "prob" else b"FGS1"
    if data[:4] != magic:
        raise FormatError(f"expected {magic.decode()} magic")
    if kind == "prob":
        if len(data) < 12:
            raise FormatError("truncated FGR1 header")
        height, width = struct.unpack_from("<II", data, 4)
        _check_dims((height, width))
        _check_payload(data, 12, 4 * height * width)
        grid = np.frombuffer(data, dtype="<f4", offset=12).reshape(height, width)
        return as_prob_grid(grid.astype(np.float32))
    if len(data) < 16:
        raise FormatError("truncated FGS1 header")
    height, width, channels = struct.unpack_from("<III", data, 4)
    _check_dims((height, width))
    if channels < 1:
        raise FormatError("FGS1 channel count must be positive")
    _check_payload(data, 16, 4 * channels * height * width)
    stack = np.frombuffer(data, dtype="<f4", offset=16).reshape(channels, height, width)
    return as_score_stack(stack.astype(np.float32))


def _infer_kind(grid: np.ndarray) -> str:
    if grid.ndim == 3:
        return "stack"
    if grid.dtype.kind == "f":
        return "prob"
    if grid.dtype == np.uint8 or grid.dtype == np.bool_:
        return "label"
    return "instance"


def encode_raster(grid, kind: str | None = None) -> bytes:
    """Encode a grid to its canonical bytes; inverse of :func:`decode_raster`."""
    arr = np.asarray(grid)
    if kind is None:
        kind = _infer_kind(arr)
    if kind == "label":
        arr = as_label_grid(arr)
        return _pgm_header(*arr.shape, 255) + arr.tobytes()
    if kind == "instance":
        arr = as_instance_grid(arr)
        if arr.size and arr.max() > MAX_INSTANCE_ID:
            raise CapacityError(f"instance id {int(arr.max())} exceeds {MAX_INSTANCE_ID}")
        return _pgm_header(*arr.shape, 65535) + arr.astype(">u2").tobytes()
    if kind == "prob":
        arr = as_prob_grid(arr)
        return b"FGR1" + struct.pack("<II", *arr.shape) + arr.astype("<f4").tobytes()
    if kind == "stack":
        arr = as_score_stack(arr)
        k, h, w = arr.shape
        return b"FGS1" + struct.pack("<III", h, w, k) + arr.astype("<f4").tobytes()
    raise ValidationError(f"unknown raster kind {kind!r}")


def atomic_write_bytes(path, data: bytes):
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_raster(path, kind: str | None = None) -> np.ndarray:
    return decode_raster(Path(path).read_bytes(), kind)


def write_raster(path, grid, kind: str | None = None):
    atomic_write_bytes(path, encode_raster(grid, kind))


# --------------------------------------------------------------------------


def argmax_labels(stack) -> np.ndarray:
    """Per-pixel index of the highest-scoring channel; ties go to the lowest index."""
    stack = as_score_stack(stack)
    if stack.shape[0] >= LABEL_SENTINEL:
        raise ValidationError("too many channels for an 8-bit label grid")
    # np.argmax returns the first maximal index, which is the tie rule we want
    return np.argmax(stack, axis=0).astype(np.uint8)
