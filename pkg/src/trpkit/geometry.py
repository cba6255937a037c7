"""Box and mask primitives.

Boxes are corner-form ``(x0, y0, x1, y1)`` in normalized ``[0, 1]``
coordinates.  Masks are boolean ``(H, W)`` grids.  RLE follows the
uncompressed COCO layout: column-major (Fortran) order, runs alternating
starting with a (possibly empty) run of zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadRunLength, DimensionMismatch

__all__ = [
    "Box",
    "BinaryMask",
    "Rle",
    "box_l1",
    "box_iou",
    "box_giou",
    "mask_dice",
    "mask_iou",
    "mask_intersection_union",
    "rle_encode",
    "rle_decode",
]


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 <= self.x1 <= 1.0 and 0.0 <= self.y0 <= self.y1 <= 1.0):
            raise ValueError(f"invalid normalized box {self.as_list()}")

    @classmethod
    def from_seq(cls, xs: Sequence[float]) -> "Box":
        if len(xs) != 4:
            raise ValueError(f"a box needs 4 coordinates, got {len(xs)}")
        return cls(*(float(v) for v in xs))

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    def cxcywh(self) -> tuple[float, float, float, float]:
        return ((self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2,
                self.x1 - self.x0, self.y1 - self.y0)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def box_l1(a: Box, b: Box) -> float:
    """L1 distance between the boxes in center-size form."""
    return sum(abs(p - q) for p, q in zip(a.cxcywh(), b.cxcywh()))


def _intersection(a: Box, b: Box) -> float:
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    return max(w, 0.0) * max(h, 0.0)


def box_iou(a: Box, b: Box) -> float:
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 1.0 if a == b else 0.0
    return inter / union


def box_giou(a: Box, b: Box) -> float:
    """Generalized IoU.

    Two coincident zero-area boxes score 1.  Distinct zero-area boxes have an
    empty union and score -1, the floor of the range.
    """
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    enclose = (max(a.x1, b.x1) - min(a.x0, b.x0)) * (max(a.y1, b.y1) - min(a.y0, b.y0))
    if union <= 0.0:
        return 1.0 if a == b else -1.0
    iou = inter / union
    # enclose >= union > 0 exactly; clamp the rounding that can make it a hair smaller
    return iou - max(enclose - union, 0.0) / enclose


@dataclass(frozen=True, eq=False)
class BinaryMask:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2-D grid, got shape {arr.shape}")
        object.__setattr__(self, "data", arr.astype(bool))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


def _check_same_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.data.shape} vs {b.data.shape}")


def mask_intersection_union(a: BinaryMask, b: BinaryMask) -> tuple[int, int]:
    _check_same_dims(a, b)
    inter = int(np.logical_and(a.data, b.data).sum())
    union = int(np.logical_or(a.data, b.data).sum())
    return inter, union


def mask_dice(a: BinaryMask, b: BinaryMask) -> float:
    _check_same_dims(a, b)
    total = a.area + b.area
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a.data, b.data).sum()) / total


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    inter, union = mask_intersection_union(a, b)
    if union == 0:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class Rle:
    size: tuple[int, int]
    counts: tuple[int, ...]

    def to_json(self) -> dict:
        return {"size": list(self.size), "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "Rle":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise BadRunLength(f"not an RLE object: {obj!r}") from exc
        if not isinstance(counts, list) or not all(isinstance(c, int) for c in counts):
            raise BadRunLength("RLE counts must be a list of integers")
        return cls((int(h), int(w)), tuple(counts))


def rle_encode(m: BinaryMask) -> Rle:
    flat = m.data.ravel(order="F").astype(np.int8)
    # run boundaries: positions where the value changes, plus the ends
    change = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0] == 1:
        counts.insert(0, 0)
    return Rle((m.height, m.width), tuple(int(c) for c in counts))


def rle_decode(r: Rle) -> BinaryMask:
    h, w = r.size
    if h < 1 or w < 1:
        raise BadRunLength(f"invalid RLE size {r.size}")
    if any(c < 0 for c in r.counts):
        raise BadRunLength("negative run length")
    if sum(r.counts) != h * w:
        raise BadRunLength(f"run lengths sum to {sum(r.counts)}, expected {h * w}")
    values = np.arange(len(r.counts)) % 2
    flat = np.repeat(values.astype(bool), r.counts)
    return BinaryMask(flat.reshape((h, w), order="F"))
