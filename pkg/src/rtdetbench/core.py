"""Geometric and identity records shared by every module.

Boxes are stored as ``(x, y, w, h)`` with ``(x, y)`` the top-left corner, in
continuous pixel coordinates. Corner form is only used internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .errors import InvalidGeometry, SchemaViolation, ScoreOutOfRange

ImageId = Union[int, str]


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidGeometry(f"non-finite box coordinates {vals}")
        if self.w < 0 or self.h < 0:
            raise InvalidGeometry(f"negative box extent w={self.w} h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    def corners(self) -> tuple[float, float, float, float]:
        return self.x, self.y, self.x + self.w, self.y + self.h

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        if len(values) != 4:
            raise InvalidGeometry(f"bbox needs 4 values, got {len(values)}")
        return cls(*(float(v) for v in values))

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class ClassId:
    id: int
    name: str

    def __post_init__(self) -> None:
        if self.id < 0:
            raise SchemaViolation(f"class id must be non-negative, got {self.id}")
        if not self.name:
            raise SchemaViolation(f"class {self.id} has an empty name")


@dataclass(frozen=True)
class Detection:
    """A scored box. ``class_id`` holds the integer id of a :class:`ClassId`."""

    image_id: ImageId
    class_id: int
    box: BoundingBox
    score: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ScoreOutOfRange(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruthObject:
    image_id: ImageId
    class_id: int
    box: BoundingBox
    ignore: bool = False


@dataclass(frozen=True)
class ImageInfo:
    image_id: ImageId
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise InvalidGeometry(
                f"image {self.image_id!r} has non-positive size {self.width}x{self.height}"
            )


def box_area(a: BoundingBox) -> float:
    return a.w * a.h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0.0 when the union is empty."""
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        inter = 0.0
    else:
        inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    # clamp guards the last-ulp overshoot when one box contains the other
    return min(1.0, max(0.0, inter / union))
