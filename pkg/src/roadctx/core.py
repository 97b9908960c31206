"""Domain types shared across the pipeline, plus bounding-box geometry.

Boxes are axis-aligned and kept in center format (cx, cy, w, h) throughout;
corner format only ever appears at the serialization boundary.  All
coordinates are in pixels and may be sub-pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

__all__ = [
    "BBox",
    "Detection",
    "FrameRef",
    "Source",
    "clip_box",
    "contains_center",
    "iou",
    "search_area",
]


class Source(str, Enum):
    """Provenance of a detection record."""

    DETECTOR = "detector"
    FLOW_RECOVERED = "flow_recovered"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in center format.  Width and height must be positive."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        # Coerce so serialized boxes repr the same no matter who built them.
        for name in ("cx", "cy", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w} h={self.h}")

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def aspect_ratio(self) -> float:
        """Width over height."""
        return self.w / self.h

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)


@dataclass(frozen=True)
class Detection:
    """One detection in one frame.

    frame_id is a sequence-relative key of the form "<sequence>/<index>".
    """

    frame_id: str
    bbox: BBox
    class_label: str
    score: float
    source: Source = Source.DETECTOR

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class FrameRef:
    """Position of one frame inside a sequence, with the path of its image."""

    sequence_id: str
    index: int
    image_path: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"frame index must be non-negative, got {self.index}")

    @property
    def frame_id(self) -> str:
        return f"{self.sequence_id}/{self.index:06d}"


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0 when they do not overlap."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # Corner differences can overshoot w*h by a ulp, so cap at exactly 1.
    return min(1.0, inter / (a.area + b.area - inter))


def search_area(d: Detection, area_alpha: float, area_beta: float, area_tau: float) -> BBox:
    """Region around a detection in which its next-frame counterpart is sought.

    The box keeps the detection's center and expands each side: width to
    area_alpha * w + area_tau, height to area_beta * h + area_tau.  The
    expansion factors must exceed 1 and the margin must be positive, so the
    search area always strictly contains the detection box.
    """
    if area_alpha <= 1 or area_beta <= 1:
        raise ValueError(f"expansion factors must exceed 1, got alpha={area_alpha} beta={area_beta}")
    if area_tau <= 0:
        raise ValueError(f"margin must be positive, got tau={area_tau}")
    b = d.bbox
    return BBox(b.cx, b.cy, area_alpha * b.w + area_tau, area_beta * b.h + area_tau)


def contains_center(area: BBox, d: Detection) -> bool:
    """True when the detection's center lies inside the area, edges inclusive."""
    b = d.bbox
    return area.x1 <= b.cx <= area.x2 and area.y1 <= b.cy <= area.y2


def clip_box(box: BBox, width: float, height: float) -> BBox | None:
    """Intersect a box with image bounds [0, width] x [0, height].

    Returns None when nothing of the box remains inside the image.  Never
    enlarges the box.
    """
    x1 = max(box.x1, 0.0)
    y1 = max(box.y1, 0.0)
    x2 = min(box.x2, float(width))
    y2 = min(box.y2, float(height))
    if x2 <= x1 or y2 <= y1:
        return None
    return BBox((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)
