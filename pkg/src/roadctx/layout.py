"""Scene layout prior: where obstacles tend to appear in the image.

The prior is a fixed-resolution grid built offline from ground-truth obstacle
centers and binary road masks, then sampled online to rescore detections.
Construction has three stages: a kernel-density heat map of normalized GT
centers, an average road contour that defines the road's support on the grid,
and a road-shaped distribution that spreads the heat map's row/column mass
across that support.  The obstacle and road grids are summed cellwise and
min-max normalized, so the final grid always peaks at exactly 1.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .core import BBox, Detection
from .imaging import GrayImage, sample_bilinear_many

__all__ = [
    "LayoutGrid",
    "LayoutParams",
    "RoadContour",
    "average_road_contour",
    "build_obstacle_distribution",
    "build_road_distribution",
    "combine_layout",
    "layout_from_json",
    "layout_score",
    "layout_to_json",
    "layout_value",
    "rescore",
]

# Number of rows at which road contours are sampled; matches the default
# grid's vertical extent at every other row.
CONTOUR_ROWS = 64

# Fraction of masks that must mark a row as road for it to survive averaging.
MIN_ROW_PRESENCE = 0.2


@dataclass(frozen=True)
class LayoutParams:
    """Construction and scoring knobs for the layout prior.

    layout_bias defaults to -layout_alpha * e**high_cut so the piecewise score
    is continuous at the high cut; override both together if a jump is
    acceptable.
    """

    theta: float = 0.5
    layout_alpha: float = 0.2
    layout_bias: float = -0.2 * math.exp(0.6)
    low_cut: float = 0.15
    high_cut: float = 0.6
    kde_sigma: float = 0.02
    grid_w: int = 256
    grid_h: int = 128

    def __post_init__(self) -> None:
        if self.theta < 0:
            raise ValueError(f"theta must be non-negative, got {self.theta}")
        if not 0 <= self.low_cut < self.high_cut <= 1:
            raise ValueError(f"cuts must satisfy 0 <= low < high <= 1, got {self.low_cut}, {self.high_cut}")
        if self.kde_sigma <= 0:
            raise ValueError(f"kde_sigma must be positive, got {self.kde_sigma}")
        if self.grid_w < 2 or self.grid_h < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.grid_w}x{self.grid_h}")


@dataclass(frozen=True, eq=False)
class LayoutGrid:
    """Normalized prior over the unit square, row-major, values in [0, 1]."""

    values: np.ndarray  # (grid_h, grid_w)

    def __post_init__(self) -> None:
        a = np.asarray(self.values, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] < 2:
            raise ValueError(f"expected a (grid_h, grid_w) array of at least 2x2, got shape {a.shape}")
        if float(a.min()) < 0.0 or float(a.max()) > 1.0 + 1e-12:
            raise ValueError("grid values must lie in [0, 1]")
        a = np.ascontiguousarray(np.minimum(a, 1.0))
        a.flags.writeable = False
        object.__setattr__(self, "values", a)

    @property
    def grid_w(self) -> int:
        return self.values.shape[1]

    @property
    def grid_h(self) -> int:
        return self.values.shape[0]

    def sample(self, u: float, v: float) -> float:
        """Bilinear sample at normalized coordinates; (0, 0) is the top-left
        corner of the image, (1, 1) the bottom-right.  Coordinates beyond the
        outermost cell centers clamp to them."""
        gx = u * self.grid_w - 0.5
        gy = v * self.grid_h - 0.5
        return float(sample_bilinear_many(self.values, np.asarray(gx), np.asarray(gy)))


@dataclass(frozen=True)
class RoadContour:
    """Average road extent per sampled row, in normalized coordinates.

    rows_v is sorted ascending and contiguous (one road region); left/right
    are the per-row horizontal road edges with left <= right.
    """

    rows_v: tuple[float, ...]
    left: tuple[float, ...]
    right: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.rows_v:
            raise ValueError("contour has no rows")
        if len(self.rows_v) != len(self.left) or len(self.rows_v) != len(self.right):
            raise ValueError("contour fields disagree in length")
        for l, r in zip(self.left, self.right):
            if l > r:
                raise ValueError(f"contour row has left {l} > right {r}")

    def support(self, grid_w: int, grid_h: int) -> np.ndarray:
        """Boolean (grid_h, grid_w) mask of cells inside the road."""
        rows_v = np.asarray(self.rows_v)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        v = (np.arange(grid_h, dtype=np.float64) + 0.5) / grid_h
        inside_rows = (v >= rows_v[0]) & (v <= rows_v[-1])
        l_at = np.interp(v, rows_v, left)
        r_at = np.interp(v, rows_v, right)
        u = (np.arange(grid_w, dtype=np.float64) + 0.5) / grid_w
        mask = (u[None, :] >= l_at[:, None]) & (u[None, :] <= r_at[:, None])
        mask &= inside_rows[:, None]
        return mask


def _min_max(a: np.ndarray) -> np.ndarray:
    lo = float(a.min())
    hi = float(a.max())
    if hi == lo:
        raise ValueError("cannot normalize a constant grid")
    return (a - lo) / (hi - lo)


def build_obstacle_distribution(
    boxes: Iterable[tuple[BBox, tuple[float, float]]],
    params: LayoutParams = LayoutParams(),
) -> LayoutGrid:
    """Kernel-density heat map of ground-truth centers.

    boxes pairs each GT box with the (width, height) of its source image, so
    centers land on the grid in normalized coordinates regardless of the
    corpus's image resolutions.  Each center deposits an isotropic Gaussian
    of bandwidth kde_sigma * grid diagonal (truncated at four bandwidths);
    the sum is min-max normalized.  Deposits are accumulated in a canonical
    order, making the result independent of input ordering.
    """
    centers: list[tuple[float, float]] = []
    for box, (img_w, img_h) in boxes:
        if img_w <= 0 or img_h <= 0:
            raise ValueError(f"image dimensions must be positive, got {img_w}x{img_h}")
        centers.append((box.cx / img_w, box.cy / img_h))
    if not centers:
        raise ValueError("no ground-truth boxes to build an obstacle distribution from")
    centers.sort()

    gw, gh = params.grid_w, params.grid_h
    sigma = params.kde_sigma * math.hypot(gw, gh)
    radius = math.ceil(4.0 * sigma)
    grid = np.zeros((gh, gw), dtype=np.float64)
    for u, v in centers:
        gx = u * gw - 0.5
        gy = v * gh - 0.5
        x0 = max(0, math.ceil(gx - radius))
        x1 = min(gw - 1, math.floor(gx + radius))
        y0 = max(0, math.ceil(gy - radius))
        y1 = min(gh - 1, math.floor(gy + radius))
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64) - gx
        ys = np.arange(y0, y1 + 1, dtype=np.float64) - gy
        patch = np.exp(-(xs[None, :] ** 2 + ys[:, None] ** 2) / (2.0 * sigma * sigma))
        grid[y0 : y1 + 1, x0 : x1 + 1] += patch
    return LayoutGrid(_min_max(grid))


def average_road_contour(masks: Iterable[GrayImage]) -> RoadContour:
    """Mean road extent per sampled row across binary road masks.

    A pixel is road when its intensity exceeds 0.5.  Edges are measured as
    pixel boundaries (leftmost road pixel's left edge, rightmost pixel's
    right edge) in normalized coordinates, so masks of differing resolutions
    average cleanly.  Rows marked road in fewer than MIN_ROW_PRESENCE of the
    masks are dropped; if that leaves disjoint row runs, the longest
    (bottom-most on ties) survives, keeping the contour a single region.
    """
    sums_l = np.zeros(CONTOUR_ROWS)
    sums_r = np.zeros(CONTOUR_ROWS)
    counts = np.zeros(CONTOUR_ROWS, dtype=np.int64)
    n_masks = 0
    rows_v = (np.arange(CONTOUR_ROWS, dtype=np.float64) + 0.5) / CONTOUR_ROWS
    for mask in masks:
        road = mask.pixels > 0.5
        if not road.any():
            warnings.warn("road mask contains no road pixels, skipping", stacklevel=2)
            continue
        n_masks += 1
        h, w = road.shape
        ys = np.minimum((rows_v * h).astype(np.intp), h - 1)
        for i, y in enumerate(ys):
            cols = np.flatnonzero(road[y])
            if cols.size == 0:
                continue
            sums_l[i] += cols[0] / w
            sums_r[i] += (cols[-1] + 1) / w
            counts[i] += 1
    if n_masks == 0:
        raise ValueError("no usable road masks")

    present = counts >= max(1, math.ceil(MIN_ROW_PRESENCE * n_masks))
    if not present.any():
        raise ValueError("no contour row is present in enough masks")
    # Longest contiguous run of surviving rows; prefer the lower (larger v) run
    # on ties, roads sit in the lower image half.
    best_start = best_stop = -1
    start = None
    for i, p in enumerate(np.append(present, False)):
        if p and start is None:
            start = i
        elif not p and start is not None:
            if best_start < 0 or (i - start) >= (best_stop - best_start):
                best_start, best_stop = start, i
            start = None
    sel = slice(best_start, best_stop)
    return RoadContour(
        rows_v=tuple(rows_v[sel]),
        left=tuple(sums_l[sel] / counts[sel]),
        right=tuple(sums_r[sel] / counts[sel]),
    )


def build_road_distribution(contour: RoadContour, obstacle: LayoutGrid) -> LayoutGrid:
    """Spread the obstacle grid's mass over the road support.

    Inside the support each cell gets the mean of the obstacle grid's row and
    column marginals (each min-max normalized over the support; a constant
    marginal counts as uniformly maximal), outside it is zero.  The result is
    min-max normalized.
    """
    if float(obstacle.values.max()) == 0.0:
        raise ValueError("obstacle grid is all-zero")
    support = contour.support(obstacle.grid_w, obstacle.grid_h)
    if not support.any():
        raise ValueError("road support is empty at this grid resolution")

    def normalized_marginal(sums: np.ndarray, inside: np.ndarray) -> np.ndarray:
        out = np.zeros_like(sums)
        vals = sums[inside]
        lo, hi = float(vals.min()), float(vals.max())
        out[inside] = 1.0 if hi == lo else (vals - lo) / (hi - lo)
        return out

    row_m = normalized_marginal(obstacle.values.sum(axis=1), support.any(axis=1))
    col_m = normalized_marginal(obstacle.values.sum(axis=0), support.any(axis=0))
    vals = 0.5 * (row_m[:, None] + col_m[None, :]) * support
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        raise ValueError("road distribution is degenerate")
    return LayoutGrid((vals - lo) / (hi - lo))


def combine_layout(obstacle: LayoutGrid, road: LayoutGrid) -> LayoutGrid:
    """Cellwise sum of the two grids, min-max normalized to peak at 1."""
    if obstacle.values.shape != road.values.shape:
        raise ValueError(
            f"grid resolutions differ: {obstacle.values.shape} vs {road.values.shape}"
        )
    return LayoutGrid(_min_max(obstacle.values + road.values))


def layout_value(layout: LayoutGrid, d: Detection, image_dims: tuple[float, float]) -> float:
    """Layout prior at the detection's center, bilinearly interpolated."""
    img_w, img_h = image_dims
    if img_w <= 0 or img_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {img_w}x{img_h}")
    return layout.sample(d.bbox.cx / img_w, d.bbox.cy / img_h)


def layout_score(m: float, params: LayoutParams = LayoutParams()) -> float:
    """Piecewise score of a layout value: penalize off-road detections hard,
    leave the broad middle band alone, boost confidently on-road ones."""
    if m < params.low_cut:
        return -1.0
    if m < params.high_cut:
        return 0.0
    return params.layout_alpha * math.exp(m) + params.layout_bias


def rescore(
    d: Detection,
    layout: LayoutGrid,
    params: LayoutParams,
    image_dims: tuple[float, float],
) -> Detection:
    """Fuse the detector score with the layout score: score + theta * layout
    score, clamped to [0, 1].  Box, class and source are untouched."""
    s = layout_score(layout_value(layout, d, image_dims), params)
    fused = min(1.0, max(0.0, d.score + params.theta * s))
    return replace(d, score=fused)


# ---------------------------------------------------------------------------
# serialization


def layout_to_json(grid: LayoutGrid, params: LayoutParams, meta: Mapping[str, object]) -> str:
    """Serialize grid + params + build metadata.  float64 values are written
    with repr precision (17 significant digits), so loading round-trips
    bit-exactly and rebuilding from identical inputs is byte-identical."""
    doc = {
        "grid_w": grid.grid_w,
        "grid_h": grid.grid_h,
        "values": [float(v) for v in grid.values.ravel()],
        "params": asdict(params),
        "meta": dict(meta),
    }
    return json.dumps(doc, indent=1)


def layout_from_json(text: str) -> tuple[LayoutGrid, LayoutParams, dict]:
    doc = json.loads(text)
    try:
        gw = int(doc["grid_w"])
        gh = int(doc["grid_h"])
        values = np.asarray(doc["values"], dtype=np.float64)
        params = LayoutParams(**doc["params"])
        meta = dict(doc.get("meta", {}))
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed layout document: {e}") from None
    if values.size != gw * gh:
        raise ValueError(f"layout document holds {values.size} values for a {gw}x{gh} grid")
    return LayoutGrid(values.reshape(gh, gw)), params, meta
