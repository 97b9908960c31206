"""Sparse motion estimation: min-eigenvalue corner selection and iterative
pyramidal alignment of small windows between two frames.

Corner detection runs on the cropped region only, never on the full frame,
so its cost scales with the region and not with the image.  Tracking solves
the 2x2 normal equations per point and level, refining coarse-to-fine; all
points are advanced together in vectorized batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import BBox
from .imaging import GrayImage, ImagePyramid, crop, sample_bilinear_many, scharr_gradients

__all__ = [
    "Corner",
    "FlowParams",
    "FlowPoint",
    "TrackStatus",
    "lk_track",
    "shi_tomasi",
]


class TrackStatus(str, Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    OUT_OF_BOUNDS = "out_of_bounds"


@dataclass(frozen=True)
class Corner:
    """Feature location (full-image pixel coordinates) with its response.

    response is the per-pixel minimum eigenvalue of the local structure
    tensor; it is strictly positive for every emitted corner.
    """

    x: float
    y: float
    response: float


@dataclass(frozen=True)
class FlowPoint:
    """Result of tracking one point from the previous to the next frame."""

    start: tuple[float, float]
    end: tuple[float, float]
    status: TrackStatus
    residual: float

    @property
    def offset(self) -> tuple[float, float]:
        return (self.end[0] - self.start[0], self.end[1] - self.start[1])


@dataclass(frozen=True)
class FlowParams:
    """Knobs for corner selection and window tracking."""

    window_radius: int = 10
    pyramid_levels: int = 3
    max_iterations: int = 30
    epsilon: float = 0.01
    min_eigen_threshold: float = 1e-4
    max_corners: int = 20
    quality_level: float = 0.05
    min_distance: float = 3.0
    # Structure-tensor summation radius for corner scoring.  Radius 1 keeps
    # the response peak on the corner pixel itself; larger windows drift the
    # peak into the object interior.
    corner_window_radius: int = 1

    def __post_init__(self) -> None:
        if self.window_radius < 1:
            raise ValueError(f"window_radius must be >= 1, got {self.window_radius}")
        if self.pyramid_levels < 1:
            raise ValueError(f"pyramid_levels must be >= 1, got {self.pyramid_levels}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.min_eigen_threshold <= 0:
            raise ValueError(f"min_eigen_threshold must be positive, got {self.min_eigen_threshold}")
        if self.max_corners < 1:
            raise ValueError(f"max_corners must be >= 1, got {self.max_corners}")
        if not 0 < self.quality_level < 1:
            raise ValueError(f"quality_level must lie in (0, 1), got {self.quality_level}")
        if self.min_distance < 0:
            raise ValueError(f"min_distance must be non-negative, got {self.min_distance}")
        if self.corner_window_radius < 1:
            raise ValueError(f"corner_window_radius must be >= 1, got {self.corner_window_radius}")


def _window_sums(a: np.ndarray, radius: int) -> np.ndarray:
    """Exact sums over (2*radius+1)^2 windows fully inside the array.

    Output has shape (h - 2*radius, w - 2*radius), entry (i, j) holding the
    sum of the window centered at (i + radius, j + radius).
    """
    side = 2 * radius + 1
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    np.cumsum(a, axis=0, out=c[1:, 1:])
    np.cumsum(c[1:, 1:], axis=1, out=c[1:, 1:])
    return c[side:, side:] - c[:-side, side:] - c[side:, :-side] + c[:-side, :-side]


def shi_tomasi(
    img: GrayImage,
    region: BBox,
    max_corners: int = 20,
    quality_level: float = 0.05,
    min_distance: float = 3.0,
    window_radius: int = 1,
) -> list[Corner]:
    """Strongest min-eigenvalue corners inside region, in full-image coordinates.

    Gradients and tensor sums are computed on the cropped region only;
    responses are scored per pixel (normalized by the window size), pixels
    below quality_level * max response are discarded, survivors are suppressed
    within min_distance of a stronger corner, and the best max_corners are
    returned sorted by descending response.
    """
    if max_corners < 1:
        raise ValueError(f"max_corners must be >= 1, got {max_corners}")
    if not 0 < quality_level < 1:
        raise ValueError(f"quality_level must lie in (0, 1), got {quality_level}")
    patch, (ox, oy) = crop(img, region)
    side = 2 * window_radius + 1
    if patch.width < max(side, 3) or patch.height < max(side, 3):
        raise ValueError(
            f"region too small for corner detection: {patch.width}x{patch.height} "
            f"crop vs {side}x{side} tensor window"
        )
    ix, iy = scharr_gradients(patch)
    gxx = _window_sums(ix * ix, window_radius)
    gxy = _window_sums(ix * iy, window_radius)
    gyy = _window_sums(iy * iy, window_radius)
    trace = gxx + gyy
    dif = gxx - gyy
    lam = 0.5 * (trace - np.sqrt(dif * dif + 4.0 * gxy * gxy)) / (side * side)

    peak = float(lam.max())
    if peak <= 0.0:
        return []
    candidates = np.flatnonzero(lam >= quality_level * peak)
    if candidates.size == 0:
        return []
    rows, cols = np.unravel_index(candidates, lam.shape)
    values = lam[rows, cols]
    # Descending response; ties resolved by raster order for determinism.
    order = np.lexsort((cols, rows, -values))
    rows, cols, values = rows[order], cols[order], values[order]

    kept_x: list[float] = []
    kept_y: list[float] = []
    corners: list[Corner] = []
    min_d2 = min_distance * min_distance
    for r, c, v in zip(rows, cols, values):
        if v <= 0.0:
            break
        x = float(ox + c + window_radius)
        y = float(oy + r + window_radius)
        ok = True
        for px, py in zip(kept_x, kept_y):
            dx = x - px
            dy = y - py
            if dx * dx + dy * dy < min_d2:
                ok = False
                break
        if not ok:
            continue
        kept_x.append(x)
        kept_y.append(y)
        corners.append(Corner(x=x, y=y, response=float(v)))
        if len(corners) >= max_corners:
            break
    return corners


def _fits(px: np.ndarray, py: np.ndarray, r: int, w: int, h: int) -> np.ndarray:
    return (px - r >= 0.0) & (px + r <= w - 1.0) & (py - r >= 0.0) & (py + r <= h - 1.0)


def lk_track(
    prev: ImagePyramid,
    nxt: ImagePyramid,
    points: "np.ndarray | list[tuple[float, float]]",
    params: FlowParams = FlowParams(),
) -> list[FlowPoint]:
    """Track points from prev to nxt, coarse-to-fine.

    Both pyramids must share level-0 dimensions and level count.  Per level
    the 2x2 structure tensor G of the previous frame's window is fixed and the
    offset is refined by d <- d + G^-1 b, where b accumulates the intensity
    difference against the next frame under the current offset; the doubled
    offset seeds the next finer level.  A point diverges when its (per-pixel
    normalized) minimum eigenvalue falls below min_eigen_threshold, and goes
    out of bounds when its window leaves the finest image.
    """
    if prev.levels[0].pixels.shape != nxt.levels[0].pixels.shape:
        raise ValueError(
            f"pyramids disagree on image size: {prev.levels[0].pixels.shape} vs {nxt.levels[0].pixels.shape}"
        )
    if len(prev.levels) != len(nxt.levels):
        raise ValueError(f"pyramids disagree on level count: {len(prev.levels)} vs {len(nxt.levels)}")

    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        return []

    r = params.window_radius
    side = 2 * r + 1
    span = np.arange(-r, r + 1, dtype=np.float64)
    off_x = np.tile(span, side)
    off_y = np.repeat(span, side)

    ACTIVE, DIVERGED, OOB = 0, 1, 2
    state = np.full(n, ACTIVE, dtype=np.int8)
    g = np.zeros((n, 2), dtype=np.float64)

    n_levels = len(prev.levels)
    for lvl in range(n_levels - 1, -1, -1):
        pimg = prev.levels[lvl].pixels
        nimg = nxt.levels[lvl].pixels
        h, w = pimg.shape
        scale = float(2**lvl)
        p = pts / scale

        active = state == ACTIVE
        if lvl == 0:
            # Only the finest level declares out-of-bounds; coarse levels
            # sample clamped borders like every other raster operation.
            fits = _fits(p[:, 0], p[:, 1], r, w, h) & active
            state[active & ~fits] = OOB
            sel = np.flatnonzero(fits)
        else:
            sel = np.flatnonzero(active)
        if sel.size:
            gx_img, gy_img = scharr_gradients(prev.levels[lvl])
            base_x = p[sel, 0][:, None] + off_x[None, :]
            base_y = p[sel, 1][:, None] + off_y[None, :]
            tmpl = sample_bilinear_many(pimg, base_x, base_y)
            grad_x = sample_bilinear_many(gx_img, base_x, base_y)
            grad_y = sample_bilinear_many(gy_img, base_x, base_y)
            gxx = np.einsum("ij,ij->i", grad_x, grad_x)
            gxy = np.einsum("ij,ij->i", grad_x, grad_y)
            gyy = np.einsum("ij,ij->i", grad_y, grad_y)
            min_eig = 0.5 * ((gxx + gyy) - np.hypot(gxx - gyy, 2.0 * gxy)) / (side * side)
            weak = min_eig < params.min_eigen_threshold
            if lvl == 0:
                state[sel[weak]] = DIVERGED
            # a weak window at a coarse level skips refinement there; the
            # finer levels decide whether the point is trackable
            keep = ~weak
            sel = sel[keep]
            if sel.size:
                base_x, base_y = base_x[keep], base_y[keep]
                tmpl, grad_x, grad_y = tmpl[keep], grad_x[keep], grad_y[keep]
                a11 = gxx[keep] + 1e-8
                a12 = gxy[keep]
                a22 = gyy[keep] + 1e-8
                det = a11 * a22 - a12 * a12

                m = sel.size
                d = np.zeros((m, 2), dtype=np.float64)
                guess = g[sel]
                alive = np.ones(m, dtype=bool)
                went_out = np.zeros(m, dtype=bool)
                for _ in range(params.max_iterations):
                    act = np.flatnonzero(alive)
                    if act.size == 0:
                        break
                    shift = guess[act] + d[act]
                    qx = base_x[act] + shift[:, 0:1]
                    qy = base_y[act] + shift[:, 1:2]
                    if lvl == 0:
                        out = (
                            (qx[:, 0] < 0.0)
                            | (qy[:, 0] < 0.0)
                            | (qx[:, -1] > w - 1.0)
                            | (qy[:, -1] > h - 1.0)
                        )
                    else:
                        # coarse levels tolerate window overhang (clamped
                        # sampling) but stop once the center itself leaves
                        mid = (side * side) // 2
                        out = (
                            (qx[:, mid] < 0.0)
                            | (qy[:, mid] < 0.0)
                            | (qx[:, mid] > w - 1.0)
                            | (qy[:, mid] > h - 1.0)
                        )
                    if out.any():
                        if lvl == 0:
                            went_out[act[out]] = True
                        alive[act[out]] = False
                        act = act[~out]
                        if act.size == 0:
                            break
                        qx, qy = qx[~out], qy[~out]
                    moved = sample_bilinear_many(nimg, qx, qy)
                    diff = tmpl[act] - moved
                    bx = np.einsum("ij,ij->i", diff, grad_x[act])
                    by = np.einsum("ij,ij->i", diff, grad_y[act])
                    ux = (a22[act] * bx - a12[act] * by) / det[act]
                    uy = (a11[act] * by - a12[act] * bx) / det[act]
                    bad = ~(np.isfinite(ux) & np.isfinite(uy))
                    if bad.any():
                        state[sel[act[bad]]] = DIVERGED
                        alive[act[bad]] = False
                        act, ux, uy = act[~bad], ux[~bad], uy[~bad]
                        if act.size == 0:
                            break
                    d[act, 0] += ux
                    d[act, 1] += uy
                    settled = np.hypot(ux, uy) < params.epsilon
                    alive[act[settled]] = False

                if lvl == 0:
                    moved_out = went_out & (state[sel] == ACTIVE)
                    state[sel[moved_out]] = OOB
                    d[moved_out] = 0.0
                g[sel] = guess + d
        if lvl > 0:
            g *= 2.0

    results: list[FlowPoint] = []
    finest = prev.levels[0].pixels
    nfinest = nxt.levels[0].pixels
    h0, w0 = finest.shape
    for i in range(n):
        start = (float(pts[i, 0]), float(pts[i, 1]))
        if state[i] == ACTIVE:
            end = (start[0] + float(g[i, 0]), start[1] + float(g[i, 1]))
            wx = pts[i, 0] + off_x
            wy = pts[i, 1] + off_y
            a = sample_bilinear_many(finest, wx, wy)
            b = sample_bilinear_many(nfinest, wx + g[i, 0], wy + g[i, 1])
            residual = float(np.abs(a - b).mean())
            results.append(FlowPoint(start=start, end=end, status=TrackStatus.CONVERGED, residual=residual))
        else:
            status = TrackStatus.DIVERGED if state[i] == DIVERGED else TrackStatus.OUT_OF_BOUNDS
            results.append(FlowPoint(start=start, end=start, status=status, residual=math.nan))
    return results
