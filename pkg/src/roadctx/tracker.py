"""Recovery of missed detections by tracking them into the next frame.

For every confident detection of frame t whose object has no same-class
counterpart near it in frame t+1, the corresponding image region is cropped
from both frames, corners found on the object are tracked, and the detection
box is carried over by the median corner offset.  Recovered boxes are scored
from the source score and the layout prior at their new center, rejected when
too weak, and appended to frame t+1.  Recovered detections are never used as
sources themselves, so a recovery never chains across more than one frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import BBox, Detection, FrameRef, Source, clip_box, contains_center, iou, search_area
from .flow import FlowParams, TrackStatus, lk_track, shi_tomasi
from .imaging import GrayImage, build_pyramid, crop
from .layout import LayoutGrid

__all__ = [
    "RecoveryDiagnostic",
    "TrackerParams",
    "find_missed",
    "process_sequence",
    "recover",
    "score_recovered",
]


@dataclass(frozen=True)
class TrackerParams:
    """Thresholds and geometry for missed-detection recovery."""

    source_score_min: float = 0.3
    area_alpha: float = 2.0
    area_beta: float = 3.0
    area_tau: float = 30.0
    flow_lambda: float = -0.05
    flow_bias: float = 0.0
    recovered_score_min: float = 0.3
    min_tracked_corners: int = 3
    duplicate_iou: float = 0.5
    m_floor: float = 1e-3

    def __post_init__(self) -> None:
        if not 0 <= self.source_score_min <= 1:
            raise ValueError(f"source_score_min must lie in [0, 1], got {self.source_score_min}")
        if not 0 <= self.recovered_score_min <= 1:
            raise ValueError(f"recovered_score_min must lie in [0, 1], got {self.recovered_score_min}")
        if self.min_tracked_corners < 1:
            raise ValueError(f"min_tracked_corners must be >= 1, got {self.min_tracked_corners}")
        if not 0 < self.duplicate_iou <= 1:
            raise ValueError(f"duplicate_iou must lie in (0, 1], got {self.duplicate_iou}")
        if self.m_floor <= 0:
            raise ValueError(f"m_floor must be positive, got {self.m_floor}")


@dataclass(frozen=True)
class RecoveryDiagnostic:
    """What happened to one recovery attempt."""

    source_frame_id: str
    target_frame_id: str
    class_label: str
    outcome: str  # "recovered", or the rejection reason
    corners_found: int = 0
    corners_on_object: int = 0
    corners_converged: int = 0
    offset: "tuple[float, float] | None" = None
    layout_at_target: "float | None" = None
    score: "float | None" = None


def find_missed(
    prev_dets: Sequence[Detection],
    next_dets: Sequence[Detection],
    params: TrackerParams = TrackerParams(),
) -> list[tuple[Detection, BBox]]:
    """Confident previous-frame detections with no same-class next-frame
    detection centered inside their search area, paired with that area.

    Only detector-sourced detections qualify as sources; recovered ones are
    deliberately excluded to keep recoveries from cascading.
    """
    missed: list[tuple[Detection, BBox]] = []
    for d in prev_dets:
        if d.source is not Source.DETECTOR or d.score <= params.source_score_min:
            continue
        area = search_area(d, params.area_alpha, params.area_beta, params.area_tau)
        found = any(
            n.class_label == d.class_label and contains_center(area, n) for n in next_dets
        )
        if not found:
            missed.append((d, area))
    return missed


@dataclass(frozen=True)
class FlowSummary:
    """Corner bookkeeping of one recovery attempt."""

    corners_found: int
    corners_on_object: int
    corners_converged: int
    offset: "tuple[float, float] | None"


def recover(
    source: Detection,
    prev_img: GrayImage,
    next_img: GrayImage,
    search: BBox,
    flow_params: FlowParams = FlowParams(),
    params: TrackerParams = TrackerParams(),
) -> tuple["BBox | None", FlowSummary]:
    """Carry the source box into the next frame by the median corner offset.

    The search area is cropped from both frames (identical region), corners
    are detected on the previous crop but only those inside the original
    source box are tracked.  The recovered box keeps the source dimensions,
    is translated by the per-component median of converged offsets, and is
    clipped to the image.  Returns None with diagnostics when fewer than
    min_tracked_corners corners converge or the box leaves the image.
    """
    if prev_img.pixels.shape != next_img.pixels.shape:
        raise ValueError(
            f"frame sizes differ: {prev_img.pixels.shape} vs {next_img.pixels.shape}"
        )
    clipped = clip_box(search, prev_img.width, prev_img.height)
    if clipped is None:
        return None, FlowSummary(0, 0, 0, None)
    try:
        prev_patch, (ox, oy) = crop(prev_img, clipped)
    except ValueError:
        return None, FlowSummary(0, 0, 0, None)
    next_patch = GrayImage(next_img.pixels[oy : oy + prev_patch.height, ox : ox + prev_patch.width])

    patch_region = BBox(
        cx=prev_patch.width / 2,
        cy=prev_patch.height / 2,
        w=prev_patch.width,
        h=prev_patch.height,
    )
    try:
        corners = shi_tomasi(
            prev_patch,
            patch_region,
            max_corners=flow_params.max_corners,
            quality_level=flow_params.quality_level,
            min_distance=flow_params.min_distance,
            window_radius=flow_params.corner_window_radius,
        )
    except ValueError:
        return None, FlowSummary(0, 0, 0, None)

    b = source.bbox
    on_object = [
        c
        for c in corners
        if b.x1 <= c.x + ox <= b.x2 and b.y1 <= c.y + oy <= b.y2
    ]
    if len(on_object) < params.min_tracked_corners:
        return None, FlowSummary(len(corners), len(on_object), 0, None)

    prev_pyr = build_pyramid(prev_patch, flow_params.pyramid_levels)
    next_pyr = build_pyramid(next_patch, flow_params.pyramid_levels)
    points = [(c.x, c.y) for c in on_object]
    tracks = lk_track(prev_pyr, next_pyr, points, flow_params)
    converged = [t for t in tracks if t.status is TrackStatus.CONVERGED]
    if len(converged) < params.min_tracked_corners:
        return None, FlowSummary(len(corners), len(on_object), len(converged), None)

    dx = float(np.median([t.offset[0] for t in converged]))
    dy = float(np.median([t.offset[1] for t in converged]))
    moved = clip_box(b.translated(dx, dy), next_img.width, next_img.height)
    summary = FlowSummary(len(corners), len(on_object), len(converged), (dx, dy))
    if moved is None:
        return None, summary
    return moved, summary


def score_recovered(
    source_score: float,
    m_next: float,
    params: TrackerParams = TrackerParams(),
) -> "float | None":
    """Score of a recovered box, or None when it is too weak to keep.

    The source score is discounted by flow_lambda * log(M^2) + flow_bias,
    where M is the layout prior at the recovered center, floored at m_floor
    to keep the logarithm finite.  The result is clamped to [0, 1] and boxes
    below recovered_score_min are rejected.
    """
    m = max(m_next, params.m_floor)
    s = source_score - (params.flow_lambda * math.log(m * m) + params.flow_bias)
    s = min(1.0, max(0.0, s))
    if s < params.recovered_score_min:
        return None
    return s


def process_sequence(
    frames: Sequence[FrameRef],
    detections: Mapping[str, Sequence[Detection]],
    layout: LayoutGrid,
    load_image: Callable[[FrameRef], GrayImage],
    flow_params: FlowParams = FlowParams(),
    params: TrackerParams = TrackerParams(),
) -> tuple[dict[str, list[Detection]], list[RecoveryDiagnostic]]:
    """Run recovery over consecutive frame pairs of one sequence.

    frames must be ordered by index.  Images are loaded lazily, only for
    pairs that actually attempt a recovery.  The result maps frame_id to the
    input detections plus any recovered ones appended after them; input lists
    are never mutated or filtered.
    """
    for a, b in zip(frames, frames[1:]):
        if a.sequence_id != b.sequence_id:
            raise ValueError(f"frames mix sequences {a.sequence_id!r} and {b.sequence_id!r}")
        if b.index <= a.index:
            raise ValueError(f"frame indices must increase, got {a.index} then {b.index}")

    out: dict[str, list[Detection]] = {f.frame_id: list(detections.get(f.frame_id, ())) for f in frames}
    diagnostics: list[RecoveryDiagnostic] = []
    images: dict[str, GrayImage] = {}

    def image_of(ref: FrameRef) -> GrayImage:
        got = images.get(ref.frame_id)
        if got is None:
            try:
                got = load_image(ref)
            except FileNotFoundError as e:
                raise FileNotFoundError(f"missing image for frame {ref.frame_id!r}: {e}") from e
            images[ref.frame_id] = got
        return got

    for prev_ref, next_ref in zip(frames, frames[1:]):
        prev_dets = detections.get(prev_ref.frame_id, ())
        next_input = detections.get(next_ref.frame_id, ())
        missed = find_missed(prev_dets, next_input, params)
        if not missed:
            images.clear()
            continue
        prev_img = image_of(prev_ref)
        next_img = image_of(next_ref)
        img_dims = (float(next_img.width), float(next_img.height))

        for source, area in missed:
            box, summary = recover(source, prev_img, next_img, area, flow_params, params)
            diag_base = dict(
                source_frame_id=prev_ref.frame_id,
                target_frame_id=next_ref.frame_id,
                class_label=source.class_label,
                corners_found=summary.corners_found,
                corners_on_object=summary.corners_on_object,
                corners_converged=summary.corners_converged,
                offset=summary.offset,
            )
            if box is None:
                diagnostics.append(RecoveryDiagnostic(outcome="flow_failed", **diag_base))
                continue
            m_next = layout.sample(box.cx / img_dims[0], box.cy / img_dims[1])
            score = score_recovered(source.score, m_next, params)
            if score is None:
                diagnostics.append(
                    RecoveryDiagnostic(outcome="score_rejected", layout_at_target=m_next, **diag_base)
                )
                continue
            duplicate = any(
                d.class_label == source.class_label and iou(d.bbox, box) > params.duplicate_iou
                for d in out[next_ref.frame_id]
            )
            if duplicate:
                diagnostics.append(
                    RecoveryDiagnostic(
                        outcome="duplicate_suppressed", layout_at_target=m_next, score=score, **diag_base
                    )
                )
                continue
            out[next_ref.frame_id].append(
                Detection(
                    frame_id=next_ref.frame_id,
                    bbox=box,
                    class_label=source.class_label,
                    score=score,
                    source=Source.FLOW_RECOVERED,
                )
            )
            diagnostics.append(
                RecoveryDiagnostic(outcome="recovered", layout_at_target=m_next, score=score, **diag_base)
            )
        # Keep at most the image that will serve as "prev" of the next pair.
        images.pop(prev_ref.frame_id, None)
    return out, diagnostics
