"""Detection quality metrics: greedy matching, precision/recall curves and
interpolated average precision with size breakdowns.

Matching is per frame and class: detections are taken in descending score
order and each claims the still-unmatched ground-truth box of highest overlap
at or above the threshold.  Curves accumulate matches dataset-wide, and AP
averages the interpolated precision envelope over a fixed 101-point recall
grid.  Headline numbers follow the usual conventions: AP50/AP75 at single
thresholds, AP averaged over thresholds 0.50:0.05:0.95, and small/medium/
large splits at the 32^2 and 96^2 pixel-area boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .core import BBox, Detection, iou

__all__ = [
    "AREA_RANGES",
    "EvalReport",
    "GroundTruth",
    "IOU_THRESHOLDS",
    "MatchResult",
    "PRPoint",
    "average_precision",
    "match",
    "pr_curve",
    "summarize",
]

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

# i/100 for i in 0..100; exact decimal grid knots.
RECALL_GRID = np.arange(101, dtype=np.float64) / 100.0

AREA_RANGES: Mapping[str, tuple[float, float]] = {
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}


@dataclass(frozen=True)
class GroundTruth:
    """One annotated box."""

    frame_id: str
    class_label: str
    bbox: BBox


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one frame/class group at one IoU threshold.

    det_is_tp aligns with the input detection order (not score order).
    """

    det_is_tp: tuple[bool, ...]
    gt_matched: tuple[bool, ...]

    @property
    def tp(self) -> int:
        return sum(self.det_is_tp)

    @property
    def fp(self) -> int:
        return len(self.det_is_tp) - self.tp

    @property
    def fn(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)


class PRPoint(NamedTuple):
    score: float
    recall: float
    precision: float


def match(dets: Sequence[Detection], gts: Sequence[BBox], iou_thresh: float) -> MatchResult:
    """Greedy one-to-one matching within a single frame and class.

    Detections are visited by descending score (ties keep input order) and
    each takes the unmatched GT of highest IoU >= iou_thresh; IoU ties go to
    the lowest GT index.
    """
    if not 0 < iou_thresh <= 1:
        raise ValueError(f"iou_thresh must lie in (0, 1], got {iou_thresh}")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    is_tp = [False] * len(dets)
    for i in order:
        best_j = -1
        best_iou = 0.0
        for j, gt in enumerate(gts):
            if taken[j]:
                continue
            v = iou(dets[i].bbox, gt)
            if v >= iou_thresh and v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            is_tp[i] = True
    return MatchResult(det_is_tp=tuple(is_tp), gt_matched=tuple(taken))


def pr_curve(scored_flags: Sequence[tuple[float, bool]], total_gt: int) -> list[PRPoint]:
    """Cumulative precision/recall over all detections of one class.

    scored_flags pairs each detection's score with whether it was matched;
    the curve is ordered by descending score, ties keeping input order, with
    one point per detection.
    """
    if total_gt < 1:
        raise ValueError(f"total_gt must be >= 1, got {total_gt}")
    order = sorted(range(len(scored_flags)), key=lambda i: -scored_flags[i][0])
    points: list[PRPoint] = []
    tp = fp = 0
    for i in order:
        score, flag = scored_flags[i]
        if flag:
            tp += 1
        else:
            fp += 1
        points.append(PRPoint(score=score, recall=tp / total_gt, precision=tp / (tp + fp)))
    return points


def average_precision(curve: Sequence[PRPoint]) -> float:
    """Mean over the 101-point recall grid of the best precision achieved at
    recall >= each grid value (zero where the curve never reaches it)."""
    if not curve:
        return 0.0
    recalls = np.array([p.recall for p in curve])
    precisions = np.array([p.precision for p in curve])
    order = np.argsort(recalls, kind="stable")
    recalls = recalls[order]
    # Best precision at or beyond each recall: suffix maximum.
    envelope = np.maximum.accumulate(precisions[order][::-1])[::-1]
    idx = np.searchsorted(recalls, RECALL_GRID, side="left")
    vals = np.where(idx < len(recalls), envelope[np.minimum(idx, len(recalls) - 1)], 0.0)
    return float(vals.mean())


@dataclass(frozen=True)
class EvalReport:
    """Headline AP numbers plus the PR curves they came from.

    curves maps IoU threshold -> class label -> PR points.  All AP values lie
    in [0, 1]; a size bucket with no ground truth reports 0.
    """

    ap50: float
    ap75: float
    ap: float
    ap_small: float
    ap_medium: float
    ap_large: float
    per_threshold: Mapping[float, float]
    curves: Mapping[float, Mapping[str, tuple[PRPoint, ...]]]
    n_detections: int
    n_gt: int
    classes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap": self.ap,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_threshold": {f"{t:.2f}": v for t, v in self.per_threshold.items()},
            "n_detections": self.n_detections,
            "n_gt": self.n_gt,
            "classes": list(self.classes),
        }


def _in_range(area: float, rng: tuple[float, float]) -> bool:
    return rng[0] <= area < rng[1]


def _class_ap(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thresh: float,
) -> tuple[float, list[PRPoint]]:
    """AP of a single class over the whole dataset at one threshold."""
    by_frame_gt: dict[str, list[GroundTruth]] = {}
    for g in gts:
        by_frame_gt.setdefault(g.frame_id, []).append(g)
    by_frame_det: dict[str, list[Detection]] = {}
    for d in dets:
        by_frame_det.setdefault(d.frame_id, []).append(d)

    scored_flags: list[tuple[float, bool]] = []
    for frame_id, frame_dets in by_frame_det.items():
        frame_gts = [g.bbox for g in by_frame_gt.get(frame_id, [])]
        result = match(frame_dets, frame_gts, iou_thresh)
        scored_flags.extend((d.score, tp) for d, tp in zip(frame_dets, result.det_is_tp))
    curve = pr_curve(scored_flags, total_gt=len(gts)) if scored_flags else []
    return average_precision(curve), curve


def summarize(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    valid_frames: "set[str] | None" = None,
) -> EvalReport:
    """Dataset-level report: AP values are means over the classes present in
    the ground truth; detections of classes absent from it count nowhere.

    When valid_frames is given, a detection referencing a frame outside it is
    a key-mismatch error (catches detections evaluated against the wrong
    corpus).
    """
    if not gts:
        raise ValueError("ground truth is empty, nothing to evaluate against")
    if valid_frames is not None:
        for d in dets:
            if d.frame_id not in valid_frames:
                raise KeyError(
                    f"detection frame key {d.frame_id!r} not present in the ground-truth corpus"
                )

    classes = tuple(sorted({g.class_label for g in gts}))
    dets_by_class: dict[str, list[Detection]] = {c: [] for c in classes}
    gts_by_class: dict[str, list[GroundTruth]] = {c: [] for c in classes}
    for d in dets:
        if d.class_label in dets_by_class:
            dets_by_class[d.class_label].append(d)
    for g in gts:
        gts_by_class[g.class_label].append(g)

    per_threshold: dict[float, float] = {}
    curves: dict[float, dict[str, tuple[PRPoint, ...]]] = {}
    for t in IOU_THRESHOLDS:
        aps = []
        curves[t] = {}
        for c in classes:
            if not gts_by_class[c]:
                continue
            ap_c, curve = _class_ap(dets_by_class[c], gts_by_class[c], t)
            aps.append(ap_c)
            curves[t][c] = tuple(curve)
        per_threshold[t] = float(np.mean(aps)) if aps else 0.0

    def size_ap(rng: tuple[float, float]) -> float:
        vals = []
        for t in IOU_THRESHOLDS:
            aps = []
            for c in classes:
                sub_gts = [g for g in gts_by_class[c] if _in_range(g.bbox.area, rng)]
                if not sub_gts:
                    continue
                sub_dets = [d for d in dets_by_class[c] if _in_range(d.bbox.area, rng)]
                ap_c, _ = _class_ap(sub_dets, sub_gts, t)
                aps.append(ap_c)
            if aps:
                vals.append(float(np.mean(aps)))
        return float(np.mean(vals)) if vals else 0.0

    return EvalReport(
        ap50=per_threshold[0.5],
        ap75=per_threshold[0.75],
        ap=float(np.mean(list(per_threshold.values()))),
        ap_small=size_ap(AREA_RANGES["small"]),
        ap_medium=size_ap(AREA_RANGES["medium"]),
        ap_large=size_ap(AREA_RANGES["large"]),
        per_threshold=per_threshold,
        curves=curves,
        n_detections=len(dets),
        n_gt=len(gts),
        classes=classes,
    )
