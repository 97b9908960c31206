"""Serialization: detection record files, ground-truth corpus documents,
layout/config files and atomic writes.

Detection files are tab-separated text with a header line, one record per
line.  The eight canonical columns are frame_id, class, cx, cy, w, h, score
and source; any other column is carried through parsing and writing
untouched, so foreign detectors can attach their own fields.  frame_id has
the form "<sequence>/<index>" and files are written sorted by (sequence,
frame index), records within a frame keeping their order.

The corpus document is one JSON file listing every frame with its sequence,
index, image path (relative to the document), pixel dimensions and GT boxes.
Boxes are center-format; a document may declare box_format "corner" to store
(x1, y1, x2, y2) instead, converted on load.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import BBox, Detection, FrameRef, Source
from .evaluation import GroundTruth

__all__ = [
    "Corpus",
    "DetectionRecord",
    "FrameEntry",
    "RecordFormatError",
    "atomic_write_bytes",
    "atomic_write_text",
    "load_corpus",
    "parse_frame_id",
    "read_detections",
    "write_corpus",
    "write_detections",
]

_COLUMNS = ("frame_id", "class", "cx", "cy", "w", "h", "score", "source")


class RecordFormatError(ValueError):
    """Malformed detection file; names the offending line."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class DetectionRecord:
    """A detection plus whatever extra columns its file carried."""

    detection: Detection
    extras: tuple[tuple[str, str], ...] = ()

    def with_detection(self, d: Detection) -> "DetectionRecord":
        return replace(self, detection=d)


def parse_frame_id(frame_id: str) -> tuple[str, int]:
    """Split "<sequence>/<index>" into its parts."""
    seq, _, idx = frame_id.rpartition("/")
    if not seq or not idx.isdigit():
        raise ValueError(f"frame_id must look like '<sequence>/<index>', got {frame_id!r}")
    return seq, int(idx)


def read_detections(path: "str | Path") -> list[DetectionRecord]:
    """Parse a detection file; raises RecordFormatError naming the bad line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        return []
    header = lines[0].split("\t")
    if header[: len(_COLUMNS)] != list(_COLUMNS):
        raise RecordFormatError(1, f"header must start with {list(_COLUMNS)}, got {header[:8]}")
    extra_names = header[len(_COLUMNS) :]

    records: list[DetectionRecord] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(header):
            raise RecordFormatError(line_no, f"expected {len(header)} fields, got {len(fields)}")
        frame_id, class_label, *nums, source_raw = fields[:8]
        try:
            parse_frame_id(frame_id)
            cx, cy, w, h, score = (float(x) for x in nums)
        except ValueError as e:
            raise RecordFormatError(line_no, str(e)) from None
        try:
            source = Source(source_raw)
        except ValueError:
            raise RecordFormatError(line_no, f"unknown source {source_raw!r}") from None
        try:
            det = Detection(
                frame_id=frame_id,
                bbox=BBox(cx=cx, cy=cy, w=w, h=h),
                class_label=class_label,
                score=score,
                source=source,
            )
        except ValueError as e:
            raise RecordFormatError(line_no, str(e)) from None
        records.append(
            DetectionRecord(detection=det, extras=tuple(zip(extra_names, fields[8:])))
        )
    return records


def format_detections(records: Sequence[DetectionRecord]) -> str:
    """Render records in canonical order (sequence, frame index, input order)."""
    extra_names: list[str] = []
    for r in records:
        for k, _ in r.extras:
            if k not in extra_names:
                extra_names.append(k)

    def sort_key(item: tuple[int, DetectionRecord]) -> tuple[str, int, int]:
        i, r = item
        seq, idx = parse_frame_id(r.detection.frame_id)
        return (seq, idx, i)

    lines = ["\t".join(_COLUMNS + tuple(extra_names))]
    for _, r in sorted(enumerate(records), key=sort_key):
        d = r.detection
        extras = dict(r.extras)
        row = [
            d.frame_id,
            d.class_label,
            repr(d.bbox.cx),
            repr(d.bbox.cy),
            repr(d.bbox.w),
            repr(d.bbox.h),
            repr(d.score),
            d.source.value,
        ]
        row.extend(extras.get(name, "") for name in extra_names)
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def write_detections(path: "str | Path", records: Sequence[DetectionRecord]) -> None:
    atomic_write_text(path, format_detections(records))


# ---------------------------------------------------------------------------
# corpus document


@dataclass(frozen=True)
class FrameEntry:
    """One frame of the corpus: where it sits, its image, its annotations."""

    ref: FrameRef
    width: int
    height: int
    boxes: tuple[GroundTruth, ...] = ()


@dataclass(frozen=True)
class Corpus:
    """Every frame of a dataset, ordered by (sequence, index)."""

    frames: tuple[FrameEntry, ...]
    root: Path = field(default_factory=Path)

    def by_frame_id(self) -> dict[str, FrameEntry]:
        return {f.ref.frame_id: f for f in self.frames}

    def sequences(self) -> dict[str, list[FrameEntry]]:
        out: dict[str, list[FrameEntry]] = {}
        for f in self.frames:
            out.setdefault(f.ref.sequence_id, []).append(f)
        return out

    def ground_truth(self) -> list[GroundTruth]:
        return [g for f in self.frames for g in f.boxes]

    def image_path(self, ref: FrameRef) -> Path:
        return self.root / ref.image_path


def load_corpus(path: "str | Path") -> Corpus:
    """Load a corpus document; image paths resolve against the document's
    directory."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    box_format = doc.get("box_format", "center")
    if box_format not in ("center", "corner"):
        raise ValueError(f"unknown box_format {box_format!r}")
    frames = []
    try:
        for f in doc["frames"]:
            ref = FrameRef(sequence_id=f["sequence"], index=int(f["index"]), image_path=f["image"])
            boxes = []
            for b in f.get("boxes", []):
                if box_format == "corner":
                    x1, y1, x2, y2 = (float(b[k]) for k in ("x1", "y1", "x2", "y2"))
                    bbox = BBox(cx=(x1 + x2) / 2, cy=(y1 + y2) / 2, w=x2 - x1, h=y2 - y1)
                else:
                    bbox = BBox(cx=float(b["cx"]), cy=float(b["cy"]), w=float(b["w"]), h=float(b["h"]))
                boxes.append(GroundTruth(frame_id=ref.frame_id, class_label=b["class"], bbox=bbox))
            frames.append(
                FrameEntry(ref=ref, width=int(f["width"]), height=int(f["height"]), boxes=tuple(boxes))
            )
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed corpus document {path}: {e}") from None
    frames.sort(key=lambda f: (f.ref.sequence_id, f.ref.index))
    seen: dict[str, int] = {}
    for f in frames:
        last = seen.get(f.ref.sequence_id)
        if last is not None and f.ref.index <= last:
            raise ValueError(
                f"duplicate frame index {f.ref.index} in sequence {f.ref.sequence_id!r}"
            )
        seen[f.ref.sequence_id] = f.ref.index
    return Corpus(frames=tuple(frames), root=path.parent)


def write_corpus(path: "str | Path", corpus: Corpus) -> None:
    doc = {
        "box_format": "center",
        "frames": [
            {
                "sequence": f.ref.sequence_id,
                "index": f.ref.index,
                "image": f.ref.image_path,
                "width": f.width,
                "height": f.height,
                "boxes": [
                    {
                        "class": g.class_label,
                        "cx": g.bbox.cx,
                        "cy": g.bbox.cy,
                        "w": g.bbox.w,
                        "h": g.bbox.h,
                    }
                    for g in f.boxes
                ],
            }
            for f in corpus.frames
        ],
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


# ---------------------------------------------------------------------------
# atomic writes


def _atomic_write(path: "str | Path", data: "bytes", mode: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: "str | Path", text: str) -> None:
    """Write via a sibling temp file and rename, so a crash mid-write never
    leaves a partial file at the destination."""
    _atomic_write(path, text.encode("utf-8"), "wb")


def atomic_write_bytes(path: "str | Path", data: bytes) -> None:
    _atomic_write(path, data, "wb")
