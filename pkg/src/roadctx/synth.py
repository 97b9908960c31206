"""Deterministic synthetic driving corpus for tests and benchmarks.

Each sequence is a static low-contrast textured background with a trapezoid
road region and two sharply textured obstacles sliding down the road at
integer pixel steps.  The generator writes frames (binary PGM), per-sequence
road masks, a corpus document with ground truth, and a simulated detector
file with configurable dropped detections, localization noise and off-road
false positives placed far from the road in the top image corners.

Everything derives from numpy's seeded generator, so a given configuration
always produces byte-identical corpora.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BBox, Detection, FrameRef, Source
from .evaluation import GroundTruth
from .imaging import GrayImage, encode_pgm, gaussian_blur
from .records import (
    Corpus,
    DetectionRecord,
    FrameEntry,
    atomic_write_bytes,
    write_corpus,
    write_detections,
)

__all__ = ["SynthConfig", "generate_corpus", "noise_texture", "textured_background"]

OBSTACLE_CLASSES = ("cone", "crate")


@dataclass(frozen=True)
class SynthConfig:
    sequences: int = 10
    frames: int = 20
    width: int = 320
    height: int = 180
    seed: int = 0
    drop_rate: float = 0.15
    false_positives: int = 2
    center_noise: float = 0.5
    score_noise: float = 0.05

    def __post_init__(self) -> None:
        if self.sequences < 1 or self.frames < 2:
            raise ValueError("need at least 1 sequence of 2 frames")
        if self.width < 64 or self.height < 64:
            raise ValueError(f"frames must be at least 64x64, got {self.width}x{self.height}")
        if not 0 <= self.drop_rate < 1:
            raise ValueError(f"drop_rate must lie in [0, 1), got {self.drop_rate}")
        if self.false_positives < 0:
            raise ValueError(f"false_positives must be >= 0, got {self.false_positives}")
        if self.center_noise < 0 or self.score_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if self.score_noise > 0.05:
            raise ValueError(f"score_noise above 0.05 breaks the detector score band, got {self.score_noise}")


def noise_texture(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Sharp full-contrast noise; plenty of trackable structure."""
    return rng.uniform(0.05, 0.95, size=(height, width))


def textured_background(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Low-contrast smooth texture, so pasted obstacles dominate gradients."""
    base = GrayImage(rng.random((height, width)))
    smooth = gaussian_blur(base, 2.0).pixels
    return np.clip(0.45 + 0.9 * (smooth - float(smooth.mean())), 0.2, 0.8)


def _road_geometry(width: int, height: int, slant: float) -> tuple[int, np.ndarray, np.ndarray]:
    """Trapezoid road: apex row, per-row center line and half width."""
    apex_y = int(round(0.22 * height))
    ys = np.arange(height, dtype=np.float64)
    t = np.clip((ys - apex_y) / (height - 1 - apex_y), 0.0, 1.0)
    center = width / 2 + slant * (1.0 - t)
    half = 3.0 + (width / 2 - 9.0) * t
    return apex_y, center, half


def _road_mask(width: int, height: int, slant: float) -> np.ndarray:
    apex_y, center, half = _road_geometry(width, height, slant)
    xs = np.arange(width, dtype=np.float64)
    mask = np.abs(xs[None, :] - center[:, None]) <= half[:, None]
    mask[:apex_y] = False
    return mask


@dataclass(frozen=True)
class _Obstacle:
    class_label: str
    size: int
    texture: np.ndarray
    y0: int
    dy: int
    lateral: int

    def top_left(self, frame: int, center_line: np.ndarray) -> tuple[int, int]:
        y = self.y0 + self.dy * frame
        cy = y + self.size / 2
        cx = center_line[min(int(cy), len(center_line) - 1)] + self.lateral
        return int(round(cx - self.size / 2)), y


def generate_corpus(cfg: SynthConfig, out_dir: "str | Path") -> dict:
    """Write a full corpus under out_dir and return a small summary."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    frames: list[FrameEntry] = []
    records: list[DetectionRecord] = []
    n_dropped = 0
    n_fp = 0

    for s in range(cfg.sequences):
        seq = f"seq{s:02d}"
        scene_rng = np.random.default_rng([cfg.seed, s])
        det_rng = np.random.default_rng([cfg.seed, 777, s])

        slant = float(scene_rng.uniform(-12.0, 12.0))
        apex_y, center_line, _ = _road_geometry(cfg.width, cfg.height, slant)
        road = _road_mask(cfg.width, cfg.height, slant)
        bg = textured_background(cfg.width, cfg.height, scene_rng)
        bg = np.clip(bg + road * 0.08, 0.0, 1.0)

        size_a = 22 + 2 * (s % 3)
        size_b = 36 + 2 * (s % 3)
        obstacles = (
            _Obstacle(
                class_label=OBSTACLE_CLASSES[0],
                size=size_a,
                texture=noise_texture(size_a, size_a, scene_rng),
                y0=apex_y + 18,
                dy=2,
                lateral=0,
            ),
            _Obstacle(
                class_label=OBSTACLE_CLASSES[1],
                size=size_b,
                texture=noise_texture(size_b, size_b, scene_rng),
                y0=apex_y + 59,
                dy=2,
                lateral=22,
            ),
        )

        mask_img = GrayImage(road.astype(np.float64))
        atomic_write_bytes(out / "masks" / f"{seq}.pgm", encode_pgm(mask_img))
        (out / "frames" / seq).mkdir(parents=True, exist_ok=True)

        for t in range(cfg.frames):
            ref = FrameRef(sequence_id=seq, index=t, image_path=f"frames/{seq}/{t:06d}.pgm")
            canvas = bg.copy()
            boxes: list[GroundTruth] = []
            for ob in obstacles:
                x, y = ob.top_left(t, center_line)
                if y + ob.size > cfg.height or x < 0 or x + ob.size > cfg.width:
                    raise ValueError(
                        f"obstacle leaves the frame at t={t}; shrink frames or sizes"
                    )
                canvas[y : y + ob.size, x : x + ob.size] = ob.texture
                boxes.append(
                    GroundTruth(
                        frame_id=ref.frame_id,
                        class_label=ob.class_label,
                        bbox=BBox(cx=x + ob.size / 2, cy=y + ob.size / 2, w=ob.size, h=ob.size),
                    )
                )
            atomic_write_bytes(out / ref.image_path, encode_pgm(GrayImage(canvas)))
            frames.append(FrameEntry(ref=ref, width=cfg.width, height=cfg.height, boxes=tuple(boxes)))

            for g in boxes:
                if det_rng.random() < cfg.drop_rate:
                    n_dropped += 1
                    continue
                if cfg.center_noise > 0:
                    jx, jy = np.clip(
                        det_rng.normal(0.0, cfg.center_noise, size=2),
                        -2 * cfg.center_noise,
                        2 * cfg.center_noise,
                    )
                else:
                    jx = jy = 0.0
                score = 0.9 if cfg.score_noise == 0 else 0.9 + float(
                    det_rng.uniform(-cfg.score_noise, cfg.score_noise)
                )
                records.append(
                    DetectionRecord(
                        Detection(
                            frame_id=ref.frame_id,
                            bbox=BBox(g.bbox.cx + float(jx), g.bbox.cy + float(jy), g.bbox.w, g.bbox.h),
                            class_label=g.class_label,
                            score=score,
                            source=Source.DETECTOR,
                        )
                    )
                )
            for _ in range(cfg.false_positives):
                n_fp += 1
                size = float(det_rng.uniform(14, 26))
                if det_rng.random() < 0.5:
                    cx = cfg.width * float(det_rng.uniform(0.05, 0.18))
                else:
                    cx = cfg.width * float(det_rng.uniform(0.82, 0.95))
                cy = float(det_rng.uniform(size / 2 + 1, 0.15 * cfg.height))
                records.append(
                    DetectionRecord(
                        Detection(
                            frame_id=ref.frame_id,
                            bbox=BBox(cx=cx, cy=cy, w=size, h=size),
                            class_label=OBSTACLE_CLASSES[int(det_rng.integers(2))],
                            score=float(det_rng.uniform(0.5, 0.95)),
                            source=Source.DETECTOR,
                        )
                    )
                )

    corpus = Corpus(frames=tuple(frames), root=out)
    write_corpus(out / "annotations.json", corpus)
    write_detections(out / "detections.tsv", records)
    return {
        "corpus": str(out / "annotations.json"),
        "detections": str(out / "detections.tsv"),
        "sequences": cfg.sequences,
        "frames": cfg.sequences * cfg.frames,
        "ground_truth_boxes": sum(len(f.boxes) for f in frames),
        "detector_records": len(records),
        "dropped": n_dropped,
        "false_positives": n_fp,
    }
