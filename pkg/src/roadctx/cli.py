"""Command-line interface.

Subcommands cover the whole pipeline: building the scene layout from a
corpus, rescoring detector output against it, recovering missed detections
through optical flow, evaluating detections against ground truth (with
optional CSV curves and figures), rendering grids to PGM, generating the
synthetic corpus, and a diagnostic flow inspector.

Parameter precedence is fixed: built-in defaults, then the JSON config file
sections ("layout", "flow", "tracker", "synth"), then command-line flags.
Commands are deterministic given their inputs, configuration and seed, and
all file writes are atomic, so interrupted runs never leave partial outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from . import layout as layout_mod
from .core import BBox, Detection, FrameRef
from .flow import FlowParams, lk_track, shi_tomasi
from .imaging import GrayImage, build_pyramid, decode_netpbm, encode_pgm
from .layout import LayoutGrid, LayoutParams
from .records import (
    Corpus,
    DetectionRecord,
    RecordFormatError,
    atomic_write_bytes,
    atomic_write_text,
    load_corpus,
    parse_frame_id,
    read_detections,
    write_detections,
)
from .synth import SynthConfig, generate_corpus
from .tracker import TrackerParams, process_sequence

__all__ = ["main"]


class CliError(Exception):
    """User-facing failure with an actionable message."""


def _load_config(path: "str | None") -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CliError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return doc


def _params(cls, section_name: str, config: dict, overrides: dict, base=None):
    """Defaults < config section < explicit flags."""
    section = config.get(section_name, {})
    if not isinstance(section, dict):
        raise CliError(f"config section {section_name!r} must be an object")
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - valid)
    if unknown:
        raise CliError(f"unknown keys in config section {section_name!r}: {', '.join(unknown)}")
    kwargs = dataclasses.asdict(base) if base is not None else {}
    kwargs.update(section)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise CliError(f"invalid {section_name} parameters: {e}") from None


def _layout_overrides(args: argparse.Namespace) -> dict:
    names = ("theta", "layout_alpha", "layout_bias", "low_cut", "high_cut", "kde_sigma", "grid_w", "grid_h")
    return {n: getattr(args, n, None) for n in names}


def _flow_overrides(args: argparse.Namespace) -> dict:
    names = (
        "window_radius",
        "pyramid_levels",
        "max_iterations",
        "epsilon",
        "min_eigen_threshold",
        "max_corners",
        "quality_level",
        "min_distance",
        "corner_window_radius",
    )
    return {n: getattr(args, n, None) for n in names}


def _tracker_overrides(args: argparse.Namespace) -> dict:
    names = (
        "source_score_min",
        "area_alpha",
        "area_beta",
        "area_tau",
        "flow_lambda",
        "flow_bias",
        "recovered_score_min",
        "min_tracked_corners",
        "duplicate_iou",
        "m_floor",
    )
    return {n: getattr(args, n, None) for n in names}


def _read_dets(path: str) -> list[DetectionRecord]:
    try:
        return read_detections(path)
    except FileNotFoundError:
        raise CliError(f"detection file not found: {path}") from None
    except RecordFormatError as e:
        raise CliError(f"malformed detection file {path}: {e}") from None


def _load_corpus(path: str) -> Corpus:
    try:
        return load_corpus(path)
    except FileNotFoundError:
        raise CliError(f"corpus document not found: {path}") from None
    except (ValueError, json.JSONDecodeError) as e:
        raise CliError(f"cannot load corpus {path}: {e}") from None


def _load_gray(path: "str | Path") -> GrayImage:
    try:
        img = decode_netpbm(Path(path).read_bytes())
    except FileNotFoundError:
        raise FileNotFoundError(str(path)) from None
    return img if isinstance(img, GrayImage) else img.to_gray()


def _load_layout(path: str) -> tuple[LayoutGrid, LayoutParams, dict]:
    try:
        return layout_mod.layout_from_json(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"layout file not found: {path}") from None
    except ValueError as e:
        raise CliError(f"cannot load layout {path}: {e}") from None


def _frame_dims(corpus: Corpus, frame_id: str) -> tuple[float, float]:
    entry = corpus.by_frame_id().get(frame_id)
    if entry is None:
        raise CliError(
            f"frame {frame_id!r} is not in the corpus; its image dimensions are unavailable"
        )
    return float(entry.width), float(entry.height)


# ---------------------------------------------------------------------------
# subcommands


def cmd_layout_build(args: argparse.Namespace, config: dict) -> int:
    params = _params(LayoutParams, "layout", config, _layout_overrides(args))
    corpus = _load_corpus(args.annotations)
    boxes = [
        (g.bbox, (float(f.width), float(f.height)))
        for f in corpus.frames
        for g in f.boxes
    ]
    if not boxes:
        raise CliError(f"corpus {args.annotations} holds no ground-truth boxes")

    masks_dir = Path(args.masks) if args.masks else None
    if masks_dir is None:
        raise CliError("the road distribution requires road masks: pass --masks <dir>")
    mask_paths = sorted(masks_dir.glob("*.pgm")) + sorted(masks_dir.glob("*.ppm"))
    if not mask_paths:
        raise CliError(f"no .pgm/.ppm road masks found under {masks_dir}")
    masks = [_load_gray(p) for p in mask_paths]

    obstacle = layout_mod.build_obstacle_distribution(boxes, params)
    contour = layout_mod.average_road_contour(masks)
    road = layout_mod.build_road_distribution(contour, obstacle)
    combined = layout_mod.combine_layout(obstacle, road)

    build_date = os.environ.get("SOURCE_DATE_EPOCH")
    created = (
        datetime.datetime.fromtimestamp(int(build_date), datetime.timezone.utc)
        if build_date
        else datetime.datetime.now(datetime.timezone.utc)
    ).strftime("%Y-%m-%d")
    meta = {
        "gt_boxes": len(boxes),
        "masks": len(mask_paths),
        "frames": len(corpus.frames),
        "created": created,
    }
    atomic_write_text(args.output, layout_mod.layout_to_json(combined, params, meta))
    if args.verbose:
        print(f"layout: {len(boxes)} GT boxes, {len(mask_paths)} masks -> {args.output}", file=sys.stderr)

    if args.render_dir:
        render_dir = Path(args.render_dir)
        for name, grid in (("obstacle", obstacle), ("road", road), ("combined", combined)):
            atomic_write_bytes(render_dir / f"{name}.pgm", encode_pgm(GrayImage(grid.values)))
    if args.figure:
        from .report import save_layout_panels

        save_layout_panels(obstacle, road, combined, args.figure)
    return 0


def cmd_rescore(args: argparse.Namespace, config: dict) -> int:
    grid, file_params, _ = _load_layout(args.layout)
    params = _params(LayoutParams, "layout", config, _layout_overrides(args), base=file_params)
    params = dataclasses.replace(params, grid_w=grid.grid_w, grid_h=grid.grid_h)
    corpus = _load_corpus(args.annotations)
    records = _read_dets(args.detections)

    suppressed = 0
    out: list[DetectionRecord] = []
    for r in records:
        dims = _frame_dims(corpus, r.detection.frame_id)
        m = layout_mod.layout_value(grid, r.detection, dims)
        if layout_mod.layout_score(m, params) == -1.0:
            suppressed += 1
        out.append(r.with_detection(layout_mod.rescore(r.detection, grid, params, dims)))
    write_detections(args.output, out)
    print(
        f"rescore: {len(out)} records, {suppressed} suppressed below road support "
        f"(layout value < {params.low_cut})",
        file=sys.stderr,
    )
    return 0


def cmd_track(args: argparse.Namespace, config: dict) -> int:
    grid, _, _ = _load_layout(args.layout)
    flow_params = _params(FlowParams, "flow", config, _flow_overrides(args))
    tracker_params = _params(TrackerParams, "tracker", config, _tracker_overrides(args))
    corpus = _load_corpus(args.annotations)
    records = _read_dets(args.detections)

    by_id = corpus.by_frame_id()
    for r in records:
        if r.detection.frame_id not in by_id:
            raise CliError(
                f"frame {r.detection.frame_id!r} is not in the corpus; cannot resolve its image"
            )
    dets_by_frame: dict[str, list[Detection]] = {}
    for r in records:
        dets_by_frame.setdefault(r.detection.frame_id, []).append(r.detection)

    def load_image(ref: FrameRef) -> GrayImage:
        return _load_gray(corpus.image_path(ref))

    sequences = corpus.sequences()
    det_sequences = {parse_frame_id(r.detection.frame_id)[0] for r in records}

    def run_one(seq: str):
        frames = [f.ref for f in sequences[seq]]
        return process_sequence(frames, dets_by_frame, grid, load_image, flow_params, tracker_params)

    seq_ids = sorted(det_sequences)
    try:
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                results = dict(zip(seq_ids, pool.map(run_one, seq_ids)))
        else:
            results = {seq: run_one(seq) for seq in seq_ids}
    except FileNotFoundError as e:
        raise CliError(str(e)) from None

    out = list(records)
    n_recovered = 0
    for seq in seq_ids:
        per_frame, diagnostics = results[seq]
        for dets in per_frame.values():
            for d in dets:
                if d.source.value == "flow_recovered":
                    out.append(DetectionRecord(d))
                    n_recovered += 1
        if args.verbose:
            for diag in diagnostics:
                offset = (
                    f"offset=({diag.offset[0]:+.2f},{diag.offset[1]:+.2f})" if diag.offset else "offset=n/a"
                )
                print(
                    f"track {diag.source_frame_id} -> {diag.target_frame_id} "
                    f"[{diag.class_label}] corners {diag.corners_found}/{diag.corners_on_object}"
                    f"/{diag.corners_converged} {offset} -> {diag.outcome}",
                    file=sys.stderr,
                )
    write_detections(args.output, out)
    print(f"track: {len(records)} records in, {n_recovered} recovered", file=sys.stderr)
    return 0


def cmd_eval(args: argparse.Namespace, config: dict) -> int:
    from .evaluation import summarize

    corpus = _load_corpus(args.annotations)
    records = _read_dets(args.detections)
    gts = corpus.ground_truth()
    if not gts:
        raise CliError(f"corpus {args.annotations} holds no ground-truth boxes")
    valid = {f.ref.frame_id for f in corpus.frames}
    try:
        report = summarize([r.detection for r in records], gts, valid_frames=valid)
    except KeyError as e:
        raise CliError(f"frame key mismatch: {e.args[0]}") from None

    print(
        f"evaluated {report.n_detections} detections against {report.n_gt} ground-truth boxes "
        f"(classes: {', '.join(report.classes)})"
    )
    for name, value in (
        ("AP50", report.ap50),
        ("AP75", report.ap75),
        ("AP", report.ap),
        ("AP_S", report.ap_small),
        ("AP_M", report.ap_medium),
        ("AP_L", report.ap_large),
    ):
        print(f"  {name:<5} {value:.4f}")

    if args.report:
        atomic_write_text(args.report, json.dumps(report.to_dict(), indent=1) + "\n")
    if args.curves:
        from .report import curve_csv

        try:
            atomic_write_text(args.curves, curve_csv(report, args.curve_iou, args.curve_class))
        except ValueError as e:
            raise CliError(str(e)) from None
    if args.figures:
        from .report import save_ap_summary, save_pr_curves

        figures = Path(args.figures)
        save_pr_curves(report, figures / "pr_curve_iou50.png", 0.5)
        save_pr_curves(report, figures / "pr_curve_iou75.png", 0.75)
        save_ap_summary(report, figures / "ap_summary.png")
    return 0


def cmd_render(args: argparse.Namespace, config: dict) -> int:
    grid, _, _ = _load_layout(args.layout)
    atomic_write_bytes(args.output, encode_pgm(GrayImage(grid.values)))
    return 0


def cmd_synth(args: argparse.Namespace, config: dict) -> int:
    overrides = {
        n: getattr(args, n, None)
        for n in (
            "sequences",
            "frames",
            "width",
            "height",
            "drop_rate",
            "false_positives",
            "center_noise",
            "score_noise",
        )
    }
    overrides["seed"] = args.seed
    cfg = _params(SynthConfig, "synth", config, overrides)
    summary = generate_corpus(cfg, args.output)
    print(
        f"synth: {summary['sequences']} sequences, {summary['frames']} frames, "
        f"{summary['ground_truth_boxes']} GT boxes, {summary['detector_records']} detector records "
        f"({summary['dropped']} dropped, {summary['false_positives']} false positives) -> {args.output}"
    )
    return 0


def cmd_flow(args: argparse.Namespace, config: dict) -> int:
    flow_params = _params(FlowParams, "flow", config, _flow_overrides(args))
    try:
        prev_img = _load_gray(args.prev)
        nxt_img = _load_gray(args.next)
    except FileNotFoundError as e:
        raise CliError(f"image not found: {e}") from None
    if args.region:
        cx, cy, w, h = args.region
        region = BBox(cx=cx, cy=cy, w=w, h=h)
    else:
        region = BBox(cx=prev_img.width / 2, cy=prev_img.height / 2, w=prev_img.width, h=prev_img.height)
    corners = shi_tomasi(
        prev_img,
        region,
        max_corners=flow_params.max_corners,
        quality_level=flow_params.quality_level,
        min_distance=flow_params.min_distance,
        window_radius=flow_params.corner_window_radius,
    )
    if not corners:
        print("no corners found in region")
        return 0
    prev_pyr = build_pyramid(prev_img, flow_params.pyramid_levels)
    next_pyr = build_pyramid(nxt_img, flow_params.pyramid_levels)
    tracks = lk_track(prev_pyr, next_pyr, [(c.x, c.y) for c in corners], flow_params)
    print(f"{'start':>18}  {'end':>18}  {'offset':>14}  {'status':<13} residual")
    for t in tracks:
        sx, sy = t.start
        ex, ey = t.end
        dx, dy = t.offset
        residual = f"{t.residual:.4f}" if t.residual == t.residual else "-"
        print(
            f"({sx:7.2f},{sy:7.2f})  ({ex:7.2f},{ey:7.2f})  ({dx:+5.2f},{dy:+5.2f})  "
            f"{t.status.value:<13} {residual}"
        )
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_layout_flags(p: argparse.ArgumentParser, building: bool) -> None:
    d = LayoutParams()
    p.add_argument("--theta", type=float, help=f"layout fusion weight (default {d.theta})")
    p.add_argument("--layout-alpha", dest="layout_alpha", type=float, help=f"boost scale (default {d.layout_alpha})")
    p.add_argument("--layout-bias", dest="layout_bias", type=float, help=f"boost offset (default {d.layout_bias:.6f})")
    p.add_argument("--low-cut", dest="low_cut", type=float, help=f"penalty cut (default {d.low_cut})")
    p.add_argument("--high-cut", dest="high_cut", type=float, help=f"boost cut (default {d.high_cut})")
    if building:
        p.add_argument("--kde-sigma", dest="kde_sigma", type=float, help=f"KDE bandwidth as a fraction of the grid diagonal (default {d.kde_sigma})")
        p.add_argument("--grid-w", dest="grid_w", type=int, help=f"grid width in cells (default {d.grid_w})")
        p.add_argument("--grid-h", dest="grid_h", type=int, help=f"grid height in cells (default {d.grid_h})")


def _add_flow_flags(p: argparse.ArgumentParser) -> None:
    d = FlowParams()
    p.add_argument("--window-radius", dest="window_radius", type=int, help=f"tracking window radius (default {d.window_radius})")
    p.add_argument("--pyramid-levels", dest="pyramid_levels", type=int, help=f"pyramid levels (default {d.pyramid_levels})")
    p.add_argument("--max-iterations", dest="max_iterations", type=int, help=f"iteration cap per level (default {d.max_iterations})")
    p.add_argument("--epsilon", type=float, help=f"convergence threshold in px (default {d.epsilon})")
    p.add_argument("--min-eigen-threshold", dest="min_eigen_threshold", type=float, help=f"divergence eigenvalue floor (default {d.min_eigen_threshold})")
    p.add_argument("--max-corners", dest="max_corners", type=int, help=f"corners per region (default {d.max_corners})")
    p.add_argument("--quality-level", dest="quality_level", type=float, help=f"corner response floor as a fraction of the best (default {d.quality_level})")
    p.add_argument("--min-distance", dest="min_distance", type=float, help=f"corner suppression radius (default {d.min_distance})")
    p.add_argument("--corner-window-radius", dest="corner_window_radius", type=int, help=f"corner tensor window radius (default {d.corner_window_radius})")


def _add_tracker_flags(p: argparse.ArgumentParser) -> None:
    d = TrackerParams()
    p.add_argument("--source-score-min", dest="source_score_min", type=float, help=f"minimum source score (default {d.source_score_min})")
    p.add_argument("--area-alpha", dest="area_alpha", type=float, help=f"search width factor (default {d.area_alpha})")
    p.add_argument("--area-beta", dest="area_beta", type=float, help=f"search height factor (default {d.area_beta})")
    p.add_argument("--area-tau", dest="area_tau", type=float, help=f"search margin in px (default {d.area_tau})")
    p.add_argument("--flow-lambda", dest="flow_lambda", type=float, help=f"recovered-score log weight (default {d.flow_lambda})")
    p.add_argument("--flow-bias", dest="flow_bias", type=float, help=f"recovered-score offset (default {d.flow_bias})")
    p.add_argument("--recovered-score-min", dest="recovered_score_min", type=float, help=f"minimum recovered score (default {d.recovered_score_min})")
    p.add_argument("--min-corners", dest="min_tracked_corners", type=int, help=f"minimum converged corners (default {d.min_tracked_corners})")
    p.add_argument("--duplicate-iou", dest="duplicate_iou", type=float, help=f"recovered-box duplicate overlap (default {d.duplicate_iou})")
    p.add_argument("--m-floor", dest="m_floor", type=float, help=f"layout value floor in the score discount (default {d.m_floor})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roadctx",
        description="Scene-layout rescoring, flow-based recovery and AP evaluation for road obstacle detections.",
    )
    parser.add_argument("--config", help="JSON config file with layout/flow/tracker/synth sections")
    parser.add_argument("--workers", type=int, default=1, help="sequences processed concurrently (default 1)")
    parser.add_argument("--seed", type=int, default=0, help="seed for generators (default 0)")
    parser.add_argument("--verbose", action="store_true", help="per-record diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_layout = sub.add_parser("layout", help="scene layout operations")
    layout_sub = p_layout.add_subparsers(dest="layout_command", required=True)
    p_build = layout_sub.add_parser("build", help="build the layout grid from a corpus and road masks")
    p_build.add_argument("--annotations", required=True, help="corpus document with GT boxes and frame dimensions")
    p_build.add_argument("--masks", help="directory of binary road masks (.pgm)")
    p_build.add_argument("--output", required=True, help="layout file to write")
    p_build.add_argument("--render-dir", dest="render_dir", help="also render obstacle/road/combined grids as PGM here")
    p_build.add_argument("--figure", help="also render the three construction stages as one figure (PNG)")
    _add_layout_flags(p_build, building=True)
    p_build.set_defaults(func=cmd_layout_build)

    p_rescore = sub.add_parser("rescore", help="fuse detector scores with the layout prior")
    p_rescore.add_argument("--detections", required=True)
    p_rescore.add_argument("--layout", required=True)
    p_rescore.add_argument("--annotations", required=True, help="corpus document (frame dimensions)")
    p_rescore.add_argument("--output", required=True)
    _add_layout_flags(p_rescore, building=False)
    p_rescore.set_defaults(func=cmd_rescore)

    p_track = sub.add_parser("track", help="recover missed detections via optical flow")
    p_track.add_argument("--detections", required=True)
    p_track.add_argument("--layout", required=True)
    p_track.add_argument("--annotations", required=True, help="corpus document (frame images and dimensions)")
    p_track.add_argument("--output", required=True)
    _add_flow_flags(p_track)
    _add_tracker_flags(p_track)
    p_track.set_defaults(func=cmd_track)

    p_eval = sub.add_parser("eval", help="evaluate detections against ground truth")
    p_eval.add_argument("--detections", required=True)
    p_eval.add_argument("--annotations", required=True)
    p_eval.add_argument("--report", help="write the report as JSON here")
    p_eval.add_argument("--curves", help="write the PR curve as CSV here (columns score,recall,precision)")
    p_eval.add_argument("--curve-iou", dest="curve_iou", type=float, default=0.5, help="IoU threshold of the CSV curve (default 0.5)")
    p_eval.add_argument("--curve-class", dest="curve_class", help="class of the CSV curve (required with multiple classes)")
    p_eval.add_argument("--figures", help="directory for PR-curve and AP-summary figures")
    p_eval.set_defaults(func=cmd_eval)

    p_render = sub.add_parser("render", help="render a layout grid as an 8-bit PGM")
    p_render.add_argument("--layout", required=True)
    p_render.add_argument("--output", required=True)
    p_render.set_defaults(func=cmd_render)

    p_synth = sub.add_parser("synth", help="generate the synthetic corpus")
    p_synth.add_argument("--output", required=True, help="corpus directory to create")
    d = SynthConfig()
    p_synth.add_argument("--sequences", type=int, help=f"sequence count (default {d.sequences})")
    p_synth.add_argument("--frames", type=int, help=f"frames per sequence (default {d.frames})")
    p_synth.add_argument("--width", type=int, help=f"frame width (default {d.width})")
    p_synth.add_argument("--height", type=int, help=f"frame height (default {d.height})")
    p_synth.add_argument("--drop-rate", dest="drop_rate", type=float, help=f"chance a GT box goes undetected (default {d.drop_rate})")
    p_synth.add_argument("--false-positives", dest="false_positives", type=int, help=f"off-road false positives per frame (default {d.false_positives})")
    p_synth.add_argument("--center-noise", dest="center_noise", type=float, help=f"detector center jitter in px (default {d.center_noise})")
    p_synth.add_argument("--score-noise", dest="score_noise", type=float, help=f"detector score jitter (default {d.score_noise})")
    p_synth.set_defaults(func=cmd_synth)

    p_flow = sub.add_parser("flow", help="diagnostic: track corners between two images")
    p_flow.add_argument("--prev", required=True)
    p_flow.add_argument("--next", required=True)
    p_flow.add_argument("--region", type=float, nargs=4, metavar=("CX", "CY", "W", "H"), help="center-format region (default: whole image)")
    _add_flow_flags(p_flow)
    p_flow.set_defaults(func=cmd_flow)

    return parser


def main(argv: "Sequence[str] | None" = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
