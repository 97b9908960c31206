"""Scene-layout rescoring and flow-based recovery for road obstacle detections.

The package turns a static scene layout (where obstacles tend to appear, and
where the road is) into two post-processing passes over detector output:
rescoring each detection by its position in the layout, and recovering
detections the detector missed by tracking them from the previous frame with
pyramidal Lucas-Kanade flow. An evaluation module scores the result with
COCO-style average precision.
"""

from .core import BBox, Detection, FrameRef, Source, iou, search_area
from .evaluation import EvalReport, summarize
from .flow import FlowParams, FlowPoint, TrackStatus, lk_track, shi_tomasi
from .imaging import ColorImage, GrayImage, ImagePyramid, NetpbmError, decode_netpbm, encode_pgm
from .layout import LayoutGrid, LayoutParams, layout_score, rescore
from .tracker import TrackerParams, process_sequence

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "ColorImage",
    "Detection",
    "EvalReport",
    "FlowParams",
    "FlowPoint",
    "FrameRef",
    "GrayImage",
    "ImagePyramid",
    "LayoutGrid",
    "LayoutParams",
    "NetpbmError",
    "Source",
    "TrackStatus",
    "TrackerParams",
    "decode_netpbm",
    "encode_pgm",
    "iou",
    "layout_score",
    "lk_track",
    "process_sequence",
    "rescore",
    "search_area",
    "shi_tomasi",
    "summarize",
    "__version__",
]
