"""Raster substrate: netpbm codec, grayscale conversion, blur, gradients,
pyramids, cropping and bilinear sampling.

Intensities are float64 in [0, 1].  Every filter clamps at the border by
replicating the edge pixel, so outputs keep the input's shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core import BBox

__all__ = [
    "ColorImage",
    "GrayImage",
    "ImagePyramid",
    "NetpbmError",
    "build_pyramid",
    "crop",
    "decode_netpbm",
    "encode_pgm",
    "gaussian_blur",
    "sample_bilinear",
    "sample_bilinear_many",
    "scharr_gradients",
    "to_grayscale",
]

# Rec. 601 luma weights for RGB -> gray.
LUMA_R, LUMA_G, LUMA_B = 0.299, 0.587, 0.114

# Smallest pyramid level, per dimension.  Coarser levels than this carry too
# little texture to be worth the border artifacts.
MIN_LEVEL_PX = 16

_SCHARR_SMOOTH = np.array([3.0, 10.0, 3.0]) / 16.0
_SCHARR_DERIV = np.array([-0.5, 0.0, 0.5])


class NetpbmError(ValueError):
    """Malformed or unsupported netpbm data; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable single-channel image, float64 intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.pixels, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise ValueError(f"expected a non-empty (h, w) array, got shape {a.shape}")
        lo, hi = float(a.min()), float(a.max())
        if lo < -1e-9 or hi > 1 + 1e-9:
            raise ValueError(f"intensities must lie in [0, 1], got range [{lo}, {hi}]")
        if lo < 0.0 or hi > 1.0:  # tolerate rounding dust only
            a = np.clip(a, 0.0, 1.0)
        object.__setattr__(self, "pixels", _freeze(a))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class ColorImage:
    """Immutable RGB image, float64 intensities in [0, 1], shape (h, w, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.pixels, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] != 3 or a.size == 0:
            raise ValueError(f"expected a non-empty (h, w, 3) array, got shape {a.shape}")
        if float(a.min()) < -1e-9 or float(a.max()) > 1 + 1e-9:
            raise ValueError("intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", _freeze(np.clip(a, 0.0, 1.0)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_gray(self) -> GrayImage:
        r, g, b = self.pixels[..., 0], self.pixels[..., 1], self.pixels[..., 2]
        return GrayImage(LUMA_R * r + LUMA_G * g + LUMA_B * b)


@dataclass(frozen=True, eq=False)
class ImagePyramid:
    """Coarse-to-fine stack; levels[0] is the input image.

    The stack is truncated before any level would drop below MIN_LEVEL_PX in
    either dimension, so len(levels) may be smaller than requested_levels.
    """

    levels: tuple[GrayImage, ...]
    requested_levels: int


def to_grayscale(r: float, g: float, b: float) -> float:
    """Rec. 601 luma of a single RGB triple."""
    return LUMA_R * r + LUMA_G * g + LUMA_B * b


# ---------------------------------------------------------------------------
# netpbm codec


_MAGIC_GRAY = (b"P2", b"P5")
_MAGIC_COLOR = (b"P3", b"P6")
_WS = b" \t\r\n\x0b\x0c"


class _Scanner:
    """Header tokenizer that tracks byte offsets for error reporting."""

    def __init__(self, data: bytes, pos: int):
        self.data = data
        self.pos = pos

    def skip_separators(self) -> None:
        d = self.data
        while self.pos < len(d):
            c = d[self.pos : self.pos + 1]
            if c in _WS:
                self.pos += 1
            elif c == b"#":
                while self.pos < len(d) and d[self.pos : self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            else:
                return

    def next_int(self, what: str, lo: int, hi: int) -> int:
        self.skip_separators()
        start = self.pos
        d = self.data
        while self.pos < len(d) and d[self.pos : self.pos + 1] not in _WS and d[self.pos : self.pos + 1] != b"#":
            self.pos += 1
        token = d[start : self.pos]
        if not token:
            raise NetpbmError(f"missing {what} in header", start)
        try:
            value = int(token)
        except ValueError:
            raise NetpbmError(f"malformed {what} {token!r}", start) from None
        if not lo <= value <= hi:
            raise NetpbmError(f"{what} {value} outside [{lo}, {hi}]", start)
        return value


def decode_netpbm(data: bytes) -> GrayImage | ColorImage:
    """Decode P2/P5 grayscale or P3/P6 color data, scaled by maxval to [0, 1].

    Raises NetpbmError with the byte offset of the problem on malformed
    headers, truncated payloads and unsupported magic numbers.
    """
    if len(data) < 2:
        raise NetpbmError("missing magic number", 0)
    magic = bytes(data[0:2])
    if magic not in _MAGIC_GRAY + _MAGIC_COLOR:
        raise NetpbmError(f"unsupported magic number {magic!r}", 0)
    color = magic in _MAGIC_COLOR
    binary = magic in (b"P5", b"P6")
    channels = 3 if color else 1

    scan = _Scanner(data, 2)
    width = scan.next_int("width", 1, 1 << 30)
    height = scan.next_int("height", 1, 1 << 30)
    maxval = scan.next_int("maxval", 1, 65535)
    count = width * height * channels

    if binary:
        # Exactly one separator byte between maxval and the pixel bytes.
        if scan.pos >= len(data) or data[scan.pos : scan.pos + 1] not in _WS:
            raise NetpbmError("missing separator before pixel data", scan.pos)
        payload_start = scan.pos + 1
        itemsize = 2 if maxval > 255 else 1
        needed = count * itemsize
        if len(data) - payload_start < needed:
            raise NetpbmError(
                f"truncated pixel data, expected {needed} bytes, got {len(data) - payload_start}",
                len(data),
            )
        dtype = ">u2" if itemsize == 2 else np.uint8
        values = np.frombuffer(data, dtype=dtype, count=count, offset=payload_start).astype(np.int64)
        over = np.flatnonzero(values > maxval)
        if over.size:
            raise NetpbmError(
                f"sample value {values[over[0]]} exceeds maxval {maxval}",
                payload_start + int(over[0]) * itemsize,
            )
    else:
        values = np.empty(count, dtype=np.int64)
        for i in range(count):
            values[i] = scan.next_int("sample", 0, maxval)

    arr = values.astype(np.float64) / maxval
    if color:
        return ColorImage(arr.reshape(height, width, 3))
    return GrayImage(arr.reshape(height, width))


def encode_pgm(img: GrayImage) -> bytes:
    """Encode as binary PGM (P5) at maxval 255."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    quantized = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
    return header + quantized.tobytes()


# ---------------------------------------------------------------------------
# filters


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur, kernel truncated at radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    k = _gaussian_kernel(sigma)
    out = correlate1d(img.pixels, k, axis=1, mode="nearest")
    out = correlate1d(out, k, axis=0, mode="nearest")
    return GrayImage(np.clip(out, 0.0, 1.0))


def scharr_gradients(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Scharr image gradients (Ix, Iy), positive along increasing x resp. y.

    The derivative tap spans two pixels, so a linear ramp of slope s maps to a
    constant s away from the (clamped) border.  Outputs are plain arrays: they
    are signed and not confined to [0, 1].
    """
    p = img.pixels
    if p.shape[0] < 3 or p.shape[1] < 3:
        raise ValueError(f"image must be at least 3x3 for gradients, got {p.shape}")
    ix = correlate1d(p, _SCHARR_SMOOTH, axis=0, mode="nearest")
    ix = correlate1d(ix, _SCHARR_DERIV, axis=1, mode="nearest")
    iy = correlate1d(p, _SCHARR_SMOOTH, axis=1, mode="nearest")
    iy = correlate1d(iy, _SCHARR_DERIV, axis=0, mode="nearest")
    return ix, iy


def build_pyramid(img: GrayImage, levels: int) -> ImagePyramid:
    """Blur-and-decimate stack: each level blurs with sigma=1 and keeps every
    second pixel of the previous one."""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    stack = [img]
    while len(stack) < levels:
        cur = stack[-1]
        if cur.width // 2 < MIN_LEVEL_PX or cur.height // 2 < MIN_LEVEL_PX:
            break
        blurred = gaussian_blur(cur, 1.0)
        # [::2] alone would round odd dimensions up; the contract is floor
        down = blurred.pixels[::2, ::2][: cur.height // 2, : cur.width // 2]
        stack.append(GrayImage(down))
    return ImagePyramid(levels=tuple(stack), requested_levels=levels)


# ---------------------------------------------------------------------------
# geometry


def crop(img: GrayImage, region: BBox) -> tuple[GrayImage, tuple[int, int]]:
    """Extract the axis-aligned patch covering region, rounded outward to
    whole pixels and clipped to the image.

    Returns the patch and the (x, y) origin of its top-left pixel in the
    source image.  Raises ValueError when the region lies entirely outside.
    """
    x0 = max(0, math.floor(region.x1))
    y0 = max(0, math.floor(region.y1))
    x1 = min(img.width, math.ceil(region.x2))
    y1 = min(img.height, math.ceil(region.y2))
    if x1 <= x0 or y1 <= y0:
        raise ValueError(
            f"crop region (cx={region.cx}, cy={region.cy}, w={region.w}, h={region.h}) "
            f"lies outside a {img.width}x{img.height} image"
        )
    return GrayImage(img.pixels[y0:y1, x0:x1]), (x0, y0)


def sample_bilinear_many(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear samples at float coordinates, clamped to the pixel grid.

    Coordinates index pixel centers: (0, 0) is the top-left pixel and
    (w-1, h-1) the bottom-right one.  Works on arbitrary-shaped coordinate
    arrays and returns samples of the same shape.
    """
    h, w = pixels.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.intp), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y).astype(np.intp), 0, max(h - 2, 0))
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    p00 = pixels[y0, x0]
    p01 = pixels[y0, x1]
    p10 = pixels[y1, x0]
    p11 = pixels[y1, x1]
    top = p00 + fx * (p01 - p00)
    bot = p10 + fx * (p11 - p10)
    return top + fy * (bot - top)


def sample_bilinear(img: GrayImage, x: float, y: float) -> float:
    """Bilinear sample of one point; coordinates outside the grid clamp to it."""
    return float(sample_bilinear_many(img.pixels, np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)))
