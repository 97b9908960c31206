"""Shared fixtures: deterministic textured images and shifted frame pairs.

The acceptance tests additionally register their pass/fail lines here so the
terminal summary shows one line per criterion regardless of output capture.
"""

from __future__ import annotations

import numpy as np
import pytest

from roadctx.core import BBox
from roadctx.imaging import GrayImage, gaussian_blur

# (name, ok, detail) tuples appended by tests/test_acceptance.py.
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[acceptance] {name}: {status} ({detail})")


def make_texture(width: int, height: int, seed: int = 0, smooth: float = 1.0) -> GrayImage:
    """Band-limited noise in [0.1, 0.9]; blurring keeps gradients finite so
    sub-pixel interpolation behaves."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, 1.0, size=(height, width))
    if smooth > 0:
        a = gaussian_blur(GrayImage(a), smooth).pixels
    lo, hi = a.min(), a.max()
    return GrayImage(0.1 + 0.8 * (a - lo) / (hi - lo))


def shifted_pair(
    width: int, height: int, dx: int, dy: int, seed: int = 0, smooth: float = 1.0
) -> tuple[GrayImage, GrayImage]:
    """Two views of one texture where content moves by exactly (+dx, +dy)
    pixels from the first to the second.  Integer shifts keep brightness
    constancy exact."""
    pad = 2 * max(abs(dx), abs(dy), 1)
    big = make_texture(width + 2 * pad, height + 2 * pad, seed=seed, smooth=smooth)
    prev = big.pixels[pad : pad + height, pad : pad + width]
    nxt = big.pixels[pad - dy : pad - dy + height, pad - dx : pad - dx + width]
    return GrayImage(prev), GrayImage(nxt)


def full_region(img: GrayImage) -> BBox:
    return BBox(cx=img.width / 2, cy=img.height / 2, w=img.width, h=img.height)


def scene_pair(
    width: int, height: int, dx: int, dy: int, seed: int = 5
) -> tuple[GrayImage, GrayImage]:
    """Blurred backdrop with sharp patches, like the generated corpora.

    The patches give the coarse pyramid levels blob structure to lock onto;
    plain noise decorrelates after one decimation.
    """
    from roadctx.synth import noise_texture, textured_background

    pad = 20
    rng = np.random.default_rng(seed)
    big = textured_background(width + 2 * pad, height + 2 * pad, rng)
    for x, y, side in [(60, 50, 28), (130, 90, 36), (90, 120, 24)]:
        big[y : y + side, x : x + side] = noise_texture(side, side, rng)
    prev = GrayImage(big[pad : pad + height, pad : pad + width].copy())
    nxt = GrayImage(big[pad - dy : pad - dy + height, pad - dx : pad - dx + width].copy())
    return prev, nxt


@pytest.fixture
def rng():
    return np.random.default_rng(42)
