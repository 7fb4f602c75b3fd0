"""Heatmap overlays and point-map figures.

The colormap runs blue (low) through green to red (high) along the HSV hue
circle. Exact per-value formula, with v clamped to [0, 1] and sector
position s = 4(1 - v), x = 1 - |s mod 2 - 1|:

    s in [0, 1): rgb = (1, x, 0)      red..yellow
    s in [1, 2): rgb = (x, 1, 0)      yellow..green
    s in [2, 3): rgb = (0, 1, x)      green..cyan
    s in [3, 4]: rgb = (0, x, 1)      cyan..blue

so v = 0 maps to (0, 0, 255), v = 0.5 to (0, 255, 0), v = 1 to (255, 0, 0).
Bytes are round(255 * channel).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IoFailure, ShapeMismatch
from .shift import PointMap


def colormap(values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to RGB bytes; output shape = input shape + (3,)."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    s = 4.0 * (1.0 - v)
    x = 1.0 - np.abs(np.mod(s, 2.0) - 1.0)
    zero = np.zeros_like(v)
    one = np.ones_like(v)
    sector = s[..., None]
    rgb = np.select(
        [sector < 1.0, sector < 2.0, sector < 3.0],
        [
            np.stack([one, x, zero], axis=-1),
            np.stack([x, one, zero], axis=-1),
            np.stack([zero, one, x], axis=-1),
        ],
        np.stack([zero, x, one], axis=-1),
    )
    return np.rint(255.0 * rgb).astype(np.uint8)


def heatmap(slice_map: np.ndarray) -> np.ndarray:
    """RGB rendering of one (H, W) map slice."""
    slice_map = np.asarray(slice_map)
    if slice_map.ndim != 2:
        raise ShapeMismatch(f"heatmap expects an (H, W) slice, got {slice_map.shape}")
    return colormap(slice_map)


def overlay(
    slice_map: np.ndarray, base: np.ndarray | None = None, alpha: float = 0.5
) -> np.ndarray:
    """Alpha-blend the heatmap over a base RGB image (heatmap alone if none)."""
    heat = heatmap(slice_map)
    if base is None:
        return heat
    base = np.asarray(base, dtype=np.float64)
    if base.shape != heat.shape:
        raise ShapeMismatch(f"base image {base.shape} vs heatmap {heat.shape}")
    blended = alpha * heat.astype(np.float64) + (1.0 - alpha) * base
    return np.rint(blended).astype(np.uint8)


def point_overlay(
    pm: PointMap,
    image_size: tuple[int, int],
    base: np.ndarray | None = None,
    color: tuple[int, int, int] = (255, 0, 0),
) -> np.ndarray:
    """Draw one disk per channel at its best-matching token's cell center.

    Disk radius grows with the pooled value (min-max scaled across channels),
    so stronger channels show as larger points.
    """
    height, width = image_size
    if base is None:
        canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    else:
        canvas = np.asarray(base, dtype=np.uint8).copy()
        if canvas.shape != (height, width, 3):
            raise ShapeMismatch(f"base image {canvas.shape} vs size {(height, width)}")

    grid_h, grid_w = pm.grid
    rows, cols = np.divmod(pm.token_index, grid_w)
    cy = (rows + 0.5) * height / grid_h
    cx = (cols + 0.5) * width / grid_w

    pooled = pm.pooled_value
    span = pooled.max() - pooled.min()
    norm = np.full_like(pooled, 0.5) if span < 1e-12 else (pooled - pooled.min()) / span
    max_radius = max(2.0, 0.06 * min(height, width))
    radii = 1.0 + norm * max_radius

    yy, xx = np.mgrid[0:height, 0:width]
    order = np.argsort(-radii, kind="stable")  # big disks first, small stay visible
    for ch in order:
        disk = (yy - cy[ch]) ** 2 + (xx - cx[ch]) ** 2 <= radii[ch] ** 2
        canvas[disk] = color
    return canvas


def load_base_image(path: Path | str, image_size: tuple[int, int]) -> np.ndarray:
    """Load an RGB base image, resizing to (H, W) when needed."""
    height, width = image_size
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if rgb.size != (width, height):
                rgb = rgb.resize((width, height), Image.BILINEAR)
            return np.array(rgb, dtype=np.uint8)
    except OSError as exc:
        raise IoFailure(f"cannot read image {path}: {exc}") from exc


def save_png(path: Path | str, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3) RGB bytes, got {rgb.shape}")
    try:
        Image.fromarray(rgb, mode="RGB").save(path)
    except OSError as exc:
        raise IoFailure(f"cannot write image {path}: {exc}") from exc
