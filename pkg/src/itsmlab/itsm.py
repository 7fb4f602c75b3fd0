"""Image-text similarity maps: confidence scores, raw maps, finalization, reversal.

A similarity map is built in three fixed stages: cosine similarities between
projected image tokens and projected text rows (token grid resolution), a
reshape to the token grid followed by bilinear resize to image resolution,
and per-slice min-max normalization. The reversed variant flips the map,
``|1 - M|``, which corrects maps that score background above foreground.

All math runs in float64 and is deterministic for identical inputs.
Projections are plain ``C_in x C_out`` matrices; ``None`` means identity
(features already live in the joint space).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ShapeMismatch, ZeroNormVector

NORM_EPS = 1e-12
FLAT_EPS = 1e-12

SOURCE_CLIP = "clip"
SOURCE_RCLIP = "rclip"
SOURCE_ECLIP = "eclip"


@dataclass(frozen=True)
class Itsm:
    """Finalized similarity map, (H, W, N_t) with values in [0, 1]."""

    map: np.ndarray
    class_ids: tuple[int, ...]
    source: str

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.map.shape


def project(features: np.ndarray, projection: np.ndarray | None) -> np.ndarray:
    """Apply a linear projection (identity when projection is None)."""
    feats = np.asarray(features, dtype=np.float64)
    if projection is None:
        return feats
    proj = np.asarray(projection, dtype=np.float64)
    if proj.ndim != 2 or feats.shape[-1] != proj.shape[0]:
        raise ShapeMismatch(
            f"projection {proj.shape} does not accept features with C={feats.shape[-1]}"
        )
    return feats @ proj


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise ZeroNormVector("projected vector has L2 norm below 1e-12")
    return x / norms


def confidence_scores(
    class_token: np.ndarray,
    text: np.ndarray,
    proj_image: np.ndarray | None = None,
    proj_text: np.ndarray | None = None,
) -> np.ndarray:
    """Per-class cosine similarity of the projected class token, shape (N_t,)."""
    token = np.asarray(class_token, dtype=np.float64).reshape(1, -1)
    z_img = l2_normalize_rows(project(token, proj_image))
    z_txt = l2_normalize_rows(project(np.asarray(text, dtype=np.float64), proj_text))
    if z_img.shape[1] != z_txt.shape[1]:
        raise ShapeMismatch(
            f"projected dims differ: image {z_img.shape[1]} vs text {z_txt.shape[1]}"
        )
    return (z_img @ z_txt.T)[0]


def itsm_raw(
    image_tokens: np.ndarray,
    text: np.ndarray,
    proj_image: np.ndarray | None = None,
    proj_text: np.ndarray | None = None,
) -> np.ndarray:
    """Token-resolution similarity map, shape (N_i, N_t), values in [-1, 1]."""
    tokens = np.asarray(image_tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ShapeMismatch(f"image tokens must be 2-D, got {tokens.shape}")
    z_img = l2_normalize_rows(project(tokens, proj_image))
    z_txt = l2_normalize_rows(project(np.asarray(text, dtype=np.float64), proj_text))
    if z_img.shape[1] != z_txt.shape[1]:
        raise ShapeMismatch(
            f"projected dims differ: image {z_img.shape[1]} vs text {z_txt.shape[1]}"
        )
    return z_img @ z_txt.T


def bilinear_resize(src: np.ndarray, out_size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centers, edge-clamped.

    Source coordinate for output index d along an axis of source length S_src
    and output length S_dst is ``(d + 0.5) * S_src / S_dst - 0.5``, clamped to
    ``[0, S_src - 1]``. Works on (h, w) or (h, w, K) arrays; slices along the
    trailing axis are resized independently.
    """
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape[:2]
    out_h, out_w = out_size
    if out_h < 1 or out_w < 1:
        raise ShapeMismatch(f"output size must be >= 1, got {out_size}")

    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).reshape(out_h, 1)
    wx = (xs - x0).reshape(1, out_w)
    if src.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]

    top = src[y0][:, x0] * (1.0 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1.0 - wx) + src[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy


def minmax_normalize_slices(maps: np.ndarray) -> np.ndarray:
    """Min-max normalize each trailing-axis slice; flat slices become zeros."""
    lo = maps.min(axis=(0, 1), keepdims=True)
    hi = maps.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    flat = span < FLAT_EPS
    safe = np.where(flat, 1.0, span)
    out = (maps - lo) / safe
    return np.where(flat, 0.0, out)


def finalize_itsm(
    raw: np.ndarray,
    grid: tuple[int, int],
    out_size: tuple[int, int],
    class_ids: tuple[int, ...] | None = None,
    source: str = SOURCE_CLIP,
) -> Itsm:
    """Reshape a raw (N_i, N_t) map to the grid, resize, then normalize."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ShapeMismatch(f"raw map must be 2-D, got {raw.shape}")
    h, w = grid
    n_i, n_t = raw.shape
    if h * w != n_i:
        raise ShapeMismatch(f"grid {h}x{w} does not cover {n_i} tokens")
    if class_ids is None:
        class_ids = tuple(range(n_t))
    if len(class_ids) != n_t:
        raise ShapeMismatch(f"{len(class_ids)} class ids for {n_t} map slices")

    grid_maps = raw.reshape(h, w, n_t)
    resized = bilinear_resize(grid_maps, out_size)
    return Itsm(map=minmax_normalize_slices(resized), class_ids=tuple(class_ids), source=source)


def rclip_reverse(itsm: Itsm) -> Itsm:
    """Flip a normalized map: out = |1 - map|. Involution on [0, 1] maps."""
    return replace(itsm, map=np.abs(1.0 - itsm.map), source=SOURCE_RCLIP)
