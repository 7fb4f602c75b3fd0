"""Semantic-shift diagnostics over per-channel point maps.

For each channel of a projected feature grid, the point map records the
token whose value is closest to the pooled value for that channel. Channels
whose point moves between foreground and background when switching from the
max-pooling reference to an average-like candidate are counted as shifted
(background-to-foreground or the reverse); reports are bucketed by the
foreground's share of the image and averaged per bucket.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyForeground, EmptyInput, GridMismatch, ShapeMismatch

BUCKET_SMALL = "(0,0.25]"
BUCKET_MID = "(0.25,0.75]"
BUCKET_LARGE = "(0.75,1]"
BUCKET_ALL = "(0,1]"
BUCKETS = (BUCKET_SMALL, BUCKET_MID, BUCKET_LARGE)

UNSHIFTED = 0
B2F = 1
F2B = 2


@dataclass(frozen=True)
class PointMap:
    """Per-channel best-matching token for one pooling method."""

    token_index: np.ndarray   # (C,) flat grid index, row-major
    pooled_value: np.ndarray  # (C,)
    distance: np.ndarray      # (C,) |map value at token - pooled value|
    method: str
    grid: tuple[int, int]

    @property
    def channels(self) -> int:
        return self.token_index.shape[0]


@dataclass(frozen=True)
class ShiftReport:
    b2f: int
    f2b: int
    unshifted: int
    channels: int
    fg_ratio: float
    bucket: str


def point_map(projected_maps: np.ndarray, pooled: np.ndarray, method: str) -> PointMap:
    """Locate, per channel, the grid token closest to the pooled value.

    ``projected_maps`` is (h, w, C); ``pooled`` is the pooled token after the
    same projection, (C,). Ties resolve to the lowest row-major index.
    """
    maps = np.asarray(projected_maps, dtype=np.float64)
    pooled = np.asarray(pooled, dtype=np.float64).reshape(-1)
    if maps.ndim != 3:
        raise ShapeMismatch(f"projected maps must be (h, w, C), got {maps.shape}")
    h, w, channels = maps.shape
    if pooled.shape[0] != channels:
        raise ShapeMismatch(f"pooled vector has {pooled.shape[0]} channels, maps have {channels}")
    flat = maps.reshape(h * w, channels)
    dist = np.abs(flat - pooled[None, :])
    idx = dist.argmin(axis=0)
    return PointMap(
        token_index=idx,
        pooled_value=pooled,
        distance=dist[idx, np.arange(channels)],
        method=method,
        grid=(h, w),
    )


def downsample_majority(
    fg: np.ndarray, grid: tuple[int, int], ignore: np.ndarray | None = None
) -> np.ndarray:
    """Majority-vote a pixel foreground mask down to the token grid.

    A cell is foreground when its non-ignore foreground pixels strictly
    outnumber its non-ignore background pixels; exact ties and all-ignore
    cells count as background.
    """
    fg = np.asarray(fg, dtype=bool)
    if fg.ndim != 2:
        raise ShapeMismatch(f"foreground mask must be 2-D, got {fg.shape}")
    height, width = fg.shape
    h, w = grid
    valid = np.ones_like(fg) if ignore is None else ~np.asarray(ignore, dtype=bool)

    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    cell = rows[:, None] * w + cols[None, :]
    fg_counts = np.bincount(cell[fg & valid].ravel(), minlength=h * w)
    bg_counts = np.bincount(cell[(~fg) & valid].ravel(), minlength=h * w)
    return (fg_counts > bg_counts).reshape(h, w)


def bucket_for(fg_ratio: float) -> str:
    if not 0.0 < fg_ratio <= 1.0:
        raise EmptyForeground(f"foreground ratio must be in (0, 1], got {fg_ratio}")
    if fg_ratio <= 0.25:
        return BUCKET_SMALL
    if fg_ratio <= 0.75:
        return BUCKET_MID
    return BUCKET_LARGE


def shift_categories(
    reference: PointMap, candidate: PointMap, fg_grid: np.ndarray
) -> np.ndarray:
    """Per-channel category: UNSHIFTED, B2F, or F2B."""
    if reference.grid != candidate.grid:
        raise GridMismatch(f"point-map grids differ: {reference.grid} vs {candidate.grid}")
    if reference.channels != candidate.channels:
        raise GridMismatch(
            f"channel counts differ: {reference.channels} vs {candidate.channels}"
        )
    fg_grid = np.asarray(fg_grid, dtype=bool)
    if fg_grid.shape != reference.grid:
        raise GridMismatch(f"foreground grid {fg_grid.shape} vs point grid {reference.grid}")
    flat = fg_grid.reshape(-1)
    ref_fg = flat[reference.token_index]
    cand_fg = flat[candidate.token_index]
    out = np.full(reference.channels, UNSHIFTED, dtype=np.int64)
    out[(~ref_fg) & cand_fg] = B2F
    out[ref_fg & (~cand_fg)] = F2B
    return out


def classify_shift(
    reference: PointMap,
    candidate: PointMap,
    gt_fg: np.ndarray,
    ignore: np.ndarray | None = None,
) -> ShiftReport:
    """Count shifted channels between the max reference and a candidate.

    ``gt_fg`` is the full-resolution boolean foreground mask; it is
    majority-downsampled to the point grid for classification, while the
    bucketing ratio comes from the full-resolution mask (ignore pixels
    excluded from the denominator).
    """
    gt_fg = np.asarray(gt_fg, dtype=bool)
    valid = np.ones_like(gt_fg) if ignore is None else ~np.asarray(ignore, dtype=bool)
    n_valid = int(valid.sum())
    n_fg = int((gt_fg & valid).sum())
    if n_valid == 0 or n_fg == 0:
        raise EmptyForeground("ground-truth mask has no (non-ignore) foreground pixels")
    fg_ratio = n_fg / n_valid

    fg_grid = downsample_majority(gt_fg, reference.grid, ignore=ignore)
    cats = shift_categories(reference, candidate, fg_grid)
    b2f = int(np.count_nonzero(cats == B2F))
    f2b = int(np.count_nonzero(cats == F2B))
    return ShiftReport(
        b2f=b2f,
        f2b=f2b,
        unshifted=reference.channels - b2f - f2b,
        channels=reference.channels,
        fg_ratio=fg_ratio,
        bucket=bucket_for(fg_ratio),
    )


def aggregate_shift(reports: Iterable[ShiftReport]) -> dict:
    """Mean shifted-channel counts per foreground-size bucket plus overall."""
    reports = list(reports)
    if not reports:
        raise EmptyInput("no shift reports to aggregate")

    def row(subset: Sequence[ShiftReport]) -> dict:
        if not subset:
            return {"samples": 0, "b2f": None, "f2b": None, "unshifted": None}
        return {
            "samples": len(subset),
            "b2f": float(np.mean([r.b2f for r in subset])),
            "f2b": float(np.mean([r.f2b for r in subset])),
            "unshifted": float(np.mean([r.unshifted for r in subset])),
        }

    table = {bucket: row([r for r in reports if r.bucket == bucket]) for bucket in BUCKETS}
    table[BUCKET_ALL] = row(reports)
    return table
