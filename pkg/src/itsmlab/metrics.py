"""Explainability and recognition metrics.

Mask-level quality is scored by grid-search IoU: each (sample, present
class) pair is thresholded at every step of a fixed grid (0.01 by default)
and the best IoU is kept, removing manual-threshold bias. Score-level
quality is the score contrast: mean map value over a class's foreground
minus the mean over background, in [-100, 100]. Recognition is mean average
precision over per-sample confidence vectors.

Conventions, fixed here for reproducibility: ignore-label pixels (255) are
excluded from every metric; a class's background is every non-ignore pixel
not labeled with that class; per-class means average per-sample values, and
dataset means average the per-class means without weighting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyForeground, ShapeMismatch
from .itsm import Itsm
from .tensor_io import IGNORE_LABEL

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.01


def threshold_grid(step: float = DEFAULT_STEP) -> np.ndarray:
    """The search grid {0, step, ..., 1} as exact k/n values."""
    if not 0.0 < step <= 1.0:
        raise ValueError(f"step must be in (0, 1], got {step}")
    n = round(1.0 / step)
    return np.arange(n + 1) / n


def best_threshold_iou(
    slice_map: np.ndarray,
    gt: np.ndarray,
    ignore: np.ndarray | None = None,
    step: float = DEFAULT_STEP,
) -> tuple[float, float]:
    """Best IoU over the threshold grid; ties resolve to the smallest threshold.

    The predicted mask at threshold t is ``slice_map >= t``; ignore pixels are
    excluded from both intersection and union.
    """
    slice_map = np.asarray(slice_map, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    if slice_map.shape != gt.shape:
        raise ShapeMismatch(f"map {slice_map.shape} vs ground truth {gt.shape}")
    if ignore is None:
        valid = np.ones_like(gt)
    else:
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != gt.shape:
            raise ShapeMismatch(f"ignore {ignore.shape} vs ground truth {gt.shape}")
        valid = ~ignore

    gt_valid = gt & valid
    n_fg = int(gt_valid.sum())
    if n_fg == 0:
        raise EmptyForeground("ground truth has no non-ignore foreground pixel")

    vals_valid = np.sort(slice_map[valid].ravel())
    vals_fg = np.sort(slice_map[gt_valid].ravel())
    ts = threshold_grid(step)
    pred = vals_valid.size - np.searchsorted(vals_valid, ts, side="left")
    inter = vals_fg.size - np.searchsorted(vals_fg, ts, side="left")
    union = pred + n_fg - inter
    iou = inter / union  # union >= n_fg >= 1
    best = int(np.argmax(iou))  # first occurrence == smallest threshold
    return float(iou[best]), float(ts[best])


def score_contrast(
    slice_map: np.ndarray, gt: np.ndarray, ignore: np.ndarray | None = None
) -> float | None:
    """Mean foreground value minus mean background value, or None if either side is empty."""
    slice_map = np.asarray(slice_map, dtype=np.float64)
    gt = np.asarray(gt, dtype=bool)
    valid = np.ones_like(gt) if ignore is None else ~np.asarray(ignore, dtype=bool)
    fg = gt & valid
    bg = (~gt) & valid
    if not fg.any() or not bg.any():
        return None
    return float(slice_map[fg].mean() - slice_map[bg].mean())


@dataclass(frozen=True)
class SampleScores:
    """Per-class explainability terms for one sample."""

    id: str
    iou: dict[int, float]
    threshold: dict[int, float]
    sc: dict[int, float]
    skipped_sc: tuple[int, ...] = ()


def score_sample(
    itsm: Itsm,
    gt_mask: np.ndarray,
    present: Iterable[int],
    sample_id: str = "",
    step: float = DEFAULT_STEP,
) -> SampleScores:
    """Grid-search IoU and score contrast for every present class of one sample."""
    gt_mask = np.asarray(gt_mask)
    ignore = gt_mask == IGNORE_LABEL
    slot = {cls: i for i, cls in enumerate(itsm.class_ids)}
    iou: dict[int, float] = {}
    threshold: dict[int, float] = {}
    sc: dict[int, float] = {}
    skipped: list[int] = []
    for cls in sorted(present):
        if cls not in slot:
            continue
        slice_map = itsm.map[:, :, slot[cls]]
        gt = gt_mask == cls + 1
        iou[cls], threshold[cls] = best_threshold_iou(slice_map, gt, ignore, step=step)
        contrast = score_contrast(slice_map, gt, ignore)
        if contrast is None:
            skipped.append(cls)
            logger.info("sample %s class %d skipped for score contrast (empty side)", sample_id, cls)
        else:
            sc[cls] = contrast
    return SampleScores(id=sample_id, iou=iou, threshold=threshold, sc=sc, skipped_sc=tuple(skipped))


def _per_class_mean(values: dict[int, list[float]]) -> dict[int, float]:
    return {cls: float(np.mean(vals)) for cls, vals in sorted(values.items()) if vals}


def miou(
    samples: Iterable[tuple[Itsm, np.ndarray, Iterable[int]]],
    step: float = DEFAULT_STEP,
) -> tuple[dict[int, float], float]:
    """Dataset grid-search mIoU in percent.

    ``samples`` yields (itsm, gt_mask, present_classes) triples. Per-sample
    IoUs are averaged within each class, then across classes.
    """
    acc: dict[int, list[float]] = {}
    for i, (itsm, gt_mask, present) in enumerate(samples):
        scores = score_sample(itsm, gt_mask, present, sample_id=str(i), step=step)
        for cls, value in scores.iou.items():
            acc.setdefault(cls, []).append(value)
    per_class = {cls: v * 100.0 for cls, v in _per_class_mean(acc).items()}
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def msc(
    samples: Iterable[tuple[Itsm, np.ndarray, Iterable[int]]],
) -> tuple[dict[int, float], float]:
    """Dataset mean score contrast in percent (range -100..100)."""
    acc: dict[int, list[float]] = {}
    for i, (itsm, gt_mask, present) in enumerate(samples):
        scores = score_sample(itsm, gt_mask, present, sample_id=str(i))
        for cls, value in scores.sc.items():
            acc.setdefault(cls, []).append(value)
    per_class = {cls: v * 100.0 for cls, v in _per_class_mean(acc).items()}
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Area under the interpolated (non-increasing) precision-recall curve.

    Samples are ranked by descending score; ties keep input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise ShapeMismatch(f"scores {scores.shape} vs positives {positives.shape}")
    n_pos = int(positives.sum())
    if n_pos == 0:
        raise EmptyForeground("no positive samples for this class")
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, scores.size + 1)
    recall = tp / n_pos
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    drecall = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(drecall * envelope))


def mean_ap(
    scores: np.ndarray, labels: Sequence[Iterable[int]], class_ids: Sequence[int]
) -> tuple[dict[int, float], float]:
    """Mean average precision in percent over classes with at least one positive.

    ``scores`` is (S, K) aligned with ``class_ids``; ``labels[i]`` holds the
    class ids present in sample i. Classes without positives are excluded
    and logged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != len(labels) or scores.shape[1] != len(class_ids):
        raise ShapeMismatch(
            f"scores {scores.shape} vs {len(labels)} samples x {len(class_ids)} classes"
        )
    label_sets = [set(lab) for lab in labels]
    per_class: dict[int, float] = {}
    for col, cls in enumerate(class_ids):
        positives = np.array([cls in lab for lab in label_sets], dtype=bool)
        if not positives.any():
            logger.info("class %d has no positive samples; excluded from mAP", cls)
            continue
        per_class[cls] = average_precision(scores[:, col], positives) * 100.0
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


@dataclass
class MetricsReport:
    """Dataset-level scores plus their per-class tables (all in percent)."""

    per_class_iou: dict[str, float]
    miou: float
    per_class_sc: dict[str, float]
    msc: float
    per_class_ap: dict[str, float]
    mean_ap: float
    sample_count: int
    skipped_sc_pairs: int = 0
    class_sample_counts: dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "miou": self.miou,
            "msc": self.msc,
            "map": self.mean_ap,
            "sample_count": self.sample_count,
            "skipped_sc_pairs": self.skipped_sc_pairs,
            "per_class": {
                name: {
                    "iou": self.per_class_iou.get(name),
                    "sc": self.per_class_sc.get(name),
                    "ap": self.per_class_ap.get(name),
                    "samples": self.class_sample_counts.get(name, 0),
                }
                for name in sorted(
                    set(self.per_class_iou) | set(self.per_class_sc) | set(self.per_class_ap)
                )
            },
        }


def build_report(
    sample_scores: Sequence[SampleScores],
    ap_per_class: dict[int, float],
    map_pct: float,
    class_names: Sequence[str],
) -> MetricsReport:
    """Aggregate per-sample scores and recognition APs into one report."""
    iou_acc: dict[int, list[float]] = {}
    sc_acc: dict[int, list[float]] = {}
    skipped = 0
    for scores in sample_scores:
        for cls, value in scores.iou.items():
            iou_acc.setdefault(cls, []).append(value)
        for cls, value in scores.sc.items():
            sc_acc.setdefault(cls, []).append(value)
        skipped += len(scores.skipped_sc)

    per_class_iou = {class_names[c]: v * 100.0 for c, v in _per_class_mean(iou_acc).items()}
    per_class_sc = {class_names[c]: v * 100.0 for c, v in _per_class_mean(sc_acc).items()}
    per_class_ap = {class_names[c]: v for c, v in sorted(ap_per_class.items())}
    counts = {class_names[c]: len(v) for c, v in sorted(iou_acc.items())}
    return MetricsReport(
        per_class_iou=per_class_iou,
        miou=float(np.mean(list(per_class_iou.values()))) if per_class_iou else 0.0,
        per_class_sc=per_class_sc,
        msc=float(np.mean(list(per_class_sc.values()))) if per_class_sc else 0.0,
        per_class_ap=per_class_ap,
        mean_ap=map_pct,
        sample_count=len(sample_scores),
        skipped_sc_pairs=skipped,
        class_sample_counts=counts,
    )
