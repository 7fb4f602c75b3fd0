"""End-to-end dataset export into the interchange bundle.

One bundle per image: pre-projection image tokens and class token, the
last-block attention row, plus byte-identical copies of the source image and
mask. The text bank and the encoder's projection matrices are written once.
Everything a run writes is a pure function of the weights, the dataset, and
the job, so re-exports are bit-identical.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import models
from .errors import DatasetResolutionError, ModelResolutionError
from .ften import write_tensor
from .preprocess import load_rgb, to_model_input
from .voc import CLASSES, walk

logger = logging.getLogger("itsm_exporter")

PROMPT = "a photo of the"
IGNORE = 255


@dataclass(frozen=True)
class ExportJob:
    model: str
    dataset: Path
    split: str
    out: Path
    checkpoint: Path | None = None
    attention_arch: str | None = None
    attention_checkpoint: Path | None = None
    random_init: bool = False
    seed: int = 0
    device: str = "cpu"
    batch_size: int = 8
    limit: int | None = None


def _acquire_clip(job: ExportJob) -> models.Clip:
    spec = models.resolve_spec(job.model)
    model = models.build_clip(spec, seed=job.seed)
    if job.checkpoint is not None:
        models.load_clip_checkpoint(model, job.checkpoint)
    elif not job.random_init:
        raise ModelResolutionError(
            f"no weights for '{job.model}': pass --checkpoint PATH to released weights, "
            "or --random-init for deliberately untrained towers"
        )
    return model.to(job.device)


def _acquire_attention_tower(job: ExportJob, main: models.Clip) -> models.VisionTower | None:
    if job.attention_arch is None:
        if job.attention_checkpoint is not None:
            raise ModelResolutionError("--attention-checkpoint requires --attention-arch")
        return None
    cfg = models.resolve_spec(job.attention_arch).vision
    if cfg.grid != main.spec.vision.grid:
        raise ModelResolutionError(
            f"attention grid {cfg.grid} does not match the feature grid "
            f"{main.spec.vision.grid}; choose towers with equal patch layouts"
        )
    tower = models.build_vision(cfg, seed=job.seed)
    if job.attention_checkpoint is not None:
        models.load_vision_checkpoint(tower, job.attention_checkpoint)
    elif not job.random_init:
        raise ModelResolutionError(
            f"no weights for attention tower '{job.attention_arch}': "
            "pass --attention-checkpoint PATH or --random-init"
        )
    return tower.to(job.device)


def _weights_tag(arch: str, checkpoint: Path | None) -> str:
    return f"{arch}={checkpoint.name if checkpoint else 'random-init'}"


def _mask_labels(mask_path: Path, sid: str) -> tuple[list[int], tuple[int, int]]:
    with Image.open(mask_path) as img:
        arr = np.asarray(img)
    if arr.ndim != 2:
        raise DatasetResolutionError(f"sample {sid}: mask must be single-channel, got {arr.shape}")
    values = np.unique(arr)
    bad = [int(v) for v in values if v != 0 and v != IGNORE and v > len(CLASSES)]
    if bad:
        raise DatasetResolutionError(
            f"sample {sid}: mask values {bad} exceed the {len(CLASSES)}-class VOC list"
        )
    labels = sorted(int(v) - 1 for v in values if 0 < v < IGNORE)
    return labels, arr.shape


def export_dataset(job: ExportJob) -> Path:
    """Export one split; returns the manifest path."""
    model = _acquire_clip(job)
    attention_tower = _acquire_attention_tower(job, model)
    items = walk(job.dataset, job.split)
    if job.limit is not None:
        items = items[: job.limit]

    out = Path(job.out)
    samples_dir = out / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)

    bank = models.encode_text_bank(model, list(CLASSES), PROMPT)
    write_tensor(out / "text_bank.ften", bank.cpu().numpy())
    write_tensor(out / "proj_image.ften", model.visual.proj.detach().cpu().numpy())
    write_tensor(out / "proj_text.ften", model.text_projection.detach().cpu().numpy())

    grid = model.spec.vision.grid
    attention_arch = job.attention_arch or job.model
    attention_ckpt = job.attention_checkpoint if job.attention_arch else job.checkpoint
    attention_kind = (
        "last-block cls-query post-softmax per-head; "
        + _weights_tag(attention_arch, attention_ckpt)
    )

    entries = []
    size = model.spec.vision.image_size
    for start in range(0, len(items), job.batch_size):
        chunk = items[start : start + job.batch_size]
        batch = torch.stack(
            [to_model_input(load_rgb(item.image), size) for item in chunk]
        ).to(job.device)
        with torch.inference_mode():
            cls_tok, tokens, attn = model.visual(batch)
            if attention_tower is not None:
                _, _, attn = attention_tower(batch)
        for i, item in enumerate(chunk):
            labels, mask_shape = _mask_labels(item.mask, item.id)
            entry = {
                "id": item.id,
                "image_tokens": f"samples/{item.id}.tokens.ften",
                "class_token": f"samples/{item.id}.class.ften",
                "attention": f"samples/{item.id}.attn.ften",
                "gt_mask": f"samples/{item.id}.mask.png",
                "image": f"samples/{item.id}{item.image.suffix}",
                "image_size": [int(mask_shape[0]), int(mask_shape[1])],
                "grid_size": [grid, grid],
                "labels": labels,
            }
            write_tensor(out / entry["image_tokens"], tokens[i].cpu().numpy())
            write_tensor(out / entry["class_token"], cls_tok[i].cpu().numpy())
            write_tensor(out / entry["attention"], attn[i].cpu().numpy())
            shutil.copyfile(item.mask, out / entry["gt_mask"])
            shutil.copyfile(item.image, out / entry["image"])
            entries.append(entry)
        logger.info("exported %d/%d samples", len(entries), len(items))

    manifest = {
        "version": 1,
        "classes": list(CLASSES),
        "prompt": PROMPT,
        "split": job.split,
        "text_bank": "text_bank.ften",
        "projections": {"image": "proj_image.ften", "text": "proj_text.ften"},
        "attention_kind": attention_kind,
        "samples": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path
