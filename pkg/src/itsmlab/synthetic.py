"""Deterministic synthetic dataset with known foreground geometry.

Each sample is a rectangle of foreground cells on a token grid. Foreground
tokens are drawn close to their class's text embedding (cosine in a fixed
range), background tokens are isotropic unit noise, and the attention mask
highlights the true foreground. In ``inverted`` mode foreground tokens are
negated, which makes raw similarity maps prefer the background on purpose.

Class embeddings are orthonormal, so cross-class similarity is pure noise.
The fixture exists to make pipeline properties checkable: maps, pooling,
shift counts, metrics, and training all have predictable behaviour here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .tensor_io import SampleRecord, TextBank, write_tensor

MODE_ALIGNED = "aligned"
MODE_INVERTED = "inverted"

PROMPT = "a photo of the"


def orthonormal_embeddings(num_classes: int, channels: int, seed: int) -> np.ndarray:
    """Rows of a sign-fixed QR basis; pairwise-orthogonal unit vectors."""
    if num_classes > channels:
        raise ValueError(f"cannot fit {num_classes} orthonormal rows in {channels} dims")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((channels, channels)))
    q = q * np.sign(np.diag(r))  # make the factorization sign-deterministic
    return np.ascontiguousarray(q[:num_classes])


@dataclass(frozen=True)
class FixtureConfig:
    """Knobs for the generated dataset."""

    num_samples: int = 40
    num_classes: int = 20
    channels: int = 32
    grid: tuple[int, int] = (14, 14)
    cell_pixels: int = 4
    heads: int = 4
    mode: str = MODE_ALIGNED
    seed: int = 7
    cos_range: tuple[float, float] = (0.8, 0.95)
    rect_cells: tuple[int, int] = (5, 9)
    bg_attention: float = 0.1

    def __post_init__(self) -> None:
        if self.mode not in (MODE_ALIGNED, MODE_INVERTED):
            raise ValueError(f"unknown mode {self.mode!r}")
        lo, hi = self.rect_cells
        if not 1 <= lo <= hi <= min(self.grid):
            raise ValueError(f"rect_cells {self.rect_cells} does not fit grid {self.grid}")

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.grid[0] * self.cell_pixels, self.grid[1] * self.cell_pixels)


def make_text_bank(cfg: FixtureConfig) -> TextBank:
    names = tuple(f"class_{k:02d}" for k in range(cfg.num_classes))
    return TextBank(
        class_names=names,
        embeddings=orthonormal_embeddings(cfg.num_classes, cfg.channels, cfg.seed),
        prompt=PROMPT,
    )


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def build_sample(
    index: int, bank: TextBank, cfg: FixtureConfig, rng: np.random.Generator
) -> SampleRecord:
    """One rectangle sample; class cycles with the sample index."""
    h, w = cfg.grid
    cls = index % cfg.num_classes
    anchor = bank.embeddings[cls]

    lo, hi = cfg.rect_cells
    rect_h = int(rng.integers(lo, hi + 1))
    rect_w = int(rng.integers(lo, hi + 1))
    top = int(rng.integers(0, h - rect_h + 1))
    left = int(rng.integers(0, w - rect_w + 1))
    fg_cells = np.zeros((h, w), dtype=bool)
    fg_cells[top : top + rect_h, left : left + rect_w] = True
    fg_flat = fg_cells.ravel()

    n_fg = int(fg_flat.sum())
    n_bg = fg_flat.size - n_fg
    cos = rng.uniform(*cfg.cos_range, size=n_fg)
    raw = rng.standard_normal((n_fg, cfg.channels))
    ortho = _unit_rows(raw - np.outer(raw @ anchor, anchor))
    fg_tokens = cos[:, None] * anchor + np.sqrt(1.0 - cos**2)[:, None] * ortho
    if cfg.mode == MODE_INVERTED:
        fg_tokens = -fg_tokens
    bg_tokens = _unit_rows(rng.standard_normal((n_bg, cfg.channels)))

    tokens = np.empty((fg_flat.size, cfg.channels))
    tokens[fg_flat] = fg_tokens
    tokens[~fg_flat] = bg_tokens

    base = np.where(fg_flat, 1.0, cfg.bg_attention)
    attention = np.clip(
        base[None, :] + rng.uniform(-0.02, 0.02, size=(cfg.heads, fg_flat.size)), 0.0, None
    )

    class_token = _unit_rows(
        (anchor + 0.15 * rng.standard_normal(cfg.channels))[None, :]
    )

    mask = np.kron(fg_cells, np.ones((cfg.cell_pixels, cfg.cell_pixels), dtype=np.uint8))
    mask = (mask * (cls + 1)).astype(np.uint8)

    return SampleRecord(
        id=f"s{index:04d}",
        image_tokens=_freeze(tokens),
        class_token=_freeze(class_token),
        attention=_freeze(attention),
        gt_mask=_freeze(mask),
        present_classes=frozenset({cls}),
        image_size=cfg.image_size,
        grid_size=cfg.grid,
    )


def build_dataset(cfg: FixtureConfig) -> tuple[list[SampleRecord], TextBank]:
    """All samples plus the shared text bank, fully determined by cfg.seed."""
    bank = make_text_bank(cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    records = [build_sample(i, bank, cfg, rng) for i in range(cfg.num_samples)]
    return records, bank


def training_pairs(
    records: list[SampleRecord], bank: TextBank
) -> list[tuple[SampleRecord, np.ndarray]]:
    """Pair every record with its class embedding as the caption."""
    pairs = []
    for record in records:
        if not record.present_classes:
            continue
        cls = min(record.present_classes)
        pairs.append((record, bank.embeddings[cls]))
    return pairs


def write_fixture(out_dir: Path | str, cfg: FixtureConfig) -> Path:
    """Write the dataset as a manifest bundle; returns the manifest path.

    Identity projection matrices are included so the raw token space acts
    as the original projection space.
    """
    out = Path(out_dir)
    samples_dir = out / "samples"
    samples_dir.mkdir(parents=True, exist_ok=True)

    records, bank = build_dataset(cfg)
    write_tensor(out / "text_bank.ften", bank.embeddings)
    identity = np.eye(cfg.channels)
    write_tensor(out / "proj_image.ften", identity)
    write_tensor(out / "proj_text.ften", identity)

    rng = np.random.default_rng(cfg.seed + 2)
    entries = []
    for record in records:
        sid = record.id
        write_tensor(samples_dir / f"{sid}.tokens.ften", record.image_tokens)
        write_tensor(samples_dir / f"{sid}.class.ften", record.class_token)
        write_tensor(samples_dir / f"{sid}.attn.ften", record.attention)
        Image.fromarray(record.gt_mask, mode="L").save(samples_dir / f"{sid}.mask.png")
        height, width = record.image_size
        base = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        Image.fromarray(base, mode="RGB").save(samples_dir / f"{sid}.png")
        entries.append(
            {
                "id": sid,
                "image_tokens": f"samples/{sid}.tokens.ften",
                "class_token": f"samples/{sid}.class.ften",
                "attention": f"samples/{sid}.attn.ften",
                "gt_mask": f"samples/{sid}.mask.png",
                "image": f"samples/{sid}.png",
                "image_size": list(record.image_size),
                "grid_size": list(record.grid_size),
                "labels": sorted(record.present_classes),
            }
        )

    manifest = {
        "version": 1,
        "classes": list(bank.class_names),
        "prompt": bank.prompt,
        "split": "synthetic",
        "attention_kind": "synthetic-foreground-mask",
        "text_bank": "text_bank.ften",
        "projections": {"image": "proj_image.ften", "text": "proj_text.ften"},
        "samples": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path
