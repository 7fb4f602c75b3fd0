"""Image loading and the fixed model-input transform.

Images are resized directly to the model's square input size (aspect ratio
is allowed to distort; there is no center crop) and normalized with the
standard CLIP channel statistics. Ground-truth masks are never resized; the
similarity maps get upsampled to the original resolution at evaluation time
instead, so labels stay exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)


def load_rgb(path: str | Path) -> Image.Image:
    with Image.open(path) as img:
        return img.convert("RGB")


def to_model_input(img: Image.Image, size: int) -> torch.Tensor:
    """(3, size, size) float32 tensor, normalized, no crop."""
    resized = img.resize((size, size), Image.Resampling.BICUBIC)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    arr = (arr - MEAN) / STD
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def mask_size(path: str | Path) -> tuple[int, int]:
    """(H, W) of a mask PNG without decoding the pixel data."""
    with Image.open(path) as img:
        w, h = img.size
    return h, w
