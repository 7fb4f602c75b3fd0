"""VOC-layout segmentation dataset walker.

Expects the standard tree under the dataset root:

    ImageSets/Segmentation/<split>.txt   one image id per line
    JPEGImages/<id>.jpg
    SegmentationClass/<id>.png           indexed mask, 0 bg, 1..20 classes, 255 ignore
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import DatasetResolutionError

CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle",
    "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)


@dataclass(frozen=True)
class VocItem:
    id: str
    image: Path
    mask: Path


def walk(root: str | Path, split: str) -> list[VocItem]:
    """All items of a split, in split-file order; every file must exist."""
    root = Path(root)
    split_file = root / "ImageSets" / "Segmentation" / f"{split}.txt"
    if not split_file.is_file():
        raise DatasetResolutionError(
            f"split list not found: {split_file} "
            f"(expected a VOC tree with ImageSets/Segmentation/{split}.txt)"
        )
    ids = [line.strip() for line in split_file.read_text().splitlines() if line.strip()]
    if not ids:
        raise DatasetResolutionError(f"{split_file}: split is empty")
    items = []
    for sid in ids:
        image = root / "JPEGImages" / f"{sid}.jpg"
        mask = root / "SegmentationClass" / f"{sid}.png"
        for path in (image, mask):
            if not path.is_file():
                raise DatasetResolutionError(f"sample {sid}: missing {path}")
        items.append(VocItem(id=sid, image=image, mask=mask))
    return items
