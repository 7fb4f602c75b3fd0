"""Shared miniature VOC tree used by the export tests."""

import numpy as np
import pytest
from PIL import Image


def _write_mask(path, shape, regions, ignore_border=0):
    """Indexed mask with the given {value: rect} regions; VOC-style palette."""
    arr = np.zeros(shape, dtype=np.uint8)
    for value, (top, left, bottom, right) in regions.items():
        arr[top:bottom, left:right] = value
    if ignore_border:
        arr[:ignore_border, :] = 255
    img = Image.fromarray(arr, mode="P")
    palette = [0] * 768
    palette[3:6] = [128, 0, 0]
    palette[765:768] = [224, 224, 192]
    img.putpalette(palette)
    img.save(path)


def _write_jpeg(path, shape, seed):
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 255, size=(*shape, 3), dtype=np.uint8)
    Image.fromarray(base, mode="RGB").save(path, quality=90)


@pytest.fixture(scope="session")
def voc_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("voc")
    (root / "ImageSets" / "Segmentation").mkdir(parents=True)
    (root / "JPEGImages").mkdir()
    (root / "SegmentationClass").mkdir()

    specs = {
        "2007_000001": ((48, 64), {1: (10, 20, 30, 50)}, 4),
        "2007_000002": ((64, 48), {16: (20, 10, 50, 40)}, 0),
        "2007_000003": ((56, 56), {4: (5, 5, 25, 25), 9: (30, 30, 50, 50)}, 2),
    }
    for i, (sid, (shape, regions, border)) in enumerate(specs.items()):
        _write_jpeg(root / "JPEGImages" / f"{sid}.jpg", shape, seed=100 + i)
        _write_mask(root / "SegmentationClass" / f"{sid}.png", shape, regions, border)

    ids = list(specs)
    (root / "ImageSets" / "Segmentation" / "val.txt").write_text("\n".join(ids) + "\n")
    (root / "ImageSets" / "Segmentation" / "train.txt").write_text("\n".join(ids[:2]) + "\n")
    return root
