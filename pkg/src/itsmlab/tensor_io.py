"""Binary tensor interchange, dataset manifest, and ground-truth mask loading.

Tensor file layout (v1), all little-endian:

    magic ``FTEN`` (4 B) | version u8 = 1 | dtype u8 (0 = float32) |
    ndim u8 | pad u8 = 0 | ndim x u32 dims | row-major float32 payload

Tensors are plain ``numpy`` float32 arrays; every scalar must be finite and
every dimension >= 1. Ground-truth masks are 8-bit single-channel PNGs in
the VOC convention: 0 = background, value v in 1..254 = foreground class
with index v-1 into the manifest class list, 255 = ignore.

The manifest is a single JSON document (see ``load_manifest``); file paths
inside it are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import (
    BadMagic,
    InconsistentClassList,
    InvalidShape,
    IoFailure,
    MissingFile,
    MissingSample,
    NonFiniteValue,
    SchemaError,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedDtype,
)

MAGIC = b"FTEN"
FORMAT_VERSION = 1
DTYPE_F32 = 0
IGNORE_LABEL = 255
_HEADER = struct.Struct("<4sBBBB")


def _check_shape(shape: tuple[int, ...]) -> None:
    if len(shape) == 0:
        raise InvalidShape("tensor must have at least one dimension")
    if len(shape) > 255:
        raise InvalidShape(f"too many dimensions: {len(shape)}")
    for d in shape:
        if d < 1:
            raise InvalidShape(f"dimension sizes must be >= 1, got shape {shape}")


def write_tensor(path: str | Path, tensor: np.ndarray) -> None:
    """Write a float32 tensor in the v1 interchange layout."""
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    _check_shape(arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"refusing to write non-finite values to {path}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(dims)
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a v1 tensor file; byte-exact inverse of :func:`write_tensor`."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read tensor from {path}: {exc}") from exc

    if len(blob) < _HEADER.size or blob[:4] != MAGIC:
        raise BadMagic(f"{path}: not a tensor file (bad magic)")
    _, version, dtype, ndim, pad = _HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise UnsupportedDtype(f"{path}: unsupported format version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtype(f"{path}: unsupported dtype code {dtype}")
    if pad != 0:
        raise BadMagic(f"{path}: nonzero pad byte")
    if ndim == 0:
        raise InvalidShape(f"{path}: zero-dimensional tensor")

    dims_end = _HEADER.size + 4 * ndim
    if len(blob) < dims_end:
        raise TruncatedPayload(f"{path}: header truncated before dims")
    shape = struct.unpack_from(f"<{ndim}I", blob, _HEADER.size)
    _check_shape(shape)
    count = int(np.prod(shape, dtype=np.int64))
    expected = dims_end + 4 * count
    if len(blob) != expected:
        raise TruncatedPayload(
            f"{path}: payload holds {(len(blob) - dims_end) // 4} scalars, "
            f"shape {shape} requires {count}"
        )
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{path}: tensor contains NaN/Inf")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def read_mask(path: str | Path) -> np.ndarray:
    """Load an indexed/grayscale PNG as a uint8 label grid."""
    try:
        with Image.open(path) as img:
            if img.mode not in ("P", "L"):
                raise SchemaError(f"{path}: mask must be 8-bit single-channel, got mode {img.mode}")
            mask = np.array(img, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise MissingFile(f"mask file missing: {path}") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read mask {path}: {exc}") from exc
    if mask.ndim != 2:
        raise SchemaError(f"{path}: mask must be 2-D, got shape {mask.shape}")
    mask.flags.writeable = False
    return mask


def mask_foreground_classes(mask: np.ndarray) -> set[int]:
    """Class indices present in a label grid (VOC encoding, ignore excluded)."""
    values = np.unique(mask)
    return {int(v) - 1 for v in values if 0 < v < IGNORE_LABEL}


@dataclass(frozen=True)
class SampleRecord:
    """One image's exported bundle, immutable after load."""

    id: str
    image_tokens: np.ndarray          # (N_i, C)
    class_token: np.ndarray           # (1, C)
    attention: np.ndarray | None      # (N_h, N_i) or None
    gt_mask: np.ndarray               # (H, W) uint8 labels
    present_classes: frozenset[int]
    image_size: tuple[int, int]       # (H, W)
    grid_size: tuple[int, int]        # (h, w), h*w == N_i
    image_path: Path | None = None    # optional base image for rendering

    @property
    def num_tokens(self) -> int:
        return self.image_tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.image_tokens.shape[1]

    def without_attention(self) -> "SampleRecord":
        return SampleRecord(
            id=self.id,
            image_tokens=self.image_tokens,
            class_token=self.class_token,
            attention=None,
            gt_mask=self.gt_mask,
            present_classes=self.present_classes,
            image_size=self.image_size,
            grid_size=self.grid_size,
            image_path=self.image_path,
        )


@dataclass(frozen=True)
class TextBank:
    """Per-class text embeddings; row k belongs to class_names[k]."""

    class_names: tuple[str, ...]
    embeddings: np.ndarray            # (N_t, C_t)
    prompt: str

    def __post_init__(self) -> None:
        if self.embeddings.ndim != 2:
            raise ShapeMismatch(f"text embeddings must be 2-D, got shape {self.embeddings.shape}")
        if len(self.class_names) != self.embeddings.shape[0]:
            raise InconsistentClassList(
                f"{len(self.class_names)} class names vs {self.embeddings.shape[0]} embedding rows"
            )
        if len(self.class_names) < 1:
            raise InconsistentClassList("text bank needs at least one class")


@dataclass
class Manifest:
    """Parsed dataset manifest; iterate samples with :meth:`iter_samples`."""

    path: Path
    version: int
    classes: tuple[str, ...]
    prompt: str
    split: str | None
    sample_entries: list[dict]
    text_bank: TextBank | None
    projections: tuple[np.ndarray, np.ndarray] | None   # (image C_i x D, text C_t x D)
    attention_kind: str | None = None
    _root: Path = field(init=False)

    def __post_init__(self) -> None:
        self._root = self.path.parent

    def __len__(self) -> int:
        return len(self.sample_entries)

    @property
    def sample_ids(self) -> list[str]:
        return [e["id"] for e in self.sample_entries]

    def resolve(self, rel: str) -> Path:
        return self._root / rel

    def iter_samples(self) -> Iterator[SampleRecord]:
        """Yield validated SampleRecords lazily, in manifest order."""
        for entry in self.sample_entries:
            yield self.load_sample(entry)

    def get_sample(self, sample_id: str) -> SampleRecord:
        for entry in self.sample_entries:
            if entry["id"] == sample_id:
                return self.load_sample(entry)
        raise MissingSample(f"sample id not in manifest: {sample_id}")

    def load_sample(self, entry: dict) -> SampleRecord:
        sid = entry["id"]
        tokens = read_tensor(self.resolve(entry["image_tokens"]))
        class_token = read_tensor(self.resolve(entry["class_token"]))
        attention = None
        if entry.get("attention"):
            attention = read_tensor(self.resolve(entry["attention"]))
        mask = read_mask(self.resolve(entry["gt_mask"]))

        if tokens.ndim != 2:
            raise ShapeMismatch(f"sample {sid}: image_tokens must be 2-D, got {tokens.shape}")
        if class_token.ndim != 2 or class_token.shape[0] != 1:
            raise ShapeMismatch(f"sample {sid}: class_token must be 1xC, got {class_token.shape}")
        if class_token.shape[1] != tokens.shape[1]:
            raise ShapeMismatch(
                f"sample {sid}: channel mismatch, tokens C={tokens.shape[1]} "
                f"vs class token C={class_token.shape[1]}"
            )
        h, w = (int(v) for v in entry["grid_size"])
        if h * w != tokens.shape[0]:
            raise ShapeMismatch(
                f"sample {sid}: grid {h}x{w} does not cover {tokens.shape[0]} tokens"
            )
        height, width = (int(v) for v in entry["image_size"])
        if mask.shape != (height, width):
            raise ShapeMismatch(
                f"sample {sid}: mask shape {mask.shape} vs image_size {(height, width)}"
            )
        if attention is not None:
            if attention.ndim != 2 or attention.shape[1] != tokens.shape[0]:
                raise ShapeMismatch(
                    f"sample {sid}: attention shape {attention.shape} "
                    f"incompatible with {tokens.shape[0]} tokens"
                )

        labels = frozenset(int(v) for v in entry.get("labels", []))
        for k in labels:
            if not 0 <= k < len(self.classes):
                raise InconsistentClassList(f"sample {sid}: label {k} outside class list")
        in_mask = mask_foreground_classes(mask)
        bad = {v for v in in_mask if v >= len(self.classes)}
        if bad:
            raise InconsistentClassList(f"sample {sid}: mask values {sorted(bad)} outside class list")
        if not labels <= in_mask:
            raise InconsistentClassList(
                f"sample {sid}: labels {sorted(labels - in_mask)} not present in gt_mask"
            )

        image_path = self.resolve(entry["image"]) if entry.get("image") else None
        return SampleRecord(
            id=sid,
            image_tokens=tokens,
            class_token=class_token,
            attention=attention,
            gt_mask=mask,
            present_classes=labels,
            image_size=(height, width),
            grid_size=(h, w),
            image_path=image_path,
        )


_SAMPLE_REQUIRED = ("id", "image_tokens", "class_token", "gt_mask", "image_size", "grid_size", "labels")


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate a dataset manifest.

    File existence is checked eagerly for every referenced path; tensor
    contents are validated lazily when samples are loaded.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: cannot parse manifest: {exc}") from exc

    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: manifest root must be an object")
    if doc.get("version") != FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    classes = doc.get("classes")
    if not isinstance(classes, list) or not classes or not all(isinstance(c, str) for c in classes):
        raise SchemaError(f"{path}: 'classes' must be a non-empty list of strings")
    prompt = doc.get("prompt", "")
    if not isinstance(prompt, str):
        raise SchemaError(f"{path}: 'prompt' must be a string")
    samples = doc.get("samples")
    if not isinstance(samples, list):
        raise SchemaError(f"{path}: 'samples' must be a list")

    root = path.parent
    seen: set[str] = set()
    for entry in samples:
        if not isinstance(entry, dict):
            raise SchemaError(f"{path}: sample entries must be objects")
        for key in _SAMPLE_REQUIRED:
            if key not in entry:
                raise SchemaError(f"{path}: sample missing field '{key}'")
        sid = entry["id"]
        if not isinstance(sid, str):
            raise SchemaError(f"{path}: sample ids must be strings")
        if sid in seen:
            raise SchemaError(f"{path}: duplicate sample id '{sid}'")
        seen.add(sid)
        for key in ("image_size", "grid_size"):
            v = entry[key]
            if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) and x > 0 for x in v)):
                raise SchemaError(f"{path}: sample {sid}: '{key}' must be [int, int] > 0")
        if not isinstance(entry["labels"], list):
            raise SchemaError(f"{path}: sample {sid}: 'labels' must be a list")
        refs = [entry["image_tokens"], entry["class_token"], entry["gt_mask"]]
        if entry.get("attention"):
            refs.append(entry["attention"])
        if entry.get("image"):
            refs.append(entry["image"])
        for rel in refs:
            if not isinstance(rel, str):
                raise SchemaError(f"{path}: sample {sid}: file references must be strings")
            if not (root / rel).is_file():
                raise MissingFile(f"sample {sid}: referenced file missing: {root / rel}")

    text_bank = None
    if doc.get("text_bank"):
        tb_path = root / doc["text_bank"]
        if not tb_path.is_file():
            raise MissingFile(f"text bank missing: {tb_path}")
        embeddings = read_tensor(tb_path)
        if embeddings.ndim != 2 or embeddings.shape[0] != len(classes):
            raise InconsistentClassList(
                f"text bank shape {embeddings.shape} does not match {len(classes)} classes"
            )
        text_bank = TextBank(class_names=tuple(classes), embeddings=embeddings, prompt=prompt)

    projections = None
    if doc.get("projections"):
        proj = doc["projections"]
        if not isinstance(proj, dict) or "image" not in proj or "text" not in proj:
            raise SchemaError(f"{path}: 'projections' must hold 'image' and 'text' paths")
        for key in ("image", "text"):
            if not (root / proj[key]).is_file():
                raise MissingFile(f"projection tensor missing: {root / proj[key]}")
        proj_image = read_tensor(root / proj["image"])
        proj_text = read_tensor(root / proj["text"])
        if proj_image.ndim != 2 or proj_text.ndim != 2:
            raise ShapeMismatch("projection matrices must be 2-D")
        if proj_image.shape[1] != proj_text.shape[1]:
            raise ShapeMismatch(
                f"projection output dims differ: {proj_image.shape} vs {proj_text.shape}"
            )
        projections = (proj_image, proj_text)

    return Manifest(
        path=path,
        version=int(doc["version"]),
        classes=tuple(classes),
        prompt=prompt,
        split=doc.get("split"),
        sample_entries=samples,
        text_bank=text_bank,
        projections=projections,
        attention_kind=doc.get("attention_kind"),
    )
