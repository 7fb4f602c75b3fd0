"""ViT towers, tokenizer, and checkpoint loading.

Module and parameter names mirror the publicly released CLIP checkpoint
layout (``visual.transformer.resblocks.N.attn.in_proj_weight`` and friends),
so released state dicts load without key remapping; DINO-style ViT state
dicts are remapped by :func:`dino_to_native`. Attention is computed
explicitly (no fused kernel) so the per-head post-softmax weights of the
last block can be exported: the class-token query row, heads kept separate.

The built-in tokenizer hashes lowercased words into a fixed id range. It is
deterministic and good enough for text banks from randomly initialized
towers; loading a real text checkpoint additionally requires the matching
BPE vocabulary, which this package does not bundle.
"""

from __future__ import annotations

import math
import re
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ModelResolutionError


@dataclass(frozen=True)
class VisionConfig:
    patch: int
    width: int
    layers: int
    heads: int
    embed: int | None            # projection output dim; None = tower has no projection
    ln_pre: bool = True
    conv_bias: bool = False
    activation: str = "quick_gelu"
    image_size: int = 224

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def tokens(self) -> int:
        return self.grid * self.grid


@dataclass(frozen=True)
class TextConfig:
    width: int
    layers: int
    heads: int
    embed: int
    vocab: int
    context: int
    activation: str = "quick_gelu"


@dataclass(frozen=True)
class ModelSpec:
    vision: VisionConfig
    text: TextConfig | None


MODELS: dict[str, ModelSpec] = {
    "vit-b-32": ModelSpec(
        VisionConfig(32, 768, 12, 12, 512), TextConfig(512, 12, 8, 512, 49408, 77)
    ),
    "vit-b-16": ModelSpec(
        VisionConfig(16, 768, 12, 12, 512), TextConfig(512, 12, 8, 512, 49408, 77)
    ),
    "vit-l-14": ModelSpec(
        VisionConfig(14, 1024, 24, 16, 768), TextConfig(768, 12, 12, 768, 49408, 77)
    ),
    # desk-size tower for tests and pipeline smoke runs
    "vit-test": ModelSpec(
        VisionConfig(16, 32, 2, 4, 16), TextConfig(32, 2, 4, 16, 256, 16)
    ),
    # attention-only architectures (no text tower, no projection)
    "dino-b-16": ModelSpec(
        VisionConfig(16, 768, 12, 12, None, ln_pre=False, conv_bias=True, activation="gelu"),
        None,
    ),
    "dino-test": ModelSpec(
        VisionConfig(16, 32, 2, 4, None, ln_pre=False, conv_bias=True, activation="gelu"),
        None,
    ),
}


def resolve_spec(name: str) -> ModelSpec:
    try:
        return MODELS[name]
    except KeyError:
        known = ", ".join(sorted(MODELS))
        raise ModelResolutionError(f"unknown model '{name}'; available: {known}") from None


class QuickGELU(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.sigmoid(1.702 * x)


def _activation(name: str) -> nn.Module:
    if name == "quick_gelu":
        return QuickGELU()
    if name == "gelu":
        return nn.GELU()
    raise ModelResolutionError(f"unknown activation '{name}'")


class Attention(nn.Module):
    """Multi-head self-attention with explicit, exportable weights."""

    def __init__(self, width: int, heads: int) -> None:
        super().__init__()
        if width % heads:
            raise ModelResolutionError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.in_proj_weight = nn.Parameter(torch.randn(3 * width, width) * width**-0.5)
        self.in_proj_bias = nn.Parameter(torch.zeros(3 * width))
        self.out_proj = nn.Linear(width, width)

    def forward(
        self, x: torch.Tensor, attn_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        b, length, width = x.shape
        head_dim = width // self.heads
        qkv = F.linear(x, self.in_proj_weight, self.in_proj_bias)
        q, k, v = (
            t.view(b, length, self.heads, head_dim).transpose(1, 2) for t in qkv.chunk(3, dim=-1)
        )
        scores = (q @ k.transpose(-2, -1)) * head_dim**-0.5
        if attn_mask is not None:
            scores = scores + attn_mask
        weights = scores.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, length, width)
        return self.out_proj(out), weights


class ResidualAttentionBlock(nn.Module):
    def __init__(self, width: int, heads: int, activation: str) -> None:
        super().__init__()
        self.ln_1 = nn.LayerNorm(width)
        self.attn = Attention(width, heads)
        self.ln_2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            OrderedDict(
                [
                    ("c_fc", nn.Linear(width, 4 * width)),
                    ("gelu", _activation(activation)),
                    ("c_proj", nn.Linear(4 * width, width)),
                ]
            )
        )

    def forward(
        self, x: torch.Tensor, attn_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        attn_out, weights = self.attn(self.ln_1(x), attn_mask)
        x = x + attn_out
        x = x + self.mlp(self.ln_2(x))
        return x, weights


class Transformer(nn.Module):
    def __init__(self, width: int, layers: int, heads: int, activation: str) -> None:
        super().__init__()
        self.resblocks = nn.ModuleList(
            ResidualAttentionBlock(width, heads, activation) for _ in range(layers)
        )

    def forward(
        self, x: torch.Tensor, attn_mask: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns the final tokens and the last block's attention weights."""
        weights = None
        for block in self.resblocks:
            x, weights = block(x, attn_mask)
        return x, weights


class VisionTower(nn.Module):
    def __init__(self, cfg: VisionConfig) -> None:
        super().__init__()
        self.cfg = cfg
        scale = cfg.width**-0.5
        self.conv1 = nn.Conv2d(3, cfg.width, cfg.patch, stride=cfg.patch, bias=cfg.conv_bias)
        self.class_embedding = nn.Parameter(scale * torch.randn(cfg.width))
        self.positional_embedding = nn.Parameter(scale * torch.randn(cfg.tokens + 1, cfg.width))
        self.ln_pre = nn.LayerNorm(cfg.width) if cfg.ln_pre else nn.Identity()
        self.transformer = Transformer(cfg.width, cfg.layers, cfg.heads, cfg.activation)
        self.ln_post = nn.LayerNorm(cfg.width)
        self.proj = nn.Parameter(scale * torch.randn(cfg.width, cfg.embed)) if cfg.embed else None

    def forward(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(class token (B,1,C), image tokens (B,N,C), attention (B,H,N)).

        Features are post final-layernorm and pre-projection; attention is
        the last block's post-softmax class-token query row, per head.
        """
        x = self.conv1(images)
        x = x.flatten(2).transpose(1, 2)
        cls = self.class_embedding.expand(x.shape[0], 1, -1)
        x = torch.cat([cls, x], dim=1) + self.positional_embedding
        x = self.ln_pre(x)
        x, weights = self.transformer(x)
        x = self.ln_post(x)
        return x[:, :1], x[:, 1:], weights[:, :, 0, 1:]


class Clip(nn.Module):
    """Dual-encoder with the released-checkpoint parameter layout."""

    def __init__(self, spec: ModelSpec) -> None:
        super().__init__()
        if spec.text is None:
            raise ModelResolutionError(
                "architecture has no text tower; use it via --attention-arch instead"
            )
        self.spec = spec
        t = spec.text
        self.visual = VisionTower(spec.vision)
        self.transformer = Transformer(t.width, t.layers, t.heads, t.activation)
        self.token_embedding = nn.Embedding(t.vocab, t.width)
        self.positional_embedding = nn.Parameter(0.01 * torch.randn(t.context, t.width))
        self.ln_final = nn.LayerNorm(t.width)
        self.text_projection = nn.Parameter(t.width**-0.5 * torch.randn(t.width, t.embed))
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1 / 0.07)))

    def encode_text(self, ids: torch.Tensor) -> torch.Tensor:
        """Pre-projection text features, one row per sequence (EOT pooling)."""
        length = ids.shape[1]
        x = self.token_embedding(ids) + self.positional_embedding[:length]
        mask = torch.full((length, length), float("-inf"), device=ids.device).triu(1)
        x, _ = self.transformer(x, attn_mask=mask)
        x = self.ln_final(x)
        return x[torch.arange(x.shape[0]), ids.argmax(dim=-1)]


def tokenize(text: str, cfg: TextConfig) -> list[int]:
    """Deterministic hash tokenizer; EOT carries the highest id for argmax pooling."""
    bos, eos = cfg.vocab - 2, cfg.vocab - 1
    span = cfg.vocab - 3  # word ids live in 1..vocab-3; 0 is padding
    words = re.findall(r"[a-z0-9]+", text.lower())
    ids = [bos] + [1 + zlib.crc32(w.encode()) % span for w in words[: cfg.context - 2]] + [eos]
    return ids + [0] * (cfg.context - len(ids))


def encode_text_bank(model: Clip, class_names: list[str], prompt: str) -> torch.Tensor:
    """(K, width) pre-projection embeddings for ``prompt + " " + name``."""
    cfg = model.spec.text
    ids = torch.tensor([tokenize(f"{prompt} {name}", cfg) for name in class_names])
    with torch.inference_mode():
        return model.encode_text(ids)


def build_clip(spec: ModelSpec, seed: int = 0) -> Clip:
    """Randomly initialized dual encoder; construction is fully seeded."""
    torch.manual_seed(seed)
    return Clip(spec).eval()


def build_vision(cfg: VisionConfig, seed: int = 0) -> VisionTower:
    torch.manual_seed(seed)
    return VisionTower(cfg).eval()


def _extract_state_dict(path: str | Path) -> dict[str, torch.Tensor]:
    path = Path(path)
    if not path.is_file():
        raise ModelResolutionError(f"checkpoint not found: {path}")
    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except Exception:
        try:
            obj = torch.jit.load(str(path), map_location="cpu").state_dict()
        except Exception as exc:
            raise ModelResolutionError(
                f"{path}: neither a state dict nor a TorchScript archive ({exc})"
            ) from exc
    if isinstance(obj, dict) and "state_dict" in obj and isinstance(obj["state_dict"], dict):
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        raise ModelResolutionError(f"{path}: checkpoint did not contain a state dict")
    return {k.removeprefix("module."): v for k, v in obj.items()}


_DINO_BLOCK = {
    "norm1": "ln_1",
    "attn.qkv": "attn.in_proj",
    "attn.proj": "attn.out_proj",
    "norm2": "ln_2",
    "mlp.fc1": "mlp.c_fc",
    "mlp.fc2": "mlp.c_proj",
}


def dino_to_native(sd: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Remap DINO-style ViT keys (``blocks.N.attn.qkv...``) to this layout."""
    if any(k.startswith("teacher.") for k in sd):
        sd = {k.removeprefix("teacher."): v for k, v in sd.items() if k.startswith("teacher.")}
    sd = {k.removeprefix("backbone."): v for k, v in sd.items()}
    out: dict[str, torch.Tensor] = {}
    for key, value in sd.items():
        if key.startswith("head"):
            continue
        if key == "cls_token":
            out["class_embedding"] = value.reshape(-1)
        elif key == "pos_embed":
            out["positional_embedding"] = value.squeeze(0)
        elif key.startswith("patch_embed.proj."):
            out[key.replace("patch_embed.proj.", "conv1.")] = value
        elif key.startswith("norm."):
            out[key.replace("norm.", "ln_post.")] = value
        elif key.startswith("blocks."):
            _, idx, rest = key.split(".", 2)
            for theirs, ours in _DINO_BLOCK.items():
                if rest.startswith(theirs + "."):
                    suffix = rest.removeprefix(theirs + ".")  # "weight" or "bias"
                    sep = "_" if ours.endswith("in_proj") else "."
                    out[f"transformer.resblocks.{idx}.{ours}{sep}{suffix}"] = value
                    break
            else:
                raise ModelResolutionError(f"unrecognized DINO block key: {key}")
        else:
            raise ModelResolutionError(f"unrecognized DINO key: {key}")
    return out


def load_clip_checkpoint(model: Clip, path: str | Path) -> None:
    sd = _extract_state_dict(path)
    try:
        model.load_state_dict(sd, strict=True)
    except RuntimeError as exc:
        raise ModelResolutionError(
            f"{path}: state dict does not match the architecture "
            f"(check the --model choice): {exc}"
        ) from exc


def load_vision_checkpoint(tower: VisionTower, path: str | Path) -> None:
    """Load a vision-only checkpoint: full-CLIP, native, or DINO-style keys."""
    sd = _extract_state_dict(path)
    if any(k.startswith("visual.") for k in sd):
        sd = {k.removeprefix("visual."): v for k, v in sd.items() if k.startswith("visual.")}
    elif any(k.startswith("blocks.") or k.startswith("backbone.") or k == "cls_token" for k in sd):
        sd = dino_to_native(sd)
    if tower.proj is None:
        sd.pop("proj", None)
    try:
        tower.load_state_dict(sd, strict=True)
    except RuntimeError as exc:
        raise ModelResolutionError(
            f"{path}: vision state dict does not match the attention architecture: {exc}"
        ) from exc
