"""Tower shapes, determinism, tokenizer behavior, and checkpoint plumbing."""

import numpy as np
import pytest
import torch

from itsm_exporter import (
    MODELS,
    ModelResolutionError,
    build_clip,
    build_vision,
    encode_text_bank,
    load_clip_checkpoint,
    load_vision_checkpoint,
    resolve_spec,
    tokenize,
)
from itsm_exporter.models import Clip, VisionTower, dino_to_native
from itsm_exporter.voc import CLASSES

SPEC = resolve_spec("vit-test")


def _images(n, seed=0):
    torch.manual_seed(seed)
    return torch.randn(n, 3, 224, 224)


def test_vision_tower_shapes_and_attention():
    model = build_clip(SPEC, seed=0)
    with torch.inference_mode():
        cls_tok, tokens, attn = model.visual(_images(2))
    assert cls_tok.shape == (2, 1, 32)
    assert tokens.shape == (2, 196, 32)
    assert attn.shape == (2, 4, 196)
    assert torch.all(attn >= 0)
    # post-softmax row over all 197 keys; dropping the class key keeps sums < 1
    sums = attn.sum(dim=-1)
    assert torch.all(sums < 1.0)
    assert torch.all(sums > 0.5)
    assert torch.all(torch.isfinite(tokens))


def test_construction_is_seeded():
    a = build_clip(SPEC, seed=3).state_dict()
    b = build_clip(SPEC, seed=3).state_dict()
    c = build_clip(SPEC, seed=4).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert any(not torch.equal(a[k], c[k]) for k in a)


def test_forward_is_deterministic():
    model = build_clip(SPEC, seed=1)
    images = _images(3, seed=5)
    with torch.inference_mode():
        first = model.visual(images)
        second = model.visual(images)
    for x, y in zip(first, second):
        assert x.numpy().tobytes() == y.numpy().tobytes()


def test_tokenizer_eot_padding_and_truncation():
    cfg = SPEC.text
    ids = tokenize("a photo of the cat", cfg)
    assert len(ids) == cfg.context
    eot = cfg.vocab - 1
    assert ids.count(eot) == 1
    assert int(np.argmax(ids)) == ids.index(eot)
    assert ids[ids.index(eot) + 1 :] == [0] * (cfg.context - ids.index(eot) - 1)

    long = tokenize("word " * 100, cfg)
    assert len(long) == cfg.context
    assert long[-1] == eot
    assert tokenize("a photo of the cat", cfg) == ids


def test_text_bank_shape_and_determinism():
    model = build_clip(SPEC, seed=0)
    bank = encode_text_bank(model, list(CLASSES), "a photo of the")
    again = encode_text_bank(model, list(CLASSES), "a photo of the")
    assert bank.shape == (20, 32)
    assert bank.numpy().tobytes() == again.numpy().tobytes()


def test_clip_checkpoint_round_trip(tmp_path):
    source = build_clip(SPEC, seed=7)
    path = tmp_path / "clip.pt"
    torch.save(source.state_dict(), path)
    target = build_clip(SPEC, seed=8)
    load_clip_checkpoint(target, path)
    images = _images(1)
    with torch.inference_mode():
        a = source.visual(images)[1]
        b = target.visual(images)[1]
    assert torch.equal(a, b)


def test_vision_checkpoint_accepts_full_clip_dict(tmp_path):
    source = build_clip(SPEC, seed=7)
    path = tmp_path / "clip.pt"
    torch.save(source.state_dict(), path)
    tower = build_vision(SPEC.vision, seed=9)
    load_vision_checkpoint(tower, path)
    images = _images(1)
    with torch.inference_mode():
        assert torch.equal(tower(images)[2], source.visual(images)[2])


def _to_dino_keys(sd):
    out = {}
    renames = {
        "class_embedding": ("cls_token", lambda v: v.reshape(1, 1, -1)),
        "positional_embedding": ("pos_embed", lambda v: v.unsqueeze(0)),
    }
    block_map = {
        "ln_1": "norm1", "ln_2": "norm2",
        "attn.in_proj_weight": "attn.qkv.weight", "attn.in_proj_bias": "attn.qkv.bias",
        "attn.out_proj": "attn.proj",
        "mlp.c_fc": "mlp.fc1", "mlp.c_proj": "mlp.fc2",
    }
    for key, value in sd.items():
        if key in renames:
            name, fn = renames[key]
            out[name] = fn(value)
        elif key.startswith("conv1."):
            out[key.replace("conv1.", "patch_embed.proj.")] = value
        elif key.startswith("ln_post."):
            out[key.replace("ln_post.", "norm.")] = value
        elif key.startswith("transformer.resblocks."):
            _, _, idx, rest = key.split(".", 3)
            for ours, theirs in block_map.items():
                if rest == ours or rest.startswith(ours + "."):
                    out[f"blocks.{idx}.{rest.replace(ours, theirs, 1)}"] = value
                    break
        else:
            raise AssertionError(f"unmapped key {key}")
    return out


def test_dino_style_checkpoint_is_remapped(tmp_path):
    cfg = resolve_spec("dino-test").vision
    source = build_vision(cfg, seed=11)
    dino_sd = _to_dino_keys(source.state_dict())
    dino_sd["head.weight"] = torch.zeros(4, 4)  # projection heads are dropped
    assert dino_to_native(dino_sd).keys() == source.state_dict().keys()

    path = tmp_path / "dino.pt"
    torch.save(dino_sd, path)
    target = build_vision(cfg, seed=12)
    load_vision_checkpoint(target, path)
    images = _images(1)
    with torch.inference_mode():
        assert torch.equal(source(images)[2], target(images)[2])


def test_vit_b_16_matches_published_grid():
    tower = build_vision(MODELS["vit-b-16"].vision, seed=0)
    with torch.inference_mode():
        cls_tok, tokens, attn = tower(_images(1))
    assert tokens.shape == (1, 196, 768)
    assert cls_tok.shape == (1, 1, 768)
    assert attn.shape == (1, 12, 196)
    assert MODELS["vit-b-16"].vision.grid == 14
    assert MODELS["vit-b-32"].vision.grid == 7
    assert MODELS["vit-l-14"].vision.grid == 16


def test_resolution_errors_are_actionable(tmp_path):
    with pytest.raises(ModelResolutionError, match="available:"):
        resolve_spec("resnet50")
    with pytest.raises(ModelResolutionError, match="attention-arch"):
        Clip(resolve_spec("dino-test"))
    with pytest.raises(ModelResolutionError, match="not found"):
        load_clip_checkpoint(build_clip(SPEC), tmp_path / "missing.pt")

    other = VisionTower(MODELS["dino-test"].vision)
    path = tmp_path / "wrong.pt"
    torch.save(other.state_dict(), path)
    with pytest.raises(ModelResolutionError, match="does not match"):
        load_vision_checkpoint(build_vision(SPEC.vision), path)
