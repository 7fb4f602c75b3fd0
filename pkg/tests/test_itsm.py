"""Similarity map construction: cosine maps, resize, normalization, reversal."""

import math

import numpy as np
import pytest

from itsmlab.errors import ShapeMismatch, ZeroNormVector
from itsmlab.itsm import (
    SOURCE_CLIP,
    SOURCE_RCLIP,
    bilinear_resize,
    confidence_scores,
    finalize_itsm,
    itsm_raw,
    minmax_normalize_slices,
    project,
    rclip_reverse,
)


def cosine_oracle(tokens, text, proj_i=None, proj_t=None):
    """Scalar-loop cosine similarity, kept free of the library's vector path."""
    a = tokens @ proj_i if proj_i is not None else tokens
    b = text @ proj_t if proj_t is not None else text
    out = np.zeros((a.shape[0], b.shape[0]))
    for i in range(a.shape[0]):
        for t in range(b.shape[0]):
            num = sum(float(a[i, c]) * float(b[t, c]) for c in range(a.shape[1]))
            na = math.sqrt(sum(float(x) ** 2 for x in a[i]))
            nb = math.sqrt(sum(float(x) ** 2 for x in b[t]))
            out[i, t] = num / (na * nb)
    return out


def test_itsm_raw_matches_cosine_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n_i = int(rng.integers(1, 20))
        n_t = int(rng.integers(1, 6))
        c = int(rng.integers(2, 12))
        tokens = rng.standard_normal((n_i, c))
        text = rng.standard_normal((n_t, c))
        got = itsm_raw(tokens, text)
        assert np.max(np.abs(got - cosine_oracle(tokens, text))) < 1e-10
        assert np.all(got <= 1.0 + 1e-12) and np.all(got >= -1.0 - 1e-12)


def test_itsm_raw_with_projections():
    rng = np.random.default_rng(4)
    tokens = rng.standard_normal((9, 6))
    text = rng.standard_normal((3, 5))
    proj_i = rng.standard_normal((6, 4))
    proj_t = rng.standard_normal((5, 4))
    got = itsm_raw(tokens, text, proj_image=proj_i, proj_text=proj_t)
    assert np.max(np.abs(got - cosine_oracle(tokens, text, proj_i, proj_t))) < 1e-10


def test_itsm_raw_rejects_bad_inputs():
    with pytest.raises(ShapeMismatch):
        itsm_raw(np.zeros((2, 3, 1)), np.ones((1, 3)))
    with pytest.raises(ZeroNormVector):
        itsm_raw(np.vstack([np.zeros(3), np.ones(3)]), np.ones((1, 3)))
    with pytest.raises(ShapeMismatch):
        project(np.ones((2, 3)), np.ones((4, 4)))


def test_confidence_scores_oracle():
    rng = np.random.default_rng(5)
    token = rng.standard_normal((1, 8))
    text = rng.standard_normal((5, 8))
    got = confidence_scores(token, text)
    assert got.shape == (5,)
    assert np.max(np.abs(got - cosine_oracle(token, text)[0])) < 1e-10


def resize_oracle(src, out_h, out_w):
    """Half-pixel bilinear, one output pixel at a time."""
    in_h, in_w = src.shape[:2]
    out = np.zeros((out_h, out_w) + src.shape[2:])
    for y in range(out_h):
        for x in range(out_w):
            sy = min(max((y + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1.0)
            sx = min(max((x + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1.0)
            y0, x0 = int(math.floor(sy)), int(math.floor(sx))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            fy, fx = sy - y0, sx - x0
            top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
            out[y, x] = top * (1 - fy) + bot * fy
    return out


def test_bilinear_matches_oracle():
    rng = np.random.default_rng(6)
    for shape, out_size in [((2, 2), (4, 4)), ((3, 5), (7, 2)), ((4, 4, 3), (9, 6)), ((5, 3, 2), (3, 5))]:
        src = rng.standard_normal(shape)
        got = bilinear_resize(src, out_size)
        assert got.shape == out_size + shape[2:]
        assert np.max(np.abs(got - resize_oracle(src, *out_size))) < 1e-12


def test_bilinear_hand_case():
    src = np.array([[0.0, 1.0], [2.0, 3.0]])
    # source coords per output index: [0, 0.25, 0.75, 1]; map = 2*row + col
    rows = np.array([0.0, 0.25, 0.75, 1.0])
    expected = 2.0 * rows[:, None] + rows[None, :]
    assert np.allclose(bilinear_resize(src, (4, 4)), expected, atol=1e-15)


def test_bilinear_identity_and_constant():
    rng = np.random.default_rng(7)
    src = rng.standard_normal((5, 4))
    assert np.array_equal(bilinear_resize(src, (5, 4)), src)
    const = np.full((3, 3), 2.5)
    assert np.allclose(bilinear_resize(const, (10, 8)), 2.5, atol=1e-15)


def test_minmax_normalize_slices():
    rng = np.random.default_rng(8)
    maps = rng.standard_normal((6, 5, 3))
    out = minmax_normalize_slices(maps)
    for k in range(3):
        sl = out[:, :, k]
        assert math.isclose(sl.min(), 0.0, abs_tol=1e-15)
        assert math.isclose(sl.max(), 1.0, abs_tol=1e-15)

    flat = np.full((4, 4, 2), 3.0)
    flat[:, :, 1] = maps[:4, :4, 0]
    out = minmax_normalize_slices(flat)
    assert np.all(out[:, :, 0] == 0.0)
    assert out[:, :, 1].max() == 1.0

    nearly_flat = np.full((2, 2, 1), 1.0)
    nearly_flat[0, 0, 0] += 1e-13  # span below the 1e-12 cutoff
    assert np.all(minmax_normalize_slices(nearly_flat) == 0.0)


def test_finalize_itsm_pipeline_matches_manual():
    rng = np.random.default_rng(9)
    raw = rng.uniform(-1, 1, size=(12, 4))
    itsm = finalize_itsm(raw, grid=(3, 4), out_size=(9, 8), class_ids=(2, 4, 5, 7))
    manual = minmax_normalize_slices(bilinear_resize(raw.reshape(3, 4, 4), (9, 8)))
    assert np.array_equal(itsm.map, manual)
    assert itsm.class_ids == (2, 4, 5, 7)
    assert itsm.source == SOURCE_CLIP
    assert itsm.map.min() >= 0.0 and itsm.map.max() <= 1.0


def test_finalize_itsm_validation():
    with pytest.raises(ShapeMismatch):
        finalize_itsm(np.zeros((12, 2)), grid=(3, 5), out_size=(9, 8))
    with pytest.raises(ShapeMismatch):
        finalize_itsm(np.zeros((12, 2)), grid=(3, 4), out_size=(9, 8), class_ids=(1,))
    with pytest.raises(ShapeMismatch):
        finalize_itsm(np.zeros((12, 2)), grid=(3, 4), out_size=(0, 8))


def test_rclip_reverse_involution():
    rng = np.random.default_rng(10)
    for _ in range(5):
        raw = rng.standard_normal((20, 3))
        itsm = finalize_itsm(raw, grid=(4, 5), out_size=(8, 10))
        reversed_once = rclip_reverse(itsm)
        assert reversed_once.source == SOURCE_RCLIP
        assert np.allclose(reversed_once.map, 1.0 - itsm.map, atol=1e-15)
        assert np.allclose(rclip_reverse(reversed_once).map, itsm.map, atol=1e-15)


def test_rclip_reverse_flips_preference():
    # high-on-background map becomes high-on-foreground
    maps = np.zeros((4, 4, 1))
    maps[:2, :, 0] = 1.0  # "background" rows score high
    itsm = finalize_itsm(maps.reshape(16, 1), grid=(4, 4), out_size=(4, 4))
    rev = rclip_reverse(itsm)
    assert itsm.map[:2, :, 0].mean() > itsm.map[2:, :, 0].mean()
    assert rev.map[:2, :, 0].mean() < rev.map[2:, :, 0].mean()
