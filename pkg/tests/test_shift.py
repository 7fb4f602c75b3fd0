"""Point maps, majority downsampling, and shift classification."""

import numpy as np
import pytest

from itsmlab.errors import EmptyForeground, EmptyInput, GridMismatch
from itsmlab.pooling import avg_pool, max_pool
from itsmlab.shift import (
    B2F,
    BUCKET_ALL,
    BUCKET_LARGE,
    BUCKET_MID,
    BUCKET_SMALL,
    F2B,
    UNSHIFTED,
    PointMap,
    ShiftReport,
    aggregate_shift,
    bucket_for,
    classify_shift,
    downsample_majority,
    point_map,
    shift_categories,
)


def test_point_map_matches_argmin_oracle():
    rng = np.random.default_rng(0)
    maps = rng.standard_normal((4, 5, 6))
    pooled = rng.standard_normal(6)
    pm = point_map(maps, pooled, "avg")
    flat = maps.reshape(20, 6)
    for c in range(6):
        dists = [abs(flat[i, c] - pooled[c]) for i in range(20)]
        best = dists.index(min(dists))
        assert pm.token_index[c] == best
        assert pm.distance[c] == dists[best]
    assert pm.grid == (4, 5)
    assert pm.channels == 6
    assert pm.method == "avg"


def test_point_map_tie_breaks_low_index():
    maps = np.array([1.0, 3.0, 3.0, 5.0]).reshape(4, 1, 1)
    pm = point_map(maps, np.array([3.0]), "avg")
    assert pm.token_index[0] == 1


def test_max_pool_reference_distance_is_zero():
    rng = np.random.default_rng(1)
    tokens = rng.standard_normal((12, 7))
    pooled = max_pool(tokens)
    pm = point_map(tokens.reshape(3, 4, 7), pooled.vector, pooled.method)
    assert np.all(pm.distance == 0.0)
    assert np.array_equal(pm.token_index, pooled.argmax)


def test_downsample_majority_hand_cases():
    fg = np.array(
        [
            [1, 1, 0, 0],
            [1, 1, 0, 1],
            [0, 0, 1, 1],
            [0, 0, 1, 1],
        ],
        dtype=bool,
    )
    # cells: all-fg, 1-of-4 fg, all-bg, all-fg
    got = downsample_majority(fg, (2, 2))
    assert np.array_equal(got, [[True, False], [False, True]])

    # exact tie goes to background
    tie = np.array([[1, 0], [0, 1]], dtype=bool)
    assert not downsample_majority(tie, (1, 1))[0, 0]

    # ignore pixels leave the vote to the rest
    ignore = np.array([[True, False], [False, False]])
    fg2 = np.array([[0, 1], [1, 0]], dtype=bool)
    assert downsample_majority(fg2, (1, 1), ignore=ignore)[0, 0]

    # an all-ignore cell counts as background
    all_ign = np.ones((2, 2), dtype=bool)
    assert not downsample_majority(np.ones((2, 2), dtype=bool), (1, 1), ignore=all_ign)[0, 0]


def test_downsample_majority_oracle():
    rng = np.random.default_rng(2)
    fg = rng.random((12, 15)) < 0.4
    ignore = rng.random((12, 15)) < 0.2
    grid = (4, 5)
    got = downsample_majority(fg, grid, ignore=ignore)
    for gy in range(4):
        for gx in range(5):
            fg_n = bg_n = 0
            for y in range(12):
                for x in range(15):
                    if (y * 4) // 12 == gy and (x * 5) // 15 == gx and not ignore[y, x]:
                        if fg[y, x]:
                            fg_n += 1
                        else:
                            bg_n += 1
            assert got[gy, gx] == (fg_n > bg_n)


def test_bucket_boundaries():
    assert bucket_for(0.1) == BUCKET_SMALL
    assert bucket_for(0.25) == BUCKET_SMALL
    assert bucket_for(0.26) == BUCKET_MID
    assert bucket_for(0.75) == BUCKET_MID
    assert bucket_for(0.76) == BUCKET_LARGE
    assert bucket_for(1.0) == BUCKET_LARGE
    for bad in (0.0, -0.5, 1.01):
        with pytest.raises(EmptyForeground):
            bucket_for(bad)


def _pm(indices, grid, method="avg"):
    idx = np.asarray(indices)
    return PointMap(
        token_index=idx,
        pooled_value=np.zeros(idx.size),
        distance=np.zeros(idx.size),
        method=method,
        grid=grid,
    )


def test_shift_categories_hand_case():
    fg_grid = np.array([[True, False], [False, False]])
    reference = _pm([0, 1, 0, 3], (2, 2), "max")
    candidate = _pm([0, 0, 2, 3], (2, 2), "avg")
    cats = shift_categories(reference, candidate, fg_grid)
    # ch0: fg->fg unshifted; ch1: bg->fg B2F; ch2: fg->bg F2B; ch3: bg->bg unshifted
    assert list(cats) == [UNSHIFTED, B2F, F2B, UNSHIFTED]


def test_shift_categories_mismatch_errors():
    fg_grid = np.zeros((2, 2), dtype=bool)
    with pytest.raises(GridMismatch):
        shift_categories(_pm([0], (2, 2)), _pm([0], (1, 4)), fg_grid)
    with pytest.raises(GridMismatch):
        shift_categories(_pm([0, 1], (2, 2)), _pm([0], (2, 2)), fg_grid)
    with pytest.raises(GridMismatch):
        shift_categories(_pm([0], (3, 3)), _pm([0], (3, 3)), fg_grid)


def test_classify_shift_counts_and_ratio():
    rng = np.random.default_rng(3)
    tokens = rng.standard_normal((16, 10))
    maps = tokens.reshape(4, 4, 10)
    reference = point_map(maps, max_pool(tokens).vector, "max")
    candidate = point_map(maps, avg_pool(tokens).vector, "avg")

    gt_fg = np.zeros((8, 8), dtype=bool)
    gt_fg[:4, :4] = True
    report = classify_shift(reference, candidate, gt_fg)
    assert report.b2f + report.f2b + report.unshifted == report.channels == 10
    assert report.fg_ratio == 0.25
    assert report.bucket == BUCKET_SMALL

    ignore = np.zeros((8, 8), dtype=bool)
    ignore[4:, :] = True  # half the image ignored; ratio doubles
    report = classify_shift(reference, candidate, gt_fg, ignore=ignore)
    assert report.fg_ratio == 0.5
    assert report.bucket == BUCKET_MID

    with pytest.raises(EmptyForeground):
        classify_shift(reference, candidate, np.zeros((8, 8), dtype=bool))


def test_aggregate_shift_table():
    reports = [
        ShiftReport(b2f=2, f2b=1, unshifted=7, channels=10, fg_ratio=0.1, bucket=BUCKET_SMALL),
        ShiftReport(b2f=4, f2b=3, unshifted=3, channels=10, fg_ratio=0.2, bucket=BUCKET_SMALL),
        ShiftReport(b2f=6, f2b=0, unshifted=4, channels=10, fg_ratio=0.5, bucket=BUCKET_MID),
    ]
    table = aggregate_shift(reports)
    assert table[BUCKET_SMALL] == {"samples": 2, "b2f": 3.0, "f2b": 2.0, "unshifted": 5.0}
    assert table[BUCKET_MID]["samples"] == 1
    assert table[BUCKET_LARGE] == {"samples": 0, "b2f": None, "f2b": None, "unshifted": None}
    assert table[BUCKET_ALL]["samples"] == 3
    assert table[BUCKET_ALL]["b2f"] == 4.0

    with pytest.raises(EmptyInput):
        aggregate_shift([])
