import numpy as np
import pytest

from nvsdiffuse.errors import GridTooSmall
from nvsdiffuse.grid import (
    build_pyramid,
    build_sparse_pyramid,
    downsample,
    forward_diff,
    grad_norm_sq,
    level_shape,
    max_levels,
    nearest_fill,
    upsample,
)


def test_pyramid_of_constant_is_constant():
    g = np.full((37, 53, 3), 0.42)
    pyr = build_pyramid(g, 5)
    for k, lvl in enumerate(pyr):
        assert lvl.shape[:2] == level_shape(37, 53, k) == (-(-37 // 2**k), -(-53 // 2**k))
        assert np.allclose(lvl, 0.42)


def test_pyramid_64_levels_7_is_mean():
    rng = np.random.default_rng(0)
    g = rng.random((64, 64))
    pyr = build_pyramid(g, 7)
    assert pyr[-1].shape == (1, 1)
    assert pyr[-1][0, 0] == pytest.approx(g.mean(), abs=1e-12)


def test_pyramid_too_small():
    with pytest.raises(GridTooSmall):
        build_pyramid(np.zeros((128, 192)), 7, min_size=8)
    assert len(build_pyramid(np.zeros((128, 192)), 5, min_size=8)) == 5
    with pytest.raises(ValueError):
        build_pyramid(np.zeros((8, 8)), 0)


def test_max_levels():
    assert max_levels(128, 192) == 5
    assert max_levels(64, 64) == 4
    assert max_levels(7, 100) == 1


def test_sparse_single_sample_survives_every_level():
    g = np.zeros((40, 30))
    occ = np.zeros_like(g, dtype=bool)
    g[17, 9] = 3.25
    occ[17, 9] = True
    grids, masks = build_sparse_pyramid(g, 5, occ)
    for k, (lvl, m) in enumerate(zip(grids, masks)):
        assert m.sum() == 1
        assert m[17 >> k, 9 >> k]
        assert lvl[17 >> k, 9 >> k] == 3.25


def test_downsample_matches_brute_force_weighted_average():
    rng = np.random.default_rng(1)
    g = rng.random((9, 11))
    w = (rng.random((9, 11)) < 0.4).astype(float)
    out, wsum = downsample(g, w)
    for i in range(5):
        for j in range(6):
            block = (slice(2 * i, 2 * i + 2), slice(2 * j, 2 * j + 2))
            ws = w[block].sum()
            assert wsum[i, j] == ws
            assert out[i, j] == pytest.approx((g[block] * w[block]).sum() / ws if ws else 0.0)


def test_nonnegative_pyramid_stays_nonnegative():
    rng = np.random.default_rng(2)
    for lvl in build_pyramid(rng.random((33, 47)), 4):
        assert lvl.min() >= 0


def test_upsample_linear_ramp_interior_exact():
    # a linear function of pixel centres is reproduced by bilinear upsampling
    v, u = np.mgrid[0:8, 0:10].astype(float)
    coarse = 0.3 * u - 0.7 * v
    fine = upsample(coarse, (16, 20))
    fv, fu = np.mgrid[0:16, 0:20].astype(float)
    expect = 0.3 * ((fu + 0.5) / 2 - 0.5) - 0.7 * ((fv + 0.5) / 2 - 0.5)
    assert np.allclose(fine[1:-1, 1:-1], expect[1:-1, 1:-1])
    assert upsample(np.ones((4, 5, 3)), (8, 10)).shape == (8, 10, 3)


def test_forward_diff_neumann():
    g = np.arange(12.0).reshape(3, 4)
    gu, gv = forward_diff(g)
    assert np.all(gu[:, :-1] == 1) and np.all(gu[:, -1] == 0)
    assert np.all(gv[:-1] == 4) and np.all(gv[-1] == 0)
    assert grad_norm_sq(np.stack([g, g], -1))[0, 0] == 2 * (1 + 16)


def test_nearest_fill():
    vals = np.zeros((5, 5))
    occ = np.zeros((5, 5), dtype=bool)
    vals[0, 0], vals[4, 4] = 1.0, 2.0
    occ[0, 0] = occ[4, 4] = True
    out = nearest_fill(vals, occ)
    assert out[1, 0] == 1.0 and out[4, 3] == 2.0
    assert not nearest_fill(vals, np.zeros_like(occ)).any()
