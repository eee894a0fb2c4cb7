import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from spvp360.fusion import fuse, regional_stats


def test_constant_map_stats():
    s = regional_stats(np.full((8, 16), 0.3))
    assert s.M == 0.3 and s.m_bar == pytest.approx(0.3, abs=1e-15) and s.weight == pytest.approx(0.0, abs=1e-30)


def test_single_peak_two_by_two():
    m = np.zeros((8, 16))
    m[1, 2] = 1.0
    s = regional_stats(m, (2, 2))
    assert s.M == 1.0 and s.m_bar == 0.25


def test_region_grid_too_large_rejected():
    with pytest.raises(ValueError):
        regional_stats(np.zeros((4, 4)), (8, 8))


def test_uniform_saliency_defers_to_fov():
    rng = np.random.default_rng(0)
    pv = rng.random((16, 32))
    out = fuse(np.full((16, 32), 0.4), pv, (4, 4))
    np.testing.assert_allclose(out, (pv - pv.min()) / (pv.max() - pv.min()), atol=1e-12)


def test_uniform_fov_defers_to_saliency():
    ps = np.zeros((16, 32))
    ps[5, 7] = 1.0
    ps[6, 7] = 0.5
    np.testing.assert_allclose(fuse(ps, np.full((16, 32), 0.9), (4, 4)), ps, atol=1e-12)


def test_both_uniform_gives_mean():
    np.testing.assert_allclose(fuse(np.full((4, 8), 0.2), np.full((4, 8), 0.6), (2, 2)), np.full((4, 8), 0.4))


def test_matches_direct_evaluation():
    rng = np.random.default_rng(1)
    ps, pv = rng.random((16, 32)), rng.random((16, 32))
    np.testing.assert_allclose(fuse(ps, pv, (4, 4)), oracles.disparity_fusion(ps, pv, (4, 4)), rtol=0, atol=1e-12)


def test_grid_mismatch_rejected():
    with pytest.raises(ValueError):
        fuse(np.zeros((4, 8)), np.zeros((4, 6)))


maps = st.integers(0, 100_000).map(lambda s: np.random.default_rng(s).random((16, 32)))


@settings(max_examples=50, deadline=None)
@given(maps, maps)
def test_symmetric_and_bounded(a, b):
    ab, ba = fuse(a, b, (4, 4)), fuse(b, a, (4, 4))
    np.testing.assert_allclose(ab, ba, atol=1e-12)
    assert ab.min() >= 0 and ab.max() <= 1


@settings(max_examples=50, deadline=None)
@given(maps)
def test_identical_maps_keep_argmax(a):
    assert np.argmax(fuse(a, a, (4, 4))) == np.argmax(a)


@settings(max_examples=50, deadline=None)
@given(maps, maps, st.floats(1.1, 5.0))
def test_sharper_peak_weighs_more(a, b, gain):
    # raising a's global peak increases M - m_bar, so a's share at its argmax cannot drop
    a = a * 0.5
    i = np.unravel_index(np.argmax(a), a.shape)
    sharp = a.copy()
    sharp[i] = min(1.0, a[i] * gain)
    w = lambda m: regional_stats(m, (4, 4)).weight  # noqa: E731
    wb = w(b)

    def share(m):
        wm = w(m)
        return wm * m[i] / (wm * m[i] + wb * b[i])

    assert share(sharp) >= share(a) - 1e-12
