import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from assimkit.ensemble_ops import (
    InflationSpec,
    LocalizationSpec,
    gaspari_cohn,
    inflate,
    localization_taper,
    localize_obs_space,
    localize_state_space,
)
from oracles import gc_exact


def test_inflate_examples():
    X = np.array([[0.0], [2.0]])
    np.testing.assert_array_equal(inflate(X, InflationSpec(1.0)), X)
    np.testing.assert_array_equal(inflate(X, InflationSpec(2.0)), [[-1.0], [3.0]])
    with pytest.raises(ValueError):
        InflationSpec(0.0)
    with pytest.raises(ValueError):
        inflate(X, -1.0)


def test_inflate_variance_and_mean():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(15, 8)) + 3.0
    lam = 1.37
    Y = inflate(X, lam)
    np.testing.assert_allclose(Y.mean(axis=0), X.mean(axis=0), atol=1e-13)
    np.testing.assert_allclose(Y.var(axis=0, ddof=1), lam**2 * X.var(axis=0, ddof=1), rtol=1e-12)
    na = np.linalg.norm(X - X.mean(axis=0), axis=1)
    nb = np.linalg.norm(Y - Y.mean(axis=0), axis=1)
    np.testing.assert_allclose(nb, lam * na, rtol=1e-13)


def test_gc_endpoints():
    assert gaspari_cohn(0.0, 4.0) == 1.0
    for r in (8.0, 8.5, 100.0):
        assert gaspari_cohn(r, 4.0) == 0.0


@pytest.mark.parametrize("c", [1.0, 4.0, 12.0])
def test_gc_matches_exact_oracle(c):
    for r in np.linspace(0, 2 * c, 11):
        assert abs(gaspari_cohn(float(r), c) - gc_exact(float(r), c)) < 1e-12


def test_gc_continuity_monotone_bounded():
    c = 4.0
    for knot in (c, 2 * c):
        assert abs(gaspari_cohn(knot * (1 - 1e-15), c) - gaspari_cohn(knot * (1 + 1e-15), c)) < 1e-12
    r = np.linspace(0, 2 * c, 4001)
    g = gaspari_cohn(r, c)
    assert np.all(np.diff(g) <= 1e-15)
    assert g.min() >= 0 and g.max() <= 1


@given(st.floats(0, 50), st.floats(0.1, 20))
def test_gc_bounded_property(r, c):
    assert 0.0 <= gaspari_cohn(r, c) <= 1.0


def test_localization_taper_examples():
    spec = LocalizationSpec(4.0, period=40)
    idx = np.arange(40)
    T = localization_taper(spec, idx, idx)
    np.testing.assert_array_equal(np.diag(T), 1.0)
    np.testing.assert_array_equal(T, T.T)
    assert T[0, 8] == 0.0 and T[0, 32] == 0.0
    assert T[0, 39] == T[0, 1] == gaspari_cohn(1.0, 4.0)
    with pytest.raises(ValueError):
        LocalizationSpec(4.0, period=0)
    with pytest.raises(ValueError):
        LocalizationSpec(-1.0)


@pytest.mark.parametrize("radius", [1.0, 2.0, 4.0, 8.0])
def test_taper_is_psd_on_ring(radius):
    idx = np.arange(40)
    T = localization_taper(LocalizationSpec(radius, period=40), idx, idx)
    assert np.linalg.eigvalsh(T).min() >= -1e-10


def test_localize_obs_space_identity_when_radius_large():
    rng = np.random.default_rng(1)
    obs = np.array([0, 2])
    HB = rng.normal(size=(2, 4))
    HBHt = rng.normal(size=(2, 2))
    # huge radius: GC(d) = 1 - O((d/c)^2), equal to 1 within rounding for d <= 2
    a, b = localize_obs_space(HB, HBHt, LocalizationSpec(1e9, period=4), obs, 4)
    np.testing.assert_allclose(a, HB, rtol=1e-15)
    np.testing.assert_allclose(b, HBHt, rtol=1e-15)


def test_localize_obs_space_hand_oracle():
    # 4-cell ring, c = 1: distances 0, 1, 2 -> GC = 1, 5/24 (i.e. GC at z=1), 0
    g1 = 1 - 5 / 3 + 5 / 8 + 1 / 2 - 1 / 4
    obs = np.array([0, 1, 2, 3])
    HB = np.arange(16.0).reshape(4, 4) + 1
    HBHt = HB.copy()
    rho = np.array([
        [1, g1, 0, g1],
        [g1, 1, g1, 0],
        [0, g1, 1, g1],
        [g1, 0, g1, 1],
    ])
    a, b = localize_obs_space(HB, HBHt, LocalizationSpec(1.0, period=4), obs, 4)
    np.testing.assert_allclose(a, HB * rho, atol=1e-15)
    np.testing.assert_allclose(b, HBHt * rho, atol=1e-15)
    assert a[0, 2] == 0.0


def test_localize_obs_space_dimension_check():
    with pytest.raises(ValueError, match="dimension"):
        localize_obs_space(np.zeros((2, 5)), np.zeros((2, 2)), LocalizationSpec(1.0), [0, 1], 4)


def test_localize_state_space():
    B = np.ones((6, 6))
    L = localize_state_space(B, LocalizationSpec(1.0, period=6))
    np.testing.assert_array_equal(np.diag(L), 1.0)
    assert L[0, 3] == 0.0
