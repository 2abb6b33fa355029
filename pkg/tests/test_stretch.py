import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlhelm.stretch import (AbsorptionProfile, Stretch, StretchConfig, stretch_1d, stretch_2d_cartesian,
                            stretch_2d_polar)

K = 2 * math.pi
CFG = StretchConfig(40j, K, AbsorptionProfile(1.0, 1.0))


def test_identity_inside():
    xt, a = stretch_1d(CFG, 0.5)
    assert xt == 0.5 and a == 1.0


def test_ramp_values():
    xt, a = stretch_1d(CFG, 1.5)
    assert xt == pytest.approx(1.5 + 0.79577j, abs=1e-5)
    assert a == pytest.approx(1 + 3.18310j, abs=1e-5)
    xt, _ = stretch_1d(CFG, -1.5)
    assert xt == pytest.approx(-1.5 - 0.79577j, abs=1e-5)


def test_profile_edges():
    p = AbsorptionProfile(1.0, 0.5)
    assert p.sigma(1.0) == 0.0
    assert p.sigma(1.5) == pytest.approx(1.0)
    assert p.integral(1.5) == pytest.approx(0.25)
    assert p.eta(-1.5) == pytest.approx(0.25)


def test_cartesian_values():
    xt, j = stretch_2d_cartesian(CFG, CFG, np.array([0.5, -0.3]))
    assert np.array_equal(xt, [0.5, -0.3]) and j == 1.0
    xt, j = stretch_2d_cartesian(CFG, CFG, np.array([1.5, 0.0]))
    assert xt[0] == pytest.approx(1.5 + 0.79577j, abs=1e-5) and xt[1] == 0
    assert j == pytest.approx(1 + 3.18310j, abs=1e-5)
    _, j = stretch_2d_cartesian(CFG, CFG, np.array([1.5, 1.5]))
    assert j == pytest.approx(-9.1321 + 6.3662j, abs=1e-4)


def test_polar_values():
    xt, j = stretch_2d_polar(CFG, np.array([0.3, 0.4]))
    assert np.array_equal(xt, [0.3, 0.4]) and j == 1.0
    xt, j = stretch_2d_polar(CFG, np.array([1.5, 0.0]))
    assert xt[0] == pytest.approx(1.5 + 0.79577j, abs=1e-5)
    beta = xt[0] / 1.5
    assert beta == pytest.approx(1 + 0.53052j, abs=1e-5)
    assert j == pytest.approx((1 + 3.18310j) * (1 + 0.53052j), abs=1e-4)
    xt2, j2 = stretch_2d_polar(CFG, np.array([0.0, 1.5]))
    assert xt2[1] == pytest.approx(xt[0], rel=1e-15) and j2 == pytest.approx(j, rel=1e-15)


def test_polar_origin():
    xt, j = stretch_2d_polar(CFG, np.array([0.0, 0.0]))
    assert np.all(xt == 0) and j == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        StretchConfig(-1 + 1j, K, AbsorptionProfile(1.0, 1.0))
    with pytest.raises(ValueError):
        StretchConfig(1.0, K, AbsorptionProfile(1.0, 1.0))
    with pytest.raises(ValueError):
        AbsorptionProfile(1.0, 0.0)


def test_stretch_object_free_mask():
    s = Stretch("cartesian", CFG)
    pts = np.array([[0.2, 0.2], [0.95, 0.0], [1.2, 0.0]])
    assert s.unstretched(pts, margin=0.1).tolist() == [True, False, False]
    assert not Stretch("1d", None).active


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2.0), st.floats(0, 2.0))
def test_damping_monotone(a, b):
    lo, hi = sorted((a, b))
    assert stretch_1d(CFG, hi)[0].imag >= stretch_1d(CFG, lo)[0].imag


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, 2.0))
def test_polar_jacobian_rotation_invariant(theta, r):
    _, j0 = stretch_2d_polar(CFG, np.array([r, 0.0]))
    _, j = stretch_2d_polar(CFG, np.array([r * math.cos(theta), r * math.sin(theta)]))
    assert abs(j - j0) <= 1e-14 * max(1.0, abs(j0))


@settings(max_examples=40, deadline=None)
@given(st.floats(-2.0, 2.0))
def test_cartesian_polar_agree_on_axes(x):
    xc, _ = stretch_2d_cartesian(CFG, CFG, np.array([x, 0.0]))
    xp, _ = stretch_2d_polar(CFG, np.array([x, 0.0]))
    assert xc[0] == pytest.approx(xp[0], rel=1e-14, abs=1e-15)
