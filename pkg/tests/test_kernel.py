import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlhelm.kernel import KernelSpec, eval_complex, second_moment, smooth_indicator, tail_mass


def test_exponential_value():
    k = KernelSpec("Exponential1D", c_gamma=0.1)
    assert eval_complex(k, 0.5) == pytest.approx(500 * math.exp(-5), rel=1e-14)
    assert eval_complex(k, 0.5) == pytest.approx(3.36897, abs=1e-5)


def test_sharp_indicator_outside_horizon():
    k = KernelSpec("PiecewiseConstant1D", delta=0.25, smoothed=False)
    assert eval_complex(k, 0.5) == 0.0


def test_exponential_imaginary_displacement():
    k = KernelSpec("Exponential1D", c_gamma=0.1)
    v = eval_complex(k, 1j)
    assert abs(v) == pytest.approx(500.0, rel=1e-13)
    assert v == pytest.approx(500 * np.exp(-10j), rel=1e-13)


def test_exponential_2d_value():
    k = KernelSpec("Exponential2D", c_gamma=0.05)
    v = eval_complex(k, np.array([0.03, 0.04]))
    assert v == pytest.approx(math.exp(-1.0) / (3 * math.pi * 0.05**4), rel=1e-13)


@pytest.mark.parametrize("spec", [
    dict(family="Exponential1D", c_gamma=0.9 / (2 * math.pi)),
    dict(family="Exponential1D", c_gamma=1.1 / (2 * math.pi)),
    dict(family="PiecewiseConstant1D", delta=0.25, smoothed=False),
    dict(family="PiecewiseConstant1D", delta=0.25),
    dict(family="Exponential2D", c_gamma=0.05),
    dict(family="Exponential2D", c_gamma=0.1 / (2 * math.pi)),
    dict(family="PiecewiseConstant2D", delta=0.25, smoothed=False),
])
def test_second_moment_is_one(spec):
    k = KernelSpec(**spec)
    tol = 1e-8 if not (k.is_piecewise_constant and k.smoothed) else 1e-2
    assert second_moment(k) == pytest.approx(1.0, abs=tol)


def test_second_moment_rejects_fractional():
    with pytest.raises(ValueError):
        second_moment(KernelSpec("Fractional1D", s_order=0.5))


def test_smooth_indicator_values():
    assert smooth_indicator(1.0) == pytest.approx(0.5)
    assert smooth_indicator(1.01, 0.01, 0.01) == pytest.approx((1 - 0.980198) / 2, abs=1e-6)
    assert abs(smooth_indicator(0.0, 0.01, 0.01) - 1.0) < 1e-15
    assert smooth_indicator(50.0) == 0.0


def test_tail_mass():
    assert tail_mass(KernelSpec("Fractional1D", s_order=0.5), 10.0) == pytest.approx(2 / (10 * math.pi), rel=1e-12)
    assert tail_mass(KernelSpec("Fractional2D", s_order=0.5), 10.0) == pytest.approx(0.1, rel=1e-12)
    assert tail_mass(KernelSpec("PiecewiseConstant1D", delta=0.25, smoothed=False), 0.3) == 0.0


def test_fractional_rejects_zero_separation():
    with pytest.raises(ValueError):
        eval_complex(KernelSpec("Fractional1D", s_order=0.5), 1e-16)


def test_bad_parameters():
    with pytest.raises(ValueError):
        KernelSpec("Exponential1D", c_gamma=-1.0)
    with pytest.raises(ValueError):
        KernelSpec("Fractional2D", s_order=1.5)
    with pytest.raises(ValueError):
        KernelSpec("Nope", c_gamma=1.0)


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(finite, finite)
def test_even_in_displacement(re, im):
    k = KernelSpec("Exponential1D", c_gamma=0.3)
    d = complex(re, im)
    if abs(d) < 1e-6:
        return
    assert eval_complex(k, d) == pytest.approx(eval_complex(k, -d), rel=1e-13)


@settings(max_examples=60, deadline=None)
@given(finite, finite, finite, finite)
def test_even_in_2d(a, b, c, d):
    k = KernelSpec("Exponential2D", c_gamma=0.4)
    v = np.array([complex(a, c), complex(b, d)])
    if np.abs(np.sum(v**2)) < 1e-6:
        return
    assert eval_complex(k, v) == pytest.approx(eval_complex(k, -v), rel=1e-13)


@settings(max_examples=80, deadline=None)
@given(st.floats(0, 3))
def test_smoothed_indicator_close_to_sharp(s):
    if abs(abs(s) - 1) <= 0.01:
        return
    sharp = 1.0 if abs(s) <= 1 else 0.0
    assert abs(smooth_indicator(s, 0.01, 0.01) - sharp) <= 0.01


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2))
def test_real_displacement_gives_real_nonnegative(x):
    for k in (KernelSpec("Exponential1D", c_gamma=0.2), KernelSpec("PiecewiseConstant1D", delta=0.5)):
        v = eval_complex(k, x)
        assert np.imag(v) == 0 and np.real(v) >= 0
