import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ehresmann_lab.smoothing import SMOOTHSTEP_PEAK, smoothstep, smoothstep_deriv, smoothstep_deriv2


def test_ends_and_peak():
    assert smoothstep(0.0) == 0.0 and smoothstep(1.0) == 1.0
    assert smoothstep_deriv(0.5) == SMOOTHSTEP_PEAK
    assert smoothstep(-3.0) == 0.0 and smoothstep(7.0) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert smoothstep(lo) <= smoothstep(hi)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.999))
def test_derivatives_match_differences(x):
    h = 1e-6
    assert abs(smoothstep_deriv(x) - (smoothstep(x + h) - smoothstep(x - h)) / (2 * h)) < 1e-8
    assert abs(smoothstep_deriv2(x) - (smoothstep_deriv(x + h) - smoothstep_deriv(x - h)) / (2 * h)) < 1e-6


def test_derivatives_vanish_at_ends():
    for f in (smoothstep_deriv, smoothstep_deriv2):
        assert f(0.0) == 0.0 and f(1.0) == 0.0
    assert np.all(smoothstep_deriv(np.linspace(0, 1, 101)) >= 0)
