import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehresmann_lab.errors import NonConvergent
from ehresmann_lab.example3 import (Example3, bump, bump_derivs, c_curve, c_curve_path, c_length, hill_derivs,
                                    ridge_derivs)


@pytest.fixture(scope="module")
def ex():
    return Example3(12)


def test_bump_shape():
    assert bump(np.array([0.0]))[0] == 1.0
    assert np.all(bump(np.array([-1.0, 1.0, 1.5])) == 0.0)
    z = np.linspace(-0.99, 0.99, 201)
    assert np.all((bump(z) > 0) & (bump(z) <= 1))


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.9, 0.9))
def test_bump_derivatives_match_differences(z):
    h = 1e-6
    a0, a1, a2 = (float(v[0]) for v in bump_derivs(np.array([z])))
    up, dn = bump(np.array([z + h]))[0], bump(np.array([z - h]))[0]
    assert a1 == pytest.approx((up - dn) / (2 * h), abs=1e-6)
    assert a2 == pytest.approx((up - 2 * a0 + dn) / h ** 2, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.9, 0.9))
def test_ridge_derivatives_match_differences(s):
    h = 1e-6
    b0, b1, b2 = ridge_derivs(s, -8.0)
    assert b1 == pytest.approx((ridge_derivs(s + h, -8.0)[0] - ridge_derivs(s - h, -8.0)[0]) / (2 * h), rel=1e-5,
                               abs=1e-7)
    assert b2 == pytest.approx((ridge_derivs(s + h, -8.0)[1] - ridge_derivs(s - h, -8.0)[1]) / (2 * h), rel=1e-5,
                               abs=1e-7)


def test_hill_gradient_matches_differences():
    rng = np.random.default_rng(3)
    x = rng.uniform(-7.0, -1.0, 200)
    y = rng.uniform(3.2, 4.8, 200)
    p, px, py, *_ = hill_derivs(x, y, -8.0)
    h = 1e-6
    fx = (hill_derivs(x + h, y, -8.0)[0] - hill_derivs(x - h, y, -8.0)[0]) / (2 * h)
    fy = (hill_derivs(x, y + h, -8.0)[0] - hill_derivs(x, y - h, -8.0)[0]) / (2 * h)
    assert np.max(np.abs(px - fx)) < 1e-5
    assert np.max(np.abs(py - fy)) < 1e-5


def test_hills_peak_at_one(ex):
    for k in range(6):
        x, y = ex.hill_center(k)
        assert ex.hill(k, np.array([x]), np.array([y]))[0] == pytest.approx(1.0, abs=1e-15)
    assert Example3(12, 0.0).phi(np.array([4.0]), np.array([4.0]))[0] == pytest.approx(1.0)


def test_hill_supports_are_disjoint(ex):
    xs, ys = np.meshgrid(np.linspace(-6, 6, 301), np.linspace(-0.5, 6, 301))
    hills = [ex.hill(k, xs, ys) for k in range(8)]
    for j in range(8):
        for k in range(j + 1, 8):
            assert np.max(hills[j] * hills[k]) == 0.0


def test_sections_are_horizontal(ex):
    assert max(ex.section_residuals(range(9))) <= 1e-9


def test_w_metric_keeps_slope(ex):
    pts = np.random.default_rng(0).uniform([-6, -1], [6, 6], size=(500, 2))
    assert ex.slope_residual(pts) <= 1e-9


def test_analytic_christoffels_match_differences(ex):
    # away from the steep ridge ends and the tiny hills, 1e-5 steps resolve the metric
    rng = np.random.default_rng(7)
    pts = np.stack([rng.uniform(-6, 0, 300), rng.uniform(3.0, 4.5, 300)], -1)
    for m in (ex.induced_metric(), ex.w_metric()):
        assert np.max(np.abs(m.christoffel(pts) - m.fd_christoffel(pts, 1e-5))) <= 1e-5


def test_curve_leaves_every_compact():
    t = -5.0 / 2.0 ** np.arange(1, 30)
    pos, _ = c_curve_path(t)
    assert np.all(np.diff(pos[:, 0]) > 0)
    assert abs(pos[-1, 0]) < 1e-8 and abs(pos[-1, 1]) < 1e-7
    assert c_curve(np.array([-4.0]))[0] == 4.0


def test_w_length_is_finite_and_stable():
    lengths = [c_length(Example3(k).w_metric()).length for k in (8, 10, 12)]
    assert max(lengths) - min(lengths) <= 1e-3
    # the curve only meets hills on their flat tops, so this is its Euclidean length (scipy quad: 8.2551)
    assert lengths[0] == pytest.approx(8.2551, abs=1e-3)


def test_centered_hills_make_length_diverge():
    with pytest.raises(NonConvergent):
        c_length(Example3(8, 0.0).w_metric())
