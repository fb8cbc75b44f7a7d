import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehresmann_lab.atlas import Box
from ehresmann_lab.errors import DegenerateMetric, NonConvergent
from ehresmann_lab.geodesic import (GeodesicStatus, curve_length, dyadic_pieces, exp_trivialization, geodesic,
                                    speed_drift)
from ehresmann_lab.metrics import ChartMetric, flat_metric, graph_metric
from ehresmann_lab.scenarios import build


def polar_metric():
    def G(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = x[..., 0] ** 2
        return out

    def dG(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 1, 1, 0] = 2 * x[..., 0]
        return out

    return ChartMetric(Box([0.05, -10.0], [20.0, 10.0]), G, dG, name="polar")


def test_polar_geodesic_is_a_straight_line():
    tr = geodesic(polar_metric(), [1.0, 0.0], [0.0, 1.0], 1.0)
    r, th = tr.positions[-1]
    assert r * math.cos(th) == pytest.approx(1.0, abs=1e-9)
    assert r * math.sin(th) == pytest.approx(1.0, abs=1e-9)
    assert tr.arc_length == pytest.approx(1.0, abs=1e-9)


def test_analytic_and_fd_christoffels_agree():
    m = polar_metric()
    pts = np.random.default_rng(0).uniform([0.5, -3.0], [5.0, 3.0], size=(50, 2))
    fd = ChartMetric(m.domain, m.G, name="fd")
    assert np.max(np.abs(m.christoffel(pts) - fd.christoffel(pts))) <= 1e-5


def test_graph_metric_christoffels_agree():
    grad = lambda x: np.stack([np.cos(x[..., 0]) * x[..., 1], np.sin(x[..., 0])], -1)
    hess = lambda x: np.stack([np.stack([-np.sin(x[..., 0]) * x[..., 1], np.cos(x[..., 0])], -1),
                               np.stack([np.cos(x[..., 0]), np.zeros(x.shape[:-1])], -1)], -2)
    dom = Box([-3.0, -3.0], [3.0, 3.0])
    a, b = graph_metric(dom, grad, hess), graph_metric(dom, grad)
    pts = np.random.default_rng(1).uniform(-2, 2, size=(40, 2))
    assert np.max(np.abs(a.christoffel(pts) - b.christoffel(pts))) <= 1e-5


def test_speed_is_conserved():
    m = polar_metric()
    tr = geodesic(m, [2.0, 0.3], [0.4, 0.2], 10.0)
    assert tr.completed
    assert speed_drift(m, tr) <= 1e-6


def test_geodesic_csv_columns():
    tr = geodesic(flat_metric(Box([-5.0, -5.0], [5.0, 5.0]), base_dim=1), [0.0, 0.0], [1.0, 0.0], 1.0)
    head = tr.to_csv().splitlines()[0]
    assert head == "t,chart_id,b1,f1,height,status,v_b1,v_f1,arc_length"


def test_leaving_the_domain_is_reported():
    tr = geodesic(flat_metric(Box([-1.0], [1.0])), [0.0], [1.0], 5.0)
    assert tr.status is GeodesicStatus.LEFT_DOMAIN
    assert tr.t_stop == pytest.approx(1.0, abs=1e-5)


def test_degenerate_metric_detected():
    def G(x):
        x = np.asarray(x, dtype=float)
        return np.where(x[..., :1, None] < 0.5, 1.0, -1.0) * np.ones((1, 1))

    m = ChartMetric(Box([-2.0], [2.0]), G, lambda x: np.zeros(np.shape(x)[:-1] + (1, 1, 1)))
    with pytest.raises(DegenerateMetric):
        geodesic(m, [0.0], [1.0], 1.5, unit_speed=False)
    with pytest.raises(DegenerateMetric):
        geodesic(m, [1.0], [1.0], 0.1)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 0.9))
def test_length_is_additive(s):
    m = polar_metric()
    curve = lambda t: (np.stack([1 + t, np.sin(t)], -1), np.stack([np.ones_like(t), np.cos(t)], -1))
    whole = curve_length(m, curve, 0.0, 1.0, tol=1e-10).length
    parts = curve_length(m, curve, 0.0, s, tol=1e-10).length + curve_length(m, curve, s, 1.0, tol=1e-10).length
    assert abs(whole - parts) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.9, 0.9))
def test_length_ignores_parametrization(a):
    m = polar_metric()
    curve = lambda t: (np.stack([1 + t, np.sin(t)], -1), np.stack([np.ones_like(t), np.cos(t)], -1))

    def warped(u):
        # smooth increasing bijection of [0, 1]
        t = u + a * u * (1 - u)
        pos, vel = curve(t)
        return pos, vel * (1 + a * (1 - 2 * u))[:, None]

    first = curve_length(m, curve, 0.0, 1.0, tol=1e-10).length
    second = curve_length(m, warped, 0.0, 1.0, tol=1e-10).length
    assert abs(first - second) <= 1e-6


def test_divergent_length_raises():
    m = flat_metric(Box([-1.0, -1.0], [1.0, 1.0]))
    # speed 1/(1-t) has infinite length on [0, 1)
    curve = lambda t: (np.stack([np.zeros_like(t), np.zeros_like(t)], -1),
                       np.stack([1 / (1 - t), np.zeros_like(t)], -1))
    with pytest.raises(NonConvergent) as err:
        curve_length(m, curve, 0.0, 1.0, open_right=True, levels=5)
    assert not err.value.report.converged


def test_dyadic_pieces_cover_interval():
    pieces = dyadic_pieces(0.0, 4.0, False, True, 6)
    assert pieces[0][0] == 0.0
    assert all(a[1] == b[0] for a, b in zip(pieces, pieces[1:]))
    assert pieces[-1][1] == pytest.approx(4.0 - 4.0 / 64)


def test_flat_product_exponential_trivialization():
    fm = build("product-flat").metric("product")
    ex = exp_trivialization(fm, [0.5], 0.5, grid=5, fiber_values=np.array([-1.0, 0.0, 2.0]))
    for k, u in enumerate(ex.base_grid):
        for j, f in enumerate(ex.fibers):
            assert np.allclose(ex.images[k, j], np.concatenate([0.5 + u, f]), atol=1e-9)
    assert ex.commutation_residual <= 1e-9


def test_tube_demo_exponential_trivialization():
    fm = build("tube-demo").metric()
    ex = exp_trivialization(fm, [0.1], 0.5, grid=5)
    assert ex.commutation_residual <= 1e-6
    assert ex.slice_isometry_residual <= 1e-6
    assert ex.min_jacobian > 0
