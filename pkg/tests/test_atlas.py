import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehresmann_lab.atlas import (BaseSpace, Box, BundlePoint, FiberModel, change_chart, default_height,
                                 unit_directions, validate_atlas)
from ehresmann_lab.errors import NoChartContains, OutOfOverlap, ValidationError
from ehresmann_lab.scenarios import build, tube_demo_atlas


def test_box_contains_is_open():
    box = Box([0.0, 0.0], [1.0, 2.0])
    assert box.contains(np.array([0.5, 1.0]))
    assert not box.contains(np.array([1.0, 1.0]))
    assert list(box.contains(np.array([[0.5, 0.5], [2.0, 0.5]]))) == [True, False]


def test_box_grid_stays_inside():
    box = Box([-1.0], [3.0])
    g = box.grid(7)
    assert g.shape == (7, 1)
    assert np.all(box.contains(g))


def test_mismatched_box_rejected():
    with pytest.raises(ValidationError):
        Box([0.0], [1.0, 2.0])


def test_bad_models_rejected():
    with pytest.raises(ValidationError):
        FiberModel(2, topology="circle")
    with pytest.raises(ValidationError):
        BaseSpace(2, Box([0.0], [1.0]))


def test_height_is_proper():
    f = np.array([[0.0], [3.0], [-4.0]])
    assert np.allclose(default_height(f), np.sqrt(1 + f[:, 0] ** 2))
    assert default_height(np.array([0.0])) == 1.0


def test_unit_directions_are_unit():
    for m in (1, 2, 3):
        assert np.allclose(np.linalg.norm(unit_directions(m, 8), axis=1), 1.0)


@pytest.mark.parametrize("name", ["product-flat", "example1", "tube-demo", "compact-fiber", "example3"])
def test_scenario_atlases_validate(name):
    rep = validate_atlas(build(name).atlas, 6)
    assert rep.ok, rep.to_json()


def test_tube_demo_transition_is_shear():
    at = tube_demo_atlas()
    p = change_chart(at, BundlePoint(0, np.array([0.2]), np.array([1.0])), 1)
    assert p.chart == 1 and p.f[0] == pytest.approx(1.2)


def test_change_chart_outside_overlap_fails():
    at = tube_demo_atlas()
    with pytest.raises(OutOfOverlap):
        change_chart(at, BundlePoint(0, np.array([-1.8]), np.array([0.0])), 1)


def test_point_without_chart():
    at = tube_demo_atlas()
    with pytest.raises(NoChartContains):
        at.point([5.0], [0.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-50, 50))
def test_change_chart_round_trip(b, f):
    at = tube_demo_atlas()
    p = BundlePoint(0, np.array([b]), np.array([f]))
    back = change_chart(at, change_chart(at, p, 1), 0)
    assert abs(back.f[0] - f) <= 1e-12 * (1 + abs(f))


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20))
def test_circle_wrap_lands_in_period(x):
    fib = FiberModel(1, topology="circle")
    w = float(fib.wrap(np.array([x]))[0])
    assert 0.0 <= w < 2 * math.pi
    assert abs(fib.difference(np.array([w]), np.array([x]))[0]) < 1e-9


def test_broken_cocycle_is_reported():
    from ehresmann_lab.atlas import BundleAtlas, TransitionMap

    good = tube_demo_atlas()
    tr = dict(good.transitions)
    t10 = tr[(1, 0)]
    tr[(1, 0)] = TransitionMap(1, 0, lambda b, f: t10(b, f) + 0.1, t10.jac_b, t10.jac_f)
    broken = BundleAtlas(good.base, good.fiber, good.charts, tr)
    rep = validate_atlas(broken, 6)
    assert rep.max_cocycle_residual >= 0.1 - 1e-12
    assert not rep.ok


def test_missing_transition_rejected():
    from ehresmann_lab.atlas import BundleAtlas
    from ehresmann_lab.errors import MissingTransition

    good = tube_demo_atlas()
    with pytest.raises(MissingTransition):
        BundleAtlas(good.base, good.fiber, good.charts, {})


def test_cover_gap_reported():
    from ehresmann_lab.atlas import BundleAtlas, Chart

    base = BaseSpace(1, Box([0.0], [4.0]))
    chart = Chart(0, Box([0.0], [2.0]), Box([-0.5], [2.5]))
    rep = validate_atlas(BundleAtlas(base, FiberModel(1), [chart], {}), 8)
    assert rep.cover_gaps and not rep.ok
