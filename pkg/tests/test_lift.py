import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehresmann_lab.atlas import BundlePoint
from ehresmann_lab.connection import blend
from ehresmann_lab.errors import StartMismatch, WeightSumViolation
from ehresmann_lab.lift import (BaseCurve, LiftStatus, completeness_probe, horizontal_lift, lift_residuals,
                                max_workers, parallel_transport, waypoint_curve)
from ehresmann_lab.scenarios import build


@pytest.fixture(scope="module")
def example1():
    return build("example1")


def test_flat_lift_keeps_fiber_coordinate():
    b = build("product-flat")
    conn = b.connection()
    tr = horizontal_lift(conn, BaseCurve.line([-3.0], [1.0], 0.0, 5.0), conn.atlas.point([-3.0], [0.7]))
    assert tr.completed
    assert np.all(tr.fibers[:, 0] == 0.7)


def test_section_lift_stays_on_section(example1):
    conn = example1.connection("H1")
    tr = horizontal_lift(conn, BaseCurve.line([0.0], [1.0], 0.0, 50.0), conn.atlas.point([0.0], [math.pi]))
    assert tr.completed
    assert np.max(np.abs(tr.fibers[:, 0] - math.pi)) < 1e-12


def test_average_blows_up_at_reciprocal(example1):
    conn = example1.connection("average")
    tr = horizontal_lift(conn, BaseCurve.line([0.0], [1.0], 0.0, 3.0), conn.atlas.point([0.0], [0.5]))
    assert tr.status is LiftStatus.BLOW_UP
    assert tr.t_stop == pytest.approx(2.0, rel=1e-3)
    assert tr.label().startswith("BlowUp(")


def test_lift_csv_layout(example1):
    conn = example1.connection("H1")
    tr = horizontal_lift(conn, BaseCurve.line([0.0], [1.0], 0.0, 1.0), conn.atlas.point([0.0], [1.0]))
    lines = tr.to_csv().splitlines()
    assert lines[0] == "t,chart_id,b1,f1,height,status"
    assert lines[-1].endswith(",Completed")
    assert all(line.endswith(",") for line in lines[1:-1])


def test_start_must_be_over_curve(example1):
    conn = example1.connection("H1")
    with pytest.raises(StartMismatch):
        horizontal_lift(conn, BaseCurve.line([0.0], [1.0]), BundlePoint(0, np.array([1.0]), np.array([0.0])))


def test_lift_residuals_within_allowance(example1):
    conn = example1.connection("H2")
    curve = BaseCurve.line([0.0], [1.0], 0.0, 10.0)
    tr = horizontal_lift(conn, curve, conn.atlas.point([0.0], [2.0]))
    for defect, allowance in lift_residuals(conn, curve, tr):
        assert defect <= allowance


def test_chart_switching_on_tube_demo():
    b = build("tube-demo")
    conn = b.connection("complete")
    tr = horizontal_lift(conn, BaseCurve.line([-1.5], [1.0], 0.0, 3.0), b.atlas.point([-1.5], [0.3], 0))
    assert tr.completed and tr.switches
    assert tr.end.chart == 1


def test_blend_weights_must_sum_to_one(example1):
    h1, h2 = example1.connection("H1"), example1.connection("H2")
    bad = blend([h1, h2], lambda c, b, f: np.array([0.5, 0.4]))
    with pytest.raises(WeightSumViolation):
        bad.coefficient(0, np.array([0.0]), np.array([1.0]))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.sampled_from([-1.0, 1.0]))
def test_transport_composes(y0, a, c, sign):
    # transport contracts toward the invariant lines, so compose in one direction only
    conn = build("example1").connection("H2")
    b1, b2 = sign * a, sign * (a + c)
    mid = parallel_transport(conn, BaseCurve.segment([0.0], [b1]), [np.array([y0])])[0].end
    two = parallel_transport(conn, BaseCurve.segment([b1], [b2]), [mid])[0].end
    one = parallel_transport(conn, BaseCurve.segment([0.0], [b2]), [np.array([y0])])[0].end
    assert abs(two.f[0] - one.f[0]) < 1e-7


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_average_lift_follows_separable_solution(y0, t):
    # y' = y^2 gives y = y0 / (1 - y0 t) before the pole
    if y0 * t >= 0.9:
        return
    conn = build("example1").connection("average")
    tr = horizontal_lift(conn, BaseCurve.line([0.0], [1.0], 0.0, 2.0), conn.atlas.point([0.0], [y0]))
    if t <= 0 or t > tr.t_stop:
        return
    k = max(i for i, s in enumerate(tr.steps) if s.t <= t)
    exact = y0 / (1 - y0 * t)
    assert abs(tr.steps[k](t)[0] - exact) <= 1e-6 * (1 + abs(exact))


def test_waypoint_curve_speed_bound():
    curve = waypoint_curve(np.array([[0.0], [2.0], [-1.0]]), speed=1.5)
    ts = np.linspace(curve.t0, curve.t1, 400)
    speeds = [abs(curve.state(t)[1][0]) for t in ts]
    assert max(speeds) <= 1.5 + 1e-12
    assert curve.state(curve.t1)[0][0] == pytest.approx(-1.0)


def test_probe_is_independent_of_workers(example1, monkeypatch):
    conn = example1.connection("H1")
    one = completeness_probe(conn, 4, 5.0, seed=3, workers=1)
    two = completeness_probe(conn, 4, 5.0, seed=3, workers=2)
    assert one.to_json() == two.to_json()


def test_thread_cap_from_environment(monkeypatch):
    monkeypatch.setenv("EHRESMANN_LAB_THREADS", "64")
    assert 1 <= max_workers() <= 64
    monkeypatch.setenv("EHRESMANN_LAB_THREADS", "nonsense")
    assert max_workers() == 1


def test_probe_counts_blowups(example1):
    rep = completeness_probe(example1.connection("average"), 6, 20.0, seed=1)
    assert rep.blowups >= 1
    assert rep.earliest_blowup is not None
