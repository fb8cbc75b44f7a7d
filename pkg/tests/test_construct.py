import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehresmann_lab.construct import SectionFamily, build_complete_connection, check_disconnecting
from ehresmann_lab.partition import validate_partition
from ehresmann_lab.scenarios import build, tube_demo_atlas


@pytest.fixture(scope="module")
def complete():
    return build_complete_connection(tube_demo_atlas(), 4)


def test_tubes_are_separated(complete):
    _, rec = complete
    assert rec.tubes.min_separation > 0
    for c in (0, 1):
        radii = rec.tubes.radii(c)
        assert radii == sorted(radii) and len(set(radii)) == len(radii)


def test_agreement_on_tubes(complete):
    _, rec = complete
    assert rec.max_agreement_residual <= 1e-9
    assert len(rec.agreement) == len(rec.tubes.tubes)


def test_partition_report(complete):
    _, rec = complete
    rep = validate_partition(rec.partition, 2000)
    assert rep.min_mu_sum > 0
    assert rep.max_sum_error <= 1e-12
    assert rep.max_foreign_weight_on_tubes == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.99, 1.99), st.floats(-30.0, 30.0))
def test_weights_form_a_partition(b, f):
    conn, rec = build_complete_connection(tube_demo_atlas(), 2) if not hasattr(test_weights_form_a_partition, "c") \
        else test_weights_form_a_partition.c
    test_weights_form_a_partition.c = (conn, rec)
    at = conn.atlas
    chart = at.best_chart(np.array([b]))
    w = rec.partition.weights(chart, np.array([b]), np.array([f]))
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12


def test_construct_json_is_plain(complete):
    _, rec = complete
    js = rec.to_json()
    assert js["schema_version"] == "1"
    assert js["rounds"] == 4
    assert set(js["radius_sets"]) == {"0", "1"}


def test_disconnecting_verdicts():
    b = build("example1")
    fam = b.section_family("k-pi")
    good = check_disconnecting(b.connection("H1"), fam)
    assert good.verdict and good.ordered
    assert good.lowest <= -10 and good.highest >= 10
    bad = check_disconnecting(b.connection("average"), fam)
    assert not bad.horizontal
    # residual at y = k pi is (k pi)^2 for the average
    for k, r in zip(range(-6, 7), bad.section_residuals):
        assert r == pytest.approx((k * math.pi) ** 2, abs=1e-9)


def test_h2_sections_are_the_shifted_family():
    b = build("example1")
    fam = b.section_family("half-k-pi")
    assert check_disconnecting(b.connection("H2"), fam).verdict
    assert not check_disconnecting(b.connection("H2"), b.section_family("k-pi")).horizontal


def test_too_few_sections_do_not_disconnect():
    b = build("example1")
    fam = SectionFamily.constant(0, b.atlas.base.box, [0.0, math.pi])
    v = check_disconnecting(b.connection("H1"), fam)
    assert v.horizontal and not v.disconnecting
