import math

import numpy as np
import pytest

from ehresmann_lab.errors import SeparationViolation
from ehresmann_lab.fibered import (build_complete_fibered_metric, geodesic_probe, identity_metric,
                                   literal_blend_spread, ray_distance, thickness_for)
from ehresmann_lab.geodesic import GeodesicStatus, geodesic, speed_drift
from ehresmann_lab.metrics import is_spd
from ehresmann_lab.scenarios import tube_demo_atlas


@pytest.fixture(scope="module")
def built():
    return build_complete_fibered_metric(tube_demo_atlas(), 4)


def test_ray_distance_flat_fiber():
    fib = tube_demo_atlas().fiber
    # height sqrt(1 + f^2): levels 2 and 3 sit at |f| = sqrt(3) and sqrt(8)
    assert ray_distance(fib, identity_metric(1), 2.0, 3.0) == pytest.approx(math.sqrt(8) - math.sqrt(3), rel=1e-10)


def test_unit_thickness_suffices_for_flat_fiber():
    fib = tube_demo_atlas().fiber
    for n in (1, 4, 10, 22):
        assert thickness_for(fib, identity_metric(1), n) == 1


def test_shrinking_fiber_metric_needs_thicker_bands():
    fib = tube_demo_atlas().fiber
    tiny = lambda f: 1e-6 * np.ones(np.shape(f)[:-1] + (1, 1))
    assert thickness_for(fib, tiny, 3) >= 1000


def test_finite_fiber_length_cannot_be_separated():
    fib = tube_demo_atlas().fiber
    # the whole ray beyond any level has length < pi/2
    squeezed = lambda f: (1.0 + np.asarray(f)[..., :1, None] ** 2) ** -2
    with pytest.raises(SeparationViolation):
        thickness_for(fib, squeezed, 3)


def test_record_contents(built):
    _, rec = built
    assert set(rec.thickness.values()) == {1}
    assert rec.max_product_residual <= 1e-12
    assert min(rec.band_distances, key=lambda r: r["distance"])["distance"] >= 1 - 1e-9
    js = rec.to_json()
    assert js["schema_version"] == "1" and "thickness" in js


def test_metric_is_spd_and_fibered(built):
    fm, _ = built
    rng = np.random.default_rng(5)
    for _ in range(20):
        b = rng.uniform(-1.9, 1.9, size=1)
        chart = fm.atlas.best_chart(b)
        fibers = rng.uniform(-25, 25, size=(12, 1))
        G = fm.matrix(chart, np.broadcast_to(b, (12, 1)), fibers)
        assert all(is_spd(g) for g in G)
        assert fm.horizontal_norm_spread(chart, b, rng.normal(size=1), fibers) <= 1e-9


def test_literal_matrix_blend_is_not_fibered(built):
    fm, rec = built
    weights = rec.construction.partition.weights
    fibers = np.linspace(-25, 25, 101)[:, None]
    spread = max(literal_blend_spread(fm.atlas, weights, fm.atlas.best_chart(np.array([b])), [b], [1.0], fibers)
                 for b in (-0.3, 0.0, 0.3))
    assert spread > 1e-3


def test_geodesic_speed_drift(built):
    fm, _ = built
    tr = geodesic(fm, fm.atlas.point([-0.2], [0.5]), [1.0, 0.4], 10.0)
    assert speed_drift(fm, tr) <= 1e-6


def test_probe_crossings_cost_unit_length(built):
    fm, rec = built
    rep = geodesic_probe(fm, rec, 6, 10.0, seed=2)
    assert rep.counts[GeodesicStatus.BLOW_UP.value] == 0
    for row in rep.crossings:
        assert row["arc_length"] >= 1 - 1e-6


def test_hundred_geodesics_do_not_escape(built):
    fm, rec = built
    rep = geodesic_probe(fm, rec, 100, 10.0, seed=0)
    assert rep.counts[GeodesicStatus.BLOW_UP.value] == 0
    assert rep.min_crossing_length is None or rep.min_crossing_length >= 1 - 1e-6
