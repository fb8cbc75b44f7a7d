"""Complete fibered metrics over thick tubes and geodesic probes across them."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .atlas import Box, BundleAtlas, BundlePoint, unit_directions
from .connection import BlendedConnection, induced_connection
from .construct import ConstructionRecord, agreement_residuals
from .errors import AgreementViolation, SeparationViolation, ValidationError
from .geodesic import GeodesicStatus, geodesic
from .lift import max_workers, trial_rng
from .metrics import ChartMetric, FiberedMetric, fibered_block, horizontal_norm_spread
from .partition import build_partition, tube_samples
from .tubes import COLLAR, PLATEAU, build_tube_family, level_radius

PRODUCT_TOL = 1e-12
CROSSING_TOL = 1e-6
MAX_DOUBLINGS = 30


def identity_metric(dim: int) -> Callable:
    eye = np.eye(dim)

    def g(x):
        if np.ndim(x) == 1:
            return eye
        return np.broadcast_to(np.eye(dim), np.shape(x)[:-1] + (dim, dim)).copy()

    return g


def ray_distance(fiber, fiber_metric: Callable, lo_level: float, hi_level: float, directions: int = 16) -> float:
    """Smallest g_F-length, over rays from the origin, between two height levels."""
    r0, r1 = level_radius(fiber, lo_level), level_radius(fiber, hi_level)
    if not (math.isfinite(r0) and math.isfinite(r1)):
        raise ValidationError("ray distance needs finite level radii")
    best = math.inf
    for u in unit_directions(fiber.dim, directions):
        def speed(r, u=u):
            G = np.asarray(fiber_metric(r * u), dtype=float)
            return math.sqrt(float(u @ G @ u))

        # geometric pieces keep each quadrature well scaled on long rays
        edges = [r0]
        step = 1.0
        while edges[-1] + step < r1:
            edges.append(edges[-1] + step)
            step *= 2.0
        edges.append(r1)
        val = sum(quad(speed, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0] for a, b in zip(edges, edges[1:]))
        best = min(best, val)
    return best


def thickness_for(fiber, fiber_metric: Callable, n: float, *, target: float = 1.0) -> int:
    """Smallest l in {1, 2, 4, ...} whose band [n, n + l] is ``target`` thick along every ray."""
    l = 1
    for _ in range(MAX_DOUBLINGS):
        if ray_distance(fiber, fiber_metric, n, n + l) >= target:
            return l
        l *= 2
    raise SeparationViolation(f"no thickness up to {l} separates level {n} by {target}")


class BlendedFiberedMetric(FiberedMetric):
    """g_B ⊕ g_V around the blended connection, with g_V = Σ λ_i (∂_f t)ᵀ g_F (∂_f t).

    Weights are evaluated once per call to :meth:`matrix`.
    """

    def __init__(self, connection: BlendedConnection, fiber_metric: Callable, base_metric: Callable,
                 name="complete-fibered"):
        self.fiber_metric = fiber_metric
        super().__init__(connection, self._vertical, base_metric, name)

    def _vertical_from(self, chart, b, f, w):
        atlas = self.atlas
        m = atlas.m
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        if w.ndim == 1:
            out = np.zeros((m, m))
            for k, i in enumerate(atlas.chart_ids):
                wk = float(w[k])
                if wk == 0.0:
                    continue
                if i == chart:
                    out += wk * np.asarray(self.fiber_metric(f))
                    continue
                tr = atlas.transition(chart, i)
                J = np.asarray(tr.d_f(b, f))
                out += wk * (J.T @ np.asarray(self.fiber_metric(tr(b, f))) @ J)
            return out
        shape = w.shape[:-1]
        out = np.zeros(shape + (m, m))
        bb = np.broadcast_to(b, shape + b.shape[-1:])
        ff = np.broadcast_to(f, shape + f.shape[-1:])
        for k, i in enumerate(atlas.chart_ids):
            mask = w[..., k] != 0.0
            if not np.any(mask):
                continue
            bk, fk = bb[mask], ff[mask]
            if i == chart:
                G = np.asarray(self.fiber_metric(fk))
            else:
                tr = atlas.transition(chart, i)
                J = np.asarray(tr.d_f(bk, fk))
                G = np.swapaxes(J, -1, -2) @ np.asarray(self.fiber_metric(tr(bk, fk))) @ J
            out[mask] += w[..., k][mask][:, None, None] * G
        return out

    def _vertical(self, chart, b, f):
        return self._vertical_from(chart, b, f, self.connection.weight_values(chart, b, f))

    def point_matrix(self, chart: int, b, f):
        """Single-point evaluation using the induced-connection structure of the blend."""
        atlas = self.atlas
        n, m = atlas.n, atlas.m
        w = self.connection.weights(chart, b, f)
        if n == 1 and m == 1:
            return self._point_matrix_1d(chart, b, f, w)
        gamma = np.zeros((m, n))
        gV = np.zeros((m, m))
        for k, i in enumerate(atlas.chart_ids):
            wk = float(w[k])
            if wk == 0.0:
                continue
            if i == chart:
                gV += wk * np.asarray(self.fiber_metric(f))
                continue
            to_i = atlas.transition(chart, i)
            fi = np.asarray(to_i(b, f))
            J = np.asarray(to_i.d_f(b, f)).reshape(m, m)
            gamma += wk * np.asarray(atlas.transition(i, chart).d_b(b, fi)).reshape(m, n)
            gV += wk * (J.T @ np.asarray(self.fiber_metric(fi)) @ J)
        gB = np.asarray(self.base(b)).reshape(n, n)
        gVG = gV @ gamma
        G = np.empty((n + m, n + m))
        G[:n, :n] = gB + gamma.T @ gVG
        G[:n, n:] = -gVG.T
        G[n:, :n] = -gVG
        G[n:, n:] = gV
        return G

    def _point_matrix_1d(self, chart, b, f, w):
        atlas = self.atlas
        gam = gv = 0.0
        for k, i in enumerate(atlas.chart_ids):
            wk = float(w[k])
            if wk == 0.0:
                continue
            if i == chart:
                gv += wk * float(np.asarray(self.fiber_metric(f)).flat[0])
                continue
            to_i = atlas.transition(chart, i)
            fi = np.asarray(to_i(b, f))
            J = float(np.asarray(to_i.d_f(b, f)).flat[0])
            gam += wk * float(np.asarray(atlas.transition(i, chart).d_b(b, fi)).flat[0])
            gv += wk * J * J * float(np.asarray(self.fiber_metric(fi)).flat[0])
        gB = float(np.asarray(self.base(b)).flat[0])
        gvg = gv * gam
        return np.array([[gB + gam * gvg, -gvg], [-gvg, gv]])

    def matrix(self, chart: int, b, f):
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        w = self.connection.weight_values(chart, b, f)
        gamma = self.connection.combine(chart, b, f, w)
        gV = self._vertical_from(chart, b, f, w)
        shape = w.shape[:-1]
        gB = np.broadcast_to(self.base(b), shape + (self.atlas.n, self.atlas.n))
        return fibered_block(gB, gV, gamma)


@dataclass
class FiberedRecord:
    construction: ConstructionRecord
    thickness: dict
    band_distances: list
    product_agreement: list = field(default_factory=list)

    @property
    def max_product_residual(self) -> float:
        return max((r["residual"] for r in self.product_agreement), default=0.0)

    @property
    def tubes(self):
        return self.construction.tubes

    def to_json(self):
        out = self.construction.to_json()
        out.update({
            "thickness": {str(k): v for k, v in sorted(self.thickness.items())},
            "band_distances": self.band_distances,
            "product_agreement": self.product_agreement,
            "max_product_residual": self.max_product_residual,
        })
        return out


def product_agreement(fm: FiberedMetric, tubes, samples: int = 1000):
    """max |G - g_B ⊕ g_F| over sampled points of each thick tube, in the tube's chart."""
    rows = []
    n = fm.atlas.n
    for t in tubes.tubes:
        B, F = tube_samples(fm.atlas, t, samples)
        G = fm.matrix(t.chart, B, F)
        P = np.zeros_like(G)
        P[:, :n, :n] = fm.base(B)
        P[:, n:, n:] = fm.fiber_metric(F)
        rows.append({**t.to_json(), "residual": float(np.abs(G - P).max()), "samples": len(B)})
    return rows


def build_complete_fibered_metric(atlas: BundleAtlas, rounds: int = 4, *, fiber_metric=None,
                                  base_metric=None, collar: float = COLLAR, plateau: float = PLATEAU,
                                  samples: int = 10_000, tube_samples_per_tube: int = 1000,
                                  **pick_opts):
    """Complete fibered metric built over thick tubes.

    Each tube band [n, n + l_n] is at least 1 thick for g_F along every ray,
    the connection is the tube blend, and the vertical metric is the
    λ-weighted pull-back of g_F.  Returns ``(metric, record)``.
    """
    if atlas.fiber.compact:
        raise ValidationError("thick tubes need a euclidean fiber")
    gF = fiber_metric or identity_metric(atlas.m)
    gB = base_metric or identity_metric(atlas.n)
    cache = {}

    def thickness(nv):
        if nv not in cache:
            cache[nv] = thickness_for(atlas.fiber, gF, nv)
        return cache[nv]

    tubes = build_tube_family(atlas, rounds, collar=collar, thickness=thickness, samples=samples, **pick_opts)
    pou, report = build_partition(atlas, tubes, plateau=plateau, collar=collar, samples=samples)
    conn = BlendedConnection([induced_connection(atlas, c) for c in atlas.chart_ids], pou.weights,
                             name="complete")
    conn.feature_scale = pou.feature_scale
    record = ConstructionRecord(tubes, pou, report)
    record.agreement = agreement_residuals(conn, tubes, tube_samples_per_tube)
    if record.max_agreement_residual > 1e-9:
        raise AgreementViolation(f"blend departs from H_i on a tube by {record.max_agreement_residual}")
    fm = BlendedFiberedMetric(conn, gF, gB)
    dists = [{**t.to_json(), "distance": ray_distance(atlas.fiber, gF, *t.band)} for t in tubes.tubes]
    frec = FiberedRecord(record, dict(cache), dists)
    frec.product_agreement = product_agreement(fm, tubes, tube_samples_per_tube)
    if frec.max_product_residual > PRODUCT_TOL:
        raise AgreementViolation(f"metric departs from the product on a tube by {frec.max_product_residual}")
    return fm, frec


def literal_blend_matrix(atlas: BundleAtlas, weights: Callable, fiber_metric=None, base_metric=None):
    """Σ λ_i Φ_i^*(g_B ⊕ g_F) blended as whole matrices, returned per chart as a callable."""
    gF = fiber_metric or identity_metric(atlas.m)
    gB = base_metric or identity_metric(atlas.n)
    n, m = atlas.n, atlas.m

    def matrix(chart, b, f):
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        shape = np.broadcast_shapes(b.shape[:-1], f.shape[:-1])
        bb = np.broadcast_to(b, shape + (n,))
        ff = np.broadcast_to(f, shape + (m,))
        w = np.broadcast_to(np.asarray(weights(chart, bb, ff)), shape + (len(atlas.chart_ids),))
        out = np.zeros(shape + (n + m, n + m))
        for k, i in enumerate(atlas.chart_ids):
            tr = atlas.transition(chart, i)
            J = np.zeros(shape + (n + m, n + m))
            J[..., :n, :n] = np.eye(n)
            J[..., n:, :n] = tr.d_b(bb, ff)
            J[..., n:, n:] = tr.d_f(bb, ff)
            P = np.zeros(shape + (n + m, n + m))
            P[..., :n, :n] = gB(bb)
            P[..., n:, n:] = gF(tr(bb, ff))
            out += w[..., k][..., None, None] * (np.swapaxes(J, -1, -2) @ P @ J)
        return out

    return matrix


def literal_blend_spread(atlas: BundleAtlas, weights: Callable, chart: int, b, v, fibers, **metrics) -> float:
    """Fiber-spread of horizontal norms for the literal matrix blend (nonzero means not fibered)."""
    mat = literal_blend_matrix(atlas, weights, **metrics)
    dom = Box(np.concatenate([atlas.chart(chart).outer.lo, np.full(atlas.m, -np.inf)]),
              np.concatenate([atlas.chart(chart).outer.hi, np.full(atlas.m, np.inf)]))
    cm = ChartMetric(dom, lambda x: mat(chart, x[..., :atlas.n], x[..., atlas.n:]), base_dim=atlas.n)
    return horizontal_norm_spread(cm, atlas.n, b, v, fibers)


# ------------------------------------------------------------ geodesic probe

@dataclass
class GeodesicProbeReport:
    trials: int
    horizon: float
    seed: int
    statuses: list
    stop_times: list
    crossings: list  # dicts: trial, chart, radius, arc_length

    @property
    def counts(self):
        out = {s.value: 0 for s in GeodesicStatus}
        for s in self.statuses:
            out[s.value] += 1
        return out

    @property
    def min_crossing_length(self):
        return min((c["arc_length"] for c in self.crossings), default=None)

    def to_json(self):
        return {
            "schema_version": "1",
            "trials": self.trials,
            "horizon": self.horizon,
            "seed": self.seed,
            "counts": self.counts,
            "crossings": len(self.crossings),
            "min_crossing_length": self.min_crossing_length,
            "crossing_details": self.crossings,
            "results": [{"trial": k, "status": s.value, "t_stop": t}
                        for k, (s, t) in enumerate(zip(self.statuses, self.stop_times))],
        }


def _dense_samples(trace, per_step: int):
    ts = [float(trace.times[0])]
    for st in trace.steps:
        ts.extend((st.t + st.h * np.arange(1, per_step + 1) / per_step).tolist())
    return np.asarray(ts)


def _height_at(fm: FiberedMetric, trace, chart: int, t):
    """(chart height or None, base point in closure(U_chart), arc length) at time ``t``."""
    atlas = fm.atlas
    n = atlas.n
    c, x, _, s = trace.sample(t)
    b, f = x[:n], x[n:]
    if not atlas.chart(chart).outer.contains(b, atlas.margin):
        return None, False, s
    fi = f if c == chart else np.asarray(atlas.transition(c, chart)(b, f))
    return float(atlas.fiber.height(fi)), bool(atlas.chart(chart).inner.contains_closed(b)), s


def chart_profiles(fm: FiberedMetric, trace, charts, per_step: int = 8):
    """Sample times and, per chart, the heights and closure(U) flags along ``trace``."""
    ts = _dense_samples(trace, per_step)
    return ts, {c: [_height_at(fm, trace, c, t) for t in ts] for c in charts}


def tube_crossings(fm: FiberedMetric, trace, tube, per_step: int = 8, profiles=None):
    """Full passages of ``trace`` through the band of ``tube`` over closure(U_tube).

    Returns a list of (t_enter, t_exit, arc_length inside).
    """
    i = tube.chart
    lo_lvl, hi_lvl = tube.band
    ts, prof = profiles if profiles is not None else chart_profiles(fm, trace, [i], per_step)
    info = prof[i]

    def side(H):
        if H is None:
            return None
        return -1 if H <= lo_lvl else (1 if H >= hi_lvl else 0)

    def level_gap(t, level):
        return _height_at(fm, trace, i, t)[0] - level

    sides = [side(h) for h, _, _ in info]
    out = []
    k = 1
    while k < len(ts):
        if sides[k] == 0 and sides[k - 1] in (-1, 1):
            j = k
            while j < len(ts) and sides[j] == 0:
                j += 1
            if j < len(ts) and sides[j] == -sides[k - 1] and all(info[q][1] for q in range(k - 1, j + 1)):
                enter_lvl = lo_lvl if sides[k - 1] == -1 else hi_lvl
                exit_lvl = hi_lvl if sides[k - 1] == -1 else lo_lvl
                t_in = brentq(level_gap, ts[k - 1], ts[k], args=(enter_lvl,), xtol=1e-14)
                t_out = brentq(level_gap, ts[j - 1], ts[j], args=(exit_lvl,), xtol=1e-14)
                out.append((t_in, t_out, trace.sample(t_out)[3] - trace.sample(t_in)[3]))
            k = j
        else:
            k += 1
    return out


def geodesic_probe(fm: FiberedMetric, record: FiberedRecord, trials: int, horizon: float, *, seed: int = 0,
                   base_region: Optional[Box] = None, workers: Optional[int] = None, **geo_opts):
    """Unit-speed geodesics from random starts; tallies outcomes and tube crossings."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    atlas = fm.atlas
    region = base_region or atlas.base.box.shrink(0.01)
    top = max(t.band[1] for t in record.tubes.tubes)
    r = level_radius(atlas.fiber, top)

    def run(k):
        rng = trial_rng(seed, k)
        b0 = rng.uniform(region.lo, region.hi)
        f0 = rng.uniform(-r, r, size=atlas.m)
        v = rng.normal(size=atlas.n + atlas.m)
        pt = atlas.point(b0, f0)
        tr = geodesic(fm, pt, v, horizon, **geo_opts)
        rows = []
        profiles = chart_profiles(fm, tr, sorted({t.chart for t in record.tubes.tubes}))
        for tube in record.tubes.tubes:
            for t_in, t_out, length in tube_crossings(fm, tr, tube, profiles=profiles):
                rows.append({"trial": k, "chart": tube.chart, "radius": tube.radius,
                             "t_enter": t_in, "t_exit": t_out, "arc_length": length})
        return tr.status, tr.t_stop, rows

    n_workers = workers if workers is not None else max_workers()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            results = list(ex.map(run, range(trials)))
    else:
        results = [run(k) for k in range(trials)]
    crossings = [row for res in results for row in res[2]]
    return GeodesicProbeReport(trials, float(horizon), int(seed), [res[0] for res in results],
                               [res[1] for res in results], crossings)
