"""Horizontal lifts, parallel transport, and empirical completeness probes."""
from __future__ import annotations

import bisect
import csv
import enum
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .atlas import Box, BundleAtlas, BundlePoint, TWO_PI, change_chart
from .connection import Connection
from .errors import IncompleteLift, NoChartContains, StartMismatch, ValidationError
from .ode import integrate
from .smoothing import SMOOTHSTEP_PEAK

ESCAPE_RADIUS = 1e6
RTOL = 1e-9
ATOL = 1e-12
SWITCH_FRACTION = 0.05
START_TOL = 1e-9


class LiftStatus(str, enum.Enum):
    COMPLETED = "Completed"
    BLOW_UP = "BlowUp"
    LEFT_ATLAS = "LeftAtlas"
    STEP_UNDERFLOW = "StepUnderflow"


@dataclass(frozen=True, eq=False)
class BaseCurve:
    """Smooth curve in base coordinates on [t0, t1].

    ``state(t)`` returns ``(position, velocity)`` in one call; it defaults to
    calling ``position`` and ``velocity`` separately.
    """

    t0: float
    t1: float
    position: Callable
    velocity: Callable
    speed_bound: Optional[float] = None
    piecewise: bool = False
    _state: Optional[Callable] = None
    # times where the curve is only C^2; steps are made to land on them
    joints: tuple = ()

    def state(self, t):
        if self._state is not None:
            return self._state(t)
        return self.position(t), self.velocity(t)

    @classmethod
    def line(cls, start, velocity, t0=0.0, t1=1.0):
        start = np.atleast_1d(np.asarray(start, dtype=float))
        v = np.atleast_1d(np.asarray(velocity, dtype=float))
        return cls(
            t0,
            t1,
            lambda t: start + (t - t0) * v,
            lambda t: v,
            speed_bound=float(np.linalg.norm(v)),
            _state=lambda t: (start + (t - t0) * v, v),
        )

    @classmethod
    def segment(cls, a, b):
        """Straight segment from ``a`` (t=0) to ``b`` (t=1)."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        v = b - a
        return cls(
            0.0, 1.0,
            lambda t: a + t * v,
            lambda t: v,
            speed_bound=float(np.linalg.norm(v)),
            _state=lambda t: (b if t == 1.0 else a + t * v, v),
        )

    def reversed(self) -> "BaseCurve":
        t0, t1 = self.t0, self.t1
        st = self.state

        def state(s):
            p, v = st(t0 + t1 - s)
            return p, -v

        return BaseCurve(
            t0, t1,
            lambda s: st(t0 + t1 - s)[0],
            lambda s: -st(t0 + t1 - s)[1],
            self.speed_bound, self.piecewise, state,
        )


def waypoint_curve(waypoints, speed: float = 1.0, t0: float = 0.0) -> BaseCurve:
    """Polyline through ``waypoints`` with quintic easing on every leg.

    Each leg is traversed with a smoothstep time profile, so the velocity
    vanishes at the joints and the curve is C^2; the speed never exceeds
    ``speed``.  After the last waypoint the curve rests.
    """
    w = np.atleast_2d(np.asarray(waypoints, dtype=float))
    legs = np.diff(w, axis=0)
    lengths = np.linalg.norm(legs, axis=1)
    keep = lengths > 0
    starts = w[:-1][keep]
    legs = legs[keep]
    durations = lengths[keep] * SMOOTHSTEP_PEAK / speed
    times = list(t0 + np.concatenate([[0.0], np.cumsum(durations)]))
    end = w[-1]
    zero = np.zeros(w.shape[1])
    nlegs = len(durations)
    durations_l = durations.tolist()

    def state(t):
        k = bisect.bisect_right(times, t) - 1
        if k >= nlegs:
            return end, zero
        if k < 0:
            return w[0], zero
        d = durations_l[k]
        s = (t - times[k]) / d
        s2 = s * s
        leg = legs[k]
        pos = starts[k] + leg * (s2 * s * (10.0 - 15.0 * s + 6.0 * s2))
        vel = leg * (30.0 * s2 * (1.0 - s) ** 2 / d)
        return pos, vel

    return BaseCurve(
        t0, times[-1],
        lambda t: state(t)[0],
        lambda t: state(t)[1],
        speed_bound=speed,
        piecewise=True,
        _state=state,
        joints=tuple(times[1:-1]),
    )


@dataclass(eq=False)
class LiftTrace:
    atlas: BundleAtlas
    times: np.ndarray
    charts: np.ndarray
    bases: np.ndarray
    fibers: np.ndarray
    status: LiftStatus
    t_stop: float
    switches: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    @property
    def end(self) -> BundlePoint:
        return BundlePoint(int(self.charts[-1]), self.bases[-1], self.fibers[-1])

    @property
    def points(self):
        return [BundlePoint(int(c), b, f) for c, b, f in zip(self.charts, self.bases, self.fibers)]

    @property
    def completed(self) -> bool:
        return self.status is LiftStatus.COMPLETED

    def label(self) -> str:
        if self.status is LiftStatus.COMPLETED:
            return self.status.value
        return f"{self.status.value}({self.t_stop!r})"

    def heights(self) -> np.ndarray:
        return np.asarray(self.atlas.fiber.height(self.fibers), dtype=float)

    def write_csv(self, stream) -> None:
        n, m = self.bases.shape[1], self.fibers.shape[1]
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["t", "chart_id"] + [f"b{k + 1}" for k in range(n)]
                   + [f"f{k + 1}" for k in range(m)] + ["height", "status"])
        heights = self.heights()
        last = len(self.times) - 1
        for r in range(len(self.times)):
            w.writerow([repr(float(self.times[r])), int(self.charts[r])]
                       + [repr(float(x)) for x in self.bases[r]]
                       + [repr(float(x)) for x in self.fibers[r]]
                       + [repr(float(heights[r])), self.label() if r == last else ""])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def _switch_target(atlas: BundleAtlas, chart: int, b, shrunk: Box):
    """Decide a chart switch.  Returns None (stay), a chart id, or -1 (left atlas)."""
    if shrunk.contains(b):
        return None
    inner = atlas.chart(chart).inner
    best = atlas.best_chart(b)
    if best is None:
        return None if inner.contains(b) else -1
    if best != chart and float(atlas.chart(best).inner.margin(b)) > float(inner.margin(b)):
        return best
    if not inner.contains(b):
        return best
    return None


def horizontal_lift(
    conn: Connection,
    curve: BaseCurve,
    start: BundlePoint,
    *,
    rtol: float = RTOL,
    atol: float = ATOL,
    h_min: Optional[float] = None,
    h_max: Optional[float] = None,
    escape_radius: float = ESCAPE_RADIUS,
    switch_fraction: float = SWITCH_FRACTION,
) -> LiftTrace:
    """Integrate f' = Γ(γ(t), f) γ'(t) with chart switching and blow-up detection."""
    atlas = conn.atlas
    fiber = atlas.fiber
    b0 = curve.position(curve.t0)
    if np.max(np.abs(np.asarray(b0) - start.b)) > START_TOL:
        raise StartMismatch(f"start base {start.b.tolist()} is not over γ(t0) = {np.asarray(b0).tolist()}")
    if atlas.best_chart(b0) is None and not atlas.chart(start.chart).inner.contains(b0):
        raise NoChartContains(f"no chart contains γ(t0) = {np.asarray(b0).tolist()}")
    if h_min is None:
        h_min = 1e-12 * (curve.t1 - curve.t0)
    if h_max is None:
        h_max = math.inf
        if conn.feature_scale:
            h_max = 0.5 * conn.feature_scale / (curve.speed_bound or 1.0)

    chart = start.chart
    f = np.array(start.f, dtype=float)
    t = float(curve.t0)
    shrunk = atlas.chart(chart).inner.shrink(switch_fraction)
    tgt = _switch_target(atlas, chart, b0, shrunk)
    switches = []
    if tgt is not None and tgt >= 0 and tgt != chart:
        f = np.asarray(change_chart(atlas, BundlePoint(chart, b0, f), tgt).f)
        switches.append((t, chart, tgt))
        chart = tgt

    times, charts, bases, fibers, steps = [t], [chart], [np.asarray(b0, float)], [f.copy()], []
    normalize = fiber.wrap if fiber.compact else None
    state = curve._state or curve.state
    h_next = None
    status = LiftStatus.COMPLETED

    while True:
        c = chart
        shrunk = atlas.chart(c).inner.shrink(switch_fraction)
        outer = atlas.chart(c).outer
        coeff = conn.coefficient

        bounds = list(zip((outer.lo + atlas.margin).tolist(), (outer.hi - atlas.margin).tolist()))
        nan = np.full(atlas.m, np.nan)

        def rhs(s, y):
            b, v = state(s)
            # stages outside V_c are rejected by the integrator via NaN
            for x, (l, h) in zip(b.tolist(), bounds):
                if not l < x < h:
                    return nan
            for val in y.tolist():
                if not math.isfinite(val):
                    return nan
            return coeff(c, b, y) @ v

        def event(s, y):
            return _switch_target(atlas, c, state(s)[0], shrunk)

        def admissible(s, y):
            return bool(outer.contains(state(s)[0], atlas.margin))

        out = integrate(
            rhs, t, f, curve.t1,
            rtol=rtol, atol=atol, h0=h_next, h_min=h_min, h_max=h_max,
            escape_radius=escape_radius, event=event, admissible=admissible,
            normalize=normalize, tag=c, stops=curve.joints,
        )
        for st in out.steps:
            times.append(st.t_new)
            charts.append(c)
            bases.append(np.asarray(state(st.t_new)[0], float))
            fibers.append(fiber.wrap(st.y_new) if fiber.compact else st.y_new)
        steps.extend(out.steps)
        t, f, h_next = out.t, out.y, out.h
        if out.status == "completed":
            status = LiftStatus.COMPLETED
            break
        if out.status == "escape":
            status = LiftStatus.BLOW_UP
            break
        if out.status in ("underflow", "max_steps"):
            status = LiftStatus.STEP_UNDERFLOW
            break
        target = out.event
        if target == -1:
            status = LiftStatus.LEFT_ATLAS
            break
        b = state(t)[0]
        f = np.asarray(change_chart(atlas, BundlePoint(c, b, f), target).f, dtype=float)
        switches.append((t, c, target))
        chart = target
        # record the same instant in the new chart so samples stay consistent
        times.append(t)
        charts.append(chart)
        bases.append(np.asarray(b, float))
        fibers.append(f.copy())

    return LiftTrace(
        atlas,
        np.asarray(times),
        np.asarray(charts, dtype=int),
        np.asarray(bases, dtype=float).reshape(len(times), -1),
        np.asarray(fibers, dtype=float).reshape(len(times), -1),
        status,
        float(t),
        switches,
        steps,
    )


def lift_residuals(conn: Connection, curve: BaseCurve, trace: LiftTrace, rtol=RTOL, atol=ATOL):
    """Per-step midpoint residual against an independent re-solve, with its allowance 10*tol.

    Each accepted step is re-integrated from its start to its midpoint with
    scipy's DOP853 at much tighter tolerances; the residual is the sup
    distance between that state and the dense output at the midpoint.
    """
    from scipy.integrate import solve_ivp

    out = []
    for st in trace.steps:
        tm = st.t + 0.5 * st.h
        c = st.tag

        def rhs(s, y, c=c):
            b, v = curve.state(s)
            return conn.coefficient(c, b, y) @ v

        ref = solve_ivp(rhs, (st.t, tm), st.y, method="DOP853", rtol=1e-13, atol=1e-15).y[:, -1]
        residual = float(np.max(np.abs(st(tm) - ref)))
        # same scale as the integrator's error control
        allowed = 10.0 * (atol + rtol * float(max(np.max(np.abs(st.y)), np.max(np.abs(st.y_new)))))
        out.append((residual, allowed))
    return out


@dataclass
class TransportResult:
    start: BundlePoint
    end: BundlePoint
    status: LiftStatus
    t_stop: float

    def to_json(self):
        return {
            "start": {"chart": self.start.chart, "b": self.start.b.tolist(), "f": self.start.f.tolist()},
            "end": {"chart": self.end.chart, "b": self.end.b.tolist(), "f": self.end.f.tolist()},
            "status": self.status.value,
            "t_stop": self.t_stop,
        }


def parallel_transport(conn: Connection, curve: BaseCurve, fiber_points: Sequence, **opts):
    """Transport each point over γ(t0) to the endpoint of its lift."""
    results = []
    b0 = np.asarray(curve.position(curve.t0), dtype=float)
    for p in fiber_points:
        if not isinstance(p, BundlePoint):
            p = conn.atlas.point(b0, p)
        tr = horizontal_lift(conn, curve, p, **opts)
        results.append(TransportResult(p, tr.end, tr.status, tr.t_stop))
    return results


@dataclass
class TransportTrivialization:
    center: np.ndarray
    radius: float
    base_points: np.ndarray  # (N, n)
    fiber_values: np.ndarray  # (K, m)
    images: np.ndarray  # (N, K, m), fiber coordinates in image_charts
    image_charts: np.ndarray  # (N,)
    fiber_residual: float
    min_separation: float

    def to_json(self):
        return {
            "center": self.center.tolist(),
            "radius": self.radius,
            "base_points": self.base_points.tolist(),
            "fiber_values": self.fiber_values.tolist(),
            "images": self.images.tolist(),
            "image_charts": self.image_charts.tolist(),
            "fiber_residual": self.fiber_residual,
            "min_separation": self.min_separation,
            "injective": bool(self.min_separation > 0),
        }


def ball_grid(center, radius, per_dim):
    center = np.atleast_1d(np.asarray(center, dtype=float))
    box = Box(center - radius, center + radius)
    pts = box.grid(per_dim, open_=False)
    keep = np.linalg.norm(pts - center, axis=1) <= radius * (1 + 1e-12)
    return pts[keep]


def trivialize_via_transport(
    conn: Connection,
    center,
    radius: float,
    grid: int = 20,
    fiber_values=None,
    chart: Optional[int] = None,
    **opts,
) -> TransportTrivialization:
    """Tabulate φ^{-1}(b, f0) by transporting (center, f0) along the segment center -> b.

    Raises IncompleteLift if any radial transport fails to complete.
    """
    atlas = conn.atlas
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if chart is None:
        chart = atlas.best_chart(center)
        if chart is None:
            raise NoChartContains("center is not inside any chart")
    pts = ball_grid(center, radius, grid)
    for p in pts:
        if atlas.best_chart(p) is None:
            raise ValidationError(f"ball point {p.tolist()} lies outside the atlas")
    if fiber_values is None:
        fiber_values = np.linspace(-1.0, 1.0, grid)
    fv = np.asarray(fiber_values, dtype=float).reshape(len(fiber_values), -1)

    images = np.empty((len(pts), len(fv), atlas.m))
    img_charts = np.empty(len(pts), dtype=int)
    fiber_res = 0.0
    for a, b in enumerate(pts):
        curve = BaseCurve.segment(center, b)
        for k, f0 in enumerate(fv):
            tr = horizontal_lift(conn, curve, BundlePoint(chart, center, f0), **opts)
            if not tr.completed:
                raise IncompleteLift(
                    f"radial transport to b={b.tolist()} from f0={f0.tolist()} ended with {tr.label()}",
                    witness={"b": b.tolist(), "f0": f0.tolist(), "status": tr.status.value, "t_stop": tr.t_stop},
                )
            end = tr.end
            if k == 0:
                img_charts[a] = end.chart
            elif end.chart != img_charts[a]:
                end = change_chart(atlas, end, int(img_charts[a]))
            images[a, k] = end.f
            fiber_res = max(fiber_res, float(np.max(np.abs(end.b - b))))

    sep = math.inf
    for a in range(len(pts)):
        if len(fv) < 2:
            break
        diff = images[a][:, None, :] - images[a][None, :, :]
        if atlas.fiber.compact:
            diff = atlas.fiber.difference(diff, 0.0)
        d = np.linalg.norm(diff, axis=-1)
        d[np.diag_indices_from(d)] = np.inf
        sep = min(sep, float(d.min()))
    return TransportTrivialization(center, float(radius), pts, fv, images, img_charts, fiber_res, sep)


@dataclass
class ProbeReport:
    trials: int
    horizon: float
    seed: int
    speed_bound: float
    statuses: list
    stop_times: list

    @property
    def counts(self):
        out = {s.value: 0 for s in LiftStatus}
        for s in self.statuses:
            out[s.value] += 1
        return out

    @property
    def blowups(self) -> int:
        return self.counts[LiftStatus.BLOW_UP.value]

    @property
    def earliest_blowup(self):
        best = None
        for k, (s, t) in enumerate(zip(self.statuses, self.stop_times)):
            if s is LiftStatus.BLOW_UP and (best is None or t < best[1]):
                best = (k, t)
        return best

    def to_json(self):
        eb = self.earliest_blowup
        return {
            "schema_version": "1",
            "trials": self.trials,
            "horizon": self.horizon,
            "seed": self.seed,
            "speed_bound": self.speed_bound,
            "counts": self.counts,
            "earliest_blowup": None if eb is None else {"trial": eb[0], "t": eb[1]},
            "results": [
                {"trial": k, "status": s.value, "t_stop": t}
                for k, (s, t) in enumerate(zip(self.statuses, self.stop_times))
            ],
        }


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def random_curve(rng, region: Box, horizon: float, speed: float, t0: float = 0.0) -> BaseCurve:
    """Random eased polyline inside ``region`` lasting at least ``horizon``."""
    pts = [rng.uniform(region.lo, region.hi)]
    elapsed = 0.0
    while elapsed < horizon and len(pts) < 10_000:
        nxt = rng.uniform(region.lo, region.hi)
        elapsed += float(np.linalg.norm(nxt - pts[-1])) * SMOOTHSTEP_PEAK / speed
        pts.append(nxt)
    return waypoint_curve(pts, speed, t0)


def max_workers() -> int:
    env = os.environ.get("EHRESMANN_LAB_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            pass
    return 1


def completeness_probe(
    conn: Connection,
    trials: int,
    horizon: float,
    speed_bound: float = 1.0,
    *,
    seed: int = 0,
    fiber_window: Optional[Box] = None,
    base_region: Optional[Box] = None,
    workers: Optional[int] = None,
    **lift_opts,
) -> ProbeReport:
    """Lift random bounded-speed curves from random starts and tally outcomes.

    Trial k draws everything from ``SeedSequence(seed, spawn_key=(k,))``,
    so results do not depend on the number of workers.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    atlas = conn.atlas
    region = base_region or atlas.base.box.shrink(0.01)
    if fiber_window is None:
        if atlas.fiber.compact:
            fiber_window = Box([0.0], [TWO_PI])
        else:
            fiber_window = Box(-3.0 * np.ones(atlas.m), 3.0 * np.ones(atlas.m))

    def run(k):
        rng = trial_rng(seed, k)
        curve = random_curve(rng, region, horizon, speed_bound)
        curve = BaseCurve(0.0, horizon, curve.position, curve.velocity, speed_bound, True, curve._state,
                          curve.joints)
        b0 = curve.position(0.0)
        f0 = rng.uniform(fiber_window.lo, fiber_window.hi)
        tr = horizontal_lift(conn, curve, atlas.point(b0, f0), **lift_opts)
        return tr.status, tr.t_stop

    n_workers = workers if workers is not None else max_workers()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            results = list(ex.map(run, range(trials)))
    else:
        results = [run(k) for k in range(trials)]
    return ProbeReport(trials, float(horizon), int(seed), float(speed_bound),
                       [r[0] for r in results], [r[1] for r in results])
