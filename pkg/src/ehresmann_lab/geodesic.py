"""Geodesic integration, curve length by quadrature, and horizontal lifts of geodesics."""
from __future__ import annotations

import bisect
import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .atlas import BundlePoint, change_chart, default_height
from .errors import DegenerateMetric, NonConvergent, OutOfDomain, StartMismatch
from .lift import SWITCH_FRACTION, BaseCurve, LiftTrace, _switch_target, horizontal_lift
from .metrics import ChartMetric, FiberedMetric, christoffel_from, is_spd
from .ode import integrate

RTOL = 1e-9
ATOL = 1e-12
ESCAPE_RADIUS = 1e6
BOUNDARY_TOL = 1e-6


class GeodesicStatus(str, enum.Enum):
    COMPLETED = "Completed"
    LEFT_DOMAIN = "LeftDomain"
    STEP_UNDERFLOW = "StepUnderflow"
    BLOW_UP = "BlowUp"


@dataclass(eq=False)
class GeodesicTrace:
    times: np.ndarray
    charts: np.ndarray
    positions: np.ndarray  # (N, d) chart coordinates
    velocities: np.ndarray
    arc: np.ndarray
    status: GeodesicStatus
    t_stop: float
    base_dim: int
    steps: list = field(default_factory=list)
    switches: list = field(default_factory=list)

    @property
    def arc_length(self) -> float:
        return float(self.arc[-1])

    @property
    def completed(self) -> bool:
        return self.status is GeodesicStatus.COMPLETED

    def label(self) -> str:
        if self.completed:
            return self.status.value
        return f"{self.status.value}({self.t_stop!r})"

    def end(self):
        return int(self.charts[-1]), self.positions[-1], self.velocities[-1]

    def sample(self, t):
        """(chart, x, v, arc) at time ``t`` from the dense output."""
        starts = self.__dict__.get("_starts")
        if starts is None or len(starts) != len(self.steps):
            starts = self.__dict__["_starts"] = [s.t for s in self.steps]
        k = max(0, min(len(self.steps) - 1, bisect.bisect_right(starts, t) - 1))
        st = self.steps[k]
        y = st(t)
        d = self.positions.shape[1]
        return st.tag, y[:d], y[d:2 * d], y[2 * d]

    def write_csv(self, stream) -> None:
        n = self.base_dim
        d = self.positions.shape[1]
        m = d - n
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["t", "chart_id"] + [f"b{k + 1}" for k in range(n)] + [f"f{k + 1}" for k in range(m)]
                   + ["height", "status"] + [f"v_b{k + 1}" for k in range(n)]
                   + [f"v_f{k + 1}" for k in range(m)] + ["arc_length"])
        heights = default_height(self.positions[:, n:]) if m else np.full(len(self.times), np.nan)
        last = len(self.times) - 1
        for r in range(len(self.times)):
            w.writerow([repr(float(self.times[r])), int(self.charts[r])]
                       + [repr(float(x)) for x in self.positions[r]]
                       + [repr(float(heights[r])), self.label() if r == last else ""]
                       + [repr(float(x)) for x in self.velocities[r]]
                       + [repr(float(self.arc[r]))])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def _accel_fn(metric: ChartMetric):
    d = metric.dim

    def rhs(x, v):
        G = metric.G(x)
        C = christoffel_from(G, metric.dG(x))
        acc = -np.einsum("kij,i,j->k", C, v, v)
        return acc, G

    return rhs


def _speed(G, v) -> float:
    return math.sqrt(max(float(v @ G @ v), 0.0))


def geodesic(metric, start, velocity, horizon: float, *, chart: Optional[int] = None,
             unit_speed: bool = True, rtol: float = RTOL, atol: float = ATOL,
             escape_radius: float = ESCAPE_RADIUS, switch_fraction: float = SWITCH_FRACTION,
             t0: float = 0.0, h_max: Optional[float] = None) -> GeodesicTrace:
    """Integrate x'' = −Γ(x)(x', x') with arc length as an extra state.

    ``metric`` is a :class:`ChartMetric` (``start`` = coordinates) or a
    :class:`FiberedMetric` (``start`` = BundlePoint; charts are switched on
    the base coordinates as for horizontal lifts).
    """
    fibered = isinstance(metric, FiberedMetric)
    if fibered:
        atlas = metric.atlas
        if not isinstance(start, BundlePoint):
            start = atlas.point(start[: atlas.n], start[atlas.n:], chart)
        c = start.chart
        x = np.concatenate([start.b, start.f])
        n = atlas.n
        cm = metric.chart_metric(c)
    else:
        c = 0
        x = np.atleast_1d(np.asarray(start, dtype=float))
        cm = metric
        n = metric.base_dim
        if not metric.contains(x):
            raise OutOfDomain(f"{metric.name}: start {x.tolist()} outside the domain")
    v = np.atleast_1d(np.asarray(velocity, dtype=float)).copy()
    d = x.size
    G0 = cm.G(x)
    if not is_spd(G0):
        raise DegenerateMetric(f"{cm.name}: not positive definite at start")
    sp = _speed(G0, v)
    if sp == 0.0:
        raise OutOfDomain("start velocity must be nonzero")
    if unit_speed:
        v = v / sp
    if h_max is None:
        h_max = math.inf
        scale = getattr(getattr(metric, "connection", None), "feature_scale", None)
        if scale:
            h_max = 0.5 * scale / _speed(G0, v)

    t = float(t0)
    t1 = t0 + float(horizon)
    h_min = 1e-12 * horizon
    y = np.concatenate([x, v, [0.0]])
    times, charts, X, V, S = [t], [c], [x.copy()], [v.copy()], [0.0]
    steps, switches = [], []
    h_next = None
    status = GeodesicStatus.COMPLETED

    while True:
        cm = metric.chart_metric(c) if fibered else metric
        accel = _accel_fn(cm)
        dom = cm.domain
        lo, hi = dom.lo, dom.hi
        nan = np.full(2 * d + 1, np.nan)
        shrunk = atlas.chart(c).inner.shrink(switch_fraction) if fibered else None

        def rhs(s, yy, accel=accel, lo=lo, hi=hi, nan=nan):
            xx = yy[:d]
            if np.any(xx <= lo) or np.any(xx >= hi) or not np.isfinite(yy).all():
                return nan
            vv = yy[d:2 * d]
            acc, G = accel(xx, vv)
            out = np.empty(2 * d + 1)
            out[:d] = vv
            out[d:2 * d] = acc
            out[2 * d] = _speed(G, vv)
            return out

        def event(s, yy, cm=cm, c=c, shrunk=shrunk):
            xx = yy[:d]
            if not is_spd(cm.G(xx)):
                return "degenerate"
            if fibered:
                return _switch_target(atlas, c, xx[:n], shrunk)
            return None

        out = integrate(rhs, t, y, t1, rtol=rtol, atol=atol, h0=h_next, h_min=h_min, h_max=h_max,
                        escape_radius=escape_radius, escape_norm=lambda yy: float(np.linalg.norm(yy[:d])),
                        event=event, tag=c)
        for st in out.steps:
            times.append(st.t_new)
            charts.append(c)
            X.append(st.y_new[:d].copy())
            V.append(st.y_new[d:2 * d].copy())
            S.append(float(st.y_new[2 * d]))
        steps.extend(out.steps)
        t, y, h_next = out.t, out.y, out.h
        if out.status == "completed":
            break
        if out.status == "escape":
            status = GeodesicStatus.BLOW_UP
            break
        if out.status in ("underflow", "max_steps"):
            near = float(dom.margin(y[:d])) < BOUNDARY_TOL * max(1.0, float(np.max(np.abs(y[:d]))))
            status = GeodesicStatus.LEFT_DOMAIN if near else GeodesicStatus.STEP_UNDERFLOW
            break
        if out.event == "degenerate":
            raise DegenerateMetric(f"{cm.name}: metric degenerates at {y[:d].tolist()} (t={t})")
        if out.event == -1:
            status = GeodesicStatus.LEFT_DOMAIN
            break
        target = out.event
        b, f = y[:n], y[n:d]
        vb, vf = y[d:d + n], y[d + n:2 * d]
        tr = atlas.transition(c, target)
        f_new = np.asarray(change_chart(atlas, BundlePoint(c, b, f), target).f)
        vf_new = np.asarray(tr.d_b(b, f)) @ vb + np.asarray(tr.d_f(b, f)) @ vf
        y = np.concatenate([b, f_new, vb, vf_new, [y[2 * d]]])
        switches.append((t, c, target))
        c = target
        times.append(t)
        charts.append(c)
        X.append(y[:d].copy())
        V.append(y[d:2 * d].copy())
        S.append(float(y[2 * d]))

    return GeodesicTrace(np.asarray(times), np.asarray(charts, dtype=int), np.asarray(X), np.asarray(V),
                         np.asarray(S), status, float(t), n, steps, switches)


def speed_drift(metric, trace: GeodesicTrace) -> float:
    """Max relative deviation of |x'|_g from its initial value along the samples."""
    speeds = []
    for c, x, v in zip(trace.charts, trace.positions, trace.velocities):
        cm = metric.chart_metric(int(c)) if isinstance(metric, FiberedMetric) else metric
        speeds.append(_speed(cm.G(x), v))
    speeds = np.asarray(speeds)
    return float(np.max(np.abs(speeds - speeds[0])) / speeds[0])


# ---------------------------------------------------------------- curve length

@dataclass
class LengthReport:
    length: float
    refinements: list  # [(level, estimate)]
    converged: bool
    tol: float

    def to_json(self):
        return {
            "schema_version": "1",
            "length": self.length,
            "refinements": [[lvl, est] for lvl, est in self.refinements],
            "converged": self.converged,
            "tol": self.tol,
        }


def _gauss_nodes(order: int):
    return np.polynomial.legendre.leggauss(order)


def dyadic_pieces(t0: float, t1: float, open_left: bool, open_right: bool, depth: int):
    """Split [t0, t1] into pieces that halve toward each open endpoint."""
    if not (open_left or open_right):
        return [(t0, t1)]
    if open_left and open_right:
        mid = 0.5 * (t0 + t1)
        return (dyadic_pieces(t0, mid, True, False, depth)
                + dyadic_pieces(mid, t1, False, True, depth))
    L = t1 - t0
    pieces = []
    for j in range(depth):
        a, b = L * (1 - 0.5 ** j), L * (1 - 0.5 ** (j + 1))
        pieces.append((a, b))
    if open_right:
        return [(t0 + a, t0 + b) for a, b in pieces]
    return [(t1 - b, t1 - a) for a, b in reversed(pieces)]


def curve_length(metric, curve: Callable, t0: float, t1: float, *, open_left: bool = False,
                 open_right: bool = False, tol: float = 1e-3, levels: int = 8, order: int = 10,
                 subdivisions: int = 4, depth: int = 8, breakpoints=None) -> LengthReport:
    """Length ∫ |γ'|_g dt by composite Gauss–Legendre with Cauchy refinement.

    ``curve(t)`` maps an array of times (N,) to ``(positions (N, d), velocities (N, d))``.
    Near an open endpoint the domain is cut into dyadic pieces; each level
    doubles the subdivisions and adds two more dyadic pieces.  The estimate
    is accepted once two successive levels differ by less than ``tol``;
    otherwise NonConvergent is raised with the refinement history.
    """
    xg, wg = _gauss_nodes(order)
    history = []
    prev = None
    for lvl in range(levels):
        pieces = dyadic_pieces(t0, t1, open_left, open_right, depth + 2 * lvl)
        if breakpoints is not None:
            pieces = _split_at(pieces, breakpoints)
        sub = subdivisions * 2 ** lvl
        T, W = [], []
        for a, b in pieces:
            edges = np.linspace(a, b, sub + 1)
            mid = 0.5 * (edges[1:] + edges[:-1])
            half = 0.5 * (edges[1:] - edges[:-1])
            T.append((mid[:, None] + half[:, None] * xg[None, :]).ravel())
            W.append((half[:, None] * wg[None, :]).ravel())
        T = np.concatenate(T)
        W = np.concatenate(W)
        pos, vel = curve(T)
        G = metric.G(pos)
        speed = np.sqrt(np.einsum("ki,kij,kj->k", vel, G, vel))
        est = float(np.sum(W * speed))
        history.append((lvl, est))
        if prev is not None and abs(est - prev) < tol:
            return LengthReport(est, history, True, tol)
        prev = est
    raise NonConvergent(f"curve length did not settle to {tol}: {history}",
                        report=LengthReport(history[-1][1], history, False, tol))


def _split_at(pieces, points):
    out = []
    for a, b in pieces:
        inner = sorted(p for p in points if a < p < b)
        edges = [a] + inner + [b]
        out.extend(zip(edges[:-1], edges[1:]))
    return out


# ------------------------------------------------------- lifts of geodesics

def curve_from_trace(trace: GeodesicTrace) -> BaseCurve:
    """Smooth base curve from the dense output of a single-chart geodesic trace."""
    steps = trace.steps
    starts = [s.t for s in steps]
    d = trace.positions.shape[1]

    def state(t):
        k = max(0, min(len(steps) - 1, bisect.bisect_right(starts, t) - 1))
        y = steps[k](t)
        return y[:d], y[d:2 * d]

    return BaseCurve(float(trace.times[0]), float(trace.t_stop), lambda t: state(t)[0],
                     lambda t: state(t)[1], _state=state)


@dataclass
class GeodesicLiftReport:
    lift: LiftTrace
    shot: GeodesicTrace
    max_deviation: float
    projection_residual: float
    base_residual: float
    samples: int

    def to_json(self):
        return {
            "schema_version": "1",
            "max_deviation": self.max_deviation,
            "projection_residual": self.projection_residual,
            "base_geodesic_residual": self.base_residual,
            "lift_status": self.lift.status.value,
            "shot_status": self.shot.status.value,
            "samples": self.samples,
        }


def base_metric_of(fm: FiberedMetric) -> ChartMetric:
    return ChartMetric(fm.atlas.base.box.expand(1e-9), fm.base, name=f"{fm.name}-base")


def lift_geodesic(fm: FiberedMetric, base_trace: GeodesicTrace, start: BundlePoint, *,
                  samples: int = 201, rtol: float = 1e-11, atol: float = 1e-13) -> GeodesicLiftReport:
    """Horizontally lift a base geodesic and compare with the geodesic shot from the same data."""
    atlas = fm.atlas
    curve = curve_from_trace(base_trace)
    b0, v0 = curve.state(curve.t0)
    if np.max(np.abs(b0 - start.b)) > 1e-9:
        raise StartMismatch("start is not over the initial point of the base geodesic")
    # base residual: re-shoot the base geodesic and compare endpoints
    bm = base_metric_of(fm)
    again = geodesic(bm, b0, v0, curve.t1 - curve.t0, unit_speed=False, rtol=rtol, atol=atol)
    base_res = float(np.max(np.abs(again.positions[-1] - base_trace.positions[-1])))

    lift = horizontal_lift(fm.connection, curve, start, rtol=rtol, atol=atol)
    gamma0 = fm.connection.coefficient(start.chart, start.b, start.f)
    w0 = gamma0 @ v0
    shot = geodesic(fm, start, np.concatenate([v0, w0]), curve.t1 - curve.t0, unit_speed=False,
                    rtol=rtol, atol=atol, t0=curve.t0)
    ts = np.linspace(curve.t0, min(lift.t_stop, shot.t_stop), samples)
    lift_starts = [s.t for s in lift.steps]
    dev, proj = 0.0, 0.0
    n = atlas.n
    for t in ts:
        k = max(0, min(len(lift.steps) - 1, bisect.bisect_right(lift_starts, t) - 1))
        st = lift.steps[k]
        lc, lf = st.tag, st(t)
        lb = curve.position(t)
        sc, sx, _, _ = shot.sample(t)
        sb, sf = sx[:n], sx[n:]
        if sc != lc:
            sf = change_chart(atlas, BundlePoint(sc, sb, sf), lc).f
        dev = max(dev, float(np.max(np.abs(np.concatenate([sb - lb, sf - lf])))))
        proj = max(proj, float(np.max(np.abs(lb - curve.position(t)))))
    return GeodesicLiftReport(lift, shot, dev, proj, base_res, samples)


# --------------------------------------------------- exponential trivialization

@dataclass
class ExpTrivialization:
    center: np.ndarray
    chart: int
    radius: float
    base_grid: np.ndarray  # (K, n) initial velocities u
    fibers: np.ndarray  # (L, m)
    images: np.ndarray  # (K, L, n + m) in chart coordinates
    base_images: np.ndarray  # (K, n)
    commutation_residual: float
    min_jacobian: float
    slice_isometry_residual: float
    min_separation: float

    def to_json(self):
        return {
            "schema_version": "1",
            "center": self.center.tolist(),
            "chart": self.chart,
            "radius": self.radius,
            "grid": [len(self.base_grid), len(self.fibers)],
            "commutation_residual": self.commutation_residual,
            "min_jacobian": self.min_jacobian,
            "slice_isometry_residual": self.slice_isometry_residual,
            "min_separation": self.min_separation,
        }


def _grid_jacobian(values, axes_spacing):
    """Determinant of the finite-difference Jacobian on a tensor grid.

    ``values`` has shape grid_shape + (D,) with len(grid_shape) == D.
    """
    D = values.shape[-1]
    cols = []
    for a in range(D):
        cols.append(np.gradient(values, axes_spacing[a], axis=a, edge_order=2))
    J = np.stack(cols, axis=-1)  # grid + (D components, D axes)
    return np.linalg.det(J)


def exp_trivialization(fm: FiberedMetric, center, radius: float, *, chart: Optional[int] = None,
                       grid: int = 7, fiber_values=None, rtol: float = RTOL,
                       atol: float = ATOL) -> ExpTrivialization:
    """ψ(u, f) = exp(horizontal lift of u at (b, f)) over a base cube inside the radius ball.

    Checks that p∘ψ(u, f) = exp_b(u), that the Jacobian keeps one sign on the
    grid (else EmbeddingFailure), and that horizontal speeds at the endpoint
    match the base speeds.
    """
    from .errors import EmbeddingFailure

    atlas = fm.atlas
    n, m = atlas.n, atlas.m
    b = np.atleast_1d(np.asarray(center, dtype=float))
    if chart is None:
        chart = atlas.best_chart(b)
        if chart is None:
            raise OutOfDomain(f"no chart contains {b.tolist()}")
    if fiber_values is None:
        fiber_values = np.linspace(-1.0, 1.0, 5)
    fv = np.asarray(fiber_values, dtype=float)
    half = radius / math.sqrt(n)
    axis = np.linspace(-half, half, grid)
    U = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    if m == 1:
        F = fv.reshape(-1, 1)
    else:
        F = np.stack(np.meshgrid(*([fv] * m), indexing="ij"), axis=-1).reshape(-1, m)

    bm = base_metric_of(fm)
    base_img = np.empty((len(U), n))
    base_speed = np.empty(len(U))
    for k, u in enumerate(U):
        if not np.any(u):
            base_img[k], base_speed[k] = b, 0.0
            continue
        tr = geodesic(bm, b, u, 1.0, unit_speed=False, rtol=rtol, atol=atol)
        if not tr.completed:
            raise EmbeddingFailure(f"base geodesic with velocity {u.tolist()} stops: {tr.label()}")
        base_img[k] = tr.positions[-1]
        base_speed[k] = _speed(bm.G(tr.positions[-1]), tr.velocities[-1]) ** 2
    spacing = [axis[1] - axis[0]] * n
    if n > 0 and grid > 2:
        det_b = _grid_jacobian(base_img.reshape((grid,) * n + (n,)), spacing)
        if not (np.all(det_b > 0) or np.all(det_b < 0)):
            raise EmbeddingFailure(f"exp at {b.tolist()} folds over within radius {radius}")

    images = np.empty((len(U), len(F), n + m))
    comm, iso = 0.0, 0.0
    for k, u in enumerate(U):
        for j, f in enumerate(F):
            if not np.any(u):
                images[k, j] = np.concatenate([b, f])
                continue
            pt = BundlePoint(chart, b, f)
            w = fm.connection.coefficient(chart, b, f) @ u
            tr = geodesic(fm, pt, np.concatenate([u, w]), 1.0, unit_speed=False, rtol=rtol, atol=atol)
            if not tr.completed:
                raise EmbeddingFailure(f"lifted geodesic from {pt!r} stops: {tr.label()}")
            c, x, v = tr.end()
            cm = fm.chart_metric(c)
            iso = max(iso, float(abs(_speed(cm.G(x), v) ** 2 - base_speed[k])))
            if c != chart:
                x = np.concatenate([x[:n], change_chart(atlas, BundlePoint(c, x[:n], x[n:]), chart).f])
            images[k, j] = x
            comm = max(comm, float(np.max(np.abs(x[:n] - base_img[k]))))

    min_det = math.nan
    if grid > 2 and len(fv) > 2:
        shape = (grid,) * n + (len(fv),) * m + (n + m,)
        fsp = [fv[1] - fv[0]] * m
        det = _grid_jacobian(images.reshape(shape), spacing + fsp)
        if not (np.all(det > 0) or np.all(det < 0)):
            raise EmbeddingFailure(f"ψ at {b.tolist()} is not locally injective on the grid")
        min_det = float(np.min(np.abs(det)))
    flat = images.reshape(-1, n + m)
    dist = np.linalg.norm(flat[:, None, :] - flat[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)
    return ExpTrivialization(b, int(chart), float(radius), U, F, images, base_img, comm, min_det, iso,
                             float(dist.min()))
