"""Coordinate-chart model of a fiber bundle p: E -> B.

A bundle is presented by finitely many charts over open boxes of the base,
each carrying a local trivialization, and the transition maps between the
fiber coordinates of overlapping charts.  All function handles in this
package broadcast over leading axes: base coordinates have shape
``(..., n)`` and fiber coordinates ``(..., m)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import MissingTransition, OutOfOverlap, ValidationError

TWO_PI = 2.0 * math.pi

#: strict-interior margin used by overlap membership tests
OVERLAP_MARGIN = 1e-9
#: relative step for finite-difference Jacobians of transition maps
JACOBIAN_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned open box ``lo < x < hi``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise ValidationError("box bounds have mismatched shapes")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.width))

    @cached_property
    def _bounds(self):
        return list(zip(self.lo.tolist(), self.hi.tolist()))

    def contains(self, x, margin: float = 0.0):
        if np.ndim(x) == 1:
            # single point: plain float comparisons are far cheaper than ufuncs
            return all(l + margin < v < h - margin for v, (l, h) in zip(x.tolist() if isinstance(x, np.ndarray) else x, self._bounds))
        x = np.asarray(x, dtype=float)
        return np.all((x > self.lo + margin) & (x < self.hi - margin), axis=-1)

    def contains_closed(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def margin(self, x):
        """Signed distance to the boundary (positive inside), sup-norm."""
        if np.ndim(x) == 1:
            return min(min(v - l, h - v) for v, (l, h) in zip(np.asarray(x, dtype=float).tolist(), self._bounds))
        x = np.asarray(x, dtype=float)
        return np.min(np.minimum(x - self.lo, self.hi - x), axis=-1)

    def shrink(self, fraction: float) -> "Box":
        pad = fraction * self.width
        return Box(self.lo + pad, self.hi - pad)

    def expand(self, amount) -> "Box":
        return Box(self.lo - amount, self.hi + amount)

    def intersect(self, other: "Box") -> Optional["Box"]:
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(hi <= lo):
            return None
        return Box(lo, hi)

    def grid(self, per_dim: int, open_: bool = True) -> np.ndarray:
        """Tensor grid with ``per_dim`` points per axis, shape (N, dim).

        With ``open_`` the points are cell midpoints, so they stay strictly
        inside the box.
        """
        axes = []
        for a, b in zip(self.lo, self.hi):
            if open_:
                axes.append(a + (np.arange(per_dim) + 0.5) * (b - a) / per_dim)
            else:
                axes.append(np.linspace(a, b, per_dim))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_json(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class BaseSpace:
    dim: int
    box: Box
    topology: str = "euclidean-box"
    circumference: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("base dimension must be >= 1")
        if self.box.dim != self.dim:
            raise ValidationError("base box dimension mismatch")
        if self.box.volume <= 0:
            raise ValidationError("base box must have positive volume")
        if self.topology not in ("euclidean-box", "circle"):
            raise ValidationError(f"unknown base topology {self.topology!r}")
        if self.topology == "circle" and not self.circumference:
            raise ValidationError("circle base needs a circumference")


def default_height(f):
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        return math.sqrt(1.0 + float(f @ f))
    return np.sqrt(1.0 + np.sum(f * f, axis=-1))


def default_height_grad(f):
    f = np.asarray(f, dtype=float)
    return f / default_height(f)[..., None]


def default_level_radius(c: float) -> float:
    return math.sqrt(c * c - 1.0) if c >= 1.0 else float("nan")


@dataclass(frozen=True, eq=False)
class FiberModel:
    """Model fiber ``R^m`` or the circle, with a proper positive height.

    ``alpha`` and ``beta`` declare the properness bound
    ``height(f) >= alpha*|f| - beta`` for euclidean fibers.
    ``level_radius`` is optional and only meaningful for radial heights:
    it maps a level ``c`` to the radius of the sphere ``height == c``.
    """

    dim: int
    topology: str = "euclidean"
    height: Callable = default_height
    height_grad: Callable = default_height_grad
    alpha: float = 1.0
    beta: float = 0.0
    level_radius: Optional[Callable[[float], float]] = default_level_radius

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("fiber dimension must be >= 1")
        if self.topology not in ("euclidean", "circle"):
            raise ValidationError(f"unknown fiber topology {self.topology!r}")
        if self.topology == "circle" and self.dim != 1:
            raise ValidationError("circle fibers are one-dimensional")

    @property
    def compact(self) -> bool:
        return self.topology == "circle"

    def wrap(self, f):
        if self.topology == "circle":
            w = np.mod(f, TWO_PI)
            # tiny negatives round up to exactly 2π
            return np.where(w >= TWO_PI, 0.0, w)
        return f

    def difference(self, f1, f2):
        """Coordinate difference ``f1 - f2`` (angular for circle fibers)."""
        d = np.asarray(f1, dtype=float) - np.asarray(f2, dtype=float)
        if self.topology == "circle":
            d = (d + math.pi) % TWO_PI - math.pi
        return d

    @property
    def min_height(self) -> float:
        return float(self.height(np.zeros(self.dim)))

    def level_set(self, level: float, count: int = 64) -> np.ndarray:
        """Points of ``height^{-1}(level)``, shape (K, m); empty if below min."""
        if level < self.min_height - 1e-15:
            return np.zeros((0, self.dim))
        dirs = unit_directions(self.dim, count)
        if self.level_radius is not None:
            r = self.level_radius(level)
            if not np.isfinite(r):
                return np.zeros((0, self.dim))
            pts = r * dirs
        else:
            pts = np.array([self._ray_root(u, level) * u for u in dirs])
        if self.dim == 1 and pts.shape[0] == 2 and pts[0, 0] == pts[1, 0]:
            pts = pts[:1]
        return pts

    def _ray_root(self, u, level):
        g = lambda r: float(self.height(r * u)) - level
        if g(0.0) >= 0:
            return 0.0
        hi = 1.0
        while g(hi) < 0:
            hi *= 2.0
            if hi > 1e12:
                raise ValidationError("height does not reach level along a ray")
        return brentq(g, 0.0, hi, xtol=1e-14)


def unit_directions(m: int, count: int) -> np.ndarray:
    """Deterministic unit vectors in R^m: {-1, +1} for m=1, a circle for m=2."""
    if m == 1:
        return np.array([[-1.0], [1.0]])
    if m == 2:
        th = np.arange(count) * TWO_PI / count
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    v = np.random.default_rng(12345).normal(size=(count, m))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class Chart:
    """Chart over the open box ``inner`` (U_i) whose closure sits in ``outer`` (V_i)."""

    id: int
    inner: Box
    outer: Box

    def __post_init__(self):
        if self.inner.dim != self.outer.dim:
            raise ValidationError("chart boxes have mismatched dimensions")
        if self.inner.volume <= 0:
            raise ValidationError(f"chart {self.id}: U must be nonempty")
        if np.any(self.inner.lo <= self.outer.lo) or np.any(self.inner.hi >= self.outer.hi):
            raise ValidationError(
                f"chart {self.id}: closure(U) must lie strictly inside V"
            )


def fd_jacobian(func, x, step=JACOBIAN_STEP):
    """Central-difference Jacobian of ``func`` w.r.t. the last axis of ``x``.

    Returns shape ``func(x).shape + (k,)`` where k = x.shape[-1].
    """
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.shape[-1]):
        h = step * np.maximum(1.0, np.abs(x[..., k]))
        e = np.zeros_like(x)
        e[..., k] = h
        diff = np.asarray(func(x + e)) - np.asarray(func(x - e))
        cols.append(diff / (2.0 * h)[..., None])
    return np.stack(cols, axis=-1)


@dataclass(frozen=True, eq=False)
class TransitionMap:
    """Fiber-coordinate change ``f_target = map(b, f_source)`` on V_s ∩ V_t."""

    source: int
    target: int
    map: Callable
    jac_b: Optional[Callable] = None
    jac_f: Optional[Callable] = None

    def __call__(self, b, f):
        return self.map(b, f)

    def d_b(self, b, f):
        if self.jac_b is not None:
            return self.jac_b(b, f)
        f = np.asarray(f, dtype=float)
        return fd_jacobian(lambda bb: self.map(bb, f), b)

    def d_f(self, b, f):
        if self.jac_f is not None:
            return self.jac_f(b, f)
        b = np.asarray(b, dtype=float)
        return fd_jacobian(lambda ff: self.map(b, ff), f)


def _identity_map(i):
    return TransitionMap(
        i,
        i,
        lambda b, f: np.array(f, dtype=float),
        lambda b, f: np.zeros(np.shape(f) + (np.shape(b)[-1],)),
        lambda b, f: np.broadcast_to(np.eye(np.shape(f)[-1]), np.shape(f) + (np.shape(f)[-1],)).copy(),
    )


@dataclass(frozen=True, eq=False)
class BundlePoint:
    """Coordinates (chart, b, f) of a point of the total space."""

    chart: int
    b: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        object.__setattr__(self, "f", np.atleast_1d(np.asarray(self.f, dtype=float)))

    def __repr__(self):
        return f"BundlePoint(chart={self.chart}, b={self.b.tolist()}, f={self.f.tolist()})"


@dataclass(eq=False)
class BundleAtlas:
    base: BaseSpace
    fiber: FiberModel
    charts: list
    transitions: dict = field(default_factory=dict)
    margin: float = OVERLAP_MARGIN

    def __post_init__(self):
        self._by_id = {c.id: c for c in self.charts}
        if len(self._by_id) != len(self.charts):
            raise ValidationError("duplicate chart ids")
        for c in self.charts:
            if c.inner.dim != self.base.dim:
                raise ValidationError(f"chart {c.id} has wrong base dimension")
        for (i, j), t in self.transitions.items():
            if (t.source, t.target) != (i, j):
                raise ValidationError(f"transition key {(i, j)} does not match its map")
        self._identity = {c.id: _identity_map(c.id) for c in self.charts}
        for a in self.charts:
            for c in self.charts:
                if a.id != c.id and a.outer.intersect(c.outer) is not None:
                    if (a.id, c.id) not in self.transitions:
                        raise MissingTransition(
                            f"charts {a.id} and {c.id} overlap but no transition is registered"
                        )

    @property
    def n(self) -> int:
        return self.base.dim

    @property
    def m(self) -> int:
        return self.fiber.dim

    @property
    def chart_ids(self):
        return [c.id for c in self.charts]

    def chart(self, chart_id: int) -> Chart:
        try:
            return self._by_id[chart_id]
        except KeyError:
            raise ValidationError(f"no chart with id {chart_id}") from None

    def transition(self, source: int, target: int) -> TransitionMap:
        if source == target:
            return self.transitions.get((source, source), self._identity[source])
        try:
            return self.transitions[(source, target)]
        except KeyError:
            raise MissingTransition(f"no transition from chart {source} to {target}") from None

    def in_overlap(self, b, i: int, j: int):
        return self.chart(i).outer.contains(b, self.margin) & self.chart(j).outer.contains(
            b, self.margin
        )

    def best_chart(self, b) -> Optional[int]:
        """Chart whose inner box contains ``b`` with the largest margin."""
        best, best_margin = None, 0.0
        for c in self.charts:
            mg = float(c.inner.margin(b))
            if mg > best_margin:
                best, best_margin = c.id, mg
        return best

    def point(self, b, f, chart: Optional[int] = None) -> BundlePoint:
        if chart is None:
            chart = self.best_chart(b)
            if chart is None:
                from .errors import NoChartContains

                raise NoChartContains(f"no chart contains base point {np.asarray(b).tolist()}")
        return BundlePoint(chart, b, f)


def change_chart(atlas: BundleAtlas, pt: BundlePoint, target: int) -> BundlePoint:
    """Express ``pt`` in chart ``target``; base coordinates are unchanged."""
    if pt.chart == target:
        return pt
    t = atlas.transition(pt.chart, target)
    if not bool(atlas.in_overlap(pt.b, pt.chart, target)):
        raise OutOfOverlap(
            f"base point {pt.b.tolist()} is not in V_{pt.chart} ∩ V_{target}"
        )
    return BundlePoint(target, pt.b.copy(), atlas.fiber.wrap(np.asarray(t(pt.b, pt.f), dtype=float)))


def height_of(atlas: BundleAtlas, pt: BundlePoint) -> float:
    """Height of the fiber coordinate in the point's own chart (chart-relative)."""
    return float(atlas.fiber.height(pt.f))


@dataclass
class AtlasReport:
    max_cocycle_residual: float
    max_identity_residual: float
    min_abs_det_df: float
    max_jacobian_error: float
    cover_gaps: list
    samples: int

    @property
    def ok(self) -> bool:
        return (
            self.max_cocycle_residual <= 1e-9
            and self.max_identity_residual <= 1e-9
            and self.min_abs_det_df > 0
            and self.max_jacobian_error <= 1e-5
            and not self.cover_gaps
        )

    def to_json(self):
        return {
            "max_cocycle_residual": self.max_cocycle_residual,
            "max_identity_residual": self.max_identity_residual,
            "min_abs_det_df": self.min_abs_det_df,
            "max_jacobian_error": self.max_jacobian_error,
            "cover_gaps": [list(map(float, g)) for g in self.cover_gaps],
            "samples": self.samples,
            "ok": self.ok,
        }


def fiber_sample_grid(fiber: FiberModel, per_dim: int, radius: float = 3.0) -> np.ndarray:
    if fiber.topology == "circle":
        return (np.arange(per_dim) + 0.5)[:, None] * TWO_PI / per_dim
    return Box(-radius * np.ones(fiber.dim), radius * np.ones(fiber.dim)).grid(per_dim, open_=False)


def validate_atlas(atlas: BundleAtlas, samples: int, fiber_radius: float = 3.0) -> AtlasReport:
    """Sample cocycle, identity, invertibility, Jacobian and cover diagnostics."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    fiber = atlas.fiber
    bgrid = atlas.base.box.grid(samples, open_=True)
    fgrid = fiber_sample_grid(fiber, samples, fiber_radius)
    B = np.repeat(bgrid, len(fgrid), axis=0)
    F = np.tile(fgrid, (len(bgrid), 1))

    covered = np.zeros(len(bgrid), dtype=bool)
    for c in atlas.charts:
        covered |= c.inner.contains(bgrid)
    gaps = [bgrid[k] for k in np.flatnonzero(~covered)]

    ids = atlas.chart_ids
    cocycle = 0.0
    for i in ids:
        for j in ids:
            for k in ids:
                mask = atlas.in_overlap(B, i, j) & atlas.in_overlap(B, j, k) & atlas.in_overlap(B, i, k)
                if not np.any(mask):
                    continue
                b, f = B[mask], F[mask]
                via = atlas.transition(j, k)(b, atlas.transition(i, j)(b, f))
                direct = atlas.transition(i, k)(b, f)
                res = np.abs(fiber.difference(via, direct)).max()
                cocycle = max(cocycle, float(res))

    identity = 0.0
    for i in ids:
        if (i, i) in atlas.transitions:
            mask = atlas.chart(i).outer.contains(B, atlas.margin)
            if np.any(mask):
                got = atlas.transitions[(i, i)](B[mask], F[mask])
                identity = max(identity, float(np.abs(fiber.difference(got, F[mask])).max()))

    min_det = math.inf
    jac_err = 0.0
    for (i, j), t in atlas.transitions.items():
        mask = atlas.in_overlap(B, i, j)
        if not np.any(mask):
            continue
        b, f = B[mask], F[mask]
        dfa = np.asarray(t.d_f(b, f))
        min_det = min(min_det, float(np.abs(np.linalg.det(dfa)).min()))
        if t.jac_f is not None:
            dff = fd_jacobian(lambda ff: t.map(b, ff), f)
            jac_err = max(jac_err, float((np.abs(dfa - dff) / np.maximum(1.0, np.abs(dfa))).max()))
        if t.jac_b is not None:
            dba = np.asarray(t.d_b(b, f))
            dbf = fd_jacobian(lambda bb: t.map(bb, f), b)
            jac_err = max(jac_err, float((np.abs(dba - dbf) / np.maximum(1.0, np.abs(dba))).max()))
    if min_det == math.inf:
        min_det = 1.0

    return AtlasReport(cocycle, identity, min_det, jac_err, gaps, len(B))
