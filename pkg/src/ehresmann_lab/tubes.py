"""Tubes over charts and the inductive choice of their radii.

A tube over chart i at radius n is the set of points over closure(U_i)
whose chart-i height equals n; a thick tube is the band n <= height <= n + l.
Radii are chosen so that each new tube, together with its collar, stays
clear of the collars of all previously built tubes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .atlas import Box, BundleAtlas, unit_directions
from .errors import SamplerBudgetExceeded, SeparationViolation, ValidationError

COLLAR = 0.25
PLATEAU = 0.05
GRID = 64
REFINE_ROUNDS = 3
STABILITY_TOL = 1e-3
MAX_GRID_POINTS = 1 << 20
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Tube:
    chart: int
    radius: int
    round: int
    thickness: float = 0.0

    @property
    def band(self):
        return (float(self.radius), float(self.radius + self.thickness))

    def to_json(self):
        out = {"chart": self.chart, "radius": self.radius, "round": self.round}
        if self.thickness:
            out["thickness"] = self.thickness
        return out


def level_radius(fiber, level: float) -> float:
    """Radius r with height(r*u) = level for a radial height (0 below the minimum)."""
    level = max(float(level), fiber.min_height)
    if fiber.level_radius is not None:
        r = fiber.level_radius(level)
        return 0.0 if not np.isfinite(r) else float(r)
    return float(fiber._ray_root(np.eye(fiber.dim)[0], level))


def level_points(fiber, level: float, count: int = 64) -> np.ndarray:
    r = level_radius(fiber, level)
    pts = r * unit_directions(fiber.dim, count)
    if fiber.dim == 1 and r == 0.0:
        pts = pts[:1]
    return pts


@dataclass
class TubeFamily:
    atlas: BundleAtlas
    tubes: list = field(default_factory=list)
    rounds: int = 0
    collar: float = COLLAR
    min_separation: Optional[float] = None

    def radii(self, chart: int) -> list:
        return [t.radius for t in self.tubes if t.chart == chart]

    @property
    def radius_sets(self) -> dict:
        return {c: self.radii(c) for c in self.atlas.chart_ids}

    def of_chart(self, chart: int) -> list:
        return [t for t in self.tubes if t.chart == chart]

    def height_window(self) -> float:
        """Largest height h such that every chart has a tube band above h."""
        tops = [max((t.radius for t in self.of_chart(c)), default=0) for c in self.atlas.chart_ids]
        return float(min(tops)) if tops else 0.0

    def to_json(self):
        return {
            "tubes": [t.to_json() for t in self.tubes],
            "radius_sets": {str(k): v for k, v in self.radius_sets.items()},
            "rounds": self.rounds,
            "min_separation": self.min_separation,
        }


def kappa_box(atlas: BundleAtlas, chart: int) -> Box:
    """Box beyond which the cutoff of ``chart`` vanishes: U grown by a quarter of the U–V gap."""
    c = atlas.chart(chart)
    return Box(c.inner.lo - 0.25 * (c.inner.lo - c.outer.lo), c.inner.hi + 0.25 * (c.outer.hi - c.inner.hi))


def _closed_intersection(a: Box, b: Box) -> Optional[Box]:
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    if np.any(lo > hi):
        return None
    return _degenerate_box(lo, hi)


def _degenerate_box(lo, hi):
    # closed boxes may be flat; store without Box's positivity checks
    obj = object.__new__(Box)
    object.__setattr__(obj, "lo", np.asarray(lo, dtype=float))
    object.__setattr__(obj, "hi", np.asarray(hi, dtype=float))
    return obj


def _closed_grid(lo, hi, per_dim):
    axes = [np.linspace(l, h, per_dim) if h > l else np.array([l]) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _golden_max(func, lo, hi, iters=40):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = func(d)
    return (c, fc) if fc >= fd else (d, fd)


def _max_height_over(atlas: BundleAtlas, chart: int, tube: Tube, collar: float, grid: int,
                     rounds: int, tol: float):
    """Max of the chart-``chart`` height over the collar of ``tube`` above closure(U_chart).

    Returns None when the two do not meet.
    """
    fiber = atlas.fiber
    Ui = atlas.chart(chart).inner
    reach = kappa_box(atlas, tube.chart) if collar > 0 else atlas.chart(tube.chart).inner
    base = _closed_intersection(Ui, reach)
    if base is None:
        return None
    trans = atlas.transition(tube.chart, chart)
    lo_level = max(tube.band[0] - collar, fiber.min_height)
    hi_level = tube.band[1] + collar
    n = atlas.n
    dirs = unit_directions(fiber.dim, 16)

    per_dim = grid
    while per_dim ** (n + 1) * len(dirs) > MAX_GRID_POINTS and per_dim > 4:
        per_dim //= 2
    B = _closed_grid(base.lo, base.hi, per_dim)
    levels = np.linspace(lo_level, hi_level, per_dim) if hi_level > lo_level else np.array([lo_level])
    radii = np.array([level_radius(fiber, L) for L in levels])

    def value(b, r, u):
        return float(fiber.height(trans(b, r * u)))

    # grid pass, vectorized over (b, level, direction)
    Bb = np.repeat(B, len(levels) * len(dirs), axis=0)
    R = np.tile(np.repeat(radii, len(dirs)), len(B))
    U = np.tile(dirs, (len(B) * len(levels), 1))
    H = np.asarray(fiber.height(trans(Bb, R[:, None] * U)), dtype=float)
    k = int(np.argmax(H))
    best = float(H[k])
    p = np.concatenate([Bb[k], [levels[(k // len(dirs)) % len(levels)]]])
    u = U[k]
    lo = np.concatenate([base.lo, [lo_level]])
    hi = np.concatenate([base.hi, [hi_level]])
    step = (hi - lo) / max(per_dim - 1, 1)

    history = [best]
    for _ in range(rounds):
        for d in range(len(p)):
            a, b = max(lo[d], p[d] - step[d]), min(hi[d], p[d] + step[d])
            if b <= a:
                continue

            def along(x, d=d):
                q = p.copy()
                q[d] = x
                return value(q[:n], level_radius(fiber, q[n]), u)

            x, fx = _golden_max(along, a, b)
            if fx > best:
                best, p[d] = fx, x
        history.append(best)
        step = step / 4.0
    if len(history) >= 2 and abs(history[-1] - history[-2]) > tol:
        raise SamplerBudgetExceeded(
            f"height maximum over tube {tube.to_json()} seen from chart {chart} did not stabilize: {history}"
        )
    return best


def pick_tube_radius(atlas: BundleAtlas, existing, chart: int, *, collar: float = COLLAR,
                     grid: int = GRID, refine_rounds: int = REFINE_ROUNDS,
                     tol: float = STABILITY_TOL) -> int:
    """Smallest integer radius whose collar clears every earlier tube's collar over U_chart.

    M is the maximal chart-``chart`` height over closure(U_chart) intersected
    with the earlier tubes (widened by ``collar``); the result is
    floor(M + collar) + 1, with M = 0 when nothing intersects.  With
    ``collar=0`` this is exactly floor(M) + 1 over the bare tubes.
    """
    atlas.chart(chart)
    if atlas.fiber.compact:
        raise ValidationError("tubes need a euclidean fiber")
    tubes = existing.tubes if isinstance(existing, TubeFamily) else list(existing)
    M = 0.0
    for t in tubes:
        v = _max_height_over(atlas, chart, t, collar, grid, refine_rounds, tol)
        if v is not None:
            M = max(M, v)
    return radius_from_max(M, collar)


def radius_from_max(M: float, collar: float = 0.0) -> int:
    """floor(M + collar) + 1, with the empty-intersection convention M = 0 -> 1."""
    if M <= 0.0:
        return 1
    return int(math.floor(M + collar + 1e-9)) + 1


def tube_distance(atlas: BundleAtlas, a: Tube, c: Tube, samples: int = 10_000) -> float:
    """Sampled distance between the closures of two tubes, in chart ``c.chart`` coordinates.

    Points over different base points are at least their base distance apart,
    so only common base points of the closures need to be compared.
    """
    fiber = atlas.fiber
    base = _closed_intersection(atlas.chart(a.chart).inner, atlas.chart(c.chart).inner)
    if base is None:
        gap = np.maximum(0.0, np.maximum(atlas.chart(a.chart).inner.lo - atlas.chart(c.chart).inner.hi,
                                          atlas.chart(c.chart).inner.lo - atlas.chart(a.chart).inner.hi))
        return float(np.linalg.norm(gap))
    per_dim = max(2, int(round(samples ** (1.0 / atlas.n))))
    B = _closed_grid(base.lo, base.hi, per_dim)
    trans = atlas.transition(a.chart, c.chart)

    def band_points(t):
        levels = np.linspace(*t.band, 5) if t.thickness else [t.radius]
        return np.concatenate([level_points(fiber, L, 32) for L in levels])

    Fa = band_points(a)
    Fc = band_points(c)
    best = math.inf
    for fa in Fa:
        fa_c = np.asarray(trans(B, np.broadcast_to(fa, (len(B), fiber.dim))), dtype=float)
        d = np.linalg.norm(fa_c[:, None, :] - Fc[None, :, :], axis=-1)
        best = min(best, float(d.min()))
    return best


def separation_report(family: TubeFamily, samples: int = 10_000):
    """Pairwise sampled closure distances; returns (min distance, list of records)."""
    rows = []
    tubes = family.tubes
    for x in range(len(tubes)):
        for y in range(x + 1, len(tubes)):
            d = tube_distance(family.atlas, tubes[x], tubes[y], samples)
            rows.append({"a": tubes[x].to_json(), "b": tubes[y].to_json(), "distance": d})
    best = min((r["distance"] for r in rows), default=math.inf)
    return best, rows


def build_tube_family(atlas: BundleAtlas, rounds: int, *, collar: float = COLLAR,
                      thickness=None, samples: int = 10_000, **pick_opts) -> TubeFamily:
    """Round-robin tube creation over the charts, ``rounds`` times.

    ``thickness`` optionally maps a radius n to a band thickness l_n (thick tubes).
    """
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    fam = TubeFamily(atlas, [], 0, collar)
    for r in range(rounds):
        for c in atlas.chart_ids:
            n = pick_tube_radius(atlas, fam, c, collar=collar, **pick_opts)
            prev = fam.radii(c)
            if prev and n <= prev[-1]:
                raise SeparationViolation(f"chart {c}: radius {n} does not exceed {prev[-1]}")
            l = float(thickness(n)) if thickness is not None else 0.0
            fam.tubes.append(Tube(c, n, r, l))
        fam.rounds = r + 1
    sep, _ = separation_report(fam, samples)
    fam.min_separation = sep
    if not sep > 0:
        raise SeparationViolation(f"tube closures touch (sampled distance {sep})")
    return fam
