"""Partition of unity subordinated to the complements of other charts' tubes.

mu_i(e) = beta_i(p(e)) * prod_{j != i} (1 - chi_j(e)) and lambda = mu / sum(mu).
beta_i equals 1 on closure(U_i) and vanishes halfway to the boundary of V_i;
chi_j equals 1 on a plateau around chart j's tubes (in chart-j height) and
vanishes at distance ``collar`` from them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atlas import Box, BundleAtlas
from .errors import PartitionGap, WeightSumViolation
from .smoothing import smoothstep
from .tubes import COLLAR, PLATEAU, TubeFamily, _closed_grid, level_points

GAP_TOL = 1e-12
SUM_TOL = 1e-9


def _ss(x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)


def box_bump(b, inner: Box, lo_width, hi_width):
    """Product of smoothstep ramps: 1 on closure(inner), 0 beyond the given widths."""
    b = np.asarray(b, dtype=float)
    up = smoothstep((b - (inner.lo - lo_width)) / lo_width)
    down = smoothstep(((inner.hi + hi_width) - b) / hi_width)
    return np.prod(up * down, axis=-1)


def collar_profile(H, band, plateau=PLATEAU, collar=COLLAR):
    """1 within ``plateau`` of the height band, 0 beyond ``collar``."""
    d = np.maximum(np.maximum(band[0] - H, H - band[1]), 0.0)
    return smoothstep((collar - d) / (collar - plateau))


@dataclass
class PartitionOfUnity:
    atlas: BundleAtlas
    tubes: TubeFamily
    plateau: float = PLATEAU
    collar: float = COLLAR

    def __post_init__(self):
        self.ids = list(self.atlas.chart_ids)
        self._bands = {c: [t.band for t in self.tubes.of_chart(c)] for c in self.ids}
        # per-chart (lo, hi, lo_width, hi_width) as python floats for the point path
        self._ramps = {}
        for c in self.ids:
            ch = self.atlas.chart(c)
            lo, hi = ch.inner.lo.tolist(), ch.inner.hi.tolist()
            glo = (ch.inner.lo - ch.outer.lo).tolist()
            ghi = (ch.outer.hi - ch.inner.hi).tolist()
            self._ramps[c] = (lo, hi, glo, ghi)

    def _bump_point(self, c, b, frac):
        lo, hi, glo, ghi = self._ramps[c]
        v = 1.0
        for x, l, h, wl, wh in zip(b, lo, hi, glo, ghi):
            if x < l:
                v *= _ss((x - l) / (frac * wl) + 1.0)
            elif x > h:
                v *= _ss(((h - x) / (frac * wh)) + 1.0)
            if v == 0.0:
                return 0.0
        return v

    def _mu_point(self, chart, b, f):
        bl = b.tolist()
        chis = {}
        for j in self.ids:
            bands = self._bands[j]
            k = self._bump_point(j, bl, 0.25) if bands else 0.0
            if k == 0.0:
                chis[j] = 0.0
                continue
            fj = self.atlas.transition(chart, j)(b, f) if chart != j else f
            H = float(self.atlas.fiber.height(fj))
            keep = 1.0
            span = self.collar - self.plateau
            for lo, hi in bands:
                d = lo - H if H < lo else (H - hi if H > hi else 0.0)
                keep *= 1.0 - _ss((self.collar - d) / span)
            chis[j] = k * (1.0 - keep)
        out = []
        for i in self.ids:
            v = self._bump_point(i, bl, 0.5)
            if v != 0.0:
                for j in self.ids:
                    if j != i:
                        v *= 1.0 - chis[j]
            out.append(v)
        return out

    @property
    def feature_scale(self) -> float:
        """Narrowest ramp of the weights: the collar ramp or a quarter of a U–V gap."""
        widths = [self.collar - self.plateau]
        for c in self.ids:
            ch = self.atlas.chart(c)
            widths.append(0.25 * float(np.min(ch.inner.lo - ch.outer.lo)))
            widths.append(0.25 * float(np.min(ch.outer.hi - ch.inner.hi)))
        return min(widths)

    def support_box(self, chart: int) -> Box:
        """Closed box outside which lambda_chart vanishes (inside V_chart)."""
        c = self.atlas.chart(chart)
        return Box(c.inner.lo - 0.5 * (c.inner.lo - c.outer.lo), c.inner.hi + 0.5 * (c.outer.hi - c.inner.hi))

    def beta(self, chart: int, b):
        c = self.atlas.chart(chart)
        return box_bump(b, c.inner, 0.5 * (c.inner.lo - c.outer.lo), 0.5 * (c.outer.hi - c.inner.hi))

    def kappa(self, chart: int, b):
        c = self.atlas.chart(chart)
        return box_bump(b, c.inner, 0.25 * (c.inner.lo - c.outer.lo), 0.25 * (c.outer.hi - c.inner.hi))

    def chi(self, j: int, chart: int, b, f):
        """Cutoff around chart j's tubes, evaluated at (b, f) given in ``chart``."""
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        shape = np.broadcast_shapes(b.shape[:-1], f.shape[:-1])
        bands = self._bands[j]
        out = np.zeros(shape)
        if not bands:
            return out
        k = np.broadcast_to(self.kappa(j, b), shape)
        mask = k > 0.0
        if not np.any(mask):
            return out
        bb = np.broadcast_to(b, shape + b.shape[-1:])[mask]
        ff = np.broadcast_to(f, shape + f.shape[-1:])[mask]
        fj = self.atlas.transition(chart, j)(bb, ff) if chart != j else ff
        H = np.asarray(self.atlas.fiber.height(fj), dtype=float)
        keep = np.ones_like(H)
        for band in bands:
            keep = keep * (1.0 - collar_profile(H, band, self.plateau, self.collar))
        out[mask] = k[mask] * (1.0 - keep)
        return out

    def mu(self, chart: int, b, f):
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        shape = np.broadcast_shapes(b.shape[:-1], f.shape[:-1])
        chis = {j: self.chi(j, chart, b, f) for j in self.ids}
        cols = []
        for i in self.ids:
            v = np.broadcast_to(self.beta(i, b), shape).astype(float)
            for j in self.ids:
                if j != i:
                    v = v * (1.0 - chis[j])
            cols.append(v)
        return np.stack(cols, axis=-1)

    def weights(self, chart: int, b, f):
        """lambda_i at (b, f) in ``chart``, stacked on the last axis in chart order."""
        if np.ndim(b) == 1 and np.ndim(f) == 1:
            mu = self._mu_point(chart, np.asarray(b, dtype=float), np.asarray(f, dtype=float))
            total = sum(mu)
            if total <= GAP_TOL:
                raise PartitionGap(
                    f"partition vanishes at chart {chart}, b={np.asarray(b).tolist()}, f={np.asarray(f).tolist()}",
                    witness={"chart": chart, "b": np.asarray(b).tolist(), "f": np.asarray(f).tolist()},
                )
            return np.array([v / total for v in mu])
        mu = self.mu(chart, b, f)
        total = mu.sum(axis=-1, keepdims=True)
        bad = total[..., 0] <= GAP_TOL
        if np.any(bad):
            idx = np.unravel_index(int(np.argmax(bad)), bad.shape) if bad.shape else ()
            bw = np.broadcast_to(b, bad.shape + np.shape(b)[-1:])[idx]
            fw = np.broadcast_to(f, bad.shape + np.shape(f)[-1:])[idx]
            raise PartitionGap(
                f"partition vanishes at chart {chart}, b={np.asarray(bw).tolist()}, f={np.asarray(fw).tolist()}",
                witness={"chart": chart, "b": np.asarray(bw).tolist(), "f": np.asarray(fw).tolist()},
            )
        return mu / total

    def __call__(self, chart, b, f):
        return self.weights(chart, b, f)


@dataclass
class PartitionReport:
    samples: int
    min_mu_sum: float
    max_sum_error: float
    max_foreign_weight_on_tubes: float
    max_weight_outside_support: float

    def to_json(self):
        return {
            "samples": self.samples,
            "min_mu_sum": self.min_mu_sum,
            "max_sum_error": self.max_sum_error,
            "max_foreign_weight_on_tubes": self.max_foreign_weight_on_tubes,
            "max_weight_outside_support": self.max_weight_outside_support,
        }


def region_samples(atlas: BundleAtlas, height_top: float, samples: int = 10_000):
    """Points (chart, b, f) spread over the base box and fiber heights up to ``height_top``.

    Each base point is expressed in its deepest chart.  Returns a list of
    (chart, B, F) groups.
    """
    from .tubes import level_radius

    n, m = atlas.n, atlas.m
    per_base = max(2, int(round(math.sqrt(samples) ** (1.0 / n))))
    per_fib = max(2, samples // per_base ** n)
    B = atlas.base.box.grid(per_base)
    r = level_radius(atlas.fiber, height_top)
    if m == 1:
        F = np.linspace(-r, r, per_fib)[:, None]
    else:
        F = np.random.default_rng(0).uniform(-r, r, size=(per_fib, m))
    groups = []
    charts = np.array([atlas.best_chart(b) if atlas.best_chart(b) is not None else -1 for b in B])
    for c in atlas.chart_ids:
        Bc = B[charts == c]
        if len(Bc):
            groups.append((c, np.repeat(Bc, len(F), axis=0), np.tile(F, (len(Bc), 1))))
    return groups


def tube_samples(atlas: BundleAtlas, tube, samples: int = 1000):
    """Points of closure(T) in its own chart: base grid over closure(U) times level points."""
    inner = atlas.chart(tube.chart).inner
    levels = np.linspace(*tube.band, 5) if tube.thickness else [tube.radius]
    F = np.concatenate([level_points(atlas.fiber, L, 16) for L in levels])
    per_base = max(2, int(round((samples / len(F)) ** (1.0 / atlas.n))))
    B = _closed_grid(inner.lo, inner.hi, per_base)
    return np.repeat(B, len(F), axis=0), np.tile(F, (len(B), 1))


def build_partition(atlas: BundleAtlas, tubes: TubeFamily, *, plateau: float = PLATEAU,
                    collar: float = COLLAR, samples: int = 10_000, validate: bool = True):
    """Partition of unity for ``tubes``; validated on ``samples`` points unless told otherwise."""
    pou = PartitionOfUnity(atlas, tubes, plateau, collar)
    if not validate:
        return pou, None
    return pou, validate_partition(pou, samples)


def validate_partition(pou: PartitionOfUnity, samples: int = 10_000) -> PartitionReport:
    atlas = pou.atlas
    top = max((t.band[1] for t in pou.tubes.tubes), default=atlas.fiber.min_height) + 1.0
    min_sum, sum_err, outside, count = math.inf, 0.0, 0.0, 0
    for c, B, F in region_samples(atlas, top, samples):
        mu = pou.mu(c, B, F)
        total = mu.sum(axis=-1)
        k = int(np.argmin(total))
        if total[k] <= GAP_TOL:
            raise PartitionGap(
                f"partition vanishes at chart {c}, b={B[k].tolist()}, f={F[k].tolist()}",
                witness={"chart": c, "b": B[k].tolist(), "f": F[k].tolist()},
            )
        lam = mu / total[:, None]
        min_sum = min(min_sum, float(total.min()))
        sum_err = max(sum_err, float(np.abs(lam.sum(axis=-1) - 1.0).max()))
        for a, i in enumerate(pou.ids):
            out = ~atlas.chart(i).outer.contains(B)
            if np.any(out):
                outside = max(outside, float(lam[out, a].max()))
        count += len(B)
    if sum_err > SUM_TOL:
        raise WeightSumViolation(f"partition weights sum off by {sum_err}")
    foreign = 0.0
    for t in pou.tubes.tubes:
        B, F = tube_samples(atlas, t, 1000)
        lam = pou.weights(t.chart, B, F)
        a = pou.ids.index(t.chart)
        foreign = max(foreign, float((lam.sum(axis=-1) - lam[:, a]).max()), float(np.abs(1.0 - lam[:, a]).max()))
        count += len(B)
    return PartitionReport(count, min_sum, sum_err, foreign, outside)
