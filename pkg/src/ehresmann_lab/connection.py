"""Ehresmann connections as per-chart coefficient fields.

In chart i the horizontal space at (b, f) is the graph {(v, Γ_i(b, f) v)}
of a linear map Γ_i(b, f): R^n -> R^m.  Coefficient arrays have shape
``(..., m, n)``.
"""
from __future__ import annotations

from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .atlas import BundleAtlas
from .errors import OutOfOverlap, UndefinedSummand, WeightSumViolation

WEIGHT_SUM_TOL = 1e-9


def push_forward_coefficient(atlas: BundleAtlas, gamma, source: int, target: int, b, f):
    """Carry a coefficient from chart ``source`` to chart ``target``.

    ``f`` is given in source coordinates.  Returns ``(gamma_target, f_target)``
    with gamma_target = ∂_b t + ∂_f t · gamma, derivatives taken at (b, f).
    """
    if source == target:
        return np.asarray(gamma, dtype=float), np.asarray(f, dtype=float)
    t = atlas.transition(source, target)
    if not np.all(atlas.in_overlap(b, source, target)):
        raise OutOfOverlap(f"base point not in V_{source} ∩ V_{target}")
    gamma = np.asarray(gamma, dtype=float)
    g = np.asarray(t.d_b(b, f), dtype=float)
    if gamma.any():
        g = g + np.asarray(t.d_f(b, f)) @ gamma
    return g, np.asarray(t(b, f), dtype=float)


class Connection:
    """A connection known through its coefficient in any chart it reaches."""

    name = "connection"
    #: width of the narrowest feature of the coefficient field; integrators cap
    #: their steps by it so that no feature fits between two stages
    feature_scale = None
    #: whether the connection is meant to be globally consistent across charts
    is_global = True

    def __init__(self, atlas: BundleAtlas, name: Optional[str] = None):
        self.atlas = atlas
        if name is not None:
            self.name = name

    def coefficient(self, chart: int, b, f):
        raise NotImplementedError

    def defined_at(self, chart: int, b) -> bool:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class ChartConnection(Connection):
    """Connection given by explicit coefficient fields on some charts.

    In a chart without its own field the coefficient is obtained by pushing
    forward from the first listed chart whose outer box also contains the
    base point.  ``domain`` restricts where the connection exists at all
    (e.g. the outer box of a single trivialization).
    """

    def __init__(self, atlas, fields: Mapping[int, Callable], name=None, is_global=True, domain=None):
        super().__init__(atlas, name)
        self.fields = dict(fields)
        self.is_global = is_global
        self.domain = domain

    def _source_chart(self, chart, b):
        if chart in self.fields:
            return chart
        for k in self.fields:
            if np.all(self.atlas.in_overlap(b, k, chart)):
                return k
        return None

    def defined_at(self, chart, b) -> bool:
        if self.domain is not None and not np.all(self.domain.contains(b)):
            return False
        return self._source_chart(chart, b) is not None

    def coefficient(self, chart, b, f):
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        src = self._source_chart(chart, b)
        if src is None:
            raise OutOfOverlap(f"{self.name}: no chart field reaches chart {chart} at this base point")
        if src == chart:
            return np.asarray(self.fields[chart](b, f), dtype=float)
        f_src = self.atlas.transition(chart, src)(b, f)
        gamma = self.fields[src](b, f_src)
        return push_forward_coefficient(self.atlas, gamma, src, chart, b, f_src)[0]


def zero_field(atlas: BundleAtlas):
    m, n = atlas.m, atlas.n

    def field(b, f):
        shape = np.broadcast_shapes(np.shape(b)[:-1], np.shape(f)[:-1])
        return np.zeros(shape + (m, n))

    return field


def flat_connection(atlas: BundleAtlas, chart: int = 0, name="flat") -> ChartConnection:
    """Γ = 0 in ``chart`` (pushed forward elsewhere)."""
    return ChartConnection(atlas, {chart: zero_field(atlas)}, name=name)


def induced_connection(atlas: BundleAtlas, chart: int) -> ChartConnection:
    """Connection induced by the trivialization of ``chart``; lives over V_chart."""
    return ChartConnection(
        atlas,
        {chart: zero_field(atlas)},
        name=f"H{chart}",
        is_global=False,
        domain=atlas.chart(chart).outer,
    )


def push_forward_connection(conn: Connection, source: int, target: int, b, f):
    """Coefficient of ``conn`` at (b, f) [source coordinates] expressed in ``target``."""
    gamma = conn.coefficient(source, b, f)
    return push_forward_coefficient(conn.atlas, gamma, source, target, b, f)[0]


class BlendedConnection(Connection):
    """Convex combination Σ λ_k H_k acting on coefficients.

    ``weights`` is either a sequence of callables ``(chart, b, f) -> (...)``
    or one callable returning all weights stacked on the last axis.
    """

    def __init__(self, conns: Sequence[Connection], weights, name="blend", check_sum=True):
        super().__init__(conns[0].atlas, name)
        self.conns = list(conns)
        self.weights = weights
        self.check_sum = check_sum

    def weight_values(self, chart, b, f):
        if callable(self.weights):
            w = np.asarray(self.weights(chart, b, f), dtype=float)
        else:
            w = np.stack([np.asarray(wk(chart, b, f), dtype=float) for wk in self.weights], axis=-1)
        if np.ndim(b) == 1 and np.ndim(f) == 1 and w.shape == (len(self.conns),):
            return w
        shape = np.broadcast_shapes(np.shape(b)[:-1], np.shape(f)[:-1])
        return np.broadcast_to(w, shape + (len(self.conns),))

    def defined_at(self, chart, b) -> bool:
        return any(c.defined_at(chart, b) for c in self.conns)

    def coefficient(self, chart, b, f):
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        return self.combine(chart, b, f, self.weight_values(chart, b, f))

    def combine(self, chart, b, f, w):
        """Σ w_k Γ_k at (b, f) for precomputed weights ``w`` (shape (..., K))."""
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        if self.check_sum and w.ndim == 1:
            total = float(sum(w.tolist()))
            if abs(total - 1.0) > WEIGHT_SUM_TOL:
                raise WeightSumViolation(f"{self.name}: weights sum to {total}")
        elif self.check_sum:
            total = w.sum(axis=-1)
            bad = np.abs(total - 1.0) > WEIGHT_SUM_TOL
            if np.any(bad):
                raise WeightSumViolation(
                    f"{self.name}: weights sum to {float(np.ravel(total)[np.argmax(np.ravel(bad))])}"
                )
        shape = w.shape[:-1]
        if shape == ():
            out = None
            for k, conn in enumerate(self.conns):
                wk = float(w[k])
                if wk == 0.0:
                    continue
                if not conn.defined_at(chart, b):
                    raise UndefinedSummand(f"{self.name}: weight {k} positive where {conn.name} is undefined")
                term = conn.coefficient(chart, b, f)
                out = wk * term if out is None else out + wk * term
            return np.zeros((self.atlas.m, self.atlas.n)) if out is None else out
        out = np.zeros(shape + (self.atlas.m, self.atlas.n))
        bb = np.broadcast_to(b, shape + b.shape[-1:])
        ff = np.broadcast_to(f, shape + f.shape[-1:])
        for k, conn in enumerate(self.conns):
            mask = w[..., k] != 0.0
            if not np.any(mask):
                continue
            bk = bb[mask]
            if not conn.defined_at(chart, bk):
                raise UndefinedSummand(f"{self.name}: weight {k} positive where {conn.name} is undefined")
            out[mask] += w[..., k][mask][:, None, None] * conn.coefficient(chart, bk, ff[mask])
        return out


def blend(conns: Sequence[Connection], weights, name="blend") -> BlendedConnection:
    return BlendedConnection(conns, weights, name=name)


def compatibility_residual(conn: Connection, samples_per_dim: int = 8, fiber_radius: float = 3.0) -> float:
    """Max disagreement between chart-j coefficients and pushed-forward chart-i ones."""
    from .atlas import fiber_sample_grid

    atlas = conn.atlas
    worst = 0.0
    bgrid = atlas.base.box.grid(samples_per_dim)
    fgrid = fiber_sample_grid(atlas.fiber, samples_per_dim, fiber_radius)
    B = np.repeat(bgrid, len(fgrid), axis=0)
    F = np.tile(fgrid, (len(bgrid), 1))
    for i in atlas.chart_ids:
        for j in atlas.chart_ids:
            if i == j:
                continue
            mask = atlas.in_overlap(B, i, j)
            if not np.any(mask):
                continue
            b, f = B[mask], F[mask]
            if not (conn.defined_at(i, b) and conn.defined_at(j, b)):
                continue
            pushed, fj = push_forward_coefficient(atlas, conn.coefficient(i, b, f), i, j, b, f)
            worst = max(worst, float(np.abs(pushed - conn.coefficient(j, b, fj)).max()))
    return worst
