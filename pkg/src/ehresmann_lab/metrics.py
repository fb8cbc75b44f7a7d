"""Riemannian metrics in coordinates: single-box metrics, surfaces, and
fibered metrics given as (connection, vertical metric, base metric)."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .atlas import Box, BundleAtlas, BundlePoint
from .connection import Connection
from .errors import DegenerateMetric, OutOfDomain

DERIV_STEP = 1e-4


def fd_metric_derivative(G: Callable, x, step: float = DERIV_STEP, point: Optional[Callable] = None):
    """Fourth-order central differences of a matrix field.

    Returns dG with ``dG[..., a, b, k] = ∂_k G_ab`` from one vectorized call
    at the 4d shifted points, or from ``point`` called on each of them when
    ``x`` is a single point and a per-point evaluator is available.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    h = step * np.maximum(1.0, np.abs(x))  # (..., d)
    if point is not None and x.ndim == 1:
        vals = np.array([[point(x + s * h[k] * e) for s in (2.0, 1.0, -1.0, -2.0)]
                         for k, e in enumerate(np.eye(d))])
        num = -vals[:, 0] + 8.0 * vals[:, 1] - 8.0 * vals[:, 2] + vals[:, 3]
        return np.moveaxis(num / (12.0 * h)[:, None, None], 0, -1)
    shifts = np.array([2.0, 1.0, -1.0, -2.0])
    pts = []
    for k in range(d):
        for s in shifts:
            e = np.zeros_like(x)
            e[..., k] = s * h[..., k]
            pts.append(x + e)
    vals = np.asarray(G(np.stack(pts, axis=0)), dtype=float)  # (4d, ..., d, d)
    vals = vals.reshape((d, 4) + vals.shape[1:])
    num = -vals[:, 0] + 8.0 * vals[:, 1] - 8.0 * vals[:, 2] + vals[:, 3]
    hk = np.moveaxis(h, -1, 0)[(...,) + (None, None)]
    out = num / (12.0 * hk)  # (d, ..., a, b)
    return np.moveaxis(out, 0, -1)


def christoffel_from(G, dG):
    """Γ^k_ij = ½ g^{kl} (∂_i g_lj + ∂_j g_li − ∂_l g_ij), returned as [..., k, i, j]."""
    # T[..., l, i, j] = ∂_i g_lj + ∂_j g_li - ∂_l g_ij
    T = np.swapaxes(dG, -1, -2) + dG - np.moveaxis(dG, -1, -3)
    Ginv = np.linalg.inv(G)
    return 0.5 * np.einsum("...kl,...lij->...kij", Ginv, T)


def is_spd(G) -> bool:
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return False
    return True


class ChartMetric:
    """Metric on one coordinate box: ``matrix(x)`` returns (..., d, d).

    ``derivative(x)`` may supply ∂_k G_ab as (..., d, d, d); otherwise
    fourth-order finite differences are used.  ``base_dim`` splits the
    coordinates into base and fiber parts for reporting.
    """

    def __init__(self, domain: Box, matrix: Callable, derivative: Optional[Callable] = None,
                 name: str = "metric", base_dim: Optional[int] = None, point: Optional[Callable] = None):
        self.domain = domain
        self.matrix = matrix
        self.point = point
        self.derivative = derivative
        self.name = name
        self.dim = domain.dim
        self.base_dim = self.dim if base_dim is None else base_dim

    def G(self, x):
        if self.point is not None and np.ndim(x) == 1:
            return self.point(np.asarray(x, dtype=float))
        return np.asarray(self.matrix(np.asarray(x, dtype=float)), dtype=float)

    def dG(self, x):
        if self.derivative is not None:
            return np.asarray(self.derivative(np.asarray(x, dtype=float)), dtype=float)
        return fd_metric_derivative(self.matrix, x, point=self.point)

    def christoffel(self, x):
        return christoffel_from(self.G(x), self.dG(x))

    def fd_christoffel(self, x, step: float = DERIV_STEP):
        return christoffel_from(self.G(x), fd_metric_derivative(self.matrix, x, step))

    def contains(self, x):
        return self.domain.contains(x)

    def inner(self, x, v, w):
        x = np.asarray(x, dtype=float)
        if not np.all(self.contains(x)):
            raise OutOfDomain(f"{self.name}: point {x.tolist()} outside the domain")
        G = self.G(x)
        return np.einsum("...i,...ij,...j->...", np.asarray(v, float), G, np.asarray(w, float))

    def norm(self, x, v):
        return np.sqrt(self.inner(x, v, v))

    def check_spd(self, x):
        G = self.G(x)
        if not is_spd(G):
            raise DegenerateMetric(f"{self.name}: not positive definite at {np.asarray(x).tolist()}")


class SurfaceMetric(ChartMetric):
    """2-D metric from component handles g11, g12, g22.

    ``grads`` optionally gives the three gradients (..., 2) in the same order.
    """

    def __init__(self, domain: Box, g11, g12, g22, grads=None, name="surface", base_dim=1):
        self.g11, self.g12, self.g22 = g11, g12, g22
        self.grads = grads

        def matrix(x):
            a, b, c = g11(x), g12(x), g22(x)
            return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)

        deriv = None
        if grads is not None:
            def deriv(x):
                da, db, dc = (np.asarray(g(x), dtype=float) for g in grads)
                return np.stack([np.stack([da, db], -2), np.stack([db, dc], -2)], -3)

        super().__init__(domain, matrix, deriv, name, base_dim)

    def horizontal_slope(self, x):
        """Slope s of the g-orthogonal complement of ∂_y: the vector (1, s)."""
        return -np.asarray(self.g12(x)) / np.asarray(self.g22(x))


def flat_metric(domain: Box, name="flat", base_dim=None) -> ChartMetric:
    d = domain.dim

    def matrix(x):
        return np.broadcast_to(np.eye(d), np.shape(x)[:-1] + (d, d)).copy()

    def deriv(x):
        return np.zeros(np.shape(x)[:-1] + (d, d, d))

    return ChartMetric(domain, matrix, deriv, name, base_dim)


def graph_metric(domain: Box, grad: Callable, hess: Optional[Callable] = None, name="graph") -> ChartMetric:
    """First fundamental form I + ∇φ∇φᵀ of the graph of φ over ``domain``."""
    d = domain.dim

    def matrix(x):
        g = np.asarray(grad(x), dtype=float)
        return np.eye(d) + g[..., :, None] * g[..., None, :]

    deriv = None
    if hess is not None:
        def deriv(x):
            g = np.asarray(grad(x), dtype=float)
            H = np.asarray(hess(x), dtype=float)  # H[..., a, k] = ∂_a ∂_k φ
            # ∂_k (g_a g_b) = H_ak g_b + g_a H_bk
            return H[..., :, None, :] * g[..., None, :, None] + g[..., :, None, None] * H[..., None, :, :]

    return ChartMetric(domain, matrix, deriv, name, base_dim=1 if d == 2 else None)


def fibered_block(gB, gV, gamma):
    """Assemble [[gB + ΓᵀgVΓ, −ΓᵀgV], [−gVΓ, gV]] from its three pieces."""
    gVG = gV @ gamma  # (..., m, n)
    top_left = gB + np.swapaxes(gamma, -1, -2) @ gVG
    top = np.concatenate([top_left, -np.swapaxes(gVG, -1, -2)], axis=-1)
    bottom = np.concatenate([-gVG, gV], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def decompose_block(G, n: int):
    """Inverse of :func:`fibered_block`: returns (gB, gV, Γ)."""
    gV = G[..., n:, n:]
    cross = G[..., n:, :n]  # = -gV Γ
    gamma = -np.linalg.solve(gV, cross)
    gB = G[..., :n, :n] - np.swapaxes(gamma, -1, -2) @ (gV @ gamma)
    return gB, gV, gamma


class FiberedMetric:
    """Metric on the total space built from a connection, a vertical metric and a base metric.

    ``vertical(chart, b, f)`` returns (..., m, m) and ``base(b)`` (..., n, n);
    in chart c the squared norm of (v, w) is g_B(v, v) + g_V(w − Γv, w − Γv).
    """

    def __init__(self, connection: Connection, vertical: Callable, base: Callable, name="fibered"):
        self.connection = connection
        self.atlas: BundleAtlas = connection.atlas
        self.vertical = vertical
        self.base = base
        self.name = name
        self._charts = {}

    @property
    def dim(self):
        return self.atlas.n + self.atlas.m

    def matrix(self, chart: int, b, f):
        b = np.asarray(b, dtype=float)
        f = np.asarray(f, dtype=float)
        shape = np.broadcast_shapes(b.shape[:-1], f.shape[:-1])
        gamma = np.broadcast_to(self.connection.coefficient(chart, b, f), shape + (self.atlas.m, self.atlas.n))
        gV = np.broadcast_to(self.vertical(chart, b, f), shape + (self.atlas.m, self.atlas.m))
        gB = np.broadcast_to(self.base(b), shape + (self.atlas.n, self.atlas.n))
        return fibered_block(gB, gV, gamma)

    def chart_metric(self, chart: int) -> ChartMetric:
        """The metric as a :class:`ChartMetric` on (V_chart ∩ base box) × R^m in chart coordinates."""
        cm = self._charts.get(chart)
        if cm is None:
            n, m = self.atlas.n, self.atlas.m
            outer = self.atlas.chart(chart).outer
            # geodesics stay over the base box, where the data are defined
            outer = outer.intersect(self.atlas.base.box) or outer
            dom = Box(np.concatenate([outer.lo, np.full(m, -np.inf)]), np.concatenate([outer.hi, np.full(m, np.inf)]))
            point = getattr(self, "point_matrix", None)
            cm = ChartMetric(dom, lambda x, c=chart: self.matrix(c, x[..., :n], x[..., n:]),
                             name=f"{self.name}[{chart}]", base_dim=n,
                             point=None if point is None else (lambda x, c=chart: point(c, x[:n], x[n:])))
            self._charts[chart] = cm
        return cm

    def decompose(self, chart: int, b, f):
        gamma = self.connection.coefficient(chart, b, f)
        return np.asarray(self.base(b)), np.asarray(self.vertical(chart, b, f)), np.asarray(gamma)

    def horizontal_norm_spread(self, chart: int, b, v, fibers) -> float:
        """max − min over ``fibers`` of |(v, Γv)|², which is 0 for a fibered metric."""
        return horizontal_norm_spread(self.chart_metric(chart), self.atlas.n, b, v, fibers,
                                      lambda bb, ff: self.connection.coefficient(chart, bb, ff))


def horizontal_slope_of(G, n: int):
    """Γ such that (v, Γv) is G-orthogonal to the fiber directions."""
    return -np.linalg.solve(G[..., n:, n:], G[..., n:, :n])


def horizontal_norm_spread(metric: ChartMetric, n: int, b, v, fibers, gamma_fn=None) -> float:
    """Spread of the squared norm of horizontal vectors over ``fibers`` at fixed (b, v).

    Horizontal means G-orthogonal to the fibers unless ``gamma_fn`` is given.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    F = np.asarray(fibers, dtype=float).reshape(len(fibers), -1)
    X = np.concatenate([np.broadcast_to(b, (len(F), len(b))), F], axis=-1)
    G = metric.G(X)
    gam = horizontal_slope_of(G, n) if gamma_fn is None else np.asarray(gamma_fn(X[:, :n], F))
    vec = np.concatenate([np.broadcast_to(v, (len(F), len(v))), gam @ v], axis=-1)
    norms = np.einsum("ki,kij,kj->k", vec, G, vec)
    return float(norms.max() - norms.min())


def metric_eval(metric, point, v, w) -> float:
    """g(v, w) at ``point`` (coordinates for chart metrics, a BundlePoint for fibered ones)."""
    if isinstance(metric, FiberedMetric):
        if not isinstance(point, BundlePoint):
            raise OutOfDomain("fibered metrics are evaluated at BundlePoints")
        if not metric.atlas.chart(point.chart).outer.contains(point.b, metric.atlas.margin):
            raise OutOfDomain(f"base point {point.b.tolist()} outside V_{point.chart}")
        G = metric.matrix(point.chart, point.b, point.f)
        return float(np.asarray(v, float) @ G @ np.asarray(w, float))
    x = np.asarray(point, dtype=float)
    return float(metric.inner(x, v, w))
