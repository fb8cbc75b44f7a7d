"""A chain of shrinking hills over the plane: a complete induced metric and an
incomplete metric with the same connection.

The surface is the graph of φ = Σ_{k ≤ k_max} φ_k with φ_k(x, y) = φ₀(2^k x, 2^k y)
and φ₀(x, y) = a(x − b(y − 4) − 4), projected to the x-axis.  The sections
y = 4/2^k are horizontal because b'(0) = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atlas import BaseSpace, Box, BundleAtlas, Chart, FiberModel
from .connection import ChartConnection
from .construct import SectionFamily
from .geodesic import LengthReport, curve_length
from .metrics import SurfaceMetric
from .smoothing import smoothstep, smoothstep_deriv

DEFAULT_KMAX = 12
DEFAULT_SHIFT = -8.0
CURVE_START = -5.0


def bump(z):
    """a(z) = exp(1 − 1/(1 − z²)) on |z| < 1, else 0; a(0) = 1."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    m = np.abs(z) < 1.0
    zm = z[m]
    out[m] = np.exp(1.0 - 1.0 / (1.0 - zm * zm))
    return out


def bump_derivs(z):
    """(a, a', a'') at z."""
    z = np.asarray(z, dtype=float)
    a0, a1, a2 = np.zeros_like(z), np.zeros_like(z), np.zeros_like(z)
    m = np.abs(z) < 1.0
    zm = z[m]
    q = 1.0 - zm * zm
    v = np.exp(1.0 - 1.0 / q)
    r = -2.0 * zm / (q * q)  # (log a)'
    dr = -2.0 / (q * q) - 8.0 * zm * zm / (q * q * q)
    a0[m] = v
    a1[m] = v * r
    a2[m] = v * (r * r + dr)
    return a0, a1, a2


def ridge_derivs(s, shift: float):
    """(b, b', b'') for b(s) = s³/(1 − s²) + shift on |s| < 1."""
    q = 1.0 - s * s
    return (s ** 3 / q + shift, (3 * s * s - s ** 4) / (q * q), (6 * s + 2 * s ** 3) / q ** 3)


def hill_derivs(x, y, shift: float):
    """φ₀ and its gradient and Hessian entries (p, px, py, pxx, pxy, pyy)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    out = [np.zeros(x.shape) for _ in range(6)]
    s = y - 4.0
    m = np.abs(s) < 1.0
    if not np.any(m):
        return out
    b0, b1, b2 = ridge_derivs(s[m], shift)
    a0, a1, a2 = bump_derivs(x[m] - b0 - 4.0)
    out[0][m] = a0
    out[1][m] = a1
    out[2][m] = -a1 * b1
    out[3][m] = a2
    out[4][m] = -a2 * b1
    out[5][m] = a2 * b1 * b1 - a1 * b2
    return out


@dataclass
class Example3:
    k_max: int = DEFAULT_KMAX
    shift: float = DEFAULT_SHIFT

    def __post_init__(self):
        if self.k_max < 1:
            from .errors import ValidationError
            raise ValidationError("k_max must be >= 1")

    # -- the height function
    def derivs(self, x, y):
        """φ, ∇φ and the Hessian entries of the truncated sum, each shaped like x."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        tot = [np.zeros(np.broadcast(x, y).shape) for _ in range(6)]
        for k in range(self.k_max + 1):
            s = 2.0 ** k
            # only points inside the k-th hill's horizontal strip contribute
            parts = hill_derivs(s * x, s * y, self.shift)
            scale = (1.0, s, s, s * s, s * s, s * s)
            for t, p, c in zip(tot, parts, scale):
                t += c * p
        return tot

    def phi(self, x, y):
        return self.derivs(x, y)[0]

    def hill(self, k: int, x, y):
        """φ_k alone."""
        s = 2.0 ** k
        return hill_derivs(s * np.asarray(x, float), s * np.asarray(y, float), self.shift)[0]

    def hill_center(self, k: int):
        """Where φ_k reaches its maximum 1: y = 4/2^k and x = (b(0) + 4)/2^k."""
        return ((self.shift + 4.0) / 2.0 ** k, 4.0 / 2.0 ** k)

    # -- metrics
    def _components(self, X):
        X = np.asarray(X, dtype=float)
        _, px, py, pxx, pxy, pyy = self.derivs(X[..., 0], X[..., 1])
        return px, py, pxx, pxy, pyy

    def induced_metric(self, domain: Box = None) -> SurfaceMetric:
        """First fundamental form I + ∇φ∇φᵀ of the graph."""
        domain = domain or Box([-6.0, -6.0], [6.0, 6.0])

        def g11(X):
            px, *_ = self._components(X)
            return 1.0 + px * px

        def g12(X):
            px, py, *_ = self._components(X)
            return px * py

        def g22(X):
            _, py, *_ = self._components(X)
            return 1.0 + py * py

        def grads(X):
            px, py, pxx, pxy, pyy = self._components(X)
            d11 = np.stack([2 * px * pxx, 2 * px * pxy], -1)
            d12 = np.stack([pxx * py + px * pxy, pxy * py + px * pyy], -1)
            d22 = np.stack([2 * py * pxy, 2 * py * pyy], -1)
            return d11, d12, d22

        return SurfaceMetric(domain, g11, g12, g22, grads=[lambda X, i=i: grads(X)[i] for i in range(3)],
                             name="induced")

    def w_metric(self, domain: Box = None) -> SurfaceMetric:
        """Same horizontal slope and vertical part as the induced metric, flat horizontal norm.

        g̃ = [[1 + g₁₂²/g₂₂, g₁₂], [g₁₂, g₂₂]], so (1, −g₁₂/g₂₂) has unit length.
        """
        domain = domain or Box([-6.0, -6.0], [6.0, 6.0])

        def parts(X):
            px, py, pxx, pxy, pyy = self._components(X)
            g12 = px * py
            g22 = 1.0 + py * py
            d12 = np.stack([pxx * py + px * pxy, pxy * py + px * pyy], -1)
            d22 = np.stack([2 * py * pxy, 2 * py * pyy], -1)
            return g12, g22, d12, d22

        def g11(X):
            g12, g22, _, _ = parts(X)
            return 1.0 + g12 * g12 / g22

        def g12f(X):
            return parts(X)[0]

        def g22f(X):
            return parts(X)[1]

        def d11(X):
            g12, g22, d12, d22 = parts(X)
            return (2 * g12 / g22)[..., None] * d12 - (g12 * g12 / (g22 * g22))[..., None] * d22

        return SurfaceMetric(domain, g11, g12f, g22f, grads=[d11, lambda X: parts(X)[2], lambda X: parts(X)[3]],
                             name="w-recipe")

    def slope_residual(self, points) -> float:
        """max |horizontal slope (induced) − horizontal slope (w-recipe)| at ``points``."""
        a = self.induced_metric().horizontal_slope(points)
        b = self.w_metric().horizontal_slope(points)
        return float(np.max(np.abs(a - b)))

    # -- bundle view: base x, fiber y
    def atlas(self, half_width: float = 6.0) -> BundleAtlas:
        base = BaseSpace(1, Box([-half_width], [half_width]))
        chart = Chart(0, Box([-half_width], [half_width]), Box([-half_width - 1.0], [half_width + 1.0]))
        return BundleAtlas(base, FiberModel(1), [chart], {})

    def connection(self, atlas: BundleAtlas = None) -> ChartConnection:
        """Connection of the induced metric: horizontal slope −g₁₂/g₂₂."""
        atlas = atlas or self.atlas()

        def field(b, f):
            b = np.asarray(b, dtype=float)
            f = np.asarray(f, dtype=float)
            _, px, py, *_ = self.derivs(b[..., 0], f[..., 0])
            return (-(px * py) / (1.0 + py * py))[..., None, None]

        return ChartConnection(atlas, {0: field}, name="induced")

    def sections(self, k_values=None, domain: Box = None) -> SectionFamily:
        """σ_k: x ↦ (x, 4/2^k)."""
        if k_values is None:
            k_values = range(self.k_max + 1)
        domain = domain or Box([-6.0], [6.0])
        return SectionFamily.constant(0, domain, [4.0 / 2.0 ** k for k in k_values])

    def section_residuals(self, k_values=range(9), samples: int = 2001):
        """max |slope along σ_k| for each k, sampled over the hill's x-range and beyond."""
        out = []
        ind = self.induced_metric()
        for k in k_values:
            x = np.linspace(-6.0, 6.0, samples) / 2.0 ** k
            pts = np.stack([x, np.full_like(x, 4.0 / 2.0 ** k)], -1)
            out.append(float(np.max(np.abs(ind.horizontal_slope(pts)))))
        return out


# ---------------------------------------------------------------- the c-curve

def curve_level(x):
    """Dyadic level k = floor(log2(5/|x|)) of x in (−5, 0)."""
    return np.floor(np.log2(5.0 / np.abs(x)))


def c_curve(x):
    """c(x) = 4/2^k on [−5, −3]/2^k, falling to 2/2^k over [−3, −2.5]/2^k by a smoothstep."""
    x = np.asarray(x, dtype=float)
    k = curve_level(x)
    u = -x * 2.0 ** k
    w = 2.0 * (3.0 - u)
    return (4.0 - 2.0 * smoothstep(w)) / 2.0 ** k


def c_curve_deriv(x):
    x = np.asarray(x, dtype=float)
    k = curve_level(x)
    w = 2.0 * (3.0 + x * 2.0 ** k)
    return -4.0 * smoothstep_deriv(w)


def c_curve_path(t):
    """t ↦ (t, c(t)) with its velocity, for arrays of t in (−5, 0)."""
    t = np.asarray(t, dtype=float)
    pos = np.stack([t, c_curve(t)], -1)
    vel = np.stack([np.ones_like(t), c_curve_deriv(t)], -1)
    return pos, vel


def c_breakpoints(depth: int):
    """Ends of the plateaus and ramps down to level ``depth``."""
    pts = []
    for k in range(depth + 1):
        pts.extend([-3.0 / 2.0 ** k, -2.5 / 2.0 ** k])
    return pts


def c_length(metric, *, tol: float = 1e-3, levels: int = 8, order: int = 10, depth: int = 8) -> LengthReport:
    """Length of t ↦ (t, c(t)) on (−5, 0) under ``metric``, refined toward the open end 0."""
    return curve_length(metric, c_curve_path, CURVE_START, 0.0, open_right=True, tol=tol, levels=levels,
                        order=order, subdivisions=2, depth=depth,
                        breakpoints=c_breakpoints(depth + 2 * levels))


def make_example3(k_max: int = DEFAULT_KMAX, shift: float = DEFAULT_SHIFT):
    """(induced metric, w-recipe metric, sections, curve) for the hill chain."""
    ex = Example3(k_max, shift)
    return ex.induced_metric(), ex.w_metric(), ex.sections(), c_curve_path
