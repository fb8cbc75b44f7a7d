"""Adaptive Dormand–Prince 5(4) integration with finite-time escape detection.

The driver is deliberately small: forward integration only, FSAL stages,
local extrapolation, Shampine's quartic dense output, and hooks for
per-step events, admissibility of the new state (chart validity) and state
normalization (angle wrapping).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    None,
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order weights minus the embedded fourth-order ones (7 stages, FSAL)
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Shampine's dense-output polynomial coefficients
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


@dataclass(eq=False)
class Step:
    """One accepted step with its dense-output interpolant."""

    t: float
    h: float
    y: np.ndarray
    y_new: np.ndarray
    K: np.ndarray
    tag: object = None

    @property
    def t_new(self) -> float:
        return self.t + self.h

    def _q(self):
        q = getattr(self, "_Q", None)
        if q is None:
            q = self.K.T @ P
            self._Q = q
        return q

    def __call__(self, t):
        """Interpolated state at time(s) ``t`` (scalar or 1-D array)."""
        th = (np.asarray(t, dtype=float) - self.t) / self.h
        powers = np.stack([th, th**2, th**3, th**4], axis=0)
        out = self.y[:, None] + self.h * (self._q() @ powers.reshape(4, -1))
        return out[:, 0] if np.ndim(t) == 0 else out.T

    def derivative(self, t):
        th = (np.asarray(t, dtype=float) - self.t) / self.h
        powers = np.stack([np.ones_like(th), 2 * th, 3 * th**2, 4 * th**3], axis=0)
        out = self._q() @ powers.reshape(4, -1)
        return out[:, 0] if np.ndim(t) == 0 else out.T


@dataclass
class Outcome:
    status: str  # completed | escape | underflow | event | max_steps
    t: float
    y: np.ndarray
    h: float
    steps: list = field(default_factory=list)
    event: object = None
    rejected: int = 0


def _rms(x) -> float:
    return math.sqrt(float(np.dot(x, x)) / x.size)


def initial_step(rhs, t0, y0, f0, rtol, atol, span) -> float:
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * f0
    f1 = np.asarray(rhs(t0 + h0, y1), dtype=float)
    d2 = _rms((f1 - f0) / scale) / h0
    if not np.isfinite(d2):
        return h0 * 1e-3
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def integrate(
    rhs: Callable,
    t0: float,
    y0,
    t1: float,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    h0: Optional[float] = None,
    h_min: Optional[float] = None,
    h_max: float = math.inf,
    escape_radius: Optional[float] = None,
    escape_norm: Optional[Callable] = None,
    event: Optional[Callable] = None,
    admissible: Optional[Callable] = None,
    normalize: Optional[Callable] = None,
    tag: object = None,
    max_steps: int = 1_000_000,
    stops=(),
) -> Outcome:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` towards ``t1 > t0``.

    Stops with status ``escape`` when the state norm exceeds
    ``escape_radius`` while the accepted step has collapsed below
    ``10*h_min`` (or the proposed step falls under ``h_min`` beyond the
    radius), ``underflow`` when the step falls under ``h_min`` otherwise,
    and ``event`` when ``event(t, y)`` returns something other than None
    after an accepted step.  ``admissible(t, y)`` returning False rejects
    the step and halves it.  Steps are shortened to land on each time in
    ``stops`` (points where ``rhs`` loses smoothness).
    """
    y = np.array(y0, dtype=float).ravel()
    t = float(t0)
    t1 = float(t1)
    if h_min is None:
        h_min = 1e-12 * (t1 - t0)
    norm = escape_norm or (lambda v: math.sqrt(float(np.dot(v, v))))
    dim = y.size
    K = np.empty((7, dim))
    K[0] = rhs(t, y)
    if h0 is None:
        h = initial_step(rhs, t, y, K[0], rtol, atol, t1 - t)
    else:
        h = h0
    h = min(h, h_max)
    steps = []
    rejected = 0
    a1, a2, a3, a4, a5 = A[1], A[2], A[3], A[4], A[5]
    c = C
    stops = sorted(float(x) for x in stops if t0 < x < t1)
    k_stop, n_stops = 0, len(stops)

    while t < t1:
        if len(steps) >= max_steps:
            return Outcome("max_steps", t, y, h, steps, None, rejected)
        if h < h_min:
            status = "escape" if escape_radius is not None and norm(y) > escape_radius else "underflow"
            return Outcome(status, t, y, h, steps, None, rejected)
        last = t + h >= t1
        if last:
            h = t1 - t
        hit = None
        while k_stop < n_stops and stops[k_stop] <= t:
            k_stop += 1
        if k_stop < n_stops and not last and t + h >= stops[k_stop]:
            hit = stops[k_stop]
            h_want = h
            h = hit - t
        K[1] = rhs(t + c[1] * h, y + h * (a1[0] * K[0]))
        K[2] = rhs(t + c[2] * h, y + h * (a2 @ K[:2]))
        K[3] = rhs(t + c[3] * h, y + h * (a3 @ K[:3]))
        K[4] = rhs(t + c[4] * h, y + h * (a4 @ K[:4]))
        K[5] = rhs(t + c[5] * h, y + h * (a5 @ K[:5]))
        y_new = y + h * (B @ K[:6])
        t_new = t1 if last else (hit if hit is not None else t + h)
        ok = np.all(np.isfinite(y_new))
        if ok and admissible is not None and not admissible(t_new, y_new):
            h *= 0.5
            rejected += 1
            continue
        if ok:
            K[6] = rhs(t_new, y_new)
            ok = np.all(np.isfinite(K[6]))
        if not ok:
            h *= MIN_FACTOR
            rejected += 1
            continue
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = _rms(h * (E @ K) / scale)
        if err > 1.0:
            h *= max(MIN_FACTOR, SAFETY * err ** -0.2)
            rejected += 1
            continue

        steps.append(Step(t, h, y, y_new, K.copy(), tag))
        h_acc = h
        t, y = t_new, y_new
        if normalize is not None:
            y = normalize(y)
        K[0] = K[6]
        factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
        h = min(h_acc * factor, h_max)
        if hit is not None:
            # a shortened landing step says nothing about the next one
            h = min(max(h, h_want), h_max)
        if escape_radius is not None and h_acc < 10 * h_min and norm(y) > escape_radius:
            return Outcome("escape", t, y, h, steps, None, rejected)
        if event is not None:
            ev = event(t, y)
            if ev is not None:
                return Outcome("event", t, y, h, steps, ev, rejected)
    return Outcome("completed", t, y, h, steps, None, rejected)


def locate(step: Step, func, lo: float, hi: float, tol: float = 1e-13) -> float:
    """Root of ``func(step(t))`` in [lo, hi] by bisection-safeguarded secant."""
    from scipy.optimize import brentq

    return brentq(lambda s: func(step(s)), lo, hi, xtol=tol)
