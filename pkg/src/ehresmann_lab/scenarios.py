"""Named scenarios: atlases with their connections, metrics and section families."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .atlas import TWO_PI, BaseSpace, Box, BundleAtlas, Chart, FiberModel, TransitionMap
from .connection import ChartConnection, blend, flat_connection, induced_connection
from .construct import SectionFamily, build_complete_connection
from .errors import ConfigError
from .example3 import DEFAULT_KMAX, DEFAULT_SHIFT, Example3
from .fibered import build_complete_fibered_metric, identity_metric
from .metrics import FiberedMetric, flat_metric


@dataclass(frozen=True)
class Param:
    type: type
    default: object
    doc: str = ""


@dataclass
class Built:
    """A scenario instance: everything the CLI and tests need, built lazily."""

    name: str
    params: dict
    atlas: BundleAtlas
    connections: Dict[str, Callable] = field(default_factory=dict)
    metrics: Dict[str, Callable] = field(default_factory=dict)
    sections: Dict[str, Callable] = field(default_factory=dict)
    default_connection: Optional[str] = None
    default_metric: Optional[str] = None
    extras: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict)

    def _get(self, table, kind, key, default):
        key = key or default
        if key not in table:
            raise ConfigError(f"scenario {self.name!r} has no {kind} {key!r}; choose from {sorted(table)}")
        slot = (kind, key)
        if slot not in self._cache:
            self._cache[slot] = table[key]()
        return self._cache[slot]

    def connection(self, key: Optional[str] = None):
        return self._get(self.connections, "connection", key, self.default_connection)

    def metric(self, key: Optional[str] = None):
        return self._get(self.metrics, "metric", key, self.default_metric)

    def section_family(self, key: Optional[str] = None):
        return self._get(self.sections, "section family", key, next(iter(self.sections), None))

    def describe(self):
        return {
            "name": self.name,
            "params": self.params,
            "connections": sorted(self.connections),
            "metrics": sorted(self.metrics),
            "sections": sorted(self.sections),
        }


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    params: Dict[str, Param]
    factory: Callable

    def defaults(self) -> dict:
        return {k: p.default for k, p in self.params.items()}

    def resolve(self, overrides: Optional[dict] = None) -> dict:
        values = self.defaults()
        for k, v in (overrides or {}).items():
            if k not in self.params:
                raise ConfigError(f"scenario {self.name!r} has no parameter {k!r}; known: {sorted(self.params)}")
            want = self.params[k].type
            if isinstance(v, bool) != (want is bool) or (want is int and isinstance(v, float) and not v.is_integer()):
                raise ConfigError(f"parameter {k!r}: expected {want.__name__}, got {v!r}")
            try:
                values[k] = want(v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"parameter {k!r}: cannot read {v!r} as {want.__name__}") from exc
        return values

    def build(self, overrides: Optional[dict] = None) -> Built:
        return self.factory(self.resolve(overrides))


# ------------------------------------------------------------------ builders

def _single_chart_atlas(half_width: float, n: int = 1, m: int = 1, fiber: Optional[FiberModel] = None):
    box = Box(-half_width * np.ones(n), half_width * np.ones(n))
    chart = Chart(0, box, box.expand(1.0))
    return BundleAtlas(BaseSpace(n, box), fiber or FiberModel(m), [chart], {})


def _product_flat(p):
    atlas = _single_chart_atlas(p["half_width"], p["n"], p["m"])
    conn = lambda: flat_connection(atlas)
    gB, gF = identity_metric(atlas.n), identity_metric(atlas.m)

    def product():
        c = flat_connection(atlas)
        return FiberedMetric(c, lambda chart, b, f: gF(f), gB, name="product")

    def coords():
        return flat_metric(Box(-p["half_width"] * np.ones(atlas.n + atlas.m),
                               p["half_width"] * np.ones(atlas.n + atlas.m)), name="flat", base_dim=atlas.n)

    levels = [float(k) for k in range(-12, 13)]
    return Built("product-flat", p, atlas, {"flat": conn}, {"product": product, "flat": coords},
                 {"levels": lambda: SectionFamily.constant(0, atlas.base.box, levels)},
                 default_connection="flat", default_metric="product")


def _example1(p):
    atlas = _single_chart_atlas(p["half_width"])

    def field(g):
        return lambda b, f: g(np.asarray(f, dtype=float)[..., 0])[..., None, None]

    h1 = lambda: ChartConnection(atlas, {0: field(lambda y: 2 * y * y * np.sin(y) ** 2)}, name="H1")
    h2 = lambda: ChartConnection(atlas, {0: field(lambda y: 2 * y * y * np.cos(y) ** 2)}, name="H2")

    def average():
        a, b = h1(), h2()
        return blend([a, b], lambda chart, bb, ff: np.full(np.broadcast_shapes(
            np.shape(bb)[:-1], np.shape(ff)[:-1]) + (2,), 0.5), name="average")

    K = p["sections"]
    box = atlas.base.box
    return Built(
        "example1", p, atlas, {"H1": h1, "H2": h2, "average": average},
        sections={
            "k-pi": lambda: SectionFamily.constant(0, box, [k * math.pi for k in range(-K, K + 1)]),
            "half-k-pi": lambda: SectionFamily.constant(0, box, [(k + 0.5) * math.pi for k in range(-K - 1, K + 1)]),
        },
        default_connection="average",
    )


def tube_demo_atlas():
    """Two charts over [−2, 2] glued by the shear f ↦ f ± b."""
    base = BaseSpace(1, Box([-2.0], [2.0]))
    charts = [Chart(0, Box([-2.0], [0.5]), Box([-2.5], [1.0])), Chart(1, Box([-0.5], [2.0]), Box([-1.0], [2.5]))]

    def const(c):
        return lambda b, f: np.full(np.shape(f) + (1,), c)

    tr = {
        (0, 1): TransitionMap(0, 1, lambda b, f: np.asarray(f, float) + np.asarray(b, float), const(1.0), const(1.0)),
        (1, 0): TransitionMap(1, 0, lambda b, f: np.asarray(f, float) - np.asarray(b, float), const(-1.0), const(1.0)),
    }
    return BundleAtlas(base, FiberModel(1), charts, tr)


def _tube_demo(p):
    atlas = tube_demo_atlas()
    built = Built("tube-demo", p, atlas, default_connection="complete", default_metric="complete-fibered")

    def complete():
        conn, record = build_complete_connection(atlas, p["rounds"])
        built.extras["record"] = record
        return conn

    def fibered():
        fm, record = build_complete_fibered_metric(atlas, p["rounds"])
        built.extras["fibered_record"] = record
        return fm

    built.connections.update({
        "complete": complete,
        "H0": lambda: induced_connection(atlas, 0),
        "H1": lambda: induced_connection(atlas, 1),
    })
    built.metrics["complete-fibered"] = fibered
    return built


def fourier_connection(atlas: BundleAtlas, seed: int, modes: int, amplitude: float) -> ChartConnection:
    """Γ(b, θ) = Σ_j c_j cos(jθ + ω_j·b + p_j) with Σ|c_j| ≤ amplitude."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1.0, 1.0, size=modes)
    c *= amplitude / max(np.sum(np.abs(c)), 1e-300)
    omega = rng.uniform(-1.0, 1.0, size=(modes, atlas.n))
    phase = rng.uniform(0.0, TWO_PI, size=modes)
    j = np.arange(1, modes + 1)
    terms = list(zip(c.tolist(), j.tolist(), omega.tolist(), phase.tolist()))

    def field(b, f):
        if type(b) is np.ndarray and b.ndim == 1 and type(f) is np.ndarray and f.ndim == 1:
            th = float(f[0])
            bl = b.tolist()
            val = 0.0
            for cj, jj, om, ph in terms:
                arg = jj * th + ph
                for o, x in zip(om, bl):
                    arg += o * x
                val += cj * math.cos(arg)
            return np.array([[val] * atlas.n])
        b = np.asarray(b, dtype=float)
        th = np.asarray(f, dtype=float)[..., 0]
        arg = j * th[..., None] + b @ omega.T + phase
        val = np.sum(c * np.cos(arg), axis=-1)
        return np.repeat(val[..., None, None], atlas.n, axis=-1)

    return ChartConnection(atlas, {0: field}, name="fourier")


def _compact_fiber(p):
    atlas = _single_chart_atlas(p["half_width"], p["n"], fiber=FiberModel(1, topology="circle"))
    return Built("compact-fiber", p, atlas,
                 {"fourier": lambda: fourier_connection(atlas, p["connection_seed"], p["modes"], p["amplitude"])},
                 default_connection="fourier")


def _example3(p):
    ex = Example3(p["k_max"], p["shift"])
    atlas = ex.atlas()
    return Built("example3", p, atlas, {"induced": lambda: ex.connection(atlas)},
                 {"induced": ex.induced_metric, "w-recipe": ex.w_metric},
                 {"sigma": ex.sections}, default_connection="induced", default_metric="w-recipe",
                 extras={"example": ex})


_REGISTRY = [
    Scenario("product-flat", "Trivial product bundle with the flat connection and product metric.",
             {"n": Param(int, 1, "base dimension"), "m": Param(int, 1, "fiber dimension"),
              "half_width": Param(float, 10.0, "base box half width")}, _product_flat),
    Scenario("example1", "Line bundle over [−200, 200] with the connections H1, H2 and their average.",
             {"half_width": Param(float, 200.0, "base box half width"),
              "sections": Param(int, 6, "sections y = kπ use |k| ≤ this")}, _example1),
    Scenario("tube-demo", "Two charts glued by a shear, assembled into a complete connection and metric.",
             {"rounds": Param(int, 4, "tube rounds")}, _tube_demo),
    Scenario("compact-fiber", "Circle bundle with a random bounded Fourier connection.",
             {"n": Param(int, 1, "base dimension"), "half_width": Param(float, 10.0, "base box half width"),
              "connection_seed": Param(int, 0, "seed of the Fourier coefficients"),
              "modes": Param(int, 3, "number of Fourier modes"),
              "amplitude": Param(float, 1.0, "bound on |Γ|")}, _compact_fiber),
    Scenario("example3", "Graph of a chain of shrinking hills, with the induced and w-recipe metrics.",
             {"k_max": Param(int, DEFAULT_KMAX, "number of hills minus one"),
              "shift": Param(float, DEFAULT_SHIFT, "b(0): moves hill k to x = (shift + 4)/2^k")}, _example3),
]


def registry():
    return list(_REGISTRY)


def get_scenario(name: str) -> Scenario:
    for s in _REGISTRY:
        if s.name == name:
            return s
    raise ConfigError(f"unknown scenario {name!r}; choose from {[s.name for s in _REGISTRY]}")


def build(name: str, overrides: Optional[dict] = None) -> Built:
    return get_scenario(name).build(overrides)
