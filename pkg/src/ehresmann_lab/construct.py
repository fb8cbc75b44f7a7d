"""Assembly of a complete connection from chart-induced ones, and the
disconnecting-sections completeness criterion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .atlas import Box, BundleAtlas
from .connection import BlendedConnection, Connection, induced_connection
from .errors import AgreementViolation, ValidationError
from .partition import PartitionOfUnity, PartitionReport, build_partition, tube_samples
from .tubes import COLLAR, PLATEAU, TubeFamily, build_tube_family, level_radius

AGREEMENT_TOL = 1e-9


@dataclass
class ConstructionRecord:
    tubes: TubeFamily
    partition: PartitionOfUnity
    partition_report: Optional[PartitionReport]
    agreement: list = field(default_factory=list)

    @property
    def max_agreement_residual(self) -> float:
        return max((a["residual"] for a in self.agreement), default=0.0)

    @property
    def height_window(self) -> float:
        return self.tubes.height_window()

    def fiber_window(self, chart_margin: float = 0.0) -> Box:
        """Box of fiber coordinates whose height lies below the covered window."""
        atlas = self.tubes.atlas
        r = level_radius(atlas.fiber, self.height_window - chart_margin)
        return Box(-r * np.ones(atlas.m), r * np.ones(atlas.m)) if r > 0 else Box(
            -1e-3 * np.ones(atlas.m), 1e-3 * np.ones(atlas.m))

    def to_json(self):
        return {
            "schema_version": "1",
            "tubes": [t.to_json() for t in self.tubes.tubes],
            "radius_sets": {str(k): v for k, v in self.tubes.radius_sets.items()},
            "rounds": self.tubes.rounds,
            "min_tube_separation": self.tubes.min_separation,
            "height_window": self.height_window,
            "partition": None if self.partition_report is None else self.partition_report.to_json(),
            "agreement": self.agreement,
            "max_agreement_residual": self.max_agreement_residual,
        }


def agreement_residuals(conn: Connection, tubes: TubeFamily, samples: int = 1000):
    """max |Γ - Γ_i| over sampled points of each tube, evaluated in the tube's chart."""
    atlas = tubes.atlas
    rows = []
    for t in tubes.tubes:
        B, F = tube_samples(atlas, t, samples)
        own = induced_connection(atlas, t.chart).coefficient(t.chart, B, F)
        got = conn.coefficient(t.chart, B, F)
        rows.append({**t.to_json(), "residual": float(np.abs(got - own).max()), "samples": len(B)})
    return rows


def build_complete_connection(atlas: BundleAtlas, rounds: int = 8, *, collar: float = COLLAR,
                              plateau: float = PLATEAU, samples: int = 10_000,
                              tube_samples_per_tube: int = 1000, thickness=None, **pick_opts):
    """H = Σ λ_i H_i over tubes from ``rounds`` rounds of round-robin construction.

    Returns ``(connection, record)``; raises AgreementViolation if the blend
    differs from H_i on some tube T_i by more than 1e-9.
    """
    tubes = build_tube_family(atlas, rounds, collar=collar, thickness=thickness, **pick_opts)
    pou, report = build_partition(atlas, tubes, plateau=plateau, collar=collar, samples=samples)
    conns = [induced_connection(atlas, c) for c in atlas.chart_ids]
    conn = BlendedConnection(conns, pou.weights, name="complete")
    conn.feature_scale = pou.feature_scale
    record = ConstructionRecord(tubes, pou, report)
    record.agreement = agreement_residuals(conn, tubes, tube_samples_per_tube)
    if record.max_agreement_residual > AGREEMENT_TOL:
        raise AgreementViolation(f"blend departs from H_i on a tube by {record.max_agreement_residual}")
    return conn, record


@dataclass
class SectionFamily:
    """Sections b -> (b, σ_k(b)) of the bundle over ``domain`` in one chart.

    ``values[k](b)`` gives fiber coordinates (..., m) and ``derivs[k](b)``
    the Jacobian (..., m, n).  Projection is the identity by construction.
    """

    chart: int
    domain: Box
    values: Sequence[Callable]
    derivs: Sequence[Callable]
    labels: Optional[Sequence] = None

    def __len__(self):
        return len(self.values)

    def projection_residual(self, b) -> float:
        # sections are stored as graphs over the base, so p∘σ = id exactly
        return 0.0

    @classmethod
    def constant(cls, chart: int, domain: Box, levels, m: int = 1):
        """Horizontal candidates f = c for each c in ``levels``."""
        n = domain.dim
        vals, ders = [], []
        for c in levels:
            c = np.atleast_1d(np.asarray(c, dtype=float))
            vals.append(lambda b, c=c: np.broadcast_to(c, np.shape(b)[:-1] + (m,)).copy())
            ders.append(lambda b: np.zeros(np.shape(b)[:-1] + (m, n)))
        return cls(chart, domain, vals, ders, list(levels))


@dataclass
class DisconnectingVerdict:
    horizontal: bool
    disconnecting: bool
    horizontality_residual: float
    section_residuals: list
    window: float
    lowest: float
    highest: float
    ordered: bool

    @property
    def verdict(self) -> bool:
        return self.horizontal and self.disconnecting

    def to_json(self):
        return {
            "schema_version": "1",
            "horizontal": self.horizontal,
            "disconnecting": self.disconnecting,
            "horizontality_residual": self.horizontality_residual,
            "section_residuals": self.section_residuals,
            "window": self.window,
            "lowest_section": self.lowest,
            "highest_section": self.highest,
            "ordered": self.ordered,
        }


def check_disconnecting(conn: Connection, family: SectionFamily, *, tol_h: float = 1e-12,
                        window: float = 10.0, grid: int = 200) -> DisconnectingVerdict:
    """Check that the sections are horizontal and trap every fiber value within ±window.

    Horizontality: |σ_k' - Γ(b, σ_k(b))| ≤ tol_h on a grid of the domain.
    Disconnecting: the sections keep their order, the lowest stays ≤ -window
    and the highest ≥ window, so each strip between neighbours is bounded.
    """
    atlas = conn.atlas
    if atlas.m != 1:
        raise ValidationError("the disconnecting check handles one-dimensional fibers only")
    B = family.domain.grid(max(2, int(round(grid ** (1.0 / atlas.n)))))
    residuals, levels = [], []
    for val, der in zip(family.values, family.derivs):
        f = np.asarray(val(B), dtype=float)
        d = np.asarray(der(B), dtype=float)
        gam = conn.coefficient(family.chart, B, f)
        residuals.append(float(np.abs(d - gam).max()))
        levels.append(f[:, 0])
    levels = np.array(levels)
    order = np.argsort(levels.mean(axis=1))
    levels = levels[order]
    ordered = bool(np.all(np.diff(levels, axis=0) > 0)) if len(levels) > 1 else True
    lowest = float(levels[0].max()) if len(levels) else math.nan
    highest = float(levels[-1].min()) if len(levels) else math.nan
    worst = max(residuals, default=0.0)
    disconnecting = ordered and len(levels) >= 2 and lowest <= -window and highest >= window
    return DisconnectingVerdict(worst <= tol_h, disconnecting, worst, residuals, float(window),
                                lowest, highest, ordered)
