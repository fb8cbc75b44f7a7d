"""Fiber bundle atlases, horizontal lifts, complete connections and fibered metrics."""
from .atlas import BaseSpace, Box, BundleAtlas, BundlePoint, Chart, FiberModel, TransitionMap, validate_atlas
from .connection import ChartConnection, Connection, blend, flat_connection, induced_connection
from .construct import SectionFamily, build_complete_connection, check_disconnecting
from .errors import (ConfigError, EhresmannLabError, IncompleteLift, NonConvergent, NumericalFailure,
                     ValidationError)
from .fibered import build_complete_fibered_metric, geodesic_probe
from .geodesic import curve_length, exp_trivialization, geodesic, lift_geodesic
from .lift import (BaseCurve, LiftStatus, completeness_probe, horizontal_lift, parallel_transport,
                   trivialize_via_transport)
from .metrics import FiberedMetric, SurfaceMetric
from .scenarios import build as build_scenario
from .scenarios import registry

__version__ = "0.1.0"
