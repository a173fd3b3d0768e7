"""Consensus flows of agents on implicit hypersurfaces, with stability and basin analysis."""

from .errors import (
    DimensionMismatch,
    HyperflockError,
    IndexOutOfRange,
    InvalidParameter,
    NotEquilibrium,
    NotOnSurface,
    NotSPD,
    NumericalFailure,
    OutsideCaptureRegion,
    RetractionDiverged,
    SamplingFailed,
    SingularPoint,
    TransversalityViolated,
)
from .flow import FlowParams, Trajectory, integrate, integrate_batch
from .graph import Graph
from .manifold import ImplicitSurface, builtin_surface, ellipsoid, quartic, sphere, torus

__version__ = "0.1.0"

__all__ = [
    "DimensionMismatch",
    "FlowParams",
    "Graph",
    "HyperflockError",
    "ImplicitSurface",
    "IndexOutOfRange",
    "InvalidParameter",
    "NotEquilibrium",
    "NotOnSurface",
    "NotSPD",
    "NumericalFailure",
    "OutsideCaptureRegion",
    "RetractionDiverged",
    "SamplingFailed",
    "SingularPoint",
    "Trajectory",
    "TransversalityViolated",
    "builtin_surface",
    "ellipsoid",
    "integrate",
    "integrate_batch",
    "quartic",
    "sphere",
    "torus",
]
