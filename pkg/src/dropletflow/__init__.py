"""Flat flows of forced anisotropic capillary droplets on a half-space.

Steps of the implicit minimizing-movement scheme are solved exactly by
min-cut on a uniform grid; a planar front tracker provides the smooth flow
for comparison, and ``verify`` turns the qualitative estimates of the theory
into executable checks.
"""
from .anisotropy import Anisotropy, certify_ellipticity, make_anisotropy
from .errors import (
    AdmissibilityError,
    ConfigError,
    DegenerateSetError,
    DimensionError,
    DropletFlowError,
    GridMismatchError,
    SetupError,
    TruncationError,
)
from .fields import ContactAngleField, ForcingField
from .gridset import BinarySet, GridDomain, calibrate_stencil
from .shapes import WinterbottomShape, WulffShape, isoperimetric_constant, rasterize, winterbottom_constant
from .stepper import FlatFlowState, atw_energy, gmm_extract, minimize_step, run_flat_flow

__version__ = "0.1.0"

__all__ = [
    "Anisotropy",
    "make_anisotropy",
    "certify_ellipticity",
    "ContactAngleField",
    "ForcingField",
    "GridDomain",
    "BinarySet",
    "calibrate_stencil",
    "WulffShape",
    "WinterbottomShape",
    "isoperimetric_constant",
    "winterbottom_constant",
    "rasterize",
    "FlatFlowState",
    "atw_energy",
    "minimize_step",
    "run_flat_flow",
    "gmm_extract",
    "DropletFlowError",
    "AdmissibilityError",
    "ConfigError",
    "DegenerateSetError",
    "DimensionError",
    "GridMismatchError",
    "SetupError",
    "TruncationError",
]
