"""Strip-imaging attitude guidance: boresight kinematics along ground
strips and trajectory optimization of the scan-rate profile."""

__version__ = "0.1.0"

from .astro import EarthModel, SatelliteState, circular_orbit_state, propagate
from .attitude import AttitudeCommand, CameraParams, command_at
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    DivergenceError,
    ImpactError,
    SingularConfigurationError,
    StripscanError,
    SweepFailureError,
    ValidationError,
)
from .target import ScanState, TargetCurve, build_curve

__all__ = [
    "AttitudeCommand",
    "CameraParams",
    "ConfigError",
    "DegenerateGeometryError",
    "DivergenceError",
    "EarthModel",
    "ImpactError",
    "SatelliteState",
    "ScanState",
    "SingularConfigurationError",
    "StripscanError",
    "SweepFailureError",
    "TargetCurve",
    "ValidationError",
    "build_curve",
    "circular_orbit_state",
    "command_at",
    "propagate",
    "__version__",
]
