"""Time domain enclosure method for an obstacle below a planar interface."""

from .errors import (
    ConfigurationError,
    ContractError,
    EnclosureError,
    InstabilityError,
    NumericalFailure,
    PreconditionError,
    ResolutionError,
)
from .geometry import LayeredMedium, ObstacleSpec, SourceBall, optical_distance_sets, snell_point
from .scenario import GridParams, Scenario, reference_scenario

__version__ = "0.1.0"
