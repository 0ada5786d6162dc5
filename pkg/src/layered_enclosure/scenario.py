"""Scenario description shared by the solvers and the command line runner."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import PreconditionError
from .geometry import LayeredMedium, ObstacleSpec, OpticalDistance, SourceBall, optical_distance_sets

__all__ = ["GridParams", "Scenario", "reference_scenario"]


@dataclass(frozen=True)
class GridParams:
    """Discretisation parameters of the time domain solver.

    Parameters
    ----------
    h : float
        Cell size.
    sponge_cells : int
        Width of the absorbing layer in cells.
    safety : float
        CFL safety factor; values above 1 are outside the stability contract.
    margin : float or None
        Distance between the hull of ``B`` and ``D`` and the sponge.  ``None``
        means the travel distance ``sqrt(max gamma) * T``.
    max_cells : int
        Memory budget in cells.
    """

    h: float = 0.05
    sponge_cells: int = 20
    safety: float = 0.9
    margin: Optional[float] = None
    max_cells: int = 40_000_000

    def __post_init__(self):
        if not self.h > 0:
            raise PreconditionError(f"grid spacing must be positive, got {self.h}")
        if self.sponge_cells < 0:
            raise PreconditionError("sponge width must be non-negative")
        if not self.safety > 0:
            raise PreconditionError("CFL safety factor must be positive")
        if self.margin is not None and self.margin < 0:
            raise PreconditionError("margin must be non-negative")


@dataclass(frozen=True)
class Scenario:
    """Medium, obstacle, source, horizon and grid of one experiment."""

    medium: LayeredMedium
    obstacle: ObstacleSpec
    source: SourceBall
    T: float
    grid: GridParams = field(default_factory=GridParams)

    def __post_init__(self):
        self.obstacle.check_ellipticity(self.medium)
        if not self.T > 0:
            raise PreconditionError(f"horizon T must be positive, got {self.T}")

    def distances(self) -> OpticalDistance:
        return optical_distance_sets(self.obstacle, self.source, self.medium)

    def with_contrast(self, c: float) -> "Scenario":
        return replace(self, obstacle=replace(self.obstacle, contrast=float(c),
                                              boundary_samples=self.obstacle.boundary_samples))

    def with_grid(self, **kw) -> "Scenario":
        return replace(self, grid=replace(self.grid, **kw))

    def with_horizon(self, T: float) -> "Scenario":
        return replace(self, T=float(T))

    def describe(self) -> dict:
        """Plain dictionary of every parameter, used for hashing."""
        ob = self.obstacle
        return {
            "medium": [self.medium.gamma_plus, self.medium.gamma_minus],
            "obstacle": {
                "shape": ob.shape,
                "params": [np.asarray(p, float).tolist() if np.ndim(p) else float(p) for p in ob.params],
                "contrast": ob.contrast,
                "n_boundary": len(ob.boundary_samples),
            },
            "source": {
                "center": self.source.center.tolist(),
                "radius": self.source.radius,
                "amplitude": self.source.amplitude,
                "taper": self.source.taper,
            },
            "T": self.T,
            "grid": {
                "h": self.grid.h,
                "sponge_cells": self.grid.sponge_cells,
                "safety": self.grid.safety,
                "margin": self.grid.margin,
            },
        }

    def digest(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def reference_scenario(contrast: float = -0.8, h: float = 0.05, margin: Optional[float] = 0.5,
                       T: Optional[float] = None, eta: float = 0.3) -> Scenario:
    """Ball obstacle below a ball source on a common vertical axis.

    ``gamma_plus = 1``, ``gamma_minus = 2``, ``D`` of radius 0.4 centred at
    ``(0, 0, -1.5)`` and ``B`` of radius ``eta`` centred at ``(0, 0, 1.2)``.
    ``T`` defaults to ``2 l(D, B) + 1``.
    """
    medium = LayeredMedium(1.0, 2.0)
    obstacle = ObstacleSpec("ball", ((0.0, 0.0, -1.5), 0.4), contrast=contrast)
    source = SourceBall((0.0, 0.0, 1.2), eta)
    if T is None:
        T = 2.0 * optical_distance_sets(obstacle, source, medium).l_DB + 1.0
    return Scenario(medium, obstacle, source, float(T), GridParams(h=h, margin=margin))
