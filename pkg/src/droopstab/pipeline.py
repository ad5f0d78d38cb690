"""Operating point, linear model and slope constraints of one configuration.

All slope cases share the operating point of the configuration: moving the
slopes goes with the ``p0`` shift that keeps every droop reference
unchanged at the equilibrium voltages, so the state matrix for any slope
vector is ``model.at(k)`` around the same point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .assembly import GridSystem, Setpoints, SmallSignalModel
from .config import SystemConfig, load_config, validate
from .dynamics import OperatingPoint, solve_equilibrium
from .modal import DEGENERACY_GAP, SensitivityBundle, sensitivity_bundle
from .region import ConstraintSet, build_constraints

__all__ = ["SlopeStudy"]


@dataclass
class SlopeStudy:
    config: SystemConfig
    rel_gap: float = DEGENERACY_GAP

    @classmethod
    def from_path(cls, path: str | Path, overrides: Sequence[str] = (), **kw) -> "SlopeStudy":
        return cls(load_config(path, overrides), **kw)

    def __post_init__(self):
        validate(self.config)

    @cached_property
    def grid(self) -> GridSystem:
        return GridSystem(self.config)

    @cached_property
    def operating_point(self) -> OperatingPoint:
        return solve_equilibrium(self.grid)

    @cached_property
    def model(self) -> SmallSignalModel:
        op = self.operating_point
        return self.grid.linearize(op.x, op.setpoints)

    @property
    def axes(self) -> tuple[str, ...]:
        return self.grid.axes

    @property
    def k_nominal(self) -> np.ndarray:
        return self.model.k.copy()

    def state_matrix(self, k: Sequence[float] | None = None) -> np.ndarray:
        return self.model.A_ss if k is None else self.model.at(k)

    def setpoints(self, k: Sequence[float]) -> Setpoints:
        """Set-points with slopes ``k`` and the compensating ``p0``."""
        op = self.operating_point
        return op.setpoints.with_slopes(self.grid.droop_indices, k, op.v_dc(self.grid))

    def sensitivities(self, k: Sequence[float] | None = None) -> SensitivityBundle:
        k = self.k_nominal if k is None else np.asarray(k, dtype=float)
        return sensitivity_bundle(self.model.at(k), self.model.M, self.axes, k, rel_gap=self.rel_gap)

    def constraints(self, k: Sequence[float] | None = None) -> ConstraintSet:
        return build_constraints(self.sensitivities(k))
