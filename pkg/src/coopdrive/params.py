"""Simulation parameters shared by the planner, controller, and scenarios.

Defaults follow the reference merging setup: 0.1 s sampling, a 110 m approach
region, a 40 m acceleration lane, 90-step planning and 30-step control
horizons, and the usual compact-car footprint (3.5 m x 1.7 m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict


def _default_mf() -> list[list[float]]:
    return [[1.0, 0.0, 0.0, 0.0], [0.0, 0.3, 0.0, 0.0]]


def _default_admm_schedule() -> list[list[float]]:
    # (first iteration, last iteration, rho, sigma); iterations past the last
    # phase keep the final values.
    return [[1, 1, 0.1, 0.1], [2, 13, 1.0, 1.0], [14, 23, 10.0, 10.0], [24, 33, 100.0, 100.0]]


@dataclass
class Params:
    """All tunable constants, JSON-serializable and overridable per scenario."""

    # timing and horizons
    T_s: float = 0.1
    T_P1: int = 90
    T_P2: int = 30
    T_iter: int = 3

    # road layout
    L1: float = 110.0
    L2: float = 40.0
    L_f: float = 15.0
    lane_width: float = 4.5
    ramp_angle_deg: float = 15.0
    fillet_radius: float = 50.0

    # vehicle body and safety distances
    L_V: float = 3.5
    W_V: float = 1.7
    d_S1: float = 10.0
    D_s: float = 2.5

    # longitudinal lag model
    T_l: float = 0.5

    # merge scheduling constants, in seconds
    c0: float = 0.6
    c1: float = 0.7

    # control bounds: acceleration (m/s^2) and front steering (rad)
    a_max: float = 7.0
    psi_max: float = math.radians(34.0)

    # MPC weights
    Q_X: list[float] = field(default_factory=lambda: [1.0, 1.0, 0.0, 0.0])
    Q_U: list[float] = field(default_factory=lambda: [1.0, 0.1])
    M_f: list[list[float]] = field(default_factory=_default_mf)
    k_X: float = 10.0
    k_U: float = 10.0
    alpha: float = 8.0

    # consensus ADMM
    admm_iterations: int = 33
    admm_schedule: list[list[float]] = field(default_factory=_default_admm_schedule)
    consensus_tol: float = 1e-5

    @property
    def c0_steps(self) -> int:
        return int(round(self.c0 / self.T_s))

    @property
    def c1_steps(self) -> int:
        return int(round(self.c1 / self.T_s))

    @property
    def d_HK(self) -> float:
        """Longitudinal offset of the two covering circles from the body center."""
        return 0.5 * (self.L_V - self.W_V)

    @property
    def ramp_angle(self) -> float:
        return math.radians(self.ramp_angle_deg)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Params":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown parameter overrides: {sorted(unknown)}")
        return cls(**data)

    def validate(self) -> None:
        if self.T_s <= 0:
            raise ValueError("T_s must be positive")
        if self.T_l <= 0:
            raise ValueError("T_l must be positive")
        if min(self.L1, self.L2, self.L_f) <= 0:
            raise ValueError("road lengths must be positive")
        if self.T_P1 < 1 or self.T_P2 < 1:
            raise ValueError("horizons must be at least one step")
        if self.L_V <= self.W_V:
            raise ValueError("vehicle length must exceed width")
