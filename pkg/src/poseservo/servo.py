"""High-rate linearized feedback around the latest OCP solution.

The control loop evaluates tau = tau0 + K0 (x - x_lin) at 1 kHz; policies are
immutable snapshots swapped in whole by the OCP worker.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch
from .ocp import OcpSolution
from .robot import ControlCommand, RobotState


@dataclass(frozen=True)
class RiccatiPolicy:
    tau0: np.ndarray
    K0: np.ndarray
    x_lin: np.ndarray  # flat (q, dq) linearization state
    solve_timestamp: float = 0.0

    def __post_init__(self):
        if self.K0.shape != (self.tau0.shape[0], self.x_lin.shape[0]):
            raise DimensionMismatch(
                f"K0 shape {self.K0.shape} inconsistent with tau0/x_lin"
            )

    @staticmethod
    def from_solution(sol: OcpSolution, solve_timestamp: float = 0.0) -> "RiccatiPolicy":
        return RiccatiPolicy(
            tau0=sol.tau0.copy(),
            K0=sol.K0.copy(),
            x_lin=sol.x_lin.as_vector(),
            solve_timestamp=solve_timestamp,
        )


def policy_torque(p: RiccatiPolicy, x, clamp: Optional[float] = None) -> ControlCommand:
    """tau = tau0 + K0 (x - x_lin). Optional symmetric clamp, off by default."""
    xv = x.as_vector() if isinstance(x, RobotState) else np.asarray(x, dtype=float)
    if xv.shape[0] != p.x_lin.shape[0]:
        raise DimensionMismatch(f"state dim {xv.shape[0]} != {p.x_lin.shape[0]}")
    tau = p.tau0 + p.K0 @ (xv - p.x_lin)
    if clamp is not None:
        tau = np.clip(tau, -clamp, clamp)
    return ControlCommand(tau)
