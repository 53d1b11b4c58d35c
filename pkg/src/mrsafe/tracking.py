"""Nominal tracking acceleration and deadlock deconfliction.

Tracking is a cascaded pose loop on the feedback-linearized wheel model.
When the safety filter is actively shaping a robot's command (any of its
constraint multipliers positive), an escape term rotates the velocity-error
feedback by the attitude angle q toward the side away from the nearest-
bearing neighbor, breaking the force equilibrium that causes deadlocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import KinematicMatrices, ReferenceSample
from .scenario import ControlGains, RobotState, wrap_angle


@dataclass(frozen=True)
class NominalCommand:
    dzr: np.ndarray        # (3,) desired Gamma . udot
    xi: np.ndarray         # (3,) pose error, heading component wrapped
    zeta_active: bool
    g: int                 # escape side, -1 right / +1 left
    Q: np.ndarray          # (3, 3) escape rotation


def bearing_angle(p_robot, p_other) -> float:
    """Angle of the vector from the robot to the other body, in (-pi, pi]."""
    dx = float(p_robot[0]) - float(p_other[0])
    dy = float(p_robot[1]) - float(p_other[1])
    if dx == 0.0 and dy == 0.0:
        raise ValueError("bearing undefined for coincident points")
    angle = math.atan2(-dy, -dx)
    if angle <= -math.pi:
        angle = math.pi
    return angle


def escape_sign(bearings) -> int:
    """Escape side from neighbor bearings: -1 (turn right) when the least
    bearing is on the left or dead ahead, else +1."""
    bearings = list(bearings)
    if not bearings:
        raise ValueError("escape side undefined without neighbors")
    return -1 if min(bearings) >= 0.0 else 1


def rotation_Q(g: int, q: float) -> np.ndarray:
    """Planar rotation by g*q with a zeroed heading row/column."""
    c = math.cos(g * q)
    s = math.sin(g * q)
    return np.array([
        [c, -s, 0.0],
        [s, c, 0.0],
        [0.0, 0.0, 0.0],
    ])


def zeta(any_multiplier_positive: bool, zeta_gain: float) -> float:
    """Escape intensity: zeta_gain while the safety filter is active."""
    return zeta_gain if any_multiplier_positive else 0.0


def nominal_accel(state: RobotState, mats: KinematicMatrices,
                  ref: ReferenceSample, gains: ControlGains,
                  zeta_value: float, Q: np.ndarray, g: int = 1) -> NominalCommand:
    """Desired pose acceleration Gamma . udot for the tracking loop with the
    escape term -zeta * Q (velocity error + kappa3 * pose error)."""
    u = np.asarray(state.u)
    pose_rate = mats.Gamma @ u
    xi = np.array([
        state.pose.x - ref.P_d[0],
        state.pose.y - ref.P_d[1],
        wrap_angle(state.pose.theta - ref.P_d[2]),
    ])
    vel_err = pose_rate - ref.V_d
    e = vel_err + gains.kappa3 * xi
    dzr = (ref.a_hat_d - mats.Gamma_dot @ u
           - (gains.kappa3 + gains.kappa4) * vel_err
           - gains.kappa3 * gains.kappa4 * xi)
    if zeta_value != 0.0:
        dzr = dzr - zeta_value * (Q @ e)
    return NominalCommand(dzr=dzr, xi=xi, zeta_active=zeta_value > 0.0, g=g, Q=Q)
