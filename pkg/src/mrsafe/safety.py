"""Predictive pairwise safety: look-ahead condition, safety-matrix analysis,
and linear constraint rows on the stacked wheel accelerations.

The look-ahead condition lam * ||p_ij||^2 >= rho^2 understates the admissible
set on purpose: lam in (0, 1] replaces the smallest eigenvalue of the 3x3
safety matrix built from the pair's headings and bearing, so satisfying it
guarantees the straight-line extrapolated positions stay rho apart.  A
barrier h built on that condition yields, through its zeroing-CBF rate
inequality, one linear row per pair in the wheel accelerations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import KinematicMatrices
from .scenario import ControlGains, Pose, RobotState


@dataclass(frozen=True)
class SafetyAnalysis:
    """Diagnostic bundle for one pair: safety matrix, its smallest
    eigenvalue, and the displacement vector (delta_i, delta_j, distance)."""

    S: np.ndarray
    lambda_min: float
    D: np.ndarray


@dataclass(frozen=True)
class ConstraintRow:
    """One inequality coeffs . udot <= rhs over the stacked accelerations.

    Only the 2-blocks of the two participants are nonzero; block_j is None
    for robot-obstacle rows (the robot takes full avoidance responsibility).
    h is the barrier value the row enforces.
    """

    i: int
    j: int | None          # partner robot index, or None for an obstacle row
    obstacle: int | None   # obstacle index for obstacle rows
    block_i: np.ndarray    # (2,)
    block_j: np.ndarray | None
    rhs: float
    h: float

    @property
    def pair_id(self) -> tuple:
        if self.j is not None:
            return ("robot", self.i, self.j)
        return ("obstacle", self.i, self.obstacle)

    def dense(self, n_robots: int) -> np.ndarray:
        coeffs = np.zeros(2 * n_robots)
        coeffs[2 * self.i:2 * self.i + 2] = self.block_i
        if self.j is not None:
            coeffs[2 * self.j:2 * self.j + 2] = self.block_j
        return coeffs


def future_position(pose: Pose, delta: float) -> np.ndarray:
    """Position after traveling delta meters along the current heading."""
    return np.array([pose.x + math.cos(pose.theta) * delta,
                     pose.y + math.sin(pose.theta) * delta])


def safety_matrix(theta_i: float, theta_j: float, beta_ij: float) -> np.ndarray:
    """Symmetric unit-diagonal matrix of pairwise heading/bearing cosines;
    beta_ij is the angle of the vector from robot i to robot j."""
    c_ij = math.cos(theta_i - theta_j)
    c_i = math.cos(beta_ij - theta_i)
    c_j = math.cos(beta_ij - theta_j)
    return np.array([
        [1.0, -c_ij, -c_i],
        [-c_ij, 1.0, c_j],
        [-c_i, c_j, 1.0],
    ])


def smallest_eigenvalue(S: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric 3x3 matrix via the trigonometric
    closed form on the characteristic cubic."""
    if np.max(np.abs(S - S.T)) > 1e-12:
        raise ValueError("matrix must be symmetric to 1e-12")
    a, b, c = S[0, 1], S[0, 2], S[1, 2]
    p1 = a * a + b * b + c * c
    diag = np.diag(S)
    if p1 == 0.0:
        return float(np.min(diag))
    q = (diag[0] + diag[1] + diag[2]) / 3.0
    p2 = ((diag[0] - q) ** 2 + (diag[1] - q) ** 2 + (diag[2] - q) ** 2) + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    B = (S - q * np.eye(3)) / p
    r = np.linalg.det(B) / 2.0
    if r <= -1.0:
        phi = math.pi / 3.0
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = math.acos(r) / 3.0
    return q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)


def analyze_pair(state_i: RobotState, state_j: RobotState,
                 delta_i: float, delta_j: float) -> SafetyAnalysis:
    """Build the safety matrix and displacement vector for one pair."""
    dx = state_j.pose.x - state_i.pose.x
    dy = state_j.pose.y - state_i.pose.y
    beta = math.atan2(dy, dx)
    S = safety_matrix(state_i.pose.theta, state_j.pose.theta, beta)
    dist = math.hypot(dx, dy)
    return SafetyAnalysis(S=S, lambda_min=smallest_eigenvalue(S),
                          D=np.array([delta_i, delta_j, dist]))


def predictive_safe(lam: float, p_ij, rho: float) -> bool:
    """Look-ahead safety test lam * ||p_ij||^2 >= rho^2."""
    d2 = float(p_ij[0]) ** 2 + float(p_ij[1]) ** 2
    return lam * d2 >= rho * rho


def barrier_value(lam: float, p_ij, v_ij, kappa1: float, rho: float) -> float:
    """Pairwise barrier 2*lam*p.v + kappa1*(lam*||p||^2 - rho^2)."""
    pv = float(p_ij[0]) * float(v_ij[0]) + float(p_ij[1]) * float(v_ij[1])
    d2 = float(p_ij[0]) ** 2 + float(p_ij[1]) ** 2
    return 2.0 * lam * pv + kappa1 * (lam * d2 - rho * rho)


def _row_core(lam, kappa1, kappa2, p_ij, v_ij, rel_adot_u, rho):
    """Shared right-hand side and barrier for robot and obstacle rows."""
    pv = p_ij[0] * v_ij[0] + p_ij[1] * v_ij[1]
    d2 = p_ij[0] ** 2 + p_ij[1] ** 2
    vv = v_ij[0] ** 2 + v_ij[1] ** 2
    p_adot = p_ij[0] * rel_adot_u[0] + p_ij[1] * rel_adot_u[1]
    slack = lam * d2 - rho * rho
    rhs = 2.0 * lam * (vv + p_adot + (kappa1 + kappa2) * pv) + kappa1 * kappa2 * slack
    h = 2.0 * lam * pv + kappa1 * slack
    return rhs, h


def pair_constraint_row(state_i: RobotState, state_j: RobotState,
                        mats_i: KinematicMatrices, mats_j: KinematicMatrices,
                        gains: ControlGains, rho: float, i: int, j: int,
                        p_ij=None) -> ConstraintRow:
    """Collision-free acceleration constraint for a robot pair.

    p_ij may be supplied to use perceived rather than true relative
    position; velocities and Jacobian terms always come from the states.
    """
    if p_ij is None:
        p_ij = (state_i.pose.x - state_j.pose.x, state_i.pose.y - state_j.pose.y)
    u_i = state_i.u
    u_j = state_j.u
    v_i = mats_i.A @ np.asarray(u_i)
    v_j = mats_j.A @ np.asarray(u_j)
    v_ij = (v_i[0] - v_j[0], v_i[1] - v_j[1])
    adot_i = mats_i.A_dot @ np.asarray(u_i)
    adot_j = mats_j.A_dot @ np.asarray(u_j)
    rel_adot = (adot_i[0] - adot_j[0], adot_i[1] - adot_j[1])
    lam = gains.lam
    rhs, h = _row_core(lam, gains.kappa1, gains.kappa2, p_ij, v_ij, rel_adot, rho)
    scale = -2.0 * lam
    block_i = scale * (np.asarray(p_ij) @ mats_i.A)
    block_j = -scale * (np.asarray(p_ij) @ mats_j.A)
    return ConstraintRow(i=i, j=j, obstacle=None, block_i=block_i,
                         block_j=block_j, rhs=rhs, h=h)


def obstacle_constraint_row(state_i: RobotState, mats_i: KinematicMatrices,
                            obstacle_position, obstacle_velocity,
                            gains: ControlGains, rho: float, i: int,
                            obstacle_index: int = 0,
                            p_ik=None) -> ConstraintRow:
    """Same constraint against an uncontrolled constant-velocity disk; only
    the robot's acceleration block is populated."""
    if p_ik is None:
        p_ik = (state_i.pose.x - obstacle_position[0],
                state_i.pose.y - obstacle_position[1])
    v_i = mats_i.A @ np.asarray(state_i.u)
    v_ik = (v_i[0] - obstacle_velocity[0], v_i[1] - obstacle_velocity[1])
    adot_i = mats_i.A_dot @ np.asarray(state_i.u)
    lam = gains.lam
    rhs, h = _row_core(lam, gains.kappa1, gains.kappa2, p_ik, v_ik,
                       (adot_i[0], adot_i[1]), rho)
    block_i = -2.0 * lam * (np.asarray(p_ik) @ mats_i.A)
    return ConstraintRow(i=i, j=None, obstacle=obstacle_index, block_i=block_i,
                         block_j=None, rhs=rhs, h=h)


def perturb_measurement(position, r_m: float, rng: np.random.Generator) -> np.ndarray:
    """Position plus a uniform draw from the closed disk of radius r_m."""
    position = np.asarray(position, dtype=float)
    if r_m == 0.0:
        return position.copy()
    radius = r_m * math.sqrt(rng.uniform())
    angle = rng.uniform() * 2.0 * math.pi
    return position + radius * np.array([math.cos(angle), math.sin(angle)])
