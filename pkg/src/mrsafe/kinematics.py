"""Differential-drive kinematics and reference sampling.

The controlled point sits ``offset`` meters ahead of the axle midpoint, so
its planar velocity is an invertible linear map A(theta) of the wheel rates
and the pose rate is Gamma = [A; Lambda^T].  Wheel order is (left, right):
equal rates drive straight, a faster right wheel turns counter-clockwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import Pose, ReferenceSpec, RobotParams, RobotState, wrap_angle


@dataclass(frozen=True)
class KinematicMatrices:
    """Velocity Jacobians at one state.

    A maps wheel rates to the control point's planar velocity, Lambda to the
    heading rate; Gamma stacks them and Gamma_dot is its time derivative
    along theta_dot = Lambda . u (only the planar block depends on theta).
    """

    A: np.ndarray          # (2, 2)
    A_dot: np.ndarray      # (2, 2)
    Lambda: np.ndarray     # (2,)
    Gamma: np.ndarray      # (3, 2)
    Gamma_dot: np.ndarray  # (3, 2)


@dataclass(frozen=True)
class ReferenceSample:
    P_d: np.ndarray    # (3,) desired pose
    V_d: np.ndarray    # (3,) desired pose rate
    a_hat_d: np.ndarray  # (3,) desired pose acceleration


def build_A(pose: Pose, params: RobotParams) -> np.ndarray:
    """Planar velocity Jacobian; det(A) = wheel_radius^2 * offset / axle_length."""
    rw = params.wheel_radius
    rdl = rw * params.offset / params.axle_length
    c = math.cos(pose.theta)
    s = math.sin(pose.theta)
    return np.array([
        [0.5 * rw * c + rdl * s, 0.5 * rw * c - rdl * s],
        [0.5 * rw * s - rdl * c, 0.5 * rw * s + rdl * c],
    ])


def _dA_dtheta(pose: Pose, params: RobotParams) -> np.ndarray:
    rw = params.wheel_radius
    rdl = rw * params.offset / params.axle_length
    c = math.cos(pose.theta)
    s = math.sin(pose.theta)
    return np.array([
        [-0.5 * rw * s + rdl * c, -0.5 * rw * s - rdl * c],
        [0.5 * rw * c + rdl * s, 0.5 * rw * c - rdl * s],
    ])


def wheel_axis(params: RobotParams) -> np.ndarray:
    """Lambda: heading rate per wheel rate, (-rw/L, rw/L)."""
    rl = params.wheel_radius / params.axle_length
    return np.array([-rl, rl])


def build_kinematics(pose: Pose, u, params: RobotParams) -> KinematicMatrices:
    A = build_A(pose, params)
    lam = wheel_axis(params)
    theta_dot = lam[0] * u[0] + lam[1] * u[1]
    A_dot = _dA_dtheta(pose, params) * theta_dot
    gamma = np.vstack([A, lam])
    gamma_dot = np.vstack([A_dot, np.zeros(2)])
    return KinematicMatrices(A=A, A_dot=A_dot, Lambda=lam, Gamma=gamma,
                             Gamma_dot=gamma_dot)


def unicycle_rates(u, params: RobotParams) -> tuple[float, float]:
    """Translational and angular speed implied by the wheel rates."""
    rw = params.wheel_radius
    v = 0.5 * rw * (u[0] + u[1])
    w = rw * (u[1] - u[0]) / params.axle_length
    return v, w


def step(state: RobotState, u_dot, dt: float, params: RobotParams,
         u_bounds: tuple[float, float] | None = None) -> RobotState:
    """One Euler step: wheel rates first (clamped), then the pose under the
    updated rates with the Jacobians held at the old pose."""
    u1 = state.u[0] + u_dot[0] * dt
    u2 = state.u[1] + u_dot[1] * dt
    if u_bounds is not None:
        lo, hi = u_bounds
        u1 = min(max(u1, lo), hi)
        u2 = min(max(u2, lo), hi)
    A = build_A(state.pose, params)
    lam = wheel_axis(params)
    x = state.pose.x + (A[0, 0] * u1 + A[0, 1] * u2) * dt
    y = state.pose.y + (A[1, 0] * u1 + A[1, 1] * u2) * dt
    theta = wrap_angle(state.pose.theta + (lam[0] * u1 + lam[1] * u2) * dt)
    return RobotState(pose=Pose(x, y, theta), u=(u1, u2))


def _segment_table(ref: ReferenceSpec):
    pts = [(ref.start.x, ref.start.y)]
    if ref.kind == "waypoints":
        pts.extend(ref.waypoints)
    else:
        pts.append(ref.goal)
    lengths = []
    for a, b in zip(pts[:-1], pts[1:]):
        lengths.append(math.hypot(b[0] - a[0], b[1] - a[1]))
    return pts, lengths


def reference_at(ref: ReferenceSpec, t: float) -> ReferenceSample:
    """Sample the reference: constant speed along the path, heading equal to
    the segment heading, zero acceleration; holds at the goal past duration."""
    pts, lengths = _segment_table(ref)
    total = sum(lengths)
    if total == 0.0:
        pose = np.array([ref.start.x, ref.start.y, ref.start.theta])
        return ReferenceSample(P_d=pose, V_d=np.zeros(3), a_hat_d=np.zeros(3))
    speed = total / ref.duration
    final_heading = None
    for a, b, seg_len in zip(pts[:-1], pts[1:], lengths):
        if seg_len > 0.0:
            final_heading = math.atan2(b[1] - a[1], b[0] - a[0])
    if t >= ref.duration:
        return ReferenceSample(
            P_d=np.array([ref.goal[0], ref.goal[1], final_heading]),
            V_d=np.zeros(3), a_hat_d=np.zeros(3))
    s = speed * t
    acc = 0.0
    for a, b, seg_len in zip(pts[:-1], pts[1:], lengths):
        if s <= acc + seg_len and seg_len > 0.0:
            frac = (s - acc) / seg_len
            heading = math.atan2(b[1] - a[1], b[0] - a[0])
            p = np.array([a[0] + frac * (b[0] - a[0]),
                          a[1] + frac * (b[1] - a[1]),
                          heading])
            v = np.array([speed * math.cos(heading), speed * math.sin(heading), 0.0])
            return ReferenceSample(P_d=p, V_d=v, a_hat_d=np.zeros(3))
        acc += seg_len
    return ReferenceSample(
        P_d=np.array([ref.goal[0], ref.goal[1], final_heading]),
        V_d=np.zeros(3), a_hat_d=np.zeros(3))


def reference_table(ref: ReferenceSpec, ts: np.ndarray) -> np.ndarray:
    """Stack reference_at over a time grid -> (len(ts), 9) of P_d|V_d|a_hat_d.

    Single-segment paths take a vectorized branch that reproduces the scalar
    arithmetic bit for bit.
    """
    ts = np.asarray(ts, dtype=float)
    out = np.zeros((len(ts), 9))
    if ref.kind == "waypoints":
        for row, t in enumerate(ts):
            sample = reference_at(ref, float(t))
            out[row, 0:3] = sample.P_d
            out[row, 3:6] = sample.V_d
        return out
    ax, ay = ref.start.x, ref.start.y
    bx, by = ref.goal
    seg_len = math.hypot(bx - ax, by - ay)
    if seg_len == 0.0:
        out[:, 0] = ax
        out[:, 1] = ay
        out[:, 2] = ref.start.theta
        return out
    speed = seg_len / ref.duration
    heading = math.atan2(by - ay, bx - ax)
    s = speed * ts
    interp = (ts < ref.duration) & (s <= seg_len)
    frac = s[interp] / seg_len
    out[:, 0] = bx
    out[:, 1] = by
    out[:, 2] = heading
    out[interp, 0] = ax + frac * (bx - ax)
    out[interp, 1] = ay + frac * (by - ay)
    out[interp, 3] = speed * math.cos(heading)
    out[interp, 4] = speed * math.sin(heading)
    return out
