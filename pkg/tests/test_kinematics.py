import math

import numpy as np
import pytest

from mrsafe import kinematics as kin
from mrsafe.scenario import Pose, ReferenceSpec, RobotParams, RobotState

PARAMS = RobotParams()  # r_w=0.033, L=0.16, d=0.08


def test_build_A_theta_zero():
    A = kin.build_A(Pose(0, 0, 0.0), PARAMS)
    assert A == pytest.approx(np.array([[0.0165, 0.0165], [-0.0165, 0.0165]]))


def test_build_A_theta_half_pi():
    # first row carries the offset terms, second the forward terms
    A = kin.build_A(Pose(0, 0, math.pi / 2), PARAMS)
    assert A == pytest.approx(np.array([[0.0165, -0.0165], [0.0165, 0.0165]]),
                              abs=1e-12)


def test_build_A_determinant_vanishes_with_offset():
    det_ref = PARAMS.wheel_radius ** 2 * PARAMS.offset / PARAMS.axle_length
    for theta in (0.0, 0.7, -2.1):
        A = kin.build_A(Pose(0, 0, theta), PARAMS)
        assert np.linalg.det(A) == pytest.approx(det_ref, rel=1e-12)
    small = RobotParams(offset=1e-9)
    A = kin.build_A(Pose(0, 0, 0.3), small)
    assert abs(np.linalg.det(A)) < 1e-10


def test_A_u_matches_unicycle_rates():
    rng = np.random.default_rng(7)
    for _ in range(200):
        theta = rng.uniform(-math.pi, math.pi)
        u = rng.uniform(-30, 30, 2)
        pose = Pose(rng.uniform(-5, 5), rng.uniform(-5, 5), theta)
        v, w = kin.unicycle_rates(u, PARAMS)
        expected = (v * np.array([math.cos(theta), math.sin(theta)])
                    + PARAMS.offset * w * np.array([-math.sin(theta), math.cos(theta)]))
        assert kin.build_A(pose, PARAMS) @ u == pytest.approx(expected, abs=1e-12)


def test_unicycle_rates_examples():
    assert kin.unicycle_rates((1.0, 1.0), PARAMS) == pytest.approx((0.033, 0.0))
    assert kin.unicycle_rates((-1.0, 1.0), PARAMS) == pytest.approx((0.0, 0.4125))
    assert kin.unicycle_rates((0.0, 0.0), PARAMS) == (0.0, 0.0)


def test_gamma_dot_zero_cases():
    pose = Pose(1.0, -2.0, 0.6)
    mats = kin.build_kinematics(pose, (0.0, 0.0), PARAMS)
    assert np.all(mats.Gamma_dot == 0.0)
    mats = kin.build_kinematics(pose, (3.0, 3.0), PARAMS)  # equal wheels
    assert np.all(mats.Gamma_dot == 0.0)


def test_gamma_dot_finite_difference_oracle():
    # dGamma/dt along theta(t) with theta_dot = Lambda . u
    u = (-4.0, 4.0)
    theta = 0.9
    mats = kin.build_kinematics(Pose(0, 0, theta), u, PARAMS)
    theta_dot = 2 * PARAMS.wheel_radius * 4.0 / PARAMS.axle_length
    assert float(mats.Lambda @ u) == pytest.approx(theta_dot)
    eps = 1e-7
    A_plus = kin.build_A(Pose(0, 0, theta + eps), PARAMS)
    A_minus = kin.build_A(Pose(0, 0, theta - eps), PARAMS)
    fd = (A_plus - A_minus) / (2 * eps) * theta_dot
    assert mats.Gamma_dot[:2] == pytest.approx(fd, abs=1e-7)
    assert np.all(mats.Gamma_dot[2] == 0.0)


def test_gamma_dot_tracks_simulated_heading():
    # first-order match of Gamma finite differences along a simulated run
    rng = np.random.default_rng(3)
    dt = 1e-4
    state = RobotState(pose=Pose(0, 0, 0.2), u=(6.0, -2.0))
    worst = 0.0
    for _ in range(200):
        u_dot = rng.uniform(-10, 10, 2)
        mats = kin.build_kinematics(state.pose, state.u, PARAMS)
        nxt = kin.step(state, u_dot, dt, PARAMS)
        gamma_next = kin.build_kinematics(nxt.pose, nxt.u, PARAMS).Gamma
        fd = (gamma_next - mats.Gamma) / dt
        worst = max(worst, float(np.max(np.abs(fd - mats.Gamma_dot))))
        state = nxt
    assert worst <= 10 * dt


def test_step_equilibrium_and_straight_line():
    state = RobotState(pose=Pose(0, 0, 0), u=(0.0, 0.0))
    nxt = kin.step(state, (0.0, 0.0), 0.01, PARAMS)
    assert nxt == state
    state = RobotState(pose=Pose(0, 0, 0), u=(1.0, 1.0))
    nxt = kin.step(state, (0.0, 0.0), 1.0, PARAMS)
    assert nxt.pose.x == pytest.approx(0.033)
    assert nxt.pose.y == pytest.approx(0.0, abs=1e-15)
    assert nxt.pose.theta == pytest.approx(0.0, abs=1e-15)


def test_step_wheel_rate_reversal():
    state = RobotState(pose=Pose(0.5, -0.25, 1.1), u=(3.0, -7.0))
    u_dot = (2.5, 4.0)
    fwd = kin.step(state, u_dot, 0.01, PARAMS)
    back = kin.step(fwd, (-u_dot[0], -u_dot[1]), 0.01, PARAMS)
    assert back.u == pytest.approx(state.u, abs=1e-15)


def test_step_clamps_wheel_rates():
    state = RobotState(pose=Pose(0, 0, 0), u=(0.9, -0.9))
    nxt = kin.step(state, (100.0, -100.0), 0.1, PARAMS, u_bounds=(-1.0, 1.0))
    assert nxt.u == (1.0, -1.0)


def test_euler_first_order_convergence():
    # halving dt should halve the end-pose error against a dt/10 reference
    def integrate(dt, steps, u_dot_fn):
        state = RobotState(pose=Pose(0, 0, 0.3), u=(4.0, 5.0))
        t = 0.0
        for _ in range(steps):
            state = kin.step(state, u_dot_fn(t), dt, PARAMS)
            t += dt
        return np.array([state.pose.x, state.pose.y, state.pose.theta])

    u_dot_fn = lambda t: (3.0 * math.sin(2 * t), -2.0 * math.cos(3 * t))
    t_end = 1.0
    ref = integrate(t_end / 10000, 10000, u_dot_fn)
    err_coarse = np.linalg.norm(integrate(t_end / 250, 250, u_dot_fn) - ref)
    err_fine = np.linalg.norm(integrate(t_end / 500, 500, u_dot_fn) - ref)
    ratio = err_coarse / err_fine
    assert 1.8 <= ratio <= 2.2


def test_reference_straight_line():
    ref = ReferenceSpec(kind="straight", start=Pose(0, 0, 0), goal=(8.0, 0.0),
                        duration=16.0)
    s = kin.reference_at(ref, 8.0)
    assert s.P_d == pytest.approx([4.0, 0.0, 0.0])
    assert s.V_d == pytest.approx([0.5, 0.0, 0.0])
    assert np.all(s.a_hat_d == 0.0)
    s0 = kin.reference_at(ref, 0.0)
    assert s0.P_d == pytest.approx([0.0, 0.0, 0.0])
    late = kin.reference_at(ref, 32.0)
    assert late.P_d == pytest.approx([8.0, 0.0, 0.0])
    assert np.all(late.V_d == 0.0)


def test_reference_table_matches_scalar():
    ref = ReferenceSpec(kind="straight", start=Pose(1.0, -2.0, 0.0),
                        goal=(4.0, 2.0), duration=10.0)
    ts = np.array([0.0, 0.37, 5.0, 9.999, 10.0, 15.0])
    table = kin.reference_table(ref, ts)
    for row, t in enumerate(ts):
        s = kin.reference_at(ref, float(t))
        assert np.array_equal(table[row, 0:3], s.P_d)
        assert np.array_equal(table[row, 3:6], s.V_d)


def test_reference_waypoints_piecewise():
    ref = ReferenceSpec(kind="waypoints", start=Pose(0, 0, 0), goal=(1.0, 1.0),
                        duration=2.0, waypoints=((1.0, 0.0), (1.0, 1.0)))
    mid = kin.reference_at(ref, 0.5)  # halfway along the first leg
    assert mid.P_d == pytest.approx([0.5, 0.0, 0.0])
    second = kin.reference_at(ref, 1.5)
    assert second.P_d == pytest.approx([1.0, 0.5, math.pi / 2])
    assert second.V_d == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)
    done = kin.reference_at(ref, 3.0)
    assert done.P_d == pytest.approx([1.0, 1.0, math.pi / 2])
