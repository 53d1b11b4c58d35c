import itertools
import math

import numpy as np
import pytest

from mrsafe import kinematics as kin
from mrsafe import qp, tracking
from mrsafe.scenario import ControlGains, Pose, RobotParams, RobotState

GAINS = ControlGains()
PARAMS = RobotParams()

try:
    from mrsafe import _fastcore
except ImportError:
    _fastcore = None


def problem(H, f, lb, ub, G=None, h=None):
    n = len(f)
    if G is None:
        G = np.zeros((0, n))
        h = np.zeros(0)
    return qp.QPProblem(np.asarray(H, float), np.asarray(f, float),
                        np.asarray(lb, float), np.asarray(ub, float),
                        np.asarray(G, float), np.asarray(h, float))


def random_feasible(rng, n=None, m=None):
    n = n or int(rng.integers(2, 7))
    m = m if m is not None else int(rng.integers(0, 7))
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    f = 2.0 * rng.normal(size=n)
    lb = -rng.uniform(0.3, 2.0, n)
    ub = rng.uniform(0.3, 2.0, n)
    interior = lb + (ub - lb) * rng.uniform(0.2, 0.8, n)
    G = rng.normal(size=(m, n))
    h = G @ interior + rng.uniform(0.01, 1.0, m)
    return problem(H, f, lb, ub, G, h)


def brute_force(p: qp.QPProblem):
    """Enumerate candidate active sets; keep the best feasible dual-feasible
    KKT point.  Independent of the solver's iteration."""
    n, m = p.n, p.m
    total = m + 2 * n
    normals = [qp._constraint_normal(p, k) for k in range(total)]
    offsets = [qp._constraint_offset(p, k) for k in range(total)]
    best = (math.inf, None, None, None)
    for size in range(n + 1):
        for subset in itertools.combinations(range(total), size):
            box_vars = [(k - m) % n for k in subset if k >= m]
            if len(set(box_vars)) != len(box_vars):
                continue
            res = qp._eqp(p, list(subset))
            if res is None:
                continue
            z, mu = res
            if mu.size and np.min(mu) < -1e-9:
                continue
            worst = max((float(normals[k] @ z) - offsets[k] for k in range(total)),
                        default=0.0)
            if worst > 1e-9:
                continue
            obj = p.objective(z)
            if obj < best[0] - 1e-12:
                best = (obj, z, subset, mu)
    return best


def test_unconstrained_example():
    sol = qp.solve(problem(np.eye(2), [-1.0, 0.0], [-10, -10], [10, 10]))
    assert sol.status == "optimal"
    assert sol.z == pytest.approx([1.0, 0.0])
    assert np.all(sol.multipliers == 0.0)


def test_clamped_coordinate_example():
    sol = qp.solve(problem(np.eye(2), [-1.0, 0.0], [-10, -10], [0.5, 10]))
    assert sol.z == pytest.approx([0.5, 0.0])
    assert sol.ub_multipliers[0] == pytest.approx(0.5)
    assert sol.lb_multipliers == pytest.approx([0.0, 0.0])


def test_halfspace_projection_example():
    # min ||z - (1,1)||^2  s.t. z1 + z2 <= 1  ->  z = (.5, .5), mu = 1
    sol = qp.solve(problem(2.0 * np.eye(2), [-2.0, -2.0], [-10, -10], [10, 10],
                           [[1.0, 1.0]], [1.0]))
    assert sol.z == pytest.approx([0.5, 0.5])
    assert sol.row_multipliers[0] == pytest.approx(1.0)


def test_infeasible_detected():
    sol = qp.solve(problem(np.eye(2), [0.0, 0.0], [-1, -1], [1, 1],
                           [[1.0, 0.0]], [-5.0]))
    assert sol.status == "infeasible"
    assert sol.z is None


def test_oracle_equivalence_and_multiplier_signs():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        p = random_feasible(rng)
        sol = qp.solve(p)
        assert sol.status == "optimal"
        obj_bf, z_bf, _, _ = brute_force(p)
        assert np.max(np.abs(sol.z - z_bf)) <= 1e-8
        assert np.min(sol.multipliers) >= -1e-12
        grad = (p.H @ sol.z + p.f + p.G.T @ sol.row_multipliers
                - sol.lb_multipliers + sol.ub_multipliers)
        assert np.max(np.abs(grad)) <= 1e-8  # stationarity
        # complementary slackness and primal feasibility
        if p.m:
            slack = p.G @ sol.z - p.h
            assert np.max(slack) <= 1e-10
            assert np.max(np.abs(sol.row_multipliers * slack)) <= 1e-8
        assert np.all(sol.z >= p.lb - 1e-10)
        assert np.all(sol.z <= p.ub + 1e-10)


def test_determinism_bit_identical():
    rng = np.random.default_rng(5)
    p = random_feasible(rng, n=4, m=4)
    a = qp.solve(p)
    b = qp.solve(p)
    assert np.array_equal(a.z, b.z)
    assert np.array_equal(a.multipliers, b.multipliers)
    assert a.active_set == b.active_set
    warm = qp.solve(p, warm_start=a.active_set)
    assert np.max(np.abs(warm.z - a.z)) <= 1e-12


def test_objective_monotone_in_rows():
    rng = np.random.default_rng(77)
    for _ in range(50):
        p = random_feasible(rng, m=0)
        interior = 0.5 * (p.lb + p.ub)
        objs = [p.objective(qp.solve(p).z)]
        G = np.zeros((0, p.n))
        h = np.zeros(0)
        for _ in range(4):
            a = rng.normal(size=p.n)
            b = float(a @ interior) + rng.uniform(0.01, 0.5)
            G = np.vstack([G, a])
            h = np.append(h, b)
            grown = problem(p.H, p.f, p.lb, p.ub, G, h)
            objs.append(grown.objective(qp.solve(grown).z))
        assert all(later >= earlier - 1e-10
                   for earlier, later in zip(objs, objs[1:]))


def test_assemble_single_robot_normal_equations():
    state = RobotState(pose=Pose(0, 0, 0.3), u=(1.0, 2.0))
    mats = kin.build_kinematics(state.pose, state.u, PARAMS)
    ref = kin.ReferenceSample(P_d=np.zeros(3), V_d=np.array([0.4, 0.0, 0.0]),
                              a_hat_d=np.zeros(3))
    cmd = tracking.nominal_accel(state, mats, ref, GAINS, 0.0,
                                 tracking.rotation_Q(1, GAINS.q))
    prob, rows = qp.assemble([(mats, cmd)], [], (-1e6, 1e6))
    assert rows == []
    sol = qp.solve(prob)
    expect = np.linalg.solve(mats.Gamma.T @ mats.Gamma, mats.Gamma.T @ cmd.dzr)
    assert sol.z == pytest.approx(expect, abs=1e-9)


def test_assemble_block_structure_and_rows():
    from mrsafe import safety
    states = [RobotState(pose=Pose(0, 0, 0), u=(0, 0)),
              RobotState(pose=Pose(2, 0, math.pi), u=(0, 0))]
    mats = [kin.build_kinematics(s.pose, s.u, PARAMS) for s in states]
    ref = kin.ReferenceSample(P_d=np.zeros(3), V_d=np.zeros(3), a_hat_d=np.zeros(3))
    cmds = [tracking.nominal_accel(s, m, ref, GAINS, 0.0,
                                   tracking.rotation_Q(1, GAINS.q))
            for s, m in zip(states, mats)]
    row = safety.pair_constraint_row(states[0], states[1], mats[0], mats[1],
                                     GAINS, 0.4, 0, 1)
    prob, rows = qp.assemble(list(zip(mats, cmds)), [row], (-20.0, 20.0))
    assert prob.H.shape == (4, 4)
    assert np.all(prob.H[0:2, 2:4] == 0.0)
    assert prob.G.shape == (1, 4)
    assert len(rows) == 1


def test_assemble_rejects_empty():
    with pytest.raises(qp.AssemblyError):
        qp.assemble([], [], (-20.0, 20.0))


def test_problem_validation():
    with pytest.raises(qp.AssemblyError):
        problem([[1.0, 0.9], [0.2, 1.0]], [0.0, 0.0], [-1, -1], [1, 1])
    with pytest.raises(qp.AssemblyError):
        problem(np.zeros((2, 2)), [0.0, 0.0], [-1, -1], [1, 1])
    with pytest.raises(qp.AssemblyError):
        problem(np.eye(2), [0.0, 0.0], [1, -1], [-1, 1])


def test_fallback_brake():
    out = qp.fallback_brake([1.0, 1.0], (-20.0, 20.0), 0.01)
    assert out == pytest.approx([-20.0, -20.0])
    assert np.all(qp.fallback_brake([0.0, 0.0], (-20.0, 20.0), 0.01) == 0.0)
    out = qp.fallback_brake([0.1, 0.0], (-20.0, 20.0), 1.0)
    assert out == pytest.approx([-0.1, 0.0])


@pytest.mark.skipif(_fastcore is None, reason="compiled kernel not built")
def test_compiled_qp_matches_reference():
    rng = np.random.default_rng(31)
    for _ in range(200):
        n_robots = int(rng.integers(1, 4))
        n = 2 * n_robots
        m = int(rng.integers(0, 6))
        # block-diagonal PD Hessian, as the simulator produces
        H = np.zeros((n, n))
        for i in range(n_robots):
            M = rng.normal(size=(2, 2))
            H[2 * i:2 * i + 2, 2 * i:2 * i + 2] = M @ M.T + 0.05 * np.eye(2)
        f = rng.normal(size=n)
        bound = float(rng.uniform(0.5, 3.0))
        interior = rng.uniform(-0.3, 0.3, n)
        G = rng.normal(size=(m, n))
        h = G @ interior + rng.uniform(0.01, 1.0, m)
        p = problem(H, f, [-bound] * n, [bound] * n, G, h)
        ref = qp.solve(p)
        status, z, row_m, lb_m, ub_m, active = _fastcore.solve_qp_dense(
            H, f, -bound, bound, G, h)
        assert status == ref.status == "optimal"
        assert np.max(np.abs(z - ref.z)) <= 1e-9
        if m:
            assert np.max(np.abs(row_m - ref.row_multipliers)) <= 1e-8
