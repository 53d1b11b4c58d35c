"""Small dense strictly-convex QP with box bounds and inequality rows.

    minimize    0.5 z' H z + f' z
    subject to  lb <= z <= ub,   G z <= h

Solved by a working-set iteration: start from the box-clamped unconstrained
minimizer, repeatedly solve the equality-constrained KKT system for the
current working set, add the most violated constraint or drop the most
negative multiplier (lowest index breaks ties, which makes runs
bit-reproducible).  Infeasibility is certified when a violated constraint's
normal is a nonpositive combination of the working normals.  Multipliers are
returned for every row and bound, zero when inactive.

Constraint indexing everywhere: rows 0..m-1, lower bounds m..m+n-1, upper
bounds m+n..m+2n-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_FEAS_TOL = 1e-10
_DUAL_TOL = 1e-12
_DEP_TOL = 1e-12


class AssemblyError(ValueError):
    """Raised when a stacked problem cannot be formed (singular block)."""


class QPNumericalError(ArithmeticError):
    """Working-set iteration failed to terminate; carries diagnostics."""

    def __init__(self, message, n, m, iterations, worst_violation):
        super().__init__(f"{message} (n={n}, m={m}, iterations={iterations}, "
                         f"worst violation={worst_violation:.3e})")
        self.n = n
        self.m = m
        self.iterations = iterations
        self.worst_violation = worst_violation


@dataclass
class QPProblem:
    H: np.ndarray
    f: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    G: np.ndarray   # (m, n), may be empty
    h: np.ndarray   # (m,)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        n = self.f.shape[0]
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-10:
            raise AssemblyError("H must be symmetric")
        if np.linalg.eigvalsh(self.H)[0] <= 1e-10:
            raise AssemblyError("H must be positive definite (min eig > 1e-10)")
        if not np.all(self.lb < self.ub):
            raise AssemblyError("box bounds must satisfy lb < ub componentwise")

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return 0.5 * float(z @ self.H @ z) + float(self.f @ z)


@dataclass
class QPSolution:
    status: str                    # "optimal" | "infeasible"
    z: np.ndarray | None
    row_multipliers: np.ndarray
    lb_multipliers: np.ndarray
    ub_multipliers: np.ndarray
    iterations: int
    active_set: tuple = ()

    @property
    def multipliers(self) -> np.ndarray:
        """All multipliers in constraint-index order (rows, lb, ub)."""
        return np.concatenate([self.row_multipliers, self.lb_multipliers,
                               self.ub_multipliers])


def _constraint_normal(problem: QPProblem, k: int) -> np.ndarray:
    n, m = problem.n, problem.m
    if k < m:
        return problem.G[k]
    normal = np.zeros(n)
    if k < m + n:
        normal[k - m] = -1.0
    else:
        normal[k - m - n] = 1.0
    return normal


def _constraint_offset(problem: QPProblem, k: int) -> float:
    n, m = problem.n, problem.m
    if k < m:
        return problem.h[k]
    if k < m + n:
        return -problem.lb[k - m]
    return problem.ub[k - m - n]


def _eqp(problem: QPProblem, working: list):
    """Solve with the working constraints as equalities.

    Returns (z, mu_working) or None when the working normals are dependent.
    Box members fix their variable; rows enter a reduced KKT system over the
    free variables.
    """
    n, m = problem.n, problem.m
    fixed_value = {}
    rows = []
    for k in working:
        if k < m:
            rows.append(k)
        elif k < m + n:
            fixed_value[k - m] = problem.lb[k - m]
        else:
            fixed_value[k - m - n] = problem.ub[k - m - n]
    free = [i for i in range(n) if i not in fixed_value]
    nf = len(free)
    nr = len(rows)
    if nr > nf:
        return None
    z = np.zeros(n)
    for i, val in fixed_value.items():
        z[i] = val
    mu = np.zeros(len(working))
    if nf > 0:
        Hff = problem.H[np.ix_(free, free)]
        rhs_top = -problem.f[free]
        if fixed_value:
            fixed_idx = list(fixed_value)
            rhs_top = rhs_top - problem.H[np.ix_(free, fixed_idx)] @ z[fixed_idx]
        if nr:
            Gf = problem.G[np.ix_(rows, free)]
            rhs_bot = problem.h[rows] - problem.G[rows] @ z  # z holds only fixed values here
            K = np.zeros((nf + nr, nf + nr))
            K[:nf, :nf] = Hff
            K[:nf, nf:] = Gf.T
            K[nf:, :nf] = Gf
            rhs = np.concatenate([rhs_top, rhs_bot])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(sol)):
                return None
            z[free] = sol[:nf]
            mu_rows = sol[nf:]
        else:
            z[free] = np.linalg.solve(Hff, rhs_top)
            mu_rows = np.zeros(0)
    else:
        if nr:
            # all variables fixed; rows must hold exactly, else dependent/conflicting
            if np.max(np.abs(problem.G[rows] @ z - problem.h[rows]), initial=0.0) > 1e-9:
                return None
            mu_rows = np.zeros(nr)
        else:
            mu_rows = np.zeros(0)
    grad = problem.H @ z + problem.f
    if nr:
        grad = grad + problem.G[rows].T @ mu_rows
    row_pos = 0
    for idx, k in enumerate(working):
        if k < m:
            mu[idx] = mu_rows[row_pos]
            row_pos += 1
        elif k < m + n:
            mu[idx] = grad[k - m]
        else:
            mu[idx] = -grad[k - m - n]
    return z, mu


def _violations(problem: QPProblem, z: np.ndarray, working: set) -> tuple:
    """Worst violated non-working constraint (index, amount), or (-1, 0.0)."""
    n, m = problem.n, problem.m
    worst_k = -1
    worst_v = 0.0
    if m:
        gz = problem.G @ z - problem.h
        for k in range(m):
            if k not in working and gz[k] > worst_v:
                worst_v = gz[k]
                worst_k = k
    for i in range(n):
        v = problem.lb[i] - z[i]
        if m + i not in working and v > worst_v:
            worst_v = v
            worst_k = m + i
        v = z[i] - problem.ub[i]
        if m + n + i not in working and v > worst_v:
            worst_v = v
            worst_k = m + n + i
    return worst_k, worst_v


def _cold_working_set(problem: QPProblem) -> list:
    z0 = np.linalg.solve(problem.H, -problem.f)
    working = []
    for i in range(problem.n):
        if z0[i] < problem.lb[i]:
            working.append(problem.m + i)
        elif z0[i] > problem.ub[i]:
            working.append(problem.m + problem.n + i)
    return working


def _box_conflict(problem: QPProblem, working: list, k: int) -> bool:
    n, m = problem.n, problem.m
    if k < m:
        return False
    var = (k - m) % n
    for j in working:
        if j >= m and (j - m) % n == var:
            return True
    return False


def solve(problem: QPProblem, warm_start=None) -> QPSolution:
    """Solve the QP; returns status "optimal" with z and all multipliers, or
    "infeasible".  Raises QPNumericalError only at the iteration cap.

    Dual working-set iteration: keep (z, mu >= 0) stationary with the working
    constraints tight, repeatedly drive the most violated constraint's
    multiplier up from zero, stepping z along the constrained Newton
    direction and dropping whichever working constraint's multiplier hits
    zero first.  With H strictly convex this terminates; a violated
    constraint whose normal is a nonpositive combination of the working
    normals certifies an empty feasible set.
    """
    n, m = problem.n, problem.m
    max_iter = 50 * (n + m)
    total = m + 2 * n

    working: list = []
    if warm_start:
        for k in warm_start:
            if 0 <= k < total and k not in working and not _box_conflict(problem, working, k):
                working.append(k)
    else:
        working = _cold_working_set(problem)
    res = _eqp(problem, working)
    if res is None:
        working = _cold_working_set(problem)
        res = _eqp(problem, working)

    iterations = 0
    # make the start dual-feasible: drop negative multipliers
    z, mu = res
    mu = list(mu)
    while iterations < max_iter:
        drop_idx = -1
        drop_val = -_DUAL_TOL
        for idx in range(len(working)):
            if mu[idx] < drop_val:
                drop_val = mu[idx]
                drop_idx = idx
        if drop_idx < 0:
            break
        iterations += 1
        working = working[:drop_idx] + working[drop_idx + 1:]
        res = _eqp(problem, working)
        if res is None:  # cannot happen when drops only shrink the set
            raise QPNumericalError("singular working set after drop",
                                   n, m, iterations, 0.0)
        z, mu = res
        mu = list(mu)

    normals = [_constraint_normal(problem, k) for k in working]
    last_violation = 0.0
    while iterations < max_iter:
        iterations += 1
        worst_k, worst_v = _violations(problem, z, set(working))
        if worst_v <= _FEAS_TOL:
            return _finish(problem, z, working, mu, iterations)
        last_violation = worst_v
        n_p = _constraint_normal(problem, worst_k)
        b_p = _constraint_offset(problem, worst_k)
        u_p = 0.0
        # inner loop: raise the new constraint's multiplier until it is tight
        while iterations < max_iter:
            step = _step_directions(problem, normals, n_p)
            if step is None:
                raise QPNumericalError("singular working-set metric",
                                       n, m, iterations, worst_v)
            zdir, r, denom = step
            s_p = float(n_p @ z) - b_p
            tau_full = s_p / denom if denom > _DEP_TOL else math.inf
            tau_block = math.inf
            block_idx = -1
            for idx in range(len(working)):
                if r[idx] > _DEP_TOL:
                    bound = mu[idx] / r[idx]
                    if bound < tau_block:
                        tau_block = bound
                        block_idx = idx
            if math.isinf(tau_full) and math.isinf(tau_block):
                return QPSolution(status="infeasible", z=None,
                                  row_multipliers=np.zeros(m),
                                  lb_multipliers=np.zeros(n),
                                  ub_multipliers=np.zeros(n),
                                  iterations=iterations)
            if tau_full <= tau_block:
                z = z + tau_full * zdir
                for idx in range(len(working)):
                    mu[idx] -= tau_full * r[idx]
                u_p += tau_full
                working.append(worst_k)
                normals.append(n_p)
                mu.append(u_p)
                break
            # partial (or pure dual) step: a working multiplier hit zero
            if not math.isinf(tau_full):
                z = z + tau_block * zdir
            for idx in range(len(working)):
                mu[idx] -= tau_block * r[idx]
            u_p += tau_block
            working.pop(block_idx)
            normals.pop(block_idx)
            mu.pop(block_idx)
            iterations += 1
    raise QPNumericalError("iteration cap reached", n, m, iterations, last_violation)


def _step_directions(problem: QPProblem, normals: list, n_p: np.ndarray):
    """Directions when raising the incoming constraint's multiplier.

    Returns (zdir, r, denom): primal direction dz/dtau, working-multiplier
    rates du/dtau, and the violation decay rate -ds_p/dtau >= 0."""
    try:
        w = np.linalg.solve(problem.H, n_p)
    except np.linalg.LinAlgError:
        return None
    q = len(normals)
    if q == 0:
        denom = float(n_p @ w)
        return -w, np.zeros(0), denom
    N = np.stack(normals, axis=1)           # (n, q)
    HiN = np.linalg.solve(problem.H, N)     # (n, q)
    M = N.T @ HiN                           # (q, q), PD when normals independent
    try:
        r = np.linalg.solve(M, N.T @ w)
    except np.linalg.LinAlgError:
        return None
    zdir = -(w - HiN @ r)
    denom = float(n_p @ w) - float((N.T @ w) @ r)
    if denom < 0.0 and denom > -1e-13:
        denom = 0.0
    return zdir, r, denom


def _finish(problem: QPProblem, z, working, mu, iterations) -> QPSolution:
    n, m = problem.n, problem.m
    row_mult = np.zeros(m)
    lb_mult = np.zeros(n)
    ub_mult = np.zeros(n)
    for idx, k in enumerate(working):
        value = max(float(mu[idx]), 0.0)
        if k < m:
            row_mult[k] = value
        elif k < m + n:
            lb_mult[k - m] = value
        else:
            ub_mult[k - m - n] = value
    return QPSolution(status="optimal", z=np.asarray(z, dtype=float),
                      row_multipliers=row_mult, lb_multipliers=lb_mult,
                      ub_multipliers=ub_mult, iterations=iterations,
                      active_set=tuple(working))


def assemble(per_robot, rows, udot_bounds) -> tuple:
    """Stack the per-robot least-squares objectives and constraint rows into
    one QP over the 2N wheel accelerations.

    per_robot: sequence of (KinematicMatrices, NominalCommand).
    Returns (QPProblem, row_list) with rows in the given order.
    """
    n_robots = len(per_robot)
    if n_robots < 1:
        raise AssemblyError("need at least one robot")
    dim = 2 * n_robots
    H = np.zeros((dim, dim))
    f = np.zeros(dim)
    for i, (mats, cmd) in enumerate(per_robot):
        blk = mats.Gamma.T @ mats.Gamma
        tr = blk[0, 0] + blk[1, 1]
        det = blk[0, 0] * blk[1, 1] - blk[0, 1] * blk[1, 0]
        min_eig = 0.5 * (tr - math.sqrt(max(tr * tr - 4.0 * det, 0.0)))
        if min_eig <= 1e-10:
            raise AssemblyError(f"objective block for robot {i} is singular")
        H[2 * i:2 * i + 2, 2 * i:2 * i + 2] = blk
        f[2 * i:2 * i + 2] = -(mats.Gamma.T @ cmd.dzr)
    rows = list(rows)
    if rows:
        G = np.stack([row.dense(n_robots) for row in rows])
        h = np.array([row.rhs for row in rows])
    else:
        G = np.zeros((0, dim))
        h = np.zeros(0)
    lb = np.full(dim, float(udot_bounds[0]))
    ub = np.full(dim, float(udot_bounds[1]))
    return QPProblem(H=H, f=f, lb=lb, ub=ub, G=G, h=h), rows


def fallback_brake(u_stack: np.ndarray, udot_bounds, dt: float) -> np.ndarray:
    """Maximal deceleration toward zero wheel speed, used when the safety QP
    reports an empty feasible set."""
    return np.clip(-np.asarray(u_stack, dtype=float) / dt,
                   float(udot_bounds[0]), float(udot_bounds[1]))
