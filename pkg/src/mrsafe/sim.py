"""Closed-loop batch simulation.

Per step: sense (optionally noisy) -> build Jacobians -> assemble pairwise
and obstacle constraint rows -> per-robot nominal command with the deadlock
escape term -> one stacked QP over all wheel accelerations -> Euler step.
The escape intensity uses the previous step's constraint multipliers (the
current step's are only known after the QP the command feeds); a fixed-point
mode re-solves once with fresh multipliers for sensitivity checks.

Two engines produce identical-schema logs: a compiled kernel
(mrsafe._fastcore, used when importable) and a pure-numpy loop built from
the per-operation functions in kinematics/safety/tracking/qp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kinematics, qp, safety, tracking
from .scenario import Pose, ScenarioSpec, wrap_angle

try:
    from . import _fastcore
    HAVE_FASTCORE = True
except ImportError:  # pragma: no cover - depends on the build
    _fastcore = None
    HAVE_FASTCORE = False

MULTIPLIER_TOL = 1e-9  # a constraint counts as active above this
BEARING_DEADBAND = 1e-9  # rad; bearings below float noise snap to dead ahead

CSV_COLUMNS = ("t", "robot", "x", "y", "theta", "u1", "u2", "udot1", "udot2",
               "err_norm", "h_min", "active_count", "zeta", "g")


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    pair: tuple           # ("robot", i, j) or ("obstacle", i, k)
    distance: float
    deficit: float        # rho - distance, > 0


class SimLog:
    """Time-indexed run record.

    Robot-level arrays mirror the CSV schema; pair-level distance/barrier
    series and the per-step QP status are kept in memory (recomputable from
    the robot arrays plus the scenario).  The producing spec rides along so
    metrics can resample references.
    """

    def __init__(self, spec: ScenarioSpec, t, pose, u, udot, err_norm, h_min,
                 active_count, zeta, g, pair_ids=None, pair_dist=None,
                 pair_h=None, qp_status=None, qp_iters=None):
        self.spec = spec
        self.t = t
        self.pose = pose
        self.u = u
        self.udot = udot
        self.err_norm = err_norm
        self.h_min = h_min
        self.active_count = active_count
        self.zeta = zeta
        self.g = g
        self.pair_ids = pair_ids
        self.pair_dist = pair_dist
        self.pair_h = pair_h
        self.qp_status = qp_status
        self.qp_iters = qp_iters

    @property
    def n_records(self) -> int:
        return len(self.t)

    @property
    def n_robots(self) -> int:
        return self.pose.shape[1]

    @property
    def dt(self) -> float:
        return self.spec.dt

    def fallback_steps(self) -> int | None:
        if self.qp_status is None:
            return None
        return int(np.count_nonzero(self.qp_status))

    def speeds(self) -> np.ndarray:
        """Planar speed ||A u|| of every robot at every record."""
        out = np.empty((self.n_records, self.n_robots))
        for i, setup in enumerate(self.spec.robots):
            rw = setup.params.wheel_radius
            rdl = rw * setup.params.offset / setup.params.axle_length
            c = np.cos(self.pose[:, i, 2])
            s = np.sin(self.pose[:, i, 2])
            u1 = self.u[:, i, 0]
            u2 = self.u[:, i, 1]
            vx = (0.5 * rw * c + rdl * s) * u1 + (0.5 * rw * c - rdl * s) * u2
            vy = (0.5 * rw * s - rdl * c) * u1 + (0.5 * rw * s + rdl * c) * u2
            out[:, i] = np.hypot(vx, vy)
        return out

    def to_csv(self, path) -> None:
        from .artifacts import atomic_write_text
        atomic_write_text(path, self.to_csv_text())

    def to_csv_text(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for rec in range(self.n_records):
            t = self.t[rec]
            for i in range(self.n_robots):
                lines.append(
                    f"{t:.9g},{i},"
                    f"{self.pose[rec, i, 0]:.9g},{self.pose[rec, i, 1]:.9g},"
                    f"{self.pose[rec, i, 2]:.9g},"
                    f"{self.u[rec, i, 0]:.9g},{self.u[rec, i, 1]:.9g},"
                    f"{self.udot[rec, i, 0]:.9g},{self.udot[rec, i, 1]:.9g},"
                    f"{self.err_norm[rec, i]:.9g},{self.h_min[rec, i]:.9g},"
                    f"{int(self.active_count[rec, i])},"
                    f"{self.zeta[rec, i]:.9g},{int(self.g[rec, i])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv_text(cls, text: str, spec: ScenarioSpec) -> "SimLog":
        lines = text.strip().split("\n")
        if not lines or lines[0].split(",") != list(CSV_COLUMNS):
            raise ValueError("line 1: expected header " + ",".join(CSV_COLUMNS))
        n = spec.n_robots
        body = lines[1:]
        if len(body) % n != 0:
            raise ValueError(f"line {len(lines)}: record count not a multiple "
                             f"of the robot count {n}")
        records = len(body) // n
        t = np.empty(records)
        pose = np.empty((records, n, 3))
        u = np.empty((records, n, 2))
        udot = np.empty((records, n, 2))
        err_norm = np.empty((records, n))
        h_min = np.empty((records, n))
        active = np.empty((records, n), dtype=np.int32)
        zeta_arr = np.empty((records, n))
        g_arr = np.empty((records, n), dtype=np.int8)
        for ln, line in enumerate(body):
            parts = line.split(",")
            if len(parts) != len(CSV_COLUMNS):
                raise ValueError(f"line {ln + 2}: expected {len(CSV_COLUMNS)} fields")
            try:
                rec, robot = divmod(ln, n)
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"line {ln + 2}: non-numeric field") from None
            if int(vals[1]) != robot:
                raise ValueError(f"line {ln + 2}: robot index out of order")
            if robot == 0:
                t[rec] = vals[0]
            pose[rec, robot] = vals[2:5]
            u[rec, robot] = vals[5:7]
            udot[rec, robot] = vals[7:9]
            err_norm[rec, robot] = vals[9]
            h_min[rec, robot] = vals[10]
            active[rec, robot] = int(vals[11])
            zeta_arr[rec, robot] = vals[12]
            g_arr[rec, robot] = int(vals[13])
        return cls(spec, t, pose, u, udot, err_norm, h_min, active, zeta_arr, g_arr)

    @classmethod
    def from_csv(cls, path, spec: ScenarioSpec) -> "SimLog":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_csv_text(fh.read(), spec)


def candidate_pairs(spec: ScenarioSpec) -> list:
    """All constrainable pairs in deterministic order: robot pairs (i<j)
    first, then robot-obstacle pairs, both lexicographic."""
    pairs = []
    n = spec.n_robots
    for i in range(n):
        for j in range(i + 1, n):
            pairs.append(("robot", i, j))
    for i in range(n):
        for k in range(len(spec.obstacles)):
            pairs.append(("obstacle", i, k))
    return pairs


def pair_rho(spec: ScenarioSpec, pair) -> float:
    kind, i, j = pair
    if kind == "robot":
        return spec.rho(i, j)
    return spec.rho_obstacle(i, j)


def _noise_table(spec: ScenarioSpec, records: int) -> np.ndarray | None:
    """Disk-uniform measurement offsets per entity per record (robots first,
    then obstacles), drawn once so both engines consume identical noise."""
    if not spec.noise.enabled or spec.noise.r_m == 0.0:
        return None
    n_entities = spec.n_robots + len(spec.obstacles)
    rng = np.random.default_rng(spec.rng_seed)
    radius = spec.noise.r_m * np.sqrt(rng.uniform(size=(records, n_entities)))
    angle = rng.uniform(size=(records, n_entities)) * (2.0 * math.pi)
    out = np.empty((records, n_entities, 2))
    out[:, :, 0] = radius * np.cos(angle)
    out[:, :, 1] = radius * np.sin(angle)
    return out


def _reference_tables(spec: ScenarioSpec, ts: np.ndarray) -> np.ndarray:
    table = np.empty((len(ts), spec.n_robots, 9))
    for i, setup in enumerate(spec.robots):
        table[:, i, :] = kinematics.reference_table(setup.reference, ts)
    return table


def run(spec: ScenarioSpec, backend: str = "auto") -> SimLog:
    """Simulate the scenario; deterministic for a given spec and seed.

    backend: "auto" (compiled kernel when built), "fast", or "pure".
    """
    if backend == "auto":
        backend = "fast" if HAVE_FASTCORE else "pure"
    if backend == "fast" and not HAVE_FASTCORE:
        raise RuntimeError("compiled kernel requested but mrsafe._fastcore is not built")
    if backend not in ("fast", "pure"):
        raise ValueError(f"unknown backend {backend!r}")

    steps = spec.n_steps
    records = steps + 1
    ts = np.arange(records) * spec.dt
    pairs = candidate_pairs(spec)
    ref_table = _reference_tables(spec, ts)
    noise = _noise_table(spec, records)

    if backend == "fast":
        log = _run_fast(spec, ts, pairs, ref_table, noise)
    else:
        log = _run_pure(spec, ts, pairs, ref_table, noise)
    return log


def _run_pure(spec, ts, pairs, ref_table, noise) -> SimLog:
    n = spec.n_robots
    records = len(ts)
    margin = spec.rho_margin()
    gains = spec.gains
    dt = spec.dt
    obstacles = spec.obstacles

    t_arr = ts.copy()
    pose_arr = np.zeros((records, n, 3))
    u_arr = np.zeros((records, n, 2))
    udot_arr = np.zeros((records, n, 2))
    err_arr = np.zeros((records, n))
    hmin_arr = np.full((records, n), math.inf)
    active_arr = np.zeros((records, n), dtype=np.int32)
    zeta_arr = np.zeros((records, n))
    g_arr = np.ones((records, n), dtype=np.int8)
    pair_dist = np.zeros((records, len(pairs)))
    pair_h = np.zeros((records, len(pairs)))
    status_arr = np.zeros(records, dtype=np.int8)
    iters_arr = np.zeros(records, dtype=np.int32)

    states = [setup.state for setup in spec.robots]
    params = [setup.params for setup in spec.robots]
    rho_eff = np.array([pair_rho(spec, p) + margin for p in pairs])
    prev_active = np.zeros(n, dtype=bool)
    warm = None
    warm_rows = -1  # warm indices are only meaningful while the layout holds

    for rec in range(records):
        t = t_arr[rec]
        obs_pos = [obs.position_at(t) for obs in obstacles]
        mats = [kinematics.build_kinematics(states[i].pose, states[i].u, params[i])
                for i in range(n)]

        measured = [np.array([s.pose.x, s.pose.y]) for s in states]
        measured += [np.asarray(p) for p in obs_pos]
        if noise is not None:
            measured = [m + noise[rec, e] for e, m in enumerate(measured)]

        # true pair geometry for the log
        for p_idx, (kind, i, j) in enumerate(pairs):
            pi = np.array([states[i].pose.x, states[i].pose.y])
            vi = mats[i].A @ np.asarray(states[i].u)
            if kind == "robot":
                pj = np.array([states[j].pose.x, states[j].pose.y])
                vj = mats[j].A @ np.asarray(states[j].u)
            else:
                pj = np.asarray(obs_pos[j])
                vj = np.asarray(obstacles[j].velocity)
            rel = pi - pj
            pair_dist[rec, p_idx] = math.hypot(rel[0], rel[1])
            pair_h[rec, p_idx] = safety.barrier_value(
                gains.lam, rel, vi - vj, gains.kappa1, rho_eff[p_idx])

        # constraint rows for in-range pairs, from perceived positions
        rows = []
        row_pairs = []
        for p_idx, (kind, i, j) in enumerate(pairs):
            if pair_dist[rec, p_idx] > spec.sensing_radius:
                continue
            pi = (states[i].pose.x, states[i].pose.y)
            if kind == "robot":
                pj = measured[j]
                row = safety.pair_constraint_row(
                    states[i], states[j], mats[i], mats[j], gains,
                    rho_eff[p_idx], i, j,
                    p_ij=(pi[0] - pj[0], pi[1] - pj[1]))
            else:
                pj = measured[n + j]
                row = safety.obstacle_constraint_row(
                    states[i], mats[i], pj, obstacles[j].velocity, gains,
                    rho_eff[p_idx], i, obstacle_index=j,
                    p_ik=(pi[0] - pj[0], pi[1] - pj[1]))
            rows.append(row)
            row_pairs.append((kind, i, j))

        # barrier diagnostics per robot (controller view)
        for row in rows:
            hmin_arr[rec, row.i] = min(hmin_arr[rec, row.i], row.h)
            if row.j is not None:
                hmin_arr[rec, row.j] = min(hmin_arr[rec, row.j], row.h)

        def build_commands(active_flags):
            commands = []
            for i in range(n):
                zeta_val = tracking.zeta(bool(active_flags[i]), gains.zeta_gain)
                neighbors = []
                for kind, a, b in row_pairs:
                    if a == i:
                        other = measured[b] if kind == "robot" else measured[n + b]
                    elif kind == "robot" and b == i:
                        other = measured[a]
                    else:
                        continue
                    neighbors.append(other)
                if spec.force_escape_side is not None:
                    g = spec.force_escape_side
                elif neighbors:
                    pr = (states[i].pose.x, states[i].pose.y)
                    bearings = [wrap_angle(tracking.bearing_angle(pr, p_o)
                                           - states[i].pose.theta)
                                for p_o in neighbors]
                    # exactly-head-on pairs: float noise must not pick the
                    # side; snap to 0 so the >= 0 tie rule binds both peers
                    bearings = [0.0 if abs(b) < BEARING_DEADBAND else b
                                for b in bearings]
                    g = tracking.escape_sign(bearings)
                else:
                    g = 1
                Q = tracking.rotation_Q(g, gains.q)
                ref = kinematics.ReferenceSample(
                    P_d=ref_table[rec, i, 0:3], V_d=ref_table[rec, i, 3:6],
                    a_hat_d=ref_table[rec, i, 6:9])
                commands.append(tracking.nominal_accel(
                    states[i], mats[i], ref, gains, zeta_val, Q, g=g))
            return commands

        if warm_rows != len(rows):
            warm = None

        def solve_once(commands):
            problem, _ = qp.assemble([(mats[i], commands[i]) for i in range(n)],
                                     rows, spec.udot_bounds)
            return qp.solve(problem, warm_start=warm)

        try:
            commands = build_commands(prev_active)
            solution = solve_once(commands)
            if solution.status == "optimal" and spec.zeta_fixed_point:
                fresh = _row_activity(solution, rows, n)
                if not np.array_equal(fresh, prev_active):
                    commands = build_commands(fresh)
                    solution = solve_once(commands)
        except (qp.QPNumericalError, qp.AssemblyError) as exc:
            exc.args = (f"step {rec} (t={t:.4f} s): {exc.args[0]}",) + exc.args[1:]
            raise

        if solution.status == "optimal":
            udot = solution.z.reshape(n, 2)
            warm = solution.active_set
            warm_rows = len(rows)
            prev_active = _row_activity(solution, rows, n)
            for row, mult in zip(rows, solution.row_multipliers):
                if mult > MULTIPLIER_TOL:
                    active_arr[rec, row.i] += 1
                    if row.j is not None:
                        active_arr[rec, row.j] += 1
            iters_arr[rec] = solution.iterations
        else:
            u_stack = np.array([s.u for s in states]).reshape(-1)
            udot = qp.fallback_brake(u_stack, spec.udot_bounds, dt).reshape(n, 2)
            warm = None
            warm_rows = -1
            prev_active = np.zeros(n, dtype=bool)
            status_arr[rec] = 1
            iters_arr[rec] = solution.iterations

        for i in range(n):
            pose_arr[rec, i] = (states[i].pose.x, states[i].pose.y, states[i].pose.theta)
            u_arr[rec, i] = states[i].u
            udot_arr[rec, i] = udot[i]
            err_arr[rec, i] = float(np.linalg.norm(commands[i].xi))
            zeta_arr[rec, i] = gains.zeta_gain if commands[i].zeta_active else 0.0
            g_arr[rec, i] = commands[i].g

        if rec + 1 < records:
            states = [kinematics.step(states[i], udot[i], dt, params[i], spec.u_bounds)
                      for i in range(n)]

    return SimLog(spec, t_arr, pose_arr, u_arr, udot_arr, err_arr, hmin_arr,
                  active_arr, zeta_arr, g_arr, pairs, pair_dist, pair_h,
                  status_arr, iters_arr)


def _row_activity(solution, rows, n) -> np.ndarray:
    flags = np.zeros(n, dtype=bool)
    for row, mult in zip(rows, solution.row_multipliers):
        if mult > MULTIPLIER_TOL:
            flags[row.i] = True
            if row.j is not None:
                flags[row.j] = True
    return flags


def _run_fast(spec, ts, pairs, ref_table, noise) -> SimLog:
    n = spec.n_robots
    records = len(ts)
    n_pairs = len(pairs)
    margin = spec.rho_margin()

    pose0 = np.array([[s.state.pose.x, s.state.pose.y, s.state.pose.theta]
                      for s in spec.robots])
    u0 = np.array([list(s.state.u) for s in spec.robots])
    params = np.array([[s.params.wheel_radius, s.params.axle_length,
                        s.params.offset, s.params.body_radius]
                       for s in spec.robots])
    pair_i = np.array([p[1] for p in pairs], dtype=np.int64)
    pair_j = np.array([p[2] for p in pairs], dtype=np.int64)
    pair_obs = np.array([1 if p[0] == "obstacle" else 0 for p in pairs], dtype=np.int8)
    rho_eff = np.array([pair_rho(spec, p) + margin for p in pairs])
    n_obs = len(spec.obstacles)
    obs_p0 = np.array([o.position for o in spec.obstacles]).reshape(n_obs, 2)
    obs_v = np.array([o.velocity for o in spec.obstacles]).reshape(n_obs, 2)
    if noise is None:
        noise = np.zeros((records, n + n_obs, 2))
    u_lo, u_hi = (-math.inf, math.inf) if spec.u_bounds is None else spec.u_bounds

    pose_arr = np.zeros((records, n, 3))
    u_arr = np.zeros((records, n, 2))
    udot_arr = np.zeros((records, n, 2))
    err_arr = np.zeros((records, n))
    hmin_arr = np.zeros((records, n))
    active_arr = np.zeros((records, n), dtype=np.int32)
    zeta_arr = np.zeros((records, n))
    g_arr = np.zeros((records, n), dtype=np.int8)
    pair_dist = np.zeros((records, n_pairs))
    pair_h = np.zeros((records, n_pairs))
    status_arr = np.zeros(records, dtype=np.int8)
    iters_arr = np.zeros(records, dtype=np.int32)

    rc = _fastcore.run_sim(
        pose0, u0, params,
        spec.gains.kappa1, spec.gains.kappa2, spec.gains.kappa3, spec.gains.kappa4,
        spec.gains.lam, spec.gains.zeta_gain, spec.gains.q,
        spec.dt, records - 1, spec.sensing_radius,
        float(spec.udot_bounds[0]), float(spec.udot_bounds[1]),
        float(u_lo), float(u_hi),
        pair_i, pair_j, pair_obs, rho_eff,
        obs_p0, obs_v, ref_table, noise,
        1 if spec.zeta_fixed_point else 0,
        0 if spec.force_escape_side is None else spec.force_escape_side,
        pose_arr, u_arr, udot_arr, err_arr, hmin_arr, active_arr, zeta_arr,
        g_arr, pair_dist, pair_h, status_arr, iters_arr)
    if rc != 0:
        step = int(rc) - 1000000
        raise qp.QPNumericalError(
            f"step {step} (t={step * spec.dt:.4f} s): working-set iteration cap "
            "in the compiled kernel", 2 * n, n_pairs, 0, math.nan)

    return SimLog(spec, ts.copy(), pose_arr, u_arr, udot_arr, err_arr,
                  hmin_arr, active_arr, zeta_arr, g_arr, pairs, pair_dist,
                  pair_h, status_arr, iters_arr)


def audit_collisions(log: SimLog, spec: ScenarioSpec | None = None) -> list:
    """Scan a log for true-radius violations (strict: touching is safe).

    Distances are recomputed from logged poses and the obstacles' closed-form
    motion; constraint-side inflation and measurement noise never enter."""
    spec = spec or log.spec
    events = []
    pairs = candidate_pairs(spec)
    for rec in range(log.n_records):
        t = float(log.t[rec])
        for pair in pairs:
            kind, i, j = pair
            pi = log.pose[rec, i, 0:2]
            if kind == "robot":
                pj = log.pose[rec, j, 0:2]
                rho = spec.rho(i, j)
            else:
                pj = np.asarray(spec.obstacles[j].position_at(t))
                rho = spec.rho_obstacle(i, j)
            dist = math.hypot(pi[0] - pj[0], pi[1] - pj[1])
            if dist < rho:
                events.append(CollisionEvent(t=t, pair=pair, distance=dist,
                                             deficit=rho - dist))
    return events


def pair_series(log: SimLog, spec: ScenarioSpec | None = None):
    """(pairs, distances, barriers) recomputed from robot-level data; used
    when a log was loaded from CSV and lacks the in-memory pair arrays."""
    spec = spec or log.spec
    if log.pair_ids is not None:
        return log.pair_ids, log.pair_dist, log.pair_h
    pairs = candidate_pairs(spec)
    records = log.n_records
    dist = np.zeros((records, len(pairs)))
    h = np.zeros((records, len(pairs)))
    margin = spec.rho_margin()
    gains = spec.gains
    for rec in range(records):
        t = float(log.t[rec])
        vel = []
        for i, setup in enumerate(spec.robots):
            pose = Pose(*log.pose[rec, i])
            A = kinematics.build_A(pose, setup.params)
            vel.append(A @ log.u[rec, i])
        for p_idx, (kind, i, j) in enumerate(pairs):
            pi = log.pose[rec, i, 0:2]
            vi = vel[i]
            if kind == "robot":
                pj = log.pose[rec, j, 0:2]
                vj = vel[j]
                rho = spec.rho(i, j) + margin
            else:
                pj = np.asarray(spec.obstacles[j].position_at(t))
                vj = np.asarray(spec.obstacles[j].velocity)
                rho = spec.rho_obstacle(i, j) + margin
            rel = pi - pj
            dist[rec, p_idx] = math.hypot(rel[0], rel[1])
            h[rec, p_idx] = safety.barrier_value(gains.lam, rel, vi - vj,
                                                 gains.kappa1, rho)
    return pairs, dist, h
