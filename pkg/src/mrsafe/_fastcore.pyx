# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernel: the per-step pipeline (Jacobians, constraint
rows, nominal commands, dual active-set QP, Euler integration) as one C loop.
Mirrors the pure-Python engine formula for formula; the QP follows qp.solve's
algorithm with identical tolerances and tie-breaking.
"""

import numpy as np

from libc.math cimport atan2, cos, fabs, hypot, remainder, sin, sqrt, INFINITY

cdef double TWO_PI = 6.283185307179586476925287
cdef double PI = 3.14159265358979323846
cdef double FEAS_TOL = 1e-10
cdef double DUAL_TOL = 1e-12
cdef double DEP_TOL = 1e-12
cdef double MULT_TOL = 1e-9
cdef double DEADBAND = 1e-9


cdef inline double wrap_angle(double theta) noexcept nogil:
    cdef double w = remainder(theta, TWO_PI)
    if w <= -PI:
        w += TWO_PI
    return w


cdef int lu_solve(double[:, ::1] A, double[::1] b, int n) noexcept nogil:
    """In-place LU with partial pivoting; solves A x = b, writing x into b.
    Returns 0, or -1 when numerically singular."""
    cdef int i, j, k, p
    cdef double maxv, tmp, factor
    for k in range(n):
        maxv = fabs(A[k, k])
        p = k
        for i in range(k + 1, n):
            if fabs(A[i, k]) > maxv:
                maxv = fabs(A[i, k])
                p = i
        if maxv < 1e-300:
            return -1
        if p != k:
            for j in range(n):
                tmp = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
        for i in range(k + 1, n):
            factor = A[i, k] / A[k, k]
            if factor != 0.0:
                A[i, k] = factor
                for j in range(k + 1, n):
                    A[i, j] -= factor * A[k, j]
                b[i] -= factor * b[k]
            else:
                A[i, k] = 0.0
    for k in range(n - 1, -1, -1):
        tmp = b[k]
        for j in range(k + 1, n):
            tmp -= A[k, j] * b[j]
        b[k] = tmp / A[k, k]
    return 0


cdef class _QPWork:
    """Scratch buffers for the stacked QP over 2N wheel accelerations."""
    cdef int nn, mmax, totmax
    cdef double[:, ::1] H          # (nn, nn) dense, block diagonal
    cdef double[:, ::1] Hinvb      # (N, 4) per-robot 2x2 inverse blocks
    cdef double[::1] f
    cdef double[:, ::1] G          # (mmax, nn) dense row normals
    cdef double[::1] h
    cdef double[::1] z
    cdef int[::1] working
    cdef double[::1] mu
    cdef double[::1] npbuf, wbuf, zdir, r, ntw, rhs
    cdef double[:, ::1] kkt
    cdef double[:, ::1] HiN
    cdef double[:, ::1] M
    cdef int[::1] free_idx
    cdef int[::1] fixed_kind       # per var: -1 free, 0 lower, 1 upper
    cdef double lb, ub
    cdef int m

    def __init__(self, int n_robots, int mmax):
        cdef int nn = 2 * n_robots
        self.nn = nn
        self.mmax = mmax
        self.totmax = mmax + 2 * nn
        self.H = np.zeros((nn, nn))
        self.Hinvb = np.zeros((n_robots, 4))
        self.f = np.zeros(nn)
        self.G = np.zeros((mmax, nn))
        self.h = np.zeros(mmax)
        self.z = np.zeros(nn)
        self.working = np.zeros(nn + 1, dtype=np.int32)
        self.mu = np.zeros(nn + 1)
        self.npbuf = np.zeros(nn)
        self.wbuf = np.zeros(nn)
        self.zdir = np.zeros(nn)
        self.r = np.zeros(nn + 1)
        self.ntw = np.zeros(nn + 1)
        self.rhs = np.zeros(2 * nn + 1)
        self.kkt = np.zeros((2 * nn + 1, 2 * nn + 1))
        self.HiN = np.zeros((nn, nn + 1))
        self.M = np.zeros((nn + 1, nn + 1))
        self.free_idx = np.zeros(nn, dtype=np.int32)
        self.fixed_kind = np.zeros(nn, dtype=np.int32)

    cdef void normal(self, int k, double[::1] out) noexcept nogil:
        cdef int i
        for i in range(self.nn):
            out[i] = 0.0
        if k < self.m:
            for i in range(self.nn):
                out[i] = self.G[k, i]
        elif k < self.m + self.nn:
            out[k - self.m] = -1.0
        else:
            out[k - self.m - self.nn] = 1.0

    cdef double offset(self, int k) noexcept nogil:
        if k < self.m:
            return self.h[k]
        if k < self.m + self.nn:
            return -self.lb
        return self.ub

    cdef void hinv_apply(self, double[::1] x, double[::1] out) noexcept nogil:
        cdef int i
        for i in range(self.nn // 2):
            out[2 * i] = self.Hinvb[i, 0] * x[2 * i] + self.Hinvb[i, 1] * x[2 * i + 1]
            out[2 * i + 1] = self.Hinvb[i, 2] * x[2 * i] + self.Hinvb[i, 3] * x[2 * i + 1]

    cdef int eqp(self, int q) noexcept nogil:
        """Equality-constrained solve for working[:q]; writes z and mu[:q].
        Returns 0, or -1 when the working normals are dependent."""
        cdef int nn = self.nn, m = self.m
        cdef int i, j, k, idx, nf = 0, nr = 0, pos, a, b
        cdef double acc
        for i in range(nn):
            self.fixed_kind[i] = -1
        for idx in range(q):
            k = self.working[idx]
            if k >= m + nn:
                self.fixed_kind[k - m - nn] = 1
            elif k >= m:
                self.fixed_kind[k - m] = 0
        for i in range(nn):
            if self.fixed_kind[i] < 0:
                self.free_idx[nf] = i
                nf += 1
            else:
                self.z[i] = self.lb if self.fixed_kind[i] == 0 else self.ub
        for idx in range(q):
            if self.working[idx] < m:
                nr += 1
        if nr > nf:
            return -1
        cdef int dim = nf + nr
        if nf > 0:
            for i in range(nf):
                a = self.free_idx[i]
                for j in range(nf):
                    self.kkt[i, j] = self.H[a, self.free_idx[j]]
                for j in range(nf, dim):
                    self.kkt[i, j] = 0.0
                acc = -self.f[a]
                for j in range(nn):
                    if self.fixed_kind[j] >= 0:
                        acc -= self.H[a, j] * self.z[j]
                self.rhs[i] = acc
            pos = nf
            for idx in range(q):
                k = self.working[idx]
                if k < m:
                    for j in range(nf):
                        self.kkt[pos, j] = self.G[k, self.free_idx[j]]
                        self.kkt[j, pos] = self.G[k, self.free_idx[j]]
                    for j in range(nf, dim):
                        self.kkt[pos, j] = 0.0
                    acc = self.h[k]
                    for j in range(nn):
                        if self.fixed_kind[j] >= 0:
                            acc -= self.G[k, j] * self.z[j]
                    self.rhs[pos] = acc
                    pos += 1
            if lu_solve(self.kkt[:dim, :dim], self.rhs[:dim], dim) != 0:
                return -1
            for i in range(nf):
                self.z[self.free_idx[i]] = self.rhs[i]
        else:
            # every variable pinned by a bound; rows must already hold
            pos = 0
            for idx in range(q):
                k = self.working[idx]
                if k < m:
                    acc = -self.h[k]
                    for j in range(nn):
                        acc += self.G[k, j] * self.z[j]
                    if fabs(acc) > 1e-9:
                        return -1
        # gradient H z + f + G' mu_rows; bound multipliers read from it
        pos = nf
        for i in range(nn):
            self.wbuf[i] = self.f[i]
            for j in range(nn):
                self.wbuf[i] += self.H[i, j] * self.z[j]
        pos = nf
        cdef int rowpos = 0
        for idx in range(q):
            k = self.working[idx]
            if k < m:
                if nf > 0:
                    self.mu[idx] = self.rhs[nf + rowpos]
                else:
                    self.mu[idx] = 0.0
                for i in range(nn):
                    self.wbuf[i] += self.G[k, i] * self.mu[idx]
                rowpos += 1
        for idx in range(q):
            k = self.working[idx]
            if k < m:
                continue
            if k < m + nn:
                self.mu[idx] = self.wbuf[k - m]
            else:
                self.mu[idx] = -self.wbuf[k - m - nn]
        return 0

    cdef int cold_start(self) noexcept nogil:
        """Box-clamped unconstrained minimizer; returns working-set size."""
        cdef int i, q = 0
        for i in range(self.nn):
            self.wbuf[i] = -self.f[i]
        self.hinv_apply(self.wbuf, self.zdir)
        for i in range(self.nn):
            if self.zdir[i] < self.lb:
                self.working[q] = self.m + i
                q += 1
            elif self.zdir[i] > self.ub:
                self.working[q] = self.m + self.nn + i
                q += 1
        return q

    cdef int violations(self, int q, double* worst_v) noexcept nogil:
        """Most violated non-working constraint, ties to the lowest index."""
        cdef int i, k, idx, worst_k = -1
        cdef bint inset
        cdef double v, gz
        worst_v[0] = 0.0
        for k in range(self.m):
            inset = False
            for idx in range(q):
                if self.working[idx] == k:
                    inset = True
                    break
            if inset:
                continue
            gz = -self.h[k]
            for i in range(self.nn):
                gz += self.G[k, i] * self.z[i]
            if gz > worst_v[0]:
                worst_v[0] = gz
                worst_k = k
        for i in range(self.nn):
            v = self.lb - self.z[i]
            if v > worst_v[0]:
                inset = False
                for idx in range(q):
                    if self.working[idx] == self.m + i:
                        inset = True
                        break
                if not inset:
                    worst_v[0] = v
                    worst_k = self.m + i
            v = self.z[i] - self.ub
            if v > worst_v[0]:
                inset = False
                for idx in range(q):
                    if self.working[idx] == self.m + self.nn + i:
                        inset = True
                        break
                if not inset:
                    worst_v[0] = v
                    worst_k = self.m + self.nn + i
        return worst_k

def solve_qp_dense(H, f, lb, ub, G, h, warm=None):
    """Standalone entry for the compiled QP (parity testing against qp.solve).
    Bounds must be uniform scalars, H block diagonal with 2x2 blocks."""
    cdef int n_robots = len(f) // 2
    work = _QPWork(n_robots, max(len(h), 1))
    return _solve_with(work, np.asarray(H, dtype=float), np.asarray(f, dtype=float),
                       float(lb), float(ub), np.asarray(G, dtype=float).reshape(-1, len(f)),
                       np.asarray(h, dtype=float), warm)


cdef _solve_with(_QPWork work, double[:, ::1] H, double[::1] f, double lb,
                 double ub, double[:, ::1] G, double[::1] h, warm):
    cdef int nn = work.nn
    cdef int m = G.shape[0]
    cdef int i, j
    work.m = m
    work.lb = lb
    work.ub = ub
    for i in range(nn):
        work.f[i] = f[i]
        for j in range(nn):
            work.H[i, j] = H[i, j]
    for i in range(m):
        work.h[i] = h[i]
        for j in range(nn):
            work.G[i, j] = G[i, j]
    cdef double det, a00, a01, a10, a11
    for i in range(nn // 2):
        a00 = H[2 * i, 2 * i]
        a01 = H[2 * i, 2 * i + 1]
        a10 = H[2 * i + 1, 2 * i]
        a11 = H[2 * i + 1, 2 * i + 1]
        det = a00 * a11 - a01 * a10
        work.Hinvb[i, 0] = a11 / det
        work.Hinvb[i, 1] = -a01 / det
        work.Hinvb[i, 2] = -a10 / det
        work.Hinvb[i, 3] = a00 / det
    cdef int q = 0
    if warm is not None:
        for k in warm:
            if 0 <= k < m + 2 * nn and q < nn:
                work.working[q] = k
                q += 1
    cdef int iters = 0
    cdef int status = qp_main(work, &q, 50 * (nn + m) if m else 50 * nn, &iters)
    if status == -2:
        raise ArithmeticError("iteration cap reached in compiled QP")
    z = np.asarray(work.z[:nn]).copy()
    row_mult = np.zeros(m)
    lb_mult = np.zeros(nn)
    ub_mult = np.zeros(nn)
    active = []
    if status == 0:
        for i in range(q):
            k = work.working[i]
            active.append(int(k))
            val = max(work.mu[i], 0.0)
            if k < m:
                row_mult[k] = val
            elif k < m + nn:
                lb_mult[k - m] = val
            else:
                ub_mult[k - m - nn] = val
        return ("optimal", z, row_mult, lb_mult, ub_mult, tuple(active))
    return ("infeasible", None, row_mult, lb_mult, ub_mult, ())


cdef int qp_main(_QPWork work, int* q_io, int max_iter, int* iters_out) noexcept nogil:
    """Dual active-set iteration; returns 0 optimal, 1 infeasible, -2 cap.

    On entry working[:q] holds a warm guess; on exit (optimal) working[:q]
    and mu[:q] describe the active constraints.
    """
    cdef int nn = work.nn, m = work.m
    cdef int q = q_io[0]
    cdef int iterations = 0, i, j, k, idx, worst_k, block_idx, drop_idx
    cdef double worst_v, drop_val, s_p, denom, tau_full, tau_block, bound, u_p, acc
    # de-duplicate / drop conflicting warm entries is the caller's concern;
    # a singular warm set falls back to the cold start
    if work.eqp(q) != 0:
        q = work.cold_start()
        if work.eqp(q) != 0:
            q_io[0] = q
            iters_out[0] = iterations
            return -2
    # dual-feasibility phase: drop negative multipliers
    while iterations < max_iter:
        drop_idx = -1
        drop_val = -DUAL_TOL
        for idx in range(q):
            if work.mu[idx] < drop_val:
                drop_val = work.mu[idx]
                drop_idx = idx
        if drop_idx < 0:
            break
        iterations += 1
        for idx in range(drop_idx, q - 1):
            work.working[idx] = work.working[idx + 1]
        q -= 1
        if work.eqp(q) != 0:
            q_io[0] = q
            iters_out[0] = iterations
            return -2
    cdef double[::1] np_ = work.npbuf
    cdef double[::1] w = work.wbuf
    while iterations < max_iter:
        iterations += 1
        worst_k = work.violations(q, &worst_v)
        if worst_v <= FEAS_TOL:
            q_io[0] = q
            iters_out[0] = iterations
            return 0
        work.normal(worst_k, np_)
        u_p = 0.0
        while iterations < max_iter:
            # step directions: w = Hinv n_p; HiN columns; M = N' Hinv N
            work.hinv_apply(np_, w)
            if q == 0:
                denom = 0.0
                for i in range(nn):
                    denom += np_[i] * w[i]
                    work.zdir[i] = -w[i]
            else:
                for idx in range(q):
                    work.normal(work.working[idx], work.rhs[:nn])
                    work.hinv_apply(work.rhs[:nn], work.zdir)  # zdir as scratch col
                    for i in range(nn):
                        work.HiN[i, idx] = work.zdir[i]
                for idx in range(q):
                    acc = 0.0
                    work.normal(work.working[idx], work.rhs[:nn])
                    for i in range(nn):
                        acc += work.rhs[i] * w[i]
                    work.ntw[idx] = acc           # N' w
                for i in range(q):
                    work.normal(work.working[i], work.rhs[:nn])
                    for j in range(q):
                        acc = 0.0
                        for k in range(nn):
                            acc += work.rhs[k] * work.HiN[k, j]
                        work.M[i, j] = acc
                for i in range(q):
                    work.r[i] = work.ntw[i]
                for i in range(q):
                    for j in range(q):
                        work.kkt[i, j] = work.M[i, j]
                if lu_solve(work.kkt[:q, :q], work.r[:q], q) != 0:
                    q_io[0] = q
                    iters_out[0] = iterations
                    return -2
                for i in range(nn):
                    acc = w[i]
                    for j in range(q):
                        acc -= work.HiN[i, j] * work.r[j]
                    work.zdir[i] = -acc
                denom = 0.0
                for i in range(nn):
                    denom += np_[i] * (-work.zdir[i])
            if denom < 0.0 and denom > -1e-13:
                denom = 0.0
            s_p = -work.offset(worst_k)
            for i in range(nn):
                s_p += np_[i] * work.z[i]
            tau_full = INFINITY
            if denom > DEP_TOL:
                tau_full = s_p / denom
            tau_block = INFINITY
            block_idx = -1
            for idx in range(q):
                if work.r[idx] > DEP_TOL:
                    bound = work.mu[idx] / work.r[idx]
                    if bound < tau_block:
                        tau_block = bound
                        block_idx = idx
            if tau_full == INFINITY and tau_block == INFINITY:
                q_io[0] = q
                iters_out[0] = iterations
                return 1
            if tau_full <= tau_block:
                for i in range(nn):
                    work.z[i] += tau_full * work.zdir[i]
                for idx in range(q):
                    work.mu[idx] -= tau_full * work.r[idx]
                u_p += tau_full
                work.working[q] = worst_k
                work.mu[q] = u_p
                q += 1
                break
            if tau_full != INFINITY:
                for i in range(nn):
                    work.z[i] += tau_block * work.zdir[i]
            for idx in range(q):
                work.mu[idx] -= tau_block * work.r[idx]
            u_p += tau_block
            for idx in range(block_idx, q - 1):
                work.working[idx] = work.working[idx + 1]
                work.mu[idx] = work.mu[idx + 1]
            q -= 1
            iterations += 1
    q_io[0] = q
    iters_out[0] = iterations
    return -2


def run_sim(double[:, ::1] pose0, double[:, ::1] u0, double[:, ::1] params,
            double kappa1, double kappa2, double kappa3, double kappa4,
            double lam, double zeta_gain, double q_escape,
            double dt, long n_steps, double sensing_radius,
            double udot_lo, double udot_hi, double u_lo, double u_hi,
            long[::1] pair_i, long[::1] pair_j, signed char[::1] pair_obs,
            double[::1] rho_eff,
            double[:, ::1] obs_p0, double[:, ::1] obs_v,
            double[:, :, ::1] ref_table, double[:, :, ::1] noise,
            int zeta_fixed_point, int force_g,
            double[:, :, ::1] log_pose, double[:, :, ::1] log_u,
            double[:, :, ::1] log_udot, double[:, ::1] log_err,
            double[:, ::1] log_hmin, int[:, ::1] log_active,
            double[:, ::1] log_zeta, signed char[:, ::1] log_g,
            double[:, ::1] log_pair_dist, double[:, ::1] log_pair_h,
            signed char[::1] log_status, int[::1] log_iters):
    cdef int N = pose0.shape[0]
    cdef int nn = 2 * N
    cdef int P = pair_i.shape[0]
    cdef int n_obs = obs_p0.shape[0]
    cdef int records = <int> n_steps + 1

    cdef _QPWork work = _QPWork(N, max(P, 1))

    # per-robot scratch
    cdef double[:, ::1] A_ = np.zeros((N, 4))
    cdef double[:, ::1] Ad_ = np.zeros((N, 4))
    cdef double[:, ::1] lamb_ = np.zeros((N, 2))
    cdef double[:, ::1] vel_ = np.zeros((N, 2))
    cdef double[:, ::1] adu_ = np.zeros((N, 2))
    cdef double[:, ::1] pose_ = np.array(pose0, dtype=float)
    cdef double[:, ::1] u_ = np.array(u0, dtype=float)
    cdef double[:, ::1] obsp_ = np.zeros((max(n_obs, 1), 2))
    cdef double[::1] minb_ = np.zeros(N)
    cdef int[::1] has_nb_ = np.zeros(N, dtype=np.int32)
    cdef int[::1] prev_act_ = np.zeros(N, dtype=np.int32)
    cdef int[::1] fresh_act_ = np.zeros(N, dtype=np.int32)
    cdef double[:, ::1] dzr_ = np.zeros((N, 3))
    cdef double[::1] xi_n_ = np.zeros(N)
    cdef int[::1] g_ = np.zeros(N, dtype=np.int32)
    cdef double[::1] zeta_ = np.zeros(N)
    cdef double[::1] udot_ = np.zeros(nn)

    # row scratch (in-range pairs only)
    cdef int[::1] row_pair_ = np.zeros(P if P else 1, dtype=np.int32)
    cdef double[::1] row_mult_ = np.zeros(P if P else 1)

    cdef int[::1] warm_ = np.zeros(nn + 1, dtype=np.int32)
    cdef int warm_q = 0
    cdef int warm_m = -1

    cdef int step, rec, i, j, k, p_idx, m_rows, status, qq, idx
    cdef int solve_iters = 0
    cdef double t, rw, L, d, c, s, rdl, th_dot
    cdef double pix, piy, pjx, pjy, vjx, vjy, relx, rely, dvx, dvy
    cdef double dist, pv, d2, vv, p_adot, slack, rhs_v, h_v, scale
    cdef double dzx, dzy, dzt, ex, ey, et, qc, qs, zv
    cdef double bearing, u1n, u2n
    cdef double refx, refy, refth, refvx, refvy, refvt, refax, refay, refat
    cdef double axx, axy, ayy
    cdef int second_pass, pass_idx
    cdef double wx, wy

    for step in range(records):
        rec = step
        t = step * dt
        # obstacle positions, closed form
        for k in range(n_obs):
            obsp_[k, 0] = obs_p0[k, 0] + obs_v[k, 0] * t
            obsp_[k, 1] = obs_p0[k, 1] + obs_v[k, 1] * t
        # Jacobians and velocity products
        for i in range(N):
            rw = params[i, 0]
            L = params[i, 1]
            d = params[i, 2]
            c = cos(pose_[i, 2])
            s = sin(pose_[i, 2])
            rdl = rw * d / L
            A_[i, 0] = 0.5 * rw * c + rdl * s
            A_[i, 1] = 0.5 * rw * c - rdl * s
            A_[i, 2] = 0.5 * rw * s - rdl * c
            A_[i, 3] = 0.5 * rw * s + rdl * c
            lamb_[i, 0] = -rw / L
            lamb_[i, 1] = rw / L
            th_dot = lamb_[i, 0] * u_[i, 0] + lamb_[i, 1] * u_[i, 1]
            Ad_[i, 0] = (-0.5 * rw * s + rdl * c) * th_dot
            Ad_[i, 1] = (-0.5 * rw * s - rdl * c) * th_dot
            Ad_[i, 2] = (0.5 * rw * c + rdl * s) * th_dot
            Ad_[i, 3] = (0.5 * rw * c - rdl * s) * th_dot
            vel_[i, 0] = A_[i, 0] * u_[i, 0] + A_[i, 1] * u_[i, 1]
            vel_[i, 1] = A_[i, 2] * u_[i, 0] + A_[i, 3] * u_[i, 1]
            adu_[i, 0] = Ad_[i, 0] * u_[i, 0] + Ad_[i, 1] * u_[i, 1]
            adu_[i, 1] = Ad_[i, 2] * u_[i, 0] + Ad_[i, 3] * u_[i, 1]
            minb_[i] = 0.0
            has_nb_[i] = 0
            log_hmin[rec, i] = INFINITY
        # pair geometry, true for the log, perceived for the rows
        m_rows = 0
        for p_idx in range(P):
            i = <int> pair_i[p_idx]
            j = <int> pair_j[p_idx]
            pix = pose_[i, 0]
            piy = pose_[i, 1]
            if pair_obs[p_idx]:
                pjx = obsp_[j, 0]
                pjy = obsp_[j, 1]
                vjx = obs_v[j, 0]
                vjy = obs_v[j, 1]
            else:
                pjx = pose_[j, 0]
                pjy = pose_[j, 1]
                vjx = vel_[j, 0]
                vjy = vel_[j, 1]
            relx = pix - pjx
            rely = piy - pjy
            dist = hypot(relx, rely)
            dvx = vel_[i, 0] - vjx
            dvy = vel_[i, 1] - vjy
            log_pair_dist[rec, p_idx] = dist
            pv = relx * dvx + rely * dvy
            d2 = relx * relx + rely * rely
            log_pair_h[rec, p_idx] = (2.0 * lam * pv
                                      + kappa1 * (lam * d2 - rho_eff[p_idx] * rho_eff[p_idx]))
            if dist > sensing_radius:
                continue
            # perceived partner position (entity noise), ego exact
            if pair_obs[p_idx]:
                pjx += noise[rec, N + j, 0]
                pjy += noise[rec, N + j, 1]
            else:
                pjx += noise[rec, j, 0]
                pjy += noise[rec, j, 1]
            relx = pix - pjx
            rely = piy - pjy
            pv = relx * dvx + rely * dvy
            d2 = relx * relx + rely * rely
            vv = dvx * dvx + dvy * dvy
            if pair_obs[p_idx]:
                p_adot = relx * adu_[i, 0] + rely * adu_[i, 1]
            else:
                p_adot = relx * (adu_[i, 0] - adu_[j, 0]) + rely * (adu_[i, 1] - adu_[j, 1])
            slack = lam * d2 - rho_eff[p_idx] * rho_eff[p_idx]
            rhs_v = 2.0 * lam * (vv + p_adot + (kappa1 + kappa2) * pv) + kappa1 * kappa2 * slack
            h_v = 2.0 * lam * pv + kappa1 * slack
            scale = -2.0 * lam
            for k in range(nn):
                work.G[m_rows, k] = 0.0
            work.G[m_rows, 2 * i] = scale * (relx * A_[i, 0] + rely * A_[i, 2])
            work.G[m_rows, 2 * i + 1] = scale * (relx * A_[i, 1] + rely * A_[i, 3])
            if not pair_obs[p_idx]:
                work.G[m_rows, 2 * j] = -scale * (relx * A_[j, 0] + rely * A_[j, 2])
                work.G[m_rows, 2 * j + 1] = -scale * (relx * A_[j, 1] + rely * A_[j, 3])
            work.h[m_rows] = rhs_v
            row_pair_[m_rows] = p_idx
            if h_v < log_hmin[rec, i]:
                log_hmin[rec, i] = h_v
            if not pair_obs[p_idx]:
                if h_v < log_hmin[rec, j]:
                    log_hmin[rec, j] = h_v
            # bearings in the body frame, measured partner position
            bearing = wrap_angle(atan2(pjy - piy, pjx - pix) - pose_[i, 2])
            if fabs(bearing) < DEADBAND:
                bearing = 0.0
            if has_nb_[i] == 0 or bearing < minb_[i]:
                minb_[i] = bearing
            has_nb_[i] = 1
            if not pair_obs[p_idx]:
                # the partner senses robot i at i's measured position
                pix = pose_[i, 0] + noise[rec, i, 0]
                piy = pose_[i, 1] + noise[rec, i, 1]
                bearing = wrap_angle(atan2(piy - pose_[j, 1], pix - pose_[j, 0])
                                     - pose_[j, 2])
                if fabs(bearing) < DEADBAND:
                    bearing = 0.0
                if has_nb_[j] == 0 or bearing < minb_[j]:
                    minb_[j] = bearing
                has_nb_[j] = 1
            m_rows += 1
        work.m = m_rows
        work.lb = udot_lo
        work.ub = udot_hi

        # stacked objective: H blocks Gamma' Gamma, f = -Gamma' dzr
        for i in range(N):
            axx = A_[i, 0] * A_[i, 0] + A_[i, 2] * A_[i, 2] + lamb_[i, 0] * lamb_[i, 0]
            axy = A_[i, 0] * A_[i, 1] + A_[i, 2] * A_[i, 3] + lamb_[i, 0] * lamb_[i, 1]
            ayy = A_[i, 1] * A_[i, 1] + A_[i, 3] * A_[i, 3] + lamb_[i, 1] * lamb_[i, 1]
            for k in range(nn):
                work.H[2 * i, k] = 0.0
                work.H[2 * i + 1, k] = 0.0
            work.H[2 * i, 2 * i] = axx
            work.H[2 * i, 2 * i + 1] = axy
            work.H[2 * i + 1, 2 * i] = axy
            work.H[2 * i + 1, 2 * i + 1] = ayy
            dist = axx * ayy - axy * axy
            work.Hinvb[i, 0] = ayy / dist
            work.Hinvb[i, 1] = -axy / dist
            work.Hinvb[i, 2] = -axy / dist
            work.Hinvb[i, 3] = axx / dist

        second_pass = 1 if zeta_fixed_point else 0
        for pass_idx in range(2):
            for i in range(N):
                if pass_idx == 0:
                    zv = zeta_gain if prev_act_[i] else 0.0
                else:
                    zv = zeta_gain if fresh_act_[i] else 0.0
                zeta_[i] = zv
                if force_g != 0:
                    g_[i] = force_g
                elif has_nb_[i]:
                    g_[i] = -1 if minb_[i] >= 0.0 else 1
                else:
                    g_[i] = 1
                refx = ref_table[rec, i, 0]
                refy = ref_table[rec, i, 1]
                refth = ref_table[rec, i, 2]
                refvx = ref_table[rec, i, 3]
                refvy = ref_table[rec, i, 4]
                refvt = ref_table[rec, i, 5]
                refax = ref_table[rec, i, 6]
                refay = ref_table[rec, i, 7]
                refat = ref_table[rec, i, 8]
                ex = pose_[i, 0] - refx
                ey = pose_[i, 1] - refy
                et = wrap_angle(pose_[i, 2] - refth)
                xi_n_[i] = sqrt(ex * ex + ey * ey + et * et)
                th_dot = lamb_[i, 0] * u_[i, 0] + lamb_[i, 1] * u_[i, 1]
                # velocity error and auxiliary error coordinate
                wx = vel_[i, 0] - refvx
                wy = vel_[i, 1] - refvy
                dzt = th_dot - refvt
                dzx = refax - adu_[i, 0] - (kappa3 + kappa4) * wx - kappa3 * kappa4 * ex
                dzy = refay - adu_[i, 1] - (kappa3 + kappa4) * wy - kappa3 * kappa4 * ey
                dzr_[i, 2] = refat - (kappa3 + kappa4) * dzt - kappa3 * kappa4 * et
                if zv != 0.0:
                    qc = cos(g_[i] * q_escape)
                    qs = sin(g_[i] * q_escape)
                    wx += kappa3 * ex
                    wy += kappa3 * ey
                    dzx -= zv * (qc * wx - qs * wy)
                    dzy -= zv * (qs * wx + qc * wy)
                dzr_[i, 0] = dzx
                dzr_[i, 1] = dzy
                work.f[2 * i] = -(A_[i, 0] * dzx + A_[i, 2] * dzy + lamb_[i, 0] * dzr_[i, 2])
                work.f[2 * i + 1] = -(A_[i, 1] * dzx + A_[i, 3] * dzy + lamb_[i, 1] * dzr_[i, 2])

            # warm start only valid while the constraint layout is unchanged
            qq = 0
            if warm_m == m_rows:
                for idx in range(warm_q):
                    work.working[idx] = warm_[idx]
                qq = warm_q
            status = qp_main(work, &qq, 50 * (nn + m_rows), &solve_iters)
            if status == -2:
                return 1000000 + step
            if status == 0:
                for i in range(nn):
                    udot_[i] = work.z[i]
                for idx in range(m_rows):
                    row_mult_[idx] = 0.0
                for idx in range(qq):
                    k = work.working[idx]
                    if k < m_rows and work.mu[idx] > 0.0:
                        row_mult_[k] = work.mu[idx]
                for i in range(N):
                    fresh_act_[i] = 0
                for idx in range(m_rows):
                    if row_mult_[idx] > MULT_TOL:
                        p_idx = row_pair_[idx]
                        fresh_act_[<int> pair_i[p_idx]] = 1
                        if not pair_obs[p_idx]:
                            fresh_act_[<int> pair_j[p_idx]] = 1
                warm_q = qq
                warm_m = m_rows
                for idx in range(qq):
                    warm_[idx] = work.working[idx]
            else:
                for i in range(N):
                    udot_[2 * i] = -u_[i, 0] / dt
                    udot_[2 * i + 1] = -u_[i, 1] / dt
                    if udot_[2 * i] < udot_lo:
                        udot_[2 * i] = udot_lo
                    elif udot_[2 * i] > udot_hi:
                        udot_[2 * i] = udot_hi
                    if udot_[2 * i + 1] < udot_lo:
                        udot_[2 * i + 1] = udot_lo
                    elif udot_[2 * i + 1] > udot_hi:
                        udot_[2 * i + 1] = udot_hi
                    fresh_act_[i] = 0
                warm_q = 0
                warm_m = -1
                log_status[rec] = 1
            if second_pass and status == 0 and pass_idx == 0:
                # re-solve once with this step's multiplier pattern
                for i in range(N):
                    if fresh_act_[i] != prev_act_[i]:
                        break
                else:
                    break
                continue
            break

        log_iters[rec] = solve_iters
        for i in range(N):
            log_pose[rec, i, 0] = pose_[i, 0]
            log_pose[rec, i, 1] = pose_[i, 1]
            log_pose[rec, i, 2] = pose_[i, 2]
            log_u[rec, i, 0] = u_[i, 0]
            log_u[rec, i, 1] = u_[i, 1]
            log_udot[rec, i, 0] = udot_[2 * i]
            log_udot[rec, i, 1] = udot_[2 * i + 1]
            log_err[rec, i] = xi_n_[i]
            log_zeta[rec, i] = zeta_[i]
            log_g[rec, i] = <signed char> g_[i]
            log_active[rec, i] = 0
        if log_status[rec] == 0:
            for idx in range(m_rows):
                if row_mult_[idx] > MULT_TOL:
                    p_idx = row_pair_[idx]
                    log_active[rec, <int> pair_i[p_idx]] += 1
                    if not pair_obs[p_idx]:
                        log_active[rec, <int> pair_j[p_idx]] += 1
        for i in range(N):
            prev_act_[i] = fresh_act_[i]

        if step < n_steps:
            for i in range(N):
                u1n = u_[i, 0] + udot_[2 * i] * dt
                u2n = u_[i, 1] + udot_[2 * i + 1] * dt
                if u1n < u_lo:
                    u1n = u_lo
                elif u1n > u_hi:
                    u1n = u_hi
                if u2n < u_lo:
                    u2n = u_lo
                elif u2n > u_hi:
                    u2n = u_hi
                pose_[i, 0] += (A_[i, 0] * u1n + A_[i, 1] * u2n) * dt
                pose_[i, 1] += (A_[i, 2] * u1n + A_[i, 3] * u2n) * dt
                pose_[i, 2] = wrap_angle(pose_[i, 2]
                                         + (lamb_[i, 0] * u1n + lamb_[i, 1] * u2n) * dt)
                u_[i, 0] = u1n
                u_[i, 1] = u2n
    return 0
