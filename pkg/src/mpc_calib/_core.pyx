# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: sparse LDL' factorization, ADMM loop, RK4 plant stepping.

Mirrors ``_pycore`` exactly at the Python level.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, fabs, isfinite, INFINITY

cnp.import_array()

BACKEND = "compiled"

cdef enum:
    C_SOLVED = 1
    C_MAX_ITER = 2
    C_NUMERICAL_ERROR = -1

SOLVED = C_SOLVED
MAX_ITER = C_MAX_ITER
NUMERICAL_ERROR = C_NUMERICAL_ERROR

ctypedef cnp.int64_t idx_t


class FactorizationError(ArithmeticError):
    pass


cdef class LdlFactor:
    """LDL' factorization of a quasi-definite matrix (upper CSC input).

    Elimination-tree based up-looking factorization without pivoting; the
    caller supplies a fill-reducing permutation.
    """

    cdef public idx_t n
    cdef public idx_t n_positive
    cdef idx_t[::1] Lp
    cdef idx_t[::1] Li
    cdef double[::1] Lx
    cdef double[::1] Dinv
    cdef idx_t[::1] perm
    cdef double[::1] work

    def __init__(self, Kp, Ki, Kx, perm):
        cdef idx_t[::1] Ap = np.ascontiguousarray(Kp, dtype=np.int64)
        cdef idx_t[::1] Ai = np.ascontiguousarray(Ki, dtype=np.int64)
        cdef double[::1] Ax = np.ascontiguousarray(Kx, dtype=np.float64)
        cdef idx_t n = Ap.shape[0] - 1
        self.n = n
        self.perm = np.ascontiguousarray(perm, dtype=np.int64)
        self.work = np.zeros(n)

        cdef idx_t[::1] etree = np.empty(n, dtype=np.int64)
        cdef idx_t[::1] Lnz = np.zeros(n, dtype=np.int64)
        cdef idx_t[::1] mark = np.empty(n, dtype=np.int64)
        cdef idx_t i, j, p, k, total
        for i in range(n):
            etree[i] = -1
        for j in range(n):
            mark[j] = j
            for p in range(Ap[j], Ap[j + 1]):
                i = Ai[p]
                if i > j:
                    raise ValueError("KKT input must be upper triangular")
                while mark[i] != j:
                    if etree[i] == -1:
                        etree[i] = j
                    Lnz[i] += 1
                    mark[i] = j
                    i = etree[i]
        total = 0
        for i in range(n):
            total += Lnz[i]

        self.Lp = np.empty(n + 1, dtype=np.int64)
        self.Li = np.empty(max(total, 1), dtype=np.int64)
        self.Lx = np.empty(max(total, 1))
        self.Dinv = np.empty(n)
        self._numeric(Ap, Ai, Ax, etree, Lnz)

    cdef _numeric(self, idx_t[::1] Ap, idx_t[::1] Ai, double[::1] Ax,
                  idx_t[::1] etree, idx_t[::1] Lnz):
        cdef idx_t n = self.n
        cdef double[::1] D = np.zeros(n)
        cdef double[::1] yvals = np.zeros(n)
        cdef char[::1] used = np.zeros(n, dtype=np.int8)
        cdef idx_t[::1] yidx = np.empty(n, dtype=np.int64)
        cdef idx_t[::1] ebuf = np.empty(n, dtype=np.int64)
        cdef idx_t[::1] nextspace = np.empty(n, dtype=np.int64)
        cdef idx_t[::1] Lp = self.Lp
        cdef idx_t[::1] Li = self.Li
        cdef double[::1] Lx = self.Lx
        cdef idx_t i, j, k, p, bidx, nxt, nnz_y, nnz_e, cidx, slot
        cdef double yv, lval

        Lp[0] = 0
        for i in range(n):
            Lp[i + 1] = Lp[i] + Lnz[i]
            nextspace[i] = Lp[i]
        self.n_positive = 0
        for k in range(n):
            nnz_y = 0
            for p in range(Ap[k], Ap[k + 1]):
                bidx = Ai[p]
                if bidx == k:
                    D[k] = Ax[p]
                    continue
                yvals[bidx] = Ax[p]
                if not used[bidx]:
                    used[bidx] = 1
                    ebuf[0] = bidx
                    nnz_e = 1
                    nxt = etree[bidx]
                    while nxt != -1 and nxt < k:
                        if used[nxt]:
                            break
                        used[nxt] = 1
                        ebuf[nnz_e] = nxt
                        nnz_e += 1
                        nxt = etree[nxt]
                    while nnz_e > 0:
                        nnz_e -= 1
                        yidx[nnz_y] = ebuf[nnz_e]
                        nnz_y += 1
            for i in range(nnz_y - 1, -1, -1):
                cidx = yidx[i]
                slot = nextspace[cidx]
                yv = yvals[cidx]
                for j in range(Lp[cidx], slot):
                    yvals[Li[j]] -= Lx[j] * yv
                lval = yv * self.Dinv[cidx]
                Li[slot] = k
                Lx[slot] = lval
                D[k] -= yv * lval
                nextspace[cidx] = slot + 1
                yvals[cidx] = 0.0
                used[cidx] = 0
            if D[k] == 0.0 or not isfinite(D[k]):
                raise FactorizationError("zero or non-finite pivot in LDL'")
            if D[k] > 0.0:
                self.n_positive += 1
            self.Dinv[k] = 1.0 / D[k]

    cdef void solve_inplace(self, double[::1] b) noexcept nogil:
        """Overwrite ``b`` with ``K^-1 b`` (handles the permutation)."""
        cdef idx_t n = self.n
        cdef idx_t i, j
        cdef double xi
        cdef double[::1] w = self.work
        for i in range(n):
            w[i] = b[self.perm[i]]
        for i in range(n):
            xi = w[i]
            for j in range(self.Lp[i], self.Lp[i + 1]):
                w[self.Li[j]] -= self.Lx[j] * xi
        for i in range(n):
            w[i] *= self.Dinv[i]
        for i in range(n - 1, -1, -1):
            xi = w[i]
            for j in range(self.Lp[i], self.Lp[i + 1]):
                xi -= self.Lx[j] * w[self.Li[j]]
            w[i] = xi
        for i in range(n):
            b[self.perm[i]] = w[i]

    def solve(self, rhs):
        cdef double[::1] b = np.array(rhs, dtype=np.float64, copy=True)
        self.solve_inplace(b)
        return np.asarray(b)


cdef inline double _absmax(double a, double b) noexcept nogil:
    return a if a > b else b


cdef class AdmmWorkspace:
    """ADMM iteration on a scaled QP with a once-factorized KKT matrix."""

    cdef public idx_t n
    cdef public idx_t m
    cdef public bint nonconvex
    cdef double sigma
    cdef double cinv
    cdef double[::1] rho
    cdef double[::1] rho_inv
    cdef double[::1] Dinv
    cdef double[::1] Einv
    # P stored full (both triangles), CSC
    cdef idx_t[::1] Pp
    cdef idx_t[::1] Pi
    cdef double[::1] Px
    cdef idx_t[::1] Ap
    cdef idx_t[::1] Ai
    cdef double[::1] Ax
    cdef LdlFactor ldl
    cdef double[::1] rhs
    cdef double[::1] tmp_n
    cdef double[::1] tmp_n2
    cdef double[::1] tmp_m

    def __init__(self, P, A, sigma, rho, D, E, c, kkt_perm=None):
        import scipy.sparse as sp
        P = sp.csc_matrix(P)
        A = sp.csc_matrix(A)
        P.sort_indices()
        A.sort_indices()
        self.n = P.shape[0]
        self.m = A.shape[0]
        self.sigma = float(sigma)
        self.rho = np.ascontiguousarray(rho, dtype=np.float64)
        self.rho_inv = 1.0 / np.asarray(self.rho)
        self.Dinv = 1.0 / np.ascontiguousarray(D, dtype=np.float64)
        self.Einv = 1.0 / np.ascontiguousarray(E, dtype=np.float64)
        self.cinv = 1.0 / float(c)
        self.Pp = P.indptr.astype(np.int64)
        self.Pi = P.indices.astype(np.int64)
        self.Px = P.data.astype(np.float64)
        self.Ap = A.indptr.astype(np.int64)
        self.Ai = A.indices.astype(np.int64)
        self.Ax = A.data.astype(np.float64)
        kkt = sp.bmat(
            [[sp.triu(P) + self.sigma * sp.eye(self.n), None],
             [A, -sp.diags(np.asarray(self.rho_inv))]],
            format="csc",
        )
        kkt = kkt + kkt.T - sp.diags(kkt.diagonal())
        if kkt_perm is None:
            kkt_perm = np.arange(self.n + self.m)
        perm = np.asarray(kkt_perm, dtype=np.int64)
        Kperm = sp.triu(kkt[perm][:, perm], format="csc")
        Kperm.sort_indices()
        self.ldl = LdlFactor(Kperm.indptr, Kperm.indices, Kperm.data, perm)
        self.nonconvex = self.ldl.n_positive != self.n
        self.rhs = np.zeros(self.n + self.m)
        self.tmp_n = np.zeros(self.n)
        self.tmp_n2 = np.zeros(self.n)
        self.tmp_m = np.zeros(self.m)

    @property
    def factor_nnz(self):
        return int(self.ldl.Lp[self.ldl.n])

    def solve_kkt(self, rhs):
        return self.ldl.solve(rhs)

    cdef void _residuals(self, double[::1] x, double[::1] z, double[::1] y,
                         double[::1] q, double* out) noexcept nogil:
        cdef idx_t i, j, p
        cdef double s, prim = 0.0, dual = 0.0
        cdef double ax_n = 0.0, z_n = 0.0, px_n = 0.0, aty_n = 0.0, q_n = 0.0
        cdef double[::1] Ax = self.tmp_m
        cdef double[::1] Pxv = self.tmp_n
        for i in range(self.m):
            Ax[i] = 0.0
        for i in range(self.n):
            Pxv[i] = 0.0
        for j in range(self.n):
            for p in range(self.Ap[j], self.Ap[j + 1]):
                Ax[self.Ai[p]] += self.Ax[p] * x[j]
            for p in range(self.Pp[j], self.Pp[j + 1]):
                Pxv[self.Pi[p]] += self.Px[p] * x[j]
        for i in range(self.m):
            prim = _absmax(prim, fabs(self.Einv[i] * (Ax[i] - z[i])))
            ax_n = _absmax(ax_n, fabs(self.Einv[i] * Ax[i]))
            z_n = _absmax(z_n, fabs(self.Einv[i] * z[i]))
        for j in range(self.n):
            s = 0.0
            for p in range(self.Ap[j], self.Ap[j + 1]):
                s += self.Ax[p] * y[self.Ai[p]]
            aty_n = _absmax(aty_n, fabs(self.Dinv[j] * s))
            px_n = _absmax(px_n, fabs(self.Dinv[j] * Pxv[j]))
            q_n = _absmax(q_n, fabs(self.Dinv[j] * q[j]))
            dual = _absmax(dual, fabs(self.Dinv[j] * (Pxv[j] + q[j] + s)))
        out[0] = prim
        out[1] = self.cinv * dual
        out[2] = _absmax(ax_n, z_n)
        out[3] = self.cinv * _absmax(_absmax(px_n, aty_n), q_n)

    def residuals(self, x, z, y, q):
        cdef double out[4]
        self._residuals(np.ascontiguousarray(x, dtype=np.float64),
                        np.ascontiguousarray(z, dtype=np.float64),
                        np.ascontiguousarray(y, dtype=np.float64),
                        np.ascontiguousarray(q, dtype=np.float64), out)
        return out[0], out[1], out[2], out[3]

    def run(self, double[::1] x, double[::1] z, double[::1] y, double[::1] q,
            double[::1] l, double[::1] u, double alpha, double eps_abs,
            double eps_rel, long max_iter, long check_every):
        """Iterate in place on ``x, z, y``; return ``(iters, status, prim, dual)``."""
        cdef idx_t n = self.n, m = self.m
        cdef idx_t i
        cdef long it = 0
        cdef int status = C_MAX_ITER
        cdef double zt, zr, zn, yi
        cdef double out[4]
        cdef double[::1] rhs = self.rhs
        cdef bint finite
        out[0] = INFINITY
        out[1] = INFINITY
        with nogil:
            for it in range(1, max_iter + 1):
                for i in range(n):
                    rhs[i] = self.sigma * x[i] - q[i]
                for i in range(m):
                    rhs[n + i] = z[i] - self.rho_inv[i] * y[i]
                self.ldl.solve_inplace(rhs)
                for i in range(n):
                    x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i]
                for i in range(m):
                    yi = y[i]
                    zt = z[i] + self.rho_inv[i] * (rhs[n + i] - yi)
                    zr = alpha * zt + (1.0 - alpha) * z[i]
                    zn = zr + self.rho_inv[i] * yi
                    if zn < l[i]:
                        zn = l[i]
                    elif zn > u[i]:
                        zn = u[i]
                    y[i] = yi + self.rho[i] * (zr - zn)
                    z[i] = zn
                if it % check_every == 0 or it == max_iter:
                    finite = True
                    for i in range(n):
                        if not isfinite(x[i]):
                            finite = False
                    for i in range(m):
                        if not isfinite(y[i]):
                            finite = False
                    if not finite:
                        status = C_NUMERICAL_ERROR
                        out[0] = INFINITY
                        out[1] = INFINITY
                        break
                    self._residuals(x, z, y, q, out)
                    if (out[0] <= eps_abs + eps_rel * out[2]
                            and out[1] <= eps_abs + eps_rel * out[3]):
                        status = C_SOLVED
                        break
        return it, status, out[0], out[1]


cdef inline void _derivs(double v, double th, double w, double F,
                         double M, double m, double L, double g, double b,
                         double f_phi, double* acc) noexcept nogil:
    cdef double s = sin(th)
    cdef double c = cos(th)
    cdef double r1 = F + m * L * w * w * s - b * v
    cdef double r2 = g * s - f_phi * w
    cdef double det = L * (M + m * s * s)
    acc[0] = (L * r1 - m * L * c * r2) / det
    acc[1] = ((M + m) * r2 - c * r1) / det


def simulate_segment(double[::1] x, double u, double[::1] force_noise, long k0,
                     long nsteps, double dt, params, double p_lim,
                     double phi_lim, double[:, ::1] out):
    """RK4-integrate ``nsteps`` plant steps starting at grid index ``k0``.

    Returns ``(steps_done, violated)``; see ``_pycore.simulate_segment``.
    """
    cdef double M = params[0], m = params[1], L = params[2]
    cdef double g = params[3], b = params[4], f_phi = params[5]
    cdef double p = x[0], v = x[1], th = x[2], w = x[3]
    cdef double h = dt, F
    cdef double a1[2]
    cdef double a2[2]
    cdef double a3[2]
    cdef double a4[2]
    cdef double v2, th2, w2, v3, th3, w3, v4, th4, w4
    cdef long i, k
    cdef bint violated = False
    cdef long done = nsteps
    with nogil:
        for i in range(nsteps):
            k = k0 + i
            F = u + force_noise[k]
            _derivs(v, th, w, F, M, m, L, g, b, f_phi, a1)
            v2 = v + 0.5 * h * a1[0]
            th2 = th + 0.5 * h * w
            w2 = w + 0.5 * h * a1[1]
            _derivs(v2, th2, w2, F, M, m, L, g, b, f_phi, a2)
            v3 = v + 0.5 * h * a2[0]
            th3 = th + 0.5 * h * w2
            w3 = w + 0.5 * h * a2[1]
            _derivs(v3, th3, w3, F, M, m, L, g, b, f_phi, a3)
            v4 = v + h * a3[0]
            th4 = th + h * w3
            w4 = w + h * a3[1]
            _derivs(v4, th4, w4, F, M, m, L, g, b, f_phi, a4)
            p = p + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
            th = th + h / 6.0 * (w + 2.0 * w2 + 2.0 * w3 + w4)
            v = v + h / 6.0 * (a1[0] + 2.0 * a2[0] + 2.0 * a3[0] + a4[0])
            w = w + h / 6.0 * (a1[1] + 2.0 * a2[1] + 2.0 * a3[1] + a4[1])
            out[k + 1, 0] = p
            out[k + 1, 1] = v
            out[k + 1, 2] = th
            out[k + 1, 3] = w
            if fabs(p) >= p_lim or fabs(th) > phi_lim or not (isfinite(p) and isfinite(th)):
                violated = True
                done = i + 1
                break
    x[0] = p
    x[1] = v
    x[2] = th
    x[3] = w
    return done, violated
