"""Pure-Python kernels (numpy/scipy). Same API as the compiled ``_core``."""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

BACKEND = "python"

SOLVED = 1
MAX_ITER = 2
NUMERICAL_ERROR = -1


class AdmmWorkspace:
    """ADMM iteration on a scaled QP with a once-factorized KKT matrix.

    ``P`` and ``A`` are the *scaled* data; ``D``, ``E`` and ``c`` are the
    scaling factors used only to report unscaled residuals.
    """

    def __init__(self, P, A, sigma, rho, D, E, c, kkt_perm=None):
        self.P = sp.csc_matrix(P)
        self.A = sp.csc_matrix(A)
        self.At = self.A.T.tocsc()
        self.n = self.P.shape[0]
        self.m = self.A.shape[0]
        self.sigma = float(sigma)
        self.rho = np.asarray(rho, dtype=float)
        self.rho_inv = 1.0 / self.rho
        self.Dinv = 1.0 / np.asarray(D, dtype=float)
        self.Einv = 1.0 / np.asarray(E, dtype=float)
        self.cinv = 1.0 / float(c)
        kkt = sp.bmat(
            [
                [self.P + self.sigma * sp.eye(self.n), self.At],
                [self.A, -sp.diags(self.rho_inv)],
            ],
            format="csc",
        )
        self.lu = splu(kkt)
        # SuperLU reports no inertia; convexity is probed by the caller
        self.nonconvex = False

    def solve_kkt(self, rhs):
        return self.lu.solve(rhs)

    def residuals(self, x, z, y, q):
        Ax = self.A @ x
        Px = self.P @ x
        Aty = self.At @ y
        prim = np.max(np.abs(self.Einv * (Ax - z)), initial=0.0)
        dual = self.cinv * np.max(np.abs(self.Dinv * (Px + q + Aty)), initial=0.0)
        prim_scale = max(
            np.max(np.abs(self.Einv * Ax), initial=0.0),
            np.max(np.abs(self.Einv * z), initial=0.0),
        )
        dual_scale = self.cinv * max(
            np.max(np.abs(self.Dinv * Px), initial=0.0),
            np.max(np.abs(self.Dinv * Aty), initial=0.0),
            np.max(np.abs(self.Dinv * q), initial=0.0),
        )
        return prim, dual, prim_scale, dual_scale

    def run(self, x, z, y, q, l, u, alpha, eps_abs, eps_rel, max_iter, check_every):
        """Iterate in place on ``x, z, y``; return ``(iters, status, prim, dual)``."""
        n = self.n
        sigma, rho, rho_inv = self.sigma, self.rho, self.rho_inv
        rhs = np.empty(n + self.m)
        prim = dual = math.inf
        status = MAX_ITER
        it = 0
        for it in range(1, max_iter + 1):
            rhs[:n] = sigma * x - q
            rhs[n:] = z - rho_inv * y
            sol = self.lu.solve(rhs)
            x_tilde = sol[:n]
            z_tilde = z + rho_inv * (sol[n:] - y)
            x[:] = alpha * x_tilde + (1.0 - alpha) * x
            z_relax = alpha * z_tilde + (1.0 - alpha) * z
            z_new = np.minimum(np.maximum(z_relax + rho_inv * y, l), u)
            y += rho * (z_relax - z_new)
            z[:] = z_new
            if it % check_every == 0 or it == max_iter:
                if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                    return it, NUMERICAL_ERROR, math.inf, math.inf
                prim, dual, ps, ds = self.residuals(x, z, y, q)
                if prim <= eps_abs + eps_rel * ps and dual <= eps_abs + eps_rel * ds:
                    status = SOLVED
                    break
        return it, status, prim, dual


def _derivs(p_dot, phi, phi_dot, F, M, m, L, g, b, f_phi):
    s = math.sin(phi)
    c = math.cos(phi)
    r1 = F + m * L * phi_dot * phi_dot * s - b * p_dot
    r2 = g * s - f_phi * phi_dot
    det = L * (M + m * s * s)
    return (L * r1 - m * L * c * r2) / det, ((M + m) * r2 - c * r1) / det


def simulate_segment(x, u, force_noise, k0, nsteps, dt, params, p_lim, phi_lim, out):
    """RK4-integrate ``nsteps`` plant steps starting at grid index ``k0``.

    The force during step ``k`` is ``u + force_noise[k]``. States after each
    step are written to ``out[k + 1]`` and ``x`` is updated in place. Stops
    right after the first step with ``|p| >= p_lim`` or ``|phi| > phi_lim``.

    Returns
    -------
    (steps_done, violated)
    """
    M, m, L, g, b, f_phi = params
    p, v, th, w = x[0], x[1], x[2], x[3]
    h = dt
    for i in range(nsteps):
        k = k0 + i
        F = u + force_noise[k]
        a1, b1 = _derivs(v, th, w, F, M, m, L, g, b, f_phi)
        v2, th2, w2 = v + 0.5 * h * a1, th + 0.5 * h * w, w + 0.5 * h * b1
        a2, b2 = _derivs(v2, th2, w2, F, M, m, L, g, b, f_phi)
        v3, th3, w3 = v + 0.5 * h * a2, th + 0.5 * h * w2, w + 0.5 * h * b2
        a3, b3 = _derivs(v3, th3, w3, F, M, m, L, g, b, f_phi)
        v4, th4, w4 = v + h * a3, th + h * w3, w + h * b3
        a4, b4 = _derivs(v4, th4, w4, F, M, m, L, g, b, f_phi)
        p = p + h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
        th = th + h / 6.0 * (w + 2.0 * w2 + 2.0 * w3 + w4)
        v = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        w = w + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        out[k + 1, 0] = p
        out[k + 1, 1] = v
        out[k + 1, 2] = th
        out[k + 1, 3] = w
        if abs(p) >= p_lim or abs(th) > phi_lim or not (math.isfinite(p) and math.isfinite(th)):
            x[0], x[1], x[2], x[3] = p, v, th, w
            return i + 1, True
    x[0], x[1], x[2], x[3] = p, v, th, w
    return nsteps, False
