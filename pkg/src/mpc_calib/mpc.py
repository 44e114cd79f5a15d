"""Linear MPC with soft constraints and move blocking, sparse QP form.

Decision vector ``z = (x_1..x_Np, u_0..u_{Nu-1}, eps)``. Moves beyond the
control horizon are the last free move ``u_{Nu-1}`` by construction, so
the blocking constraint needs no rows. Outputs are penalized and
constrained at ``k = 1..Np``, aligned with the reference preview rows.

The QP objective omits the constant
``sum_k yref_k' Qy yref_k + sum_k uref_k' Qu uref_k + u_prev' Qdu u_prev``
(see :func:`qp_constant`).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import LinearModel
from .qp import INF, AdmmSolver, QpProblem, QpSettings, Status


class ControllerFailure(RuntimeError):
    """The QP solver failed numerically; the control law is unavailable."""


def _diag(w, n):
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return np.eye(n) * float(w)
    if w.ndim == 1:
        return np.diag(w)
    return w


@dataclass
class MpcWeights:
    Qy: np.ndarray
    Qu: np.ndarray
    Qdu: np.ndarray
    Qeps: float = 1e4

    def __post_init__(self):
        if not self.Qeps > 0:
            raise ValueError("Qeps must be positive")


@dataclass
class MpcLimits:
    y_min: np.ndarray
    y_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    du_min: np.ndarray
    du_max: np.ndarray
    Vy: np.ndarray
    Vu: np.ndarray
    Vdu: np.ndarray

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for lo, hi in (("y_min", "y_max"), ("u_min", "u_max"), ("du_min", "du_max")):
            if np.any(getattr(self, lo) > getattr(self, hi)):
                raise ValueError(f"{lo} exceeds {hi}")
        if min(self.Vy.min(), self.Vu.min(), self.Vdu.min()) < 0:
            raise ValueError("softening vectors must be non-negative")

    @classmethod
    def unconstrained(cls, ny: int, nu: int) -> "MpcLimits":
        inf_y, inf_u = np.full(ny, np.inf), np.full(nu, np.inf)
        return cls(-inf_y, inf_y, -inf_u, inf_u, -inf_u, inf_u,
                   np.ones(ny), np.ones(nu), np.ones(nu))


@dataclass
class MpcConfig:
    model: LinearModel
    Np: int
    Nu: int
    weights: MpcWeights
    limits: MpcLimits
    solver: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        if not (1 <= self.Nu <= self.Np):
            raise ValueError("need 1 <= Nu <= Np")
        if np.any(self.model.D != 0):
            raise ValueError("prediction model must have zero feedthrough")


@dataclass
class MpcStep:
    u: np.ndarray
    predicted_cost: float
    solver_status: Status
    qp_time: float
    iterations: int = 0
    z: np.ndarray = field(default=None, repr=False)


class _Layout:
    def __init__(self, cfg: MpcConfig, explicit_blocking: bool):
        self.nx, self.nu, self.ny = cfg.model.nx, cfg.model.nu, cfg.model.ny
        self.Np = cfg.Np
        self.Nu = cfg.Nu
        # with explicit blocking all Np moves are variables tied by equality rows
        self.n_moves = cfg.Np if explicit_blocking else cfg.Nu
        self.explicit = explicit_blocking
        self.n = self.Np * self.nx + self.n_moves * self.nu + 1

    def x(self, k):
        """Slice of x_k for k = 1..Np."""
        s = (k - 1) * self.nx
        return slice(s, s + self.nx)

    def u(self, j):
        """Slice of the variable used for move j (blocked beyond Nu)."""
        j = min(j, self.n_moves - 1)
        s = self.Np * self.nx + j * self.nu
        return slice(s, s + self.nu)

    @property
    def eps(self):
        return self.n - 1


class _Structure:
    """Sparse P, A and index maps for one MPC configuration."""

    def __init__(self, cfg: MpcConfig, explicit_blocking: bool = False):
        self.cfg = cfg
        L = self.layout = _Layout(cfg, explicit_blocking)
        mdl, W, lim = cfg.model, cfg.weights, cfg.limits
        nx, nu, ny, Np = L.nx, L.nu, L.ny, L.Np
        Qy, Qu, Qdu = _diag(W.Qy, ny), _diag(W.Qu, nu), _diag(W.Qdu, nu)
        self.Qy, self.Qu, self.Qdu = Qy, Qu, Qdu
        C = mdl.C

        P = sp.lil_matrix((L.n, L.n))
        CQC = 2.0 * C.T @ Qy @ C
        for k in range(1, Np + 1):
            P[L.x(k), L.x(k)] = CQC
        for k in range(Np):
            P[L.u(k), L.u(k)] = P[L.u(k), L.u(k)].toarray() + 2.0 * Qu
        n_rate = L.n_moves
        for j in range(n_rate):
            P[L.u(j), L.u(j)] = P[L.u(j), L.u(j)].toarray() + 2.0 * Qdu
            if j >= 1:
                P[L.u(j - 1), L.u(j - 1)] = P[L.u(j - 1), L.u(j - 1)].toarray() + 2.0 * Qdu
                P[L.u(j), L.u(j - 1)] = -2.0 * Qdu
                P[L.u(j - 1), L.u(j)] = -2.0 * Qdu
        P[L.eps, L.eps] = 2.0 * W.Qeps
        self.P = P.tocsc()
        self._qy_map = -2.0 * (Qy @ C)  # q_x(k) = yref_k @ this
        self._qu_map = -2.0 * Qu

        rows, cols, vals, lo, hi = [], [], [], [], []
        r = 0

        def add(entries, lb, ub):
            nonlocal r
            for c, v in entries:
                rows.append(r)
                cols.append(c)
                vals.append(v)
            lo.append(lb)
            hi.append(ub)
            r += 1

        # dynamics x_{k+1} - A x_k - B u_k = 0 (x_0 goes to the bounds)
        self.dyn_rows0 = r
        for k in range(Np):
            for i in range(nx):
                ent = [(L.x(k + 1).start + i, 1.0)]
                if k >= 1:
                    ent += [(L.x(k).start + j, -mdl.A[i, j]) for j in range(nx) if mdl.A[i, j] != 0]
                ent += [(L.u(k).start + j, -mdl.B[i, j]) for j in range(nu) if mdl.B[i, j] != 0]
                add(ent, 0.0, 0.0)

        # soft output bounds, k = 1..Np
        for k in range(1, Np + 1):
            for i in range(ny):
                ci = [(L.x(k).start + j, C[i, j]) for j in range(nx) if C[i, j] != 0]
                if np.isfinite(lim.y_min[i]):
                    add(ci + [(L.eps, lim.Vy[i])], lim.y_min[i], INF)
                if np.isfinite(lim.y_max[i]):
                    add(ci + [(L.eps, -lim.Vy[i])], -INF, lim.y_max[i])

        # soft input bounds on every distinct move
        for j in range(L.n_moves):
            for i in range(nu):
                col = L.u(j).start + i
                if np.isfinite(lim.u_min[i]):
                    add([(col, 1.0), (L.eps, lim.Vu[i])], lim.u_min[i], INF)
                if np.isfinite(lim.u_max[i]):
                    add([(col, 1.0), (L.eps, -lim.Vu[i])], -INF, lim.u_max[i])

        # soft rate bounds; the j = 0 row references u_prev through its bounds
        self.rate0_rows = []
        for j in range(L.n_moves):
            for i in range(nu):
                col = L.u(j).start + i
                prev = [] if j == 0 else [(L.u(j - 1).start + i, -1.0)]
                if np.isfinite(lim.du_min[i]):
                    if j == 0:
                        self.rate0_rows.append((r, i, "lo"))
                    add([(col, 1.0)] + prev + [(L.eps, lim.Vdu[i])], lim.du_min[i], INF)
                if np.isfinite(lim.du_max[i]):
                    if j == 0:
                        self.rate0_rows.append((r, i, "hi"))
                    add([(col, 1.0)] + prev + [(L.eps, -lim.Vdu[i])], -INF, lim.du_max[i])

        # explicit move blocking u_{Nu-1+j} = u_{Nu-1}
        if L.explicit:
            for k in range(cfg.Nu, Np):
                for i in range(nu):
                    add([(L.u(k).start + i, 1.0), (L.u(cfg.Nu - 1).start + i, -1.0)], 0.0, 0.0)

        add([(L.eps, 1.0)], 0.0, INF)
        self.m = r
        self.A = sp.csc_matrix((vals, (rows, cols)), shape=(r, L.n))
        self.l0 = np.array(lo, dtype=float)
        self.u0 = np.array(hi, dtype=float)

    def vectors(self, x0, u_prev, y_ref, u_ref=None):
        """``(q, l, u)`` for the current state, last input and previews."""
        L = self.layout
        x0 = np.asarray(x0, dtype=float).ravel()
        u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
        y_ref = np.asarray(y_ref, dtype=float)
        if x0.shape != (L.nx,) or u_prev.shape != (L.nu,):
            raise ValueError("x0 / u_prev dimension mismatch")
        if y_ref.shape != (L.Np, L.ny):
            raise ValueError(f"y_ref preview must have shape ({L.Np}, {L.ny})")
        q = np.zeros(L.n)
        q[: L.Np * L.nx] = (y_ref @ self._qy_map).ravel()
        if u_ref is not None:
            u_ref = np.asarray(u_ref, dtype=float).reshape(L.Np, L.nu)
            if np.any(u_ref != 0):
                for k in range(L.Np):
                    q[L.u(k)] += self._qu_map @ u_ref[k]
        q[L.u(0)] += -2.0 * self.Qdu @ u_prev
        lo = self.l0.copy()
        hi = self.u0.copy()
        ax0 = self.cfg.model.A @ x0
        lo[self.dyn_rows0 : self.dyn_rows0 + L.nx] = ax0
        hi[self.dyn_rows0 : self.dyn_rows0 + L.nx] = ax0
        lim = self.cfg.limits
        for row, i, side in self.rate0_rows:
            if side == "lo":
                lo[row] = lim.du_min[i] + u_prev[i]
            else:
                hi[row] = lim.du_max[i] + u_prev[i]
        return q, lo, hi


def qp_constant(cfg: MpcConfig, u_prev, y_ref, u_ref=None) -> float:
    """Constant dropped from the QP objective relative to the MPC cost."""
    W = cfg.weights
    Qy = _diag(W.Qy, cfg.model.ny)
    Qu = _diag(W.Qu, cfg.model.nu)
    Qdu = _diag(W.Qdu, cfg.model.nu)
    y_ref = np.asarray(y_ref, dtype=float)
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    c = float(np.einsum("ki,ij,kj->", y_ref, Qy, y_ref))
    if u_ref is not None:
        u_ref = np.asarray(u_ref, dtype=float).reshape(cfg.Np, cfg.model.nu)
        c += float(np.einsum("ki,ij,kj->", u_ref, Qu, u_ref))
    return c + float(u_prev @ Qdu @ u_prev)


def mpc_cost(cfg: MpcConfig, x0, u_prev, y_ref, u_moves, eps, u_ref=None) -> float:
    """Evaluate the MPC cost by forward simulation of the blocked input sequence.

    ``u_moves`` holds the ``Nu`` free moves (shape ``(Nu, nu)``).
    """
    mdl, W = cfg.model, cfg.weights
    Qy = _diag(W.Qy, mdl.ny)
    Qu = _diag(W.Qu, mdl.nu)
    Qdu = _diag(W.Qdu, mdl.nu)
    u_moves = np.asarray(u_moves, dtype=float).reshape(cfg.Nu, mdl.nu)
    u_ref = np.zeros((cfg.Np, mdl.nu)) if u_ref is None else np.asarray(u_ref, dtype=float).reshape(cfg.Np, mdl.nu)
    x = np.asarray(x0, dtype=float)
    prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    J = 0.0
    for k in range(cfg.Np):
        uk = u_moves[min(k, cfg.Nu - 1)]
        x = mdl.A @ x + mdl.B @ uk
        e = mdl.C @ x - y_ref[k]
        du = uk - prev
        J += e @ Qy @ e + (uk - u_ref[k]) @ Qu @ (uk - u_ref[k]) + du @ Qdu @ du
        prev = uk
    return float(J + W.Qeps * eps**2)


def build_qp(cfg: MpcConfig, x0, u_prev, y_ref_preview, u_ref_preview=None,
             explicit_blocking: bool = False) -> QpProblem:
    """Assemble the MPC problem as ``min 1/2 z'Pz + q'z, l <= Az <= u``."""
    st = _Structure(cfg, explicit_blocking)
    q, lo, hi = st.vectors(x0, u_prev, y_ref_preview, u_ref_preview)
    return QpProblem(P=st.P, q=q, A=st.A, l=lo, u=hi)


def unpack(cfg: MpcConfig, z, explicit_blocking: bool = False):
    """Split a QP solution into ``(x_1..x_Np, u_0..u_{Np-1}, eps)``."""
    L = _Layout(cfg, explicit_blocking)
    X = np.asarray(z[: L.Np * L.nx]).reshape(L.Np, L.nx)
    U = np.array([z[L.u(k)] for k in range(L.Np)])
    return X, U, float(z[L.eps])


class MpcController:
    """Receding-horizon controller with a cached QP structure and warm starts."""

    def __init__(self, cfg: MpcConfig, backend=None):
        self.cfg = cfg
        self.structure = _Structure(cfg)
        L = self.structure.layout
        q = np.zeros(L.n)
        prob = QpProblem(P=self.structure.P, q=q, A=self.structure.A,
                         l=self.structure.l0, u=self.structure.u0)
        self.solver = AdmmSolver(prob, cfg.solver, backend=backend)
        self._warm = None

    def reset(self):
        self._warm = None

    def step(self, x0, u_prev, y_ref, u_ref=None, warm_start: bool = True) -> MpcStep:
        t0 = time.perf_counter()
        q, lo, hi = self.structure.vectors(x0, u_prev, y_ref, u_ref)
        self.solver.update(q, lo, hi)
        sol = self.solver.solve(self._warm if warm_start else None)
        L = self.structure.layout
        u = sol.z[L.u(0)].copy()
        qp_time = time.perf_counter() - t0
        if sol.status in (Status.NUMERICAL_ERROR, Status.NON_CONVEX) or not np.all(np.isfinite(u)):
            self._warm = None
            raise ControllerFailure(f"QP solver returned {sol.status.value}")
        self._warm = (sol.z, sol.y)
        cost = sol.objective + qp_constant(self.cfg, u_prev, y_ref, u_ref)
        return MpcStep(u=u, predicted_cost=cost, solver_status=sol.status,
                       qp_time=qp_time, iterations=sol.iterations, z=sol.z)


def mpc_step(controller: MpcController, x0, u_prev, y_ref, u_ref=None, warm_start=True) -> MpcStep:
    return controller.step(x0, u_prev, y_ref, u_ref, warm_start)


def reference_preview(waypoints, t: float, Np: int, Ts: float, ny: int = 2) -> np.ndarray:
    """Position reference at ``t + k Ts``, ``k = 1..Np``; other outputs zero.

    ``waypoints`` is a sequence of ``(time, position)`` pairs; values are
    interpolated linearly and held beyond both ends.
    """
    wp = np.asarray(waypoints, dtype=float)
    if wp.size == 0:
        raise ValueError("reference needs at least one waypoint")
    wp = wp.reshape(-1, 2)
    if np.any(np.diff(wp[:, 0]) < 0):
        raise ValueError("waypoints must be sorted by time")
    times = t + Ts * np.arange(1, Np + 1)
    out = np.zeros((Np, ny))
    out[:, 0] = np.interp(times, wp[:, 0], wp[:, 1])
    return out
