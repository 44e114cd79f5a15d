"""ADMM solver for convex QPs ``min 1/2 z'Pz + q'z  s.t.  l <= Az <= u``.

Operator splitting with a fixed penalty vector, sigma-regularized KKT system
factorized once per problem structure, over-relaxation and Ruiz
equilibration. Termination uses unscaled absolute/relative tolerances::

    ||Az - s||_inf        <= eps_abs + eps_rel * max(||Az||, ||s||)
    ||Pz + q + A'y||_inf  <= eps_abs + eps_rel * max(||Pz||, ||A'y||, ||q||)

where ``s`` is the ADMM slack (always inside ``[l, u]``).
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _backend

INF = 1e30
RHO_EQ_FACTOR = 1e3
RHO_MIN = 1e-6


class Status(str, enum.Enum):
    SOLVED = "solved"
    MAX_ITER_REACHED = "max_iter_reached"
    NON_CONVEX = "non_convex"
    NUMERICAL_ERROR = "numerical_error"


@dataclass
class QpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = sp.csc_matrix(self.P, dtype=float)
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.l = np.asarray(self.l, dtype=float).ravel()
        self.u = np.asarray(self.u, dtype=float).ravel()
        n = self.P.shape[0]
        if self.P.shape != (n, n) or self.q.shape != (n,):
            raise ValueError("P must be n x n and q of length n")
        m = self.A.shape[0]
        if self.A.shape[1] != n or self.l.shape != (m,) or self.u.shape != (m,):
            raise ValueError("A must be m x n and l, u of length m")
        if np.any(self.l > self.u):
            raise ValueError("lower bounds exceed upper bounds")
        asym = abs(self.P - self.P.T).max() if n else 0.0
        if asym > 1e-12 * max(abs(self.P).max() if self.P.nnz else 0.0, 1.0):
            raise ValueError("P must be symmetric")

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, z) -> float:
        return float(0.5 * z @ (self.P @ z) + self.q @ z)


@dataclass(frozen=True)
class QpSettings:
    eps_abs: float = 1e-3
    eps_rel: float = 1e-3
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    max_iter: int = 4000
    check_every: int = 25
    scaling_iters: int = 10

    def __post_init__(self):
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if not (self.rho > 0 and self.sigma > 0):
            raise ValueError("rho and sigma must be positive")
        if self.max_iter < 1 or self.check_every < 1:
            raise ValueError("max_iter and check_every must be >= 1")


@dataclass
class QpSolution:
    z: np.ndarray
    y: np.ndarray
    status: Status
    iterations: int
    prim_res: float
    dual_res: float
    slack: np.ndarray = field(repr=False, default=None)
    objective: float = float("nan")


def ruiz_equilibrate(P, A, iters: int = 10):
    """Diagonal scaling ``D``, ``E`` and cost factor ``c`` (OSQP style).

    Scaled data are ``c D P D`` and ``E A D``. Only ``P`` enters the cost
    factor so that ``q`` can change between solves without re-scaling.
    """
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As = P.copy(), A.copy()
    for _ in range(iters):
        col_p = abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(n)
        col_a = abs(As).max(axis=0).toarray().ravel() if As.nnz else np.zeros(n)
        row_a = abs(As).max(axis=1).toarray().ravel() if As.nnz else np.zeros(m)
        dn = np.maximum(col_p, col_a)
        dn = np.where(dn < 1e-4, 1.0, dn)
        dm = np.where(row_a < 1e-4, 1.0, row_a)
        dn = 1.0 / np.sqrt(np.minimum(dn, 1e4))
        dm = 1.0 / np.sqrt(np.minimum(dm, 1e4))
        Dn, Dm = sp.diags(dn), sp.diags(dm)
        Ps = (Dn @ Ps @ Dn).tocsc()
        As = (Dm @ As @ Dn).tocsc()
        D *= dn
        E *= dm
    col_p = abs(Ps).max(axis=0).toarray().ravel() if Ps.nnz else np.zeros(n)
    mean_col = float(np.mean(col_p)) if n else 0.0
    c = 1.0 / min(max(mean_col, 1e-4), 1e4)
    return D, E, c, (c * Ps).tocsc(), As


def minimum_degree_ordering(pattern) -> np.ndarray:
    """Greedy minimum-degree elimination order of a symmetric sparsity pattern.

    Exact external degrees on the elimination graph, ties broken by index;
    adequate for the few-thousand-node KKT systems met here.
    """
    pattern = sp.csr_matrix(pattern)
    N = pattern.shape[0]
    adj = [set(pattern.indices[pattern.indptr[i]:pattern.indptr[i + 1]]) - {i} for i in range(N)]
    heap = [(len(a), i) for i, a in enumerate(adj)]
    heapq.heapify(heap)
    eliminated = np.zeros(N, dtype=bool)
    order = []
    while heap:
        deg, v = heapq.heappop(heap)
        if eliminated[v] or deg != len(adj[v]):
            continue
        eliminated[v] = True
        order.append(v)
        nbrs = adj[v]
        for w in nbrs:
            aw = adj[w]
            aw.discard(v)
            aw |= nbrs
            aw.discard(w)
            heapq.heappush(heap, (len(aw), w))
        adj[v] = set()
    return np.asarray(order, dtype=np.int64)


def kkt_ordering(P, A) -> np.ndarray:
    """Fill-reducing symmetric ordering of the KKT matrix ``[[P, A'], [A, -I]]``."""
    n, m = P.shape[0], A.shape[0]
    pattern = sp.bmat([[abs(P) + sp.eye(n), abs(A).T], [abs(A), sp.eye(m)]], format="csr")
    return minimum_degree_ordering(pattern)


def _probe_nonconvex(P) -> bool:
    """Dense eigenvalue probe for small ``P`` (the LDL' inertia covers the rest)."""
    n = P.shape[0]
    if n == 0 or n > 200:
        return False
    Pd = P.toarray()
    lam = np.linalg.eigvalsh(0.5 * (Pd + Pd.T))
    return bool(lam[0] < -1e-9 * max(1.0, np.abs(lam).max()))


class AdmmSolver:
    """Reusable solver: factorize once, then update ``q``, ``l``, ``u`` and solve.

    Parameters
    ----------
    prob : QpProblem
        Defines the structure (``P``, ``A``) and initial vectors.
    settings : QpSettings
    backend : str, optional
        "compiled", "python" or None for the import-time default.
    """

    def __init__(self, prob: QpProblem, settings: QpSettings | None = None, backend=None):
        self.settings = settings or QpSettings()
        self.kernels = _backend.load(backend) if backend else _backend.kernels
        self.P = prob.P
        self.A = prob.A
        self.n, self.m = prob.n, prob.m
        self.D, self.E, self.c, self.Ps, self.As = ruiz_equilibrate(
            prob.P, prob.A, self.settings.scaling_iters
        )
        self._eq_mask = None
        self._workspace = None
        self.nonconvex = _probe_nonconvex(prob.P)
        self.update(prob.q, prob.l, prob.u)

    @property
    def backend(self) -> str:
        return self.kernels.BACKEND

    def _rho_vector(self, l, u):
        s = self.settings
        eq = (u - l) < 1e-4 * np.maximum(1.0, np.abs(l))
        free = (l <= -INF) & (u >= INF)
        rho = np.full(self.m, s.rho)
        rho[eq] = s.rho * RHO_EQ_FACTOR
        rho[free] = RHO_MIN
        return rho, eq | (2 * free)

    def update(self, q=None, l=None, u=None):
        """Replace problem vectors; refactorizes only if the constraint types change."""
        if q is not None:
            self.q = np.asarray(q, dtype=float).ravel().copy()
        if l is not None:
            self.l = np.clip(np.asarray(l, dtype=float).ravel(), -INF, INF)
        if u is not None:
            self.u = np.clip(np.asarray(u, dtype=float).ravel(), -INF, INF)
        if np.any(self.l > self.u):
            raise ValueError("lower bounds exceed upper bounds")
        rho, kind = self._rho_vector(self.l, self.u)
        if self._workspace is None or not np.array_equal(kind, self._eq_mask):
            self._eq_mask = kind
            perm = kkt_ordering(self.Ps, self.As) if self.backend == "compiled" else None
            self._workspace = self.kernels.AdmmWorkspace(
                self.Ps, self.As, self.settings.sigma, rho, self.D, self.E, self.c, perm
            )
            self.nonconvex = self.nonconvex or bool(self._workspace.nonconvex)

    def solve(self, warm_start=None, eps_abs=None, eps_rel=None) -> QpSolution:
        s = self.settings
        eps_abs = s.eps_abs if eps_abs is None else eps_abs
        eps_rel = s.eps_rel if eps_rel is None else eps_rel
        if self.nonconvex:
            return QpSolution(
                z=np.full(self.n, np.nan), y=np.full(self.m, np.nan),
                status=Status.NON_CONVEX, iterations=0,
                prim_res=np.inf, dual_res=np.inf, slack=np.full(self.m, np.nan),
            )
        D, E, c = self.D, self.E, self.c
        q_s = c * D * self.q
        l_s = np.where(np.abs(self.l) >= INF, self.l, E * self.l)
        u_s = np.where(np.abs(self.u) >= INF, self.u, E * self.u)
        if warm_start is not None:
            z0, y0 = warm_start
            x = np.asarray(z0, dtype=float) / D
            y = c * np.asarray(y0, dtype=float) / E
            z = np.clip(self.As @ x, l_s, u_s)
        else:
            x = np.zeros(self.n)
            y = np.zeros(self.m)
            z = np.zeros(self.m)
        x = np.ascontiguousarray(x)
        y = np.ascontiguousarray(y)
        z = np.ascontiguousarray(z)
        iters, code, prim, dual = self._workspace.run(
            x, z, y, q_s, l_s, u_s, s.alpha, eps_abs, eps_rel, s.max_iter, s.check_every
        )
        k = self.kernels
        status = {
            k.SOLVED: Status.SOLVED,
            k.MAX_ITER: Status.MAX_ITER_REACHED,
            k.NUMERICAL_ERROR: Status.NUMERICAL_ERROR,
        }[code]
        z_out = D * x
        y_out = E * y / c
        slack = z / E
        obj = float(0.5 * z_out @ (self.P @ z_out) + self.q @ z_out) if status != Status.NUMERICAL_ERROR else np.nan
        return QpSolution(
            z=z_out, y=y_out, status=status, iterations=int(iters),
            prim_res=float(prim), dual_res=float(dual), slack=slack, objective=obj,
        )


def solve(prob: QpProblem, settings: QpSettings | None = None, warm_start=None, backend=None) -> QpSolution:
    """One-shot convenience wrapper around :class:`AdmmSolver`."""
    return AdmmSolver(prob, settings, backend=backend).solve(warm_start)
