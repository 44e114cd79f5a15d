import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box_qp_oracle
from mpc_calib.qp import INF, AdmmSolver, QpProblem, QpSettings, Status, solve

TIGHT = QpSettings(eps_abs=1e-10, eps_rel=1e-10, max_iter=200_000)


def random_box_qp(rng, n=4):
    G = rng.standard_normal((n, n))
    P = G @ G.T + 0.5 * np.eye(n)
    q = 2.0 * rng.standard_normal(n)
    lo = -rng.uniform(0.1, 1.5, n)
    hi = rng.uniform(0.1, 1.5, n)
    return P, q, lo, hi


def random_general_qp(rng, n=6, m=8):
    G = rng.standard_normal((n, n))
    P = G @ G.T + 0.1 * np.eye(n)
    q = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    x_feas = rng.standard_normal(n) * 0.3
    Ax = A @ x_feas
    lo = Ax - rng.uniform(0.0, 1.0, m)
    hi = Ax + rng.uniform(0.0, 1.0, m)
    lo[0] = hi[0] = Ax[0]  # one equality row
    hi[1] = INF
    return QpProblem(P=sp.csc_matrix(P), q=q, A=sp.csc_matrix(A), l=lo, u=hi)


def residuals(prob, sol):
    """Recompute the residuals and their tolerance scales from scratch."""
    P, A = prob.P.toarray(), prob.A.toarray()
    Az = A @ sol.z
    proj = np.clip(Az, prob.l, prob.u)
    prim = np.max(np.abs(Az - proj), initial=0.0)
    dual = np.max(np.abs(P @ sol.z + prob.q + A.T @ sol.y))
    scale_prim = max(np.max(np.abs(Az), initial=0.0), np.max(np.abs(proj), initial=0.0))
    scale_dual = max(np.max(np.abs(P @ sol.z)), np.max(np.abs(prob.q)),
                     np.max(np.abs(A.T @ sol.y), initial=0.0))
    return prim, dual, scale_prim, scale_dual


def dual_objective(prob, sol):
    P = prob.P.toarray()
    y = sol.y
    support = np.where(y > 0, np.where(prob.u >= INF, 0.0, prob.u) * y, 0.0) + \
        np.where(y < 0, np.where(prob.l <= -INF, 0.0, prob.l) * y, 0.0)
    return -0.5 * sol.z @ P @ sol.z - np.sum(support)


def test_scalar_unconstrained(backend):
    prob = QpProblem(P=[[1.0]], q=[-1.0], A=sp.csc_matrix((0, 1)), l=[], u=[])
    sol = solve(prob, QpSettings(eps_abs=1e-9, eps_rel=1e-9), backend=backend)
    assert sol.status == Status.SOLVED
    assert sol.z[0] == pytest.approx(1.0, abs=1e-8)


def test_scalar_upper_bound(backend):
    prob = QpProblem(P=[[1.0]], q=[-1.0], A=[[1.0]], l=[-INF], u=[0.5])
    sol = solve(prob, QpSettings(eps_abs=1e-9, eps_rel=1e-9), backend=backend)
    assert sol.z[0] == pytest.approx(0.5, abs=1e-7)
    assert sol.y[0] == pytest.approx(0.5, abs=1e-7)


def test_box_qps_match_oracle(backend):
    rng = np.random.default_rng(2024)
    for _ in range(200):
        P, q, lo, hi = random_box_qp(rng)
        prob = QpProblem(P=P, q=q, A=np.eye(4), l=lo, u=hi)
        sol = solve(prob, TIGHT, backend=backend)
        assert sol.status == Status.SOLVED
        np.testing.assert_allclose(sol.z, box_qp_oracle(P, q, lo, hi), atol=1e-6)
        prim, dual, sp_, sd = residuals(prob, sol)
        assert prim <= TIGHT.eps_abs + TIGHT.eps_rel * sp_
        assert dual <= TIGHT.eps_abs + TIGHT.eps_rel * sd


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1e-2, 1e-3, 1e-5]))
def test_solved_status_certifies_residuals(seed, eps):
    prob = random_general_qp(np.random.default_rng(seed))
    s = QpSettings(eps_abs=eps, eps_rel=eps, max_iter=50_000)
    sol = solve(prob, s)
    assert sol.status == Status.SOLVED
    prim, dual, sp_, sd = residuals(prob, sol)
    assert prim <= eps + eps * sp_
    assert dual <= eps + eps * sd


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_duality_gap(seed):
    prob = random_general_qp(np.random.default_rng(seed))
    eps = 1e-6
    sol = solve(prob, QpSettings(eps_abs=eps, eps_rel=eps, max_iter=50_000))
    primal = prob.objective(sol.z)
    assert abs(primal - dual_objective(prob, sol)) <= 10 * (eps + eps * abs(primal))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_warm_start_converges_within_one_check(seed):
    prob = random_general_qp(np.random.default_rng(seed))
    s = QpSettings(eps_abs=1e-5, eps_rel=1e-5, max_iter=50_000)
    solver = AdmmSolver(prob, s)
    cold = solver.solve()
    warm = solver.solve(warm_start=(cold.z, cold.y))
    assert warm.status == Status.SOLVED
    assert warm.iterations <= s.check_every
    assert np.max(np.abs(warm.z - cold.z)) <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1e-1, 1e-2, 1e-3, 1e-4]))
def test_tighter_tolerance_never_worse_violation(seed, eps):
    prob = random_general_qp(np.random.default_rng(seed))

    def violation(e):
        z = solve(prob, QpSettings(eps_abs=e, eps_rel=e, max_iter=100_000)).z
        Az = prob.A @ z
        return np.max(np.maximum(prob.l - Az, 0) + np.maximum(Az - prob.u, 0))

    assert violation(eps / 10) <= violation(eps) + 1e-12


def test_max_iter_returns_iterate():
    prob = random_general_qp(np.random.default_rng(0))
    sol = solve(prob, QpSettings(eps_abs=1e-12, eps_rel=1e-12, max_iter=3, check_every=1))
    assert sol.status == Status.MAX_ITER_REACHED
    assert sol.iterations == 3 and np.all(np.isfinite(sol.z))


def test_nonconvex_detected():
    prob = QpProblem(P=[[1.0, 0.0], [0.0, -1.0]], q=[0.0, 0.0], A=np.eye(2), l=[-1, -1], u=[1, 1])
    assert solve(prob).status == Status.NON_CONVEX


@pytest.mark.parametrize(
    "kwargs",
    [dict(eps_abs=0.0), dict(eps_rel=-1.0), dict(alpha=2.0), dict(alpha=0.0),
     dict(rho=0.0), dict(sigma=0.0), dict(max_iter=0)],
)
def test_settings_validation(kwargs):
    with pytest.raises(ValueError):
        QpSettings(**kwargs)


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(P=[[1.0, 1.0], [0.0, 1.0]], q=[0, 0], A=np.eye(2), l=[0, 0], u=[1, 1])
    with pytest.raises(ValueError):
        QpProblem(P=np.eye(2), q=[0, 0], A=np.eye(2), l=[1, 0], u=[0, 1])
    with pytest.raises(ValueError):
        QpProblem(P=np.eye(2), q=[0, 0, 0], A=np.eye(2), l=[0, 0], u=[1, 1])


def test_update_changes_solution():
    P, q, lo, hi = random_box_qp(np.random.default_rng(1))
    solver = AdmmSolver(QpProblem(P=P, q=q, A=np.eye(4), l=lo, u=hi), TIGHT)
    first = solver.solve().z
    solver.update(q=-q)
    second = solver.solve().z
    np.testing.assert_allclose(second, box_qp_oracle(P, -q, lo, hi), atol=1e-6)
    assert not np.allclose(first, second)


def test_backends_agree():
    from mpc_calib import _backend
    if "compiled" not in _backend.available():
        pytest.skip("compiled backend not built")
    for seed in range(20):
        prob = random_general_qp(np.random.default_rng(seed))
        s = QpSettings(eps_abs=1e-6, eps_rel=1e-6)
        a = solve(prob, s, backend="compiled")
        b = solve(prob, s, backend="python")
        assert a.iterations == b.iterations
        np.testing.assert_allclose(a.z, b.z, atol=1e-9)
