import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpc_calib.calib import CALIBRATION_WAYPOINTS
from mpc_calib.model import LinearModel, cartpole_model, discretize_zoh
from mpc_calib.mpc import (
    MpcConfig,
    MpcController,
    MpcLimits,
    MpcWeights,
    build_qp,
    mpc_cost,
    qp_constant,
    reference_preview,
    unpack,
)
from mpc_calib.plant import CartPoleParams
from mpc_calib.qp import QpSettings, Status, solve

TIGHT = QpSettings(eps_abs=1e-11, eps_rel=1e-11, max_iter=400_000)


def double_integrator(Ts=0.1):
    A, B = discretize_zoh(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([0.0, 1.0]), Ts)
    return LinearModel(A=A, B=B, C=np.eye(2), D=np.zeros((2, 1)), Ts=Ts)


def di_config(Np=10, Nu=10, u_max=math.inf, solver=TIGHT, Qdu=0.1, Qu=0.0):
    mdl = double_integrator()
    lim = MpcLimits.unconstrained(2, 1)
    lim.u_min[:] = -u_max
    lim.u_max[:] = u_max
    return MpcConfig(model=mdl, Np=Np, Nu=Nu,
                     weights=MpcWeights(Qy=[1.0, 0.1], Qu=[Qu], Qdu=[Qdu]),
                     limits=lim, solver=solver)


def cartpole_config(Np=20, Nu=6, solver=TIGHT):
    mdl = cartpole_model(CartPoleParams(), 0.01)
    lim = MpcLimits(y_min=[-1.0, -np.inf], y_max=[1.0, np.inf], u_min=[-10.0], u_max=[10.0],
                    du_min=[-5.0], du_max=[5.0], Vy=[1, 1], Vu=[1], Vdu=[1])
    return MpcConfig(model=mdl, Np=Np, Nu=Nu,
                     weights=MpcWeights(Qy=[1e-2, 1e-1], Qu=[0.0], Qdu=[1e-4]),
                     limits=lim, solver=solver)


def test_one_step_least_squares():
    mdl = cartpole_model(CartPoleParams(), 0.01)
    Qy = np.diag([2.0, 0.5])
    cfg = MpcConfig(model=mdl, Np=1, Nu=1, weights=MpcWeights(Qy=np.diag(Qy), Qu=[0.0], Qdu=[0.0]),
                    limits=MpcLimits.unconstrained(2, 1), solver=TIGHT)
    x0 = np.array([0.1, -0.2, 0.05, 0.3])
    y_ref = np.array([[0.4, 0.0]])
    sol = solve(build_qp(cfg, x0, [0.0], y_ref), TIGHT)
    CB = mdl.C @ mdl.B
    u_star = np.linalg.solve(CB.T @ Qy @ CB, CB.T @ Qy @ (y_ref[0] - mdl.C @ mdl.A @ x0))
    _, U, _ = unpack(cfg, sol.z)
    assert U[0, 0] == pytest.approx(u_star[0], abs=1e-7)


def test_fixed_point_has_zero_cost():
    cfg = cartpole_config()
    ctl = MpcController(cfg)
    step = ctl.step(np.zeros(4), [0.0], np.zeros((cfg.Np, 2)))
    assert abs(step.predicted_cost) < 1e-9
    assert abs(unpack(cfg, step.z)[2]) < 1e-9


def test_full_control_horizon_blocking_vacuous():
    cfg = cartpole_config(Np=12, Nu=12)
    x0 = np.array([0.2, 0.0, 0.1, 0.0])
    y_ref = reference_preview(CALIBRATION_WAYPOINTS, 8.0, cfg.Np, 0.01)
    za = solve(build_qp(cfg, x0, [0.5], y_ref), TIGHT).z
    zb = solve(build_qp(cfg, x0, [0.5], y_ref, explicit_blocking=True), TIGHT).z
    np.testing.assert_allclose(za, zb, atol=1e-8)


@pytest.mark.parametrize("Nu", [1, 3, 7])
def test_blocking_explicit_rows_equivalent(Nu):
    cfg = cartpole_config(Np=12, Nu=Nu)
    x0 = np.array([0.2, 0.0, 0.1, 0.0])
    y_ref = reference_preview(CALIBRATION_WAYPOINTS, 8.0, cfg.Np, 0.01)
    _, Ua, _ = unpack(cfg, solve(build_qp(cfg, x0, [0.5], y_ref), TIGHT).z)
    zb = solve(build_qp(cfg, x0, [0.5], y_ref, explicit_blocking=True), TIGHT).z
    _, Ub, _ = unpack(cfg, zb, explicit_blocking=True)
    np.testing.assert_allclose(Ua, Ub, atol=1e-7)
    assert np.all(Ua[Nu:] == Ua[Nu - 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cost_equivalence(seed):
    rng = np.random.default_rng(seed)
    cfg = cartpole_config(Np=15, Nu=5)
    x0 = rng.standard_normal(4) * [0.5, 0.5, 0.1, 0.5]
    u_prev = rng.uniform(-5, 5, 1)
    y_ref = reference_preview(CALIBRATION_WAYPOINTS, rng.uniform(0, 40), cfg.Np, 0.01)
    prob = build_qp(cfg, x0, u_prev, y_ref)
    z = solve(prob, QpSettings(eps_abs=1e-6, eps_rel=1e-6, max_iter=50_000)).z
    X, U, eps = unpack(cfg, z)
    # re-simulate so the trajectory is dynamically exact
    moves = U[: cfg.Nu]
    direct = mpc_cost(cfg, x0, u_prev, y_ref, moves, eps)
    x = x0.copy()
    z_exact = z.copy()
    for k in range(cfg.Np):
        x = cfg.model.A @ x + cfg.model.B @ U[k]
        z_exact[k * 4:(k + 1) * 4] = x
    qp_value = prob.objective(z_exact) + qp_constant(cfg, u_prev, y_ref)
    assert qp_value == pytest.approx(direct, rel=1e-8, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_always_feasible(seed):
    rng = np.random.default_rng(seed)
    cfg = cartpole_config(Np=10, Nu=4, solver=QpSettings(eps_abs=1e-4, eps_rel=1e-4))
    ctl = MpcController(cfg)
    for _ in range(50):
        x0 = rng.standard_normal(4) * [2.0, 3.0, 1.0, 3.0]
        step = ctl.step(x0, rng.uniform(-20, 20, 1), reference_preview(
            CALIBRATION_WAYPOINTS, rng.uniform(0, 40), cfg.Np, 0.01), warm_start=False)
        assert step.solver_status in (Status.SOLVED, Status.MAX_ITER_REACHED)
        assert np.all(np.isfinite(step.u))


def test_double_integrator_regulation():
    cfg = di_config(Np=20, Nu=5, u_max=2.0, solver=QpSettings(eps_abs=1e-6, eps_rel=1e-6))
    ctl = MpcController(cfg)
    x = np.array([1.0, 0.0])
    u = np.zeros(1)
    costs = []
    for _ in range(100):
        step = ctl.step(x, u, np.zeros((cfg.Np, 2)))
        costs.append(step.predicted_cost)
        u = step.u
        x = cfg.model.A @ x + cfg.model.B @ u
    assert np.linalg.norm(x) < 1e-2
    assert all(b <= a + 1e-4 for a, b in zip(costs, costs[1:]))


def test_input_saturation():
    cfg = di_config(Np=10, Nu=3, u_max=0.1)
    step = MpcController(cfg).step(np.array([5.0, 0.0]), [0.0], np.zeros((cfg.Np, 2)))
    assert step.u[0] == pytest.approx(-0.1, abs=1e-3)
    cfg = di_config(Np=10, Nu=3, u_max=0.1)
    step = MpcController(cfg).step(np.array([-5.0, 0.0]), [0.0], np.zeros((cfg.Np, 2)))
    assert step.u[0] == pytest.approx(0.1, abs=1e-3)


def test_tolerances_are_live():
    x0 = np.array([0.8, 0.5, 0.15, -0.4])
    y_ref = reference_preview(CALIBRATION_WAYPOINTS, 9.0, 20, 0.01)
    moves = []
    for eps in (1e-1, 1e-7):
        cfg = cartpole_config(solver=QpSettings(eps_abs=eps, eps_rel=eps, max_iter=100_000))
        moves.append(MpcController(cfg).step(x0, [0.0], y_ref, warm_start=False).u[0])
    assert abs(moves[0] - moves[1]) > 1e-9


def test_warm_and_cold_agree():
    cfg = cartpole_config(solver=QpSettings(eps_abs=1e-9, eps_rel=1e-9, max_iter=400_000))
    warm, cold = MpcController(cfg), MpcController(cfg)
    x = np.array([0.0, 0.0, 0.05, 0.0])
    u = np.zeros(1)
    for i in range(20):
        y_ref = reference_preview(CALIBRATION_WAYPOINTS, 6.0 + 0.01 * i, cfg.Np, 0.01)
        sw = warm.step(x, u, y_ref, warm_start=True)
        sc = cold.step(x, u, y_ref, warm_start=False)
        assert sw.u[0] == pytest.approx(sc.u[0], abs=1e-5)
        u = sw.u
        x = cfg.model.A @ x + cfg.model.B @ u


def test_dimension_mismatch():
    cfg = cartpole_config()
    with pytest.raises(ValueError):
        build_qp(cfg, np.zeros(3), [0.0], np.zeros((cfg.Np, 2)))
    with pytest.raises(ValueError):
        build_qp(cfg, np.zeros(4), [0.0], np.zeros((cfg.Np - 1, 2)))


def test_config_validation():
    with pytest.raises(ValueError):
        di_config(Np=5, Nu=6)
    with pytest.raises(ValueError):
        MpcWeights(Qy=[1, 1], Qu=[0], Qdu=[0], Qeps=0.0)
    with pytest.raises(ValueError):
        MpcLimits(y_min=[1], y_max=[0], u_min=[0], u_max=[1], du_min=[0], du_max=[1],
                  Vy=[1], Vu=[1], Vdu=[1])


def test_reference_preview():
    prev = reference_preview(CALIBRATION_WAYPOINTS, 7.49, 1, 0.01)
    assert prev[0, 0] == pytest.approx(0.4)
    assert np.all(prev[:, 1] == 0)
    late = reference_preview(CALIBRATION_WAYPOINTS, 45.0, 5, 0.01)
    np.testing.assert_allclose(late[:, 0], 0.8)
    a = reference_preview(CALIBRATION_WAYPOINTS, 3.0, 30, 0.02)
    for k in range(1, 30):
        b = reference_preview(CALIBRATION_WAYPOINTS, 3.0 + k * 0.02, 1, 0.02)
        assert a[k, 0] == pytest.approx(b[0, 0], abs=1e-12)
    with pytest.raises(ValueError):
        reference_preview([], 0.0, 3, 0.01)
    with pytest.raises(ValueError):
        reference_preview([(1, 0), (0, 1)], 0.0, 3, 0.01)
