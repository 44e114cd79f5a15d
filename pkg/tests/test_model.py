import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from mpc_calib.model import (
    LinearModel,
    cartpole_model,
    discretize_zoh,
    expm,
    linearize_upright,
)
from mpc_calib.plant import CartPoleParams, derivatives

PARAMS = CartPoleParams()


def series_expm(X, squarings=20, terms=30):
    """Independent oracle: fixed heavy scaling, long Taylor series, squaring."""
    Xs = np.asarray(X, dtype=float) / 2.0**squarings
    E = np.eye(X.shape[0])
    term = np.eye(X.shape[0])
    for k in range(1, terms):
        term = term @ Xs / k
        E = E + term
    for _ in range(squarings):
        E = E @ E
    return E


def fd_jacobians(params, h=1e-6):
    A = np.zeros((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        A[:, j] = (derivatives(e, 0.0, params) - derivatives(-e, 0.0, params)) / (2 * h)
    B = ((derivatives(np.zeros(4), h, params) - derivatives(np.zeros(4), -h, params)) / (2 * h))[:, None]
    return A, B


def test_linearization_matches_finite_differences():
    A_c, B_c, C, D = linearize_upright(PARAMS)
    A_fd, B_fd = fd_jacobians(PARAMS)
    np.testing.assert_allclose(A_c, A_fd, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(B_c, B_fd, rtol=1e-6, atol=1e-9)
    assert A_c[3, 2] == pytest.approx(0.7 * 9.81 / 0.15)
    assert B_c[1, 0] == 2.0
    np.testing.assert_array_equal(A_c[0], [0, 1, 0, 0])
    np.testing.assert_array_equal(A_c[2], [0, 0, 0, 1])
    np.testing.assert_array_equal(C, [[1, 0, 0, 0], [0, 0, 1, 0]])
    assert not D.any()


def test_linearization_error_is_second_order():
    A_c, B_c, _, _ = linearize_upright(PARAMS)
    rng = np.random.default_rng(0)
    x, u = rng.standard_normal(4), rng.standard_normal()
    errs = []
    for s in (1e-2, 5e-3):
        f = derivatives(s * x, s * u, PARAMS)
        errs.append(np.linalg.norm(f - A_c @ (s * x) - B_c[:, 0] * s * u))
    # at least quadratic decay (the odd symmetry of the dynamics makes it cubic)
    assert errs[0] / errs[1] >= 4.0 * 0.95


def test_double_integrator_closed_form():
    Ts = 0.1
    A, B = discretize_zoh(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([0.0, 1.0]), Ts)
    np.testing.assert_allclose(A, [[1, Ts], [0, 1]], atol=1e-15)
    np.testing.assert_allclose(B[:, 0], [Ts**2 / 2, Ts], atol=1e-15)


def test_zero_dynamics():
    B_c = np.array([[1.0], [2.0]])
    A, B = discretize_zoh(np.zeros((2, 2)), B_c, 0.3)
    np.testing.assert_array_equal(A, np.eye(2))
    np.testing.assert_allclose(B, 0.3 * B_c, rtol=1e-15)


@pytest.mark.parametrize("Ts_ms", [1, 6, 22, 50])
def test_cartpole_zoh_against_oracles(Ts_ms):
    Ts = Ts_ms * 1e-3
    A_c, B_c, _, _ = linearize_upright(PARAMS)
    A, B = discretize_zoh(A_c, B_c, Ts)
    aug = np.zeros((5, 5))
    aug[:4, :4] = A_c * Ts
    aug[:4, 4:] = B_c * Ts
    E = series_expm(aug)
    np.testing.assert_allclose(A, E[:4, :4], rtol=0, atol=1e-9)
    np.testing.assert_allclose(B, E[:4, 4:], rtol=0, atol=1e-9)
    E2 = scipy.linalg.expm(aug)
    np.testing.assert_allclose(A, E2[:4, :4], rtol=0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 50), st.integers(1, 50))
def test_semigroup(t1, t2):
    A_c, B_c, _, _ = linearize_upright(PARAMS)
    A1, _ = discretize_zoh(A_c, B_c, t1 * 1e-3)
    A2, _ = discretize_zoh(A_c, B_c, t2 * 1e-3)
    A12, _ = discretize_zoh(A_c, B_c, (t1 + t2) * 1e-3)
    np.testing.assert_allclose(A1 @ A2, A12, rtol=0, atol=1e-9 * np.abs(A12).max())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 20.0))
def test_expm_random(seed, scale):
    X = np.random.default_rng(seed).standard_normal((5, 5)) * scale / 5
    ref = scipy.linalg.expm(X)
    np.testing.assert_allclose(expm(X), ref, rtol=1e-9, atol=1e-12 * np.abs(ref).max())


def test_invalid_inputs():
    with pytest.raises(ValueError):
        discretize_zoh(np.zeros((2, 2)), np.ones((2, 1)), 0.0)
    with pytest.raises(FloatingPointError):
        discretize_zoh(np.array([[1e308]]), np.ones((1, 1)), 1.0)
    with pytest.raises(ValueError):
        LinearModel(A=np.eye(2), B=np.ones((3, 1)), C=np.ones((1, 2)), D=np.zeros((1, 1)), Ts=0.1)


def test_cartpole_model_dimensions():
    mdl = cartpole_model(PARAMS, 0.01)
    assert (mdl.nx, mdl.nu, mdl.ny) == (4, 1, 2)
    assert mdl.Ts == 0.01 and not mdl.D.any()
    assert math.isclose(np.abs(np.linalg.eigvals(mdl.A)).max(),
                        math.exp(0.01 * np.linalg.eigvals(linearize_upright(PARAMS)[0]).real.max()),
                        rel_tol=1e-9)
