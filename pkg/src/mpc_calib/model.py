"""Linear prediction model: upright linearization and ZOH discretization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .plant import CartPoleParams


@dataclass(frozen=True)
class LinearModel:
    """Discrete-time model ``x+ = A x + B u``, ``y = C x + D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Ts: float

    def __post_init__(self):
        nx = self.A.shape[0]
        if self.A.shape != (nx, nx):
            raise ValueError("A must be square")
        if self.B.ndim != 2 or self.B.shape[0] != nx:
            raise ValueError("B must have shape (nx, nu)")
        if self.C.ndim != 2 or self.C.shape[1] != nx:
            raise ValueError("C must have shape (ny, nx)")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError("D must have shape (ny, nu)")
        if not self.Ts > 0:
            raise ValueError("Ts must be positive")

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def ny(self) -> int:
        return self.C.shape[0]


def linearize_upright(params: CartPoleParams):
    """Jacobians of the cart-pole ODE at the upright equilibrium.

    Returns
    -------
    (A_c, B_c, C, D)
        Continuous-time matrices. ``C`` selects ``(p, phi)``; ``D`` is zero.
    """
    M, m, L, g, b, f = params.as_tuple()
    A_c = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, -b / M, -m * g / M, m * f / M],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, b / (L * M), (M + m) * g / (L * M), -(M + m) * f / (L * M)],
        ]
    )
    B_c = np.array([[0.0], [1.0 / M], [0.0], [-1.0 / (L * M)]])
    C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    D = np.zeros((2, 1))
    return A_c, B_c, C, D


def expm(X: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Matrix exponential by truncated Taylor series with scaling and squaring.

    The argument is scaled by ``2**-s`` until its 1-norm is below 0.5, the
    series is summed until the next term falls below ``tol`` (relative), and
    the result is squared ``s`` times.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    norm = np.linalg.norm(X, 1)
    if not math.isfinite(norm):
        raise FloatingPointError("non-finite matrix exponential argument")
    s = 0
    if norm > 0.5:
        s = int(math.ceil(math.log2(norm) + 1.0))
    Xs = np.ldexp(X, -s)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 60):
        term = term @ Xs / k
        result = result + term
        if np.linalg.norm(term, 1) <= tol * np.linalg.norm(result, 1):
            break
    for _ in range(s):
        result = result @ result
    return result


def discretize_zoh(A_c: np.ndarray, B_c: np.ndarray, Ts: float):
    """Exact zero-order-hold discretization via the augmented exponential."""
    if not Ts > 0:
        raise ValueError("Ts must be positive")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.asarray(B_c, dtype=float)
    if B_c.ndim == 1:
        B_c = B_c[:, None]
    nx, nu = B_c.shape
    aug = np.zeros((nx + nu, nx + nu))
    aug[:nx, :nx] = A_c * Ts
    aug[:nx, nx:] = B_c * Ts
    with np.errstate(over="ignore", invalid="ignore"):
        E = expm(aug)
    A, B = E[:nx, :nx], E[:nx, nx:]
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise FloatingPointError("non-finite ZOH discretization")
    return A, B


def cartpole_model(params: CartPoleParams, Ts: float) -> LinearModel:
    A_c, B_c, C, D = linearize_upright(params)
    A, B = discretize_zoh(A_c, B_c, Ts)
    return LinearModel(A=A, B=B, C=C, D=D, Ts=Ts)
