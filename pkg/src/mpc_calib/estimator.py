"""Stationary Kalman predictor gain and Luenberger observer update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LinearModel


class EstimatorError(RuntimeError):
    """Gain synthesis failed (no convergence or unstable error dynamics)."""


@dataclass(frozen=True)
class ObserverConfig:
    """Diagonal process (``Ww``) and measurement (``Wv``) noise covariances."""

    Ww: np.ndarray
    Wv: np.ndarray

    def __post_init__(self):
        for name in ("Ww", "Wv"):
            W = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if W.shape[0] != W.shape[1]:
                raise ValueError(f"{name} must be square")
            if not np.all(np.diag(W) > 0):
                raise ValueError(f"{name} diagonal entries must be positive")
            object.__setattr__(self, name, W)

    @classmethod
    def diagonal(cls, ww, wv) -> "ObserverConfig":
        return cls(Ww=np.diag(np.asarray(ww, dtype=float)), Wv=np.diag(np.asarray(wv, dtype=float)))


@dataclass
class ObserverState:
    x_hat: np.ndarray
    L: np.ndarray


def riccati_map(P, A, C, Ww, Wv):
    """One application of the filtering Riccati recursion."""
    S = C @ P @ C.T + Wv
    APCt = A @ P @ C.T
    return A @ P @ A.T - APCt @ np.linalg.solve(S, APCt.T) + Ww


def dare_residual(P, A, C, Ww, Wv) -> float:
    """Relative Frobenius residual of the filtering DARE at ``P``."""
    R = P - riccati_map(P, A, C, Ww, Wv)
    return float(np.linalg.norm(R) / max(np.linalg.norm(P), np.finfo(float).tiny))


def _predictor_gain(P, A, C, Wv):
    S = C @ P @ C.T + Wv
    return np.linalg.solve(S.T, (A @ P @ C.T).T).T


def _stein(F, Q):
    """Solve ``X = F X F^T + Q`` through the Kronecker form (small n only)."""
    n = F.shape[0]
    K = np.eye(n * n) - np.kron(F, F)
    X = np.linalg.solve(K, Q.reshape(-1)).reshape(n, n)
    return 0.5 * (X + X.T)


def solve_filter_dare(A, C, Ww, Wv, tol: float = 1e-12, max_doublings: int = 200,
                      _restart: bool = True):
    """Stabilizing solution of ``P = A P A' - A P C'(C P C' + Wv)^-1 C P A' + Ww``.

    Structure-preserving doubling produces the solution, which is then
    refined by Newton (Hewer) steps so the residual reaches round-off level
    even for covariances spanning many decades.
    """
    n = A.shape[0]
    Ak = A.T.copy()
    Gk = C.T @ np.linalg.solve(Wv, C)
    Hk = Ww.copy()
    eye = np.eye(n)
    for _ in range(max_doublings):
        W = eye + Gk @ Hk
        AW = np.linalg.solve(W.T, Ak.T).T  # Ak W^-1
        A_next = AW @ Ak
        G_next = Gk + AW @ Gk @ Ak.T
        H_next = Hk + Ak.T @ Hk @ np.linalg.solve(W, Ak)
        H_next = 0.5 * (H_next + H_next.T)
        G_next = 0.5 * (G_next + G_next.T)
        change = np.linalg.norm(H_next - Hk)
        Ak, Gk, Hk = A_next, G_next, H_next
        if not np.all(np.isfinite(Hk)):
            raise EstimatorError("Riccati doubling diverged")
        if change <= tol * max(np.linalg.norm(Hk), 1e-300):
            break
    else:
        raise EstimatorError("Riccati doubling did not converge")
    P = Hk
    if _restart and _spectral_radius(A - _predictor_gain(P, A, C, Wv) @ C) >= 1.0:
        # doubling lost the small eigen-directions to round-off; restart
        # Newton from a gain that is stabilizing for unit covariances
        P = solve_filter_dare(A, C, eye, np.eye(C.shape[0]), tol, max_doublings, False)
    return _newton_refine(P, A, C, Ww, Wv)


def _spectral_radius(F) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(F))))


def _newton_refine(P, A, C, Ww, Wv, max_steps: int = 50):
    """Hewer iterations; monotone from any stabilizing starting gain."""
    best, best_res = P, np.inf
    if _spectral_radius(A - _predictor_gain(P, A, C, Wv) @ C) < 1.0:
        best_res = dare_residual(P, A, C, Ww, Wv)
    for _ in range(max_steps):
        L = _predictor_gain(P, A, C, Wv)
        F = A - L @ C
        if _spectral_radius(F) >= 1.0:
            break
        P_new = _stein(F, Ww + L @ Wv @ L.T)
        res = dare_residual(P_new, A, C, Ww, Wv)
        step = np.linalg.norm(P_new - P)
        P = P_new
        if res < best_res:
            best, best_res = P, res
        if step <= 1e-15 * np.linalg.norm(P):
            break
    return best


def kalman_gain(model: LinearModel, cfg: ObserverConfig, residual_tol: float = 1e-10):
    """Stationary one-step-ahead predictor gain ``L = A P C'(C P C' + Wv)^-1``.

    Raises
    ------
    EstimatorError
        If the Riccati solution cannot be certified (residual above
        ``residual_tol``) or the error dynamics ``A - L C`` are not stable.
    """
    A, C = model.A, model.C
    # overflow in undetectable cases surfaces as a failed residual check below
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            P = solve_filter_dare(A, C, cfg.Ww, cfg.Wv)
        except np.linalg.LinAlgError as exc:
            raise EstimatorError(str(exc)) from exc
        res = dare_residual(P, A, C, cfg.Ww, cfg.Wv)
    if not res <= residual_tol:
        raise EstimatorError(f"DARE residual {res:.3e} above {residual_tol:.1e}")
    L = _predictor_gain(P, A, C, cfg.Wv)
    rho = float(np.max(np.abs(np.linalg.eigvals(A - L @ C))))
    if not rho < 1.0:
        raise EstimatorError(f"observer error dynamics unstable (rho={rho:.6f})")
    return L, P


def observer_step(obs: ObserverState, model: LinearModel, u_t, y_t) -> ObserverState:
    """Predictor update ``x+ = A x + B u + L (y - C x)``."""
    x = obs.x_hat
    innovation = np.asarray(y_t, dtype=float) - model.C @ x
    x_next = model.A @ x + model.B @ np.atleast_1d(u_t) + obs.L @ innovation
    if not np.all(np.isfinite(x_next)):
        raise FloatingPointError("non-finite state estimate")
    return ObserverState(x_hat=x_next, L=obs.L)
