"""Cart-pole plant: nonlinear dynamics, RK4 integration and noise sources.

State ordering everywhere in the package is ``(p, p_dot, phi, phi_dot)`` with
``phi`` measured from the upright position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class PlantState(NamedTuple):
    p: float
    p_dot: float
    phi: float
    phi_dot: float


@dataclass(frozen=True)
class CartPoleParams:
    """Physical parameters of the cart-pole.

    Attributes
    ----------
    M : float
        Cart mass (kg).
    m : float
        Pendulum mass (kg).
    L : float
        Rod length (m).
    g : float
        Gravitational acceleration (m/s^2).
    b : float
        Cart friction coefficient (N/(m/s)).
    f_phi : float
        Pivot friction coefficient (m/s).
    """

    M: float = 0.5
    m: float = 0.2
    L: float = 0.3
    g: float = 9.81
    b: float = 0.1
    f_phi: float = 0.1

    def __post_init__(self):
        for name in ("M", "m", "L", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"CartPoleParams.{name} must be positive")
        # friction may be switched off for conservation checks
        for name in ("b", "f_phi"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"CartPoleParams.{name} must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.M, self.m, self.L, self.g, self.b, self.f_phi)


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement and actuator noise levels.

    Measurement noise is white and independent per channel; the actuator
    disturbance is first-order low-pass filtered white noise whose stationary
    standard deviation is ``sigma_F``.
    """

    sigma_p: float = 0.02
    sigma_phi: float = 0.01
    sigma_F: float = 0.1
    omega_F: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_p, self.sigma_phi, self.sigma_F) < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if not self.omega_F > 0:
            raise ValueError("omega_F must be positive")


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite plant input")


def derivatives(state, F: float, params: CartPoleParams) -> np.ndarray:
    """Right-hand side of the cart-pole ODE.

    The two coupled equations of motion are linear in ``(p_ddot, phi_ddot)``;
    they are solved in closed form (the determinant ``L (M + m sin^2 phi)``
    is always positive).
    """
    p, p_dot, phi, phi_dot = (float(v) for v in state)
    F = float(F)
    _check_finite(p, p_dot, phi, phi_dot, F)
    M, m, L, g, b, f_phi = params.as_tuple()
    s, c = math.sin(phi), math.cos(phi)
    r1 = F + m * L * phi_dot * phi_dot * s - b * p_dot
    r2 = g * s - f_phi * phi_dot
    det = L * (M + m * s * s)
    p_ddot = (L * r1 - m * L * c * r2) / det
    phi_ddot = ((M + m) * r2 - c * r1) / det
    return np.array([p_dot, p_ddot, phi_dot, phi_ddot])


def step_rk4(state, F: float, dt: float, params: CartPoleParams) -> np.ndarray:
    """Advance the plant by one classical Runge-Kutta step with ``F`` held."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=float)
    k1 = derivatives(x, F, params)
    k2 = derivatives(x + 0.5 * dt * k1, F, params)
    k3 = derivatives(x + 0.5 * dt * k2, F, params)
    k4 = derivatives(x + dt * k3, F, params)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def mechanical_energy(state, params: CartPoleParams) -> float:
    """Kinetic plus potential energy (pendulum mass lumped at the rod tip)."""
    p, p_dot, phi, phi_dot = (float(v) for v in state)
    M, m, L, g, _, _ = params.as_tuple()
    kinetic = (
        0.5 * (M + m) * p_dot**2
        + m * L * p_dot * phi_dot * math.cos(phi)
        + 0.5 * m * L**2 * phi_dot**2
    )
    return kinetic + m * g * L * math.cos(phi)


def measure(state, noise: NoiseSpec, rng: np.random.Generator) -> tuple[float, float]:
    """Noisy readout of cart position and pendulum angle."""
    e_p, e_phi = rng.standard_normal(2)
    return (
        float(state[0]) + noise.sigma_p * e_p,
        float(state[2]) + noise.sigma_phi * e_phi,
    )


def actuator_noise_coefficients(dt: float, noise: NoiseSpec) -> tuple[float, float]:
    """Exact ZOH discretization of ``w' = -omega_F w + white``.

    Returns ``(a, b)`` for the recursion ``w+ = a w + b e`` with unit-variance
    ``e``; ``b`` is chosen so the stationary std is ``sigma_F``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = math.exp(-noise.omega_F * dt)
    b = noise.sigma_F * math.sqrt(1.0 - a * a)
    return a, b


def actuator_noise_step(
    w: float, dt: float, noise: NoiseSpec, rng: np.random.Generator
) -> float:
    a, b = actuator_noise_coefficients(dt, noise)
    return a * w + b * float(rng.standard_normal())


@dataclass
class NoiseRealization:
    """Pre-drawn noise sequences for one experiment on the fast grid.

    ``force[k]`` is the actuator disturbance acting during plant step ``k``;
    ``e_p[k]`` and ``e_phi[k]`` corrupt the measurement taken at sample ``k``.
    """

    e_p: np.ndarray
    e_phi: np.ndarray
    force: np.ndarray

    @classmethod
    def draw(cls, n_samples: int, dt: float, noise: NoiseSpec) -> "NoiseRealization":
        rng = np.random.default_rng(noise.seed)
        e_p = noise.sigma_p * rng.standard_normal(n_samples)
        e_phi = noise.sigma_phi * rng.standard_normal(n_samples)
        a, b = actuator_noise_coefficients(dt, noise)
        drive = rng.standard_normal(n_samples)
        force = np.empty(n_samples)
        # start from the stationary distribution
        w = noise.sigma_F * drive[0]
        force[0] = w
        for k in range(1, n_samples):
            w = a * w + b * drive[k]
            force[k] = w
        return cls(e_p=e_p, e_phi=e_phi, force=force)
