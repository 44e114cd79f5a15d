"""Design-vector decoding, closed-loop experiments and the penalized index."""

from __future__ import annotations

import csv
import gc
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .estimator import EstimatorError, ObserverConfig, kalman_gain
from .model import cartpole_model
from .mpc import (
    ControllerFailure,
    MpcConfig,
    MpcController,
    MpcLimits,
    MpcWeights,
    reference_preview,
)
from .plant import CartPoleParams, NoiseRealization, NoiseSpec
from .qp import QpSettings

CALIBRATION_WAYPOINTS = ((0, 0), (5, 0), (10, 0.8), (20, 0.8), (25, 0), (30, 0), (40, 0.8))
VALIDATION_WAYPOINTS = ((0, 0), (4, 0.6), (12, 0.6), (16, -0.5), (26, -0.5), (30, 0.3), (40, 0.3))

INTEGRAL_FLOOR = 1e-30
# "cpu" ignores time the process spends preempted, useful on shared hosts
CLOCKS = {"wall": time.perf_counter, "cpu": time.thread_time}
ROLES = (
    "mpc-weight",
    "horizon",
    "horizon-fraction",
    "sampling-time",
    "solver-log-tolerance",
    "observer-covariance",
)


@dataclass(frozen=True)
class ThetaCoord:
    name: str
    role: str
    lower: float
    upper: float
    scale: str = "linear"
    integer: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower bound must be below upper bound")
        if self.scale not in ("linear", "log10"):
            raise ValueError(f"{self.name}: scale must be 'linear' or 'log10'")
        if self.scale == "log10" and self.lower <= 0:
            raise ValueError(f"{self.name}: log-scaled bounds must be positive")

    def _span(self):
        if self.scale == "log10":
            return math.log10(self.lower), math.log10(self.upper)
        return self.lower, self.upper

    def to_value(self, v: float) -> float:
        """Map a normalized coordinate in ``[-1, 1]`` to natural units."""
        lo, hi = self._span()
        s = lo + (v + 1.0) * 0.5 * (hi - lo)
        return 10.0**s if self.scale == "log10" else s

    def to_normalized(self, value: float) -> float:
        lo, hi = self._span()
        s = math.log10(value) if self.scale == "log10" else value
        return 2.0 * (s - lo) / (hi - lo) - 1.0


@dataclass(frozen=True)
class ThetaSpec:
    coords: tuple[ThetaCoord, ...]

    def __post_init__(self):
        names = [c.name for c in self.coords]
        if len(set(names)) != len(names):
            raise ValueError("duplicate coordinate names")

    def __len__(self):
        return len(self.coords)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.coords]

    def values(self, theta) -> dict[str, float]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self),):
            raise ValueError(f"theta must have {len(self)} entries")
        if np.any(np.abs(theta) > 1.0 + 1e-9) or not np.all(np.isfinite(theta)):
            raise ValueError("theta outside the normalized box [-1, 1]")
        return {c.name: c.to_value(float(np.clip(v, -1, 1))) for c, v in zip(self.coords, theta)}

    def normalize(self, values: dict[str, float]) -> np.ndarray:
        return np.array([c.to_normalized(values[c.name]) for c in self.coords])

    def by_role(self, role: str) -> list[ThetaCoord]:
        return [c for c in self.coords if c.role == role]


def cartpole_theta_spec() -> ThetaSpec:
    """The 14 tuning knobs of the cart-pole study."""
    w = dict(role="mpc-weight", lower=1e-16, upper=1.0, scale="log10")
    cov = dict(role="observer-covariance", lower=1e-16, upper=1.0, scale="log10")
    tol = dict(role="solver-log-tolerance", lower=-7.0, upper=-1.0)
    return ThetaSpec(
        (
            ThetaCoord("qy11", **w),
            ThetaCoord("qy22", **w),
            ThetaCoord("qdu", **w),
            ThetaCoord("Np", "horizon", 5, 300, integer=True),
            ThetaCoord("eps_c", "horizon-fraction", 0.3, 1.0),
            ThetaCoord("Ts_ms", "sampling-time", 1, 50, integer=True),
            ThetaCoord("log_eps_abs", **tol),
            ThetaCoord("log_eps_rel", **tol),
            ThetaCoord("ww1", **cov),
            ThetaCoord("ww2", **cov),
            ThetaCoord("ww3", **cov),
            ThetaCoord("ww4", **cov),
            ThetaCoord("wv1", **cov),
            ThetaCoord("wv2", **cov),
        )
    )


def round_half_up(x: float) -> int:
    # the tiny offset absorbs products like 0.45 * 10 = 4.4999...
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True)
class FixedDesign:
    """Controller settings that are not tuned."""

    F_max: float = 10.0
    p_max: float = 1.0
    Qeps: float = 1e4
    Vy: float = 1.0
    Vu: float = 1.0
    Vdu: float = 1.0
    du_max: float = math.inf
    Qu: float = 0.0
    qp: QpSettings = field(default_factory=QpSettings)


@dataclass
class DecodedTheta:
    values: dict
    Np: int
    Nu: int
    Ts: float
    eps_abs: float
    eps_rel: float

    def as_dict(self) -> dict:
        return {**self.values, "Np": self.Np, "Nu": self.Nu, "Ts": self.Ts,
                "eps_abs": self.eps_abs, "eps_rel": self.eps_rel}


def decode(theta, spec: ThetaSpec | None = None, plant: CartPoleParams | None = None,
           fixed: FixedDesign | None = None):
    """Turn a normalized design point into controller and observer settings.

    Returns
    -------
    (MpcConfig, ObserverConfig, DecodedTheta)
    """
    spec = spec or cartpole_theta_spec()
    plant = plant or CartPoleParams()
    fixed = fixed or FixedDesign()
    v = spec.values(theta)
    Np = min(max(round_half_up(v["Np"]), 5), 300)
    Nu = min(max(round_half_up(v["eps_c"] * Np), 1), Np)
    Ts_ms = min(max(round_half_up(v["Ts_ms"]), 1), 50)
    Ts = Ts_ms * 1e-3
    eps_abs = 10.0 ** v["log_eps_abs"]
    eps_rel = 10.0 ** v["log_eps_rel"]

    model = cartpole_model(plant, Ts)
    weights = MpcWeights(
        Qy=np.array([v["qy11"], v["qy22"]]),
        Qu=np.array([fixed.Qu]),
        Qdu=np.array([v["qdu"]]),
        Qeps=fixed.Qeps,
    )
    limits = MpcLimits(
        y_min=[-fixed.p_max, -np.inf], y_max=[fixed.p_max, np.inf],
        u_min=[-fixed.F_max], u_max=[fixed.F_max],
        du_min=[-fixed.du_max], du_max=[fixed.du_max],
        Vy=[fixed.Vy, fixed.Vy], Vu=[fixed.Vu], Vdu=[fixed.Vdu],
    )
    solver = QpSettings(
        eps_abs=eps_abs, eps_rel=eps_rel, rho=fixed.qp.rho, sigma=fixed.qp.sigma,
        alpha=fixed.qp.alpha, max_iter=fixed.qp.max_iter, check_every=fixed.qp.check_every,
        scaling_iters=fixed.qp.scaling_iters,
    )
    cfg = MpcConfig(model=model, Np=Np, Nu=Nu, weights=weights, limits=limits, solver=solver)
    obs = ObserverConfig.diagonal(
        [v["ww1"], v["ww2"], v["ww3"], v["ww4"]], [v["wv1"], v["wv2"]]
    )
    info = DecodedTheta(values=v, Np=Np, Nu=Nu, Ts=Ts, eps_abs=eps_abs, eps_rel=eps_rel)
    return cfg, obs, info


@dataclass(frozen=True)
class ExperimentSpec:
    """Closed-loop experiment definition (plant, noise, reference, limits)."""

    T_exp: float = 40.0
    dt: float = 1e-3
    x0: tuple = (0.0, 0.0, math.pi / 18, 0.0)
    waypoints: tuple = CALIBRATION_WAYPOINTS
    phi_limit: float = math.pi / 6
    p_limit: float = 1.1
    eta: float = 0.8
    F_sat: float = 10.0
    abort_on_overrun: bool = False
    clock: str = "wall"
    plant: CartPoleParams = field(default_factory=CartPoleParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        if not (self.T_exp > 0 and self.dt > 0):
            raise ValueError("T_exp and dt must be positive")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.clock not in CLOCKS:
            raise ValueError(f"clock must be one of {sorted(CLOCKS)}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T_exp / self.dt))


@dataclass
class ExperimentResult:
    traces: dict
    T_stop: float
    T_calc: float
    J_perf: float
    ell_rt: float
    ell_stop: float
    J_tilde: float
    stop_reason: str = "completed"
    Ts: float = float("nan")
    n_mpc_steps: int = 0
    qp_iter_mean: float = 0.0
    qp_iter_max: int = 0
    n_max_iter: int = 0
    decoded: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "J_tilde": self.J_tilde, "J_perf": self.J_perf, "ell_rt": self.ell_rt,
            "ell_stop": self.ell_stop, "T_stop": self.T_stop, "T_calc": self.T_calc,
            "stop_reason": self.stop_reason, "Ts": self.Ts, "n_mpc_steps": self.n_mpc_steps,
            "qp_iter_mean": self.qp_iter_mean, "qp_iter_max": self.qp_iter_max,
            "n_max_iter": self.n_max_iter,
        }


def rt_penalty(T_calc: float, Ts: float, eta: float = 0.8) -> float:
    budget = eta * Ts
    if T_calc > budget:
        return math.log1p(1e3 * (T_calc - budget) / budget)
    return 0.0


def stop_penalty(T_stop: float, T_exp: float) -> float:
    if T_stop < T_exp:
        return math.log1p(1e3 * (T_exp - T_stop) / T_exp)
    return 0.0


def tracking_integral(t, p, p_ref, phi, T_stop: float, T_exp: float, dt: float) -> float:
    """Left-rectangle integral of ``10|p_ref - p| + 30|phi|`` on the sample grid.

    Samples ``0..K-1`` cover ``[0, T_stop)``; if the run stopped early the
    integrand is held at its value at ``T_stop`` over the remaining
    ``[T_stop, T_exp)``.
    """
    g = 10.0 * np.abs(np.asarray(p_ref) - np.asarray(p)) + 30.0 * np.abs(np.asarray(phi))
    K = int(round(T_stop / dt))
    N = int(round(T_exp / dt))
    total = float(np.sum(g[:K]) * dt)
    if K < N:
        total += float(g[K]) * (N - K) * dt
    return total


def performance_index(traces: dict, T_stop: float, T_calc: float, Ts_mpc: float,
                      eta: float = 0.8, T_exp: float = 40.0, dt: float = 1e-3):
    """Return ``(J_perf, ell_rt, ell_stop, J_tilde)``."""
    if len(traces["t"]) == 0:
        raise ValueError("empty traces")
    integral = tracking_integral(traces["t"], traces["p"], traces["p_ref"], traces["phi"],
                                 T_stop, T_exp, dt)
    J_perf = math.log(max(integral, INTEGRAL_FLOOR))
    ell_rt = rt_penalty(T_calc, Ts_mpc, eta)
    ell_stop = stop_penalty(T_stop, T_exp)
    return J_perf, ell_rt, ell_stop, J_perf + ell_rt + ell_stop


def run_experiment(theta, exp: ExperimentSpec | None = None, spec: ThetaSpec | None = None,
                   fixed: FixedDesign | None = None, seed: int | None = None,
                   backend=None) -> ExperimentResult:
    """Simulate one closed-loop experiment for the design point ``theta``.

    The plant is integrated on the fast grid; every ``Ts`` the observer and
    MPC run, and the per-tick wall-clock time of QP build + solve + observer
    update is recorded. Failures become early termination, never exceptions.
    """
    exp = exp or ExperimentSpec()
    kernels = _backend.load(backend) if backend else _backend.kernels
    noise = exp.noise if seed is None else NoiseSpec(
        exp.noise.sigma_p, exp.noise.sigma_phi, exp.noise.sigma_F, exp.noise.omega_F, seed
    )
    cfg, obs_cfg, info = decode(theta, spec, exp.plant, fixed)
    dt, N = exp.dt, exp.n_steps
    n_ts = max(1, int(round(info.Ts / dt)))
    t_grid = np.arange(N + 1) * dt
    wp = np.asarray(exp.waypoints, dtype=float)
    p_ref = np.interp(t_grid, wp[:, 0], wp[:, 1])
    rng_noise = NoiseRealization.draw(N + 1, dt, noise)

    X = np.empty((N + 1, 4))
    X[0] = exp.x0
    u_log = np.zeros(N + 1)
    x = np.array(exp.x0, dtype=float)
    params = exp.plant.as_tuple()

    stop_reason = "completed"
    K = N
    T_calc = 0.0
    iters = []
    n_max_iter = 0
    try:
        L, _ = kalman_gain(cfg.model, obs_cfg)
        controller = MpcController(cfg, backend=backend)
    except (EstimatorError, ArithmeticError, np.linalg.LinAlgError):
        controller = None
        K = 0
        stop_reason = "design_failure"

    if controller is not None:
        A, B, C = cfg.model.A, cfg.model.B, cfg.model.C
        clock = CLOCKS[exp.clock]
        x_hat = np.zeros(4)
        u_prev = np.zeros(1)
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            i = 0
            while i < N:
                y = np.array([x[0] + rng_noise.e_p[i], x[2] + rng_noise.e_phi[i]])
                t0 = clock()
                try:
                    y_ref = reference_preview(wp, i * dt, cfg.Np, info.Ts)
                    step = controller.step(x_hat, u_prev, y_ref)
                    u = min(max(float(step.u[0]), -exp.F_sat), exp.F_sat)
                    x_hat = A @ x_hat + B[:, 0] * u + L @ (y - C @ x_hat)
                    if not np.all(np.isfinite(x_hat)):
                        raise FloatingPointError("non-finite state estimate")
                except (ControllerFailure, FloatingPointError, ArithmeticError):
                    T_calc = max(T_calc, clock() - t0)
                    K, stop_reason = i, "numerical_error"
                    break
                elapsed = clock() - t0
                T_calc = max(T_calc, elapsed)
                iters.append(step.iterations)
                n_max_iter += step.solver_status.value == "max_iter_reached"
                if exp.abort_on_overrun and elapsed > exp.eta * info.Ts:
                    K, stop_reason = i, "deadline_miss"
                    break
                nsteps = min(n_ts, N - i)
                done, violated = kernels.simulate_segment(
                    x, u, rng_noise.force, i, nsteps, dt, params, exp.p_limit, exp.phi_limit, X
                )
                u_log[i : i + done] = u
                i += done
                u_prev = np.array([u])
                if violated:
                    K = i
                    stop_reason = "track_limit" if abs(X[i, 0]) >= exp.p_limit else "pendulum_fall"
                    break
        finally:
            if gc_was_enabled:
                gc.enable()
        if K < N or stop_reason == "completed":
            u_log[K] = u_log[K - 1] if K > 0 else 0.0

    T_stop = K * dt
    traces = {
        "t": t_grid[: K + 1],
        "p": X[: K + 1, 0].copy(),
        "p_ref": p_ref[: K + 1],
        "phi": X[: K + 1, 2].copy(),
        "F": u_log[: K + 1] + rng_noise.force[: K + 1],
        "u_mpc": u_log[: K + 1].copy(),
    }
    J_perf, ell_rt, ell_stop, J_tilde = performance_index(
        traces, T_stop, T_calc, info.Ts, exp.eta, exp.T_exp, dt
    )
    return ExperimentResult(
        traces=traces, T_stop=T_stop, T_calc=T_calc, J_perf=J_perf, ell_rt=ell_rt,
        ell_stop=ell_stop, J_tilde=J_tilde, stop_reason=stop_reason, Ts=info.Ts,
        n_mpc_steps=len(iters), qp_iter_mean=float(np.mean(iters)) if iters else 0.0,
        qp_iter_max=int(max(iters)) if iters else 0, n_max_iter=int(n_max_iter),
        decoded=info.as_dict(),
    )


TRACE_COLUMNS = ("t", "p", "p_ref", "phi", "F", "u_mpc")


def write_trace_csv(path, traces: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        cols = [np.asarray(traces[c]) for c in TRACE_COLUMNS]
        for row in zip(*cols):
            w.writerow([f"{v:.6f}" if j == 0 else repr(float(v)) for j, v in enumerate(row)])


def read_trace_csv(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    return {c: np.asarray(data[c], dtype=float) for c in TRACE_COLUMNS}
