"""Global optimization by RBF surrogate plus inverse-distance exploration.

Box-constrained black-box minimization: Latin-hypercube initial design, an
inverse-quadratic RBF interpolant of the samples, an acquisition function
that trades the surrogate value against an IDW variance estimate and a
distance-from-samples bonus, minimized by particle swarm at each step.
All internal work happens on coordinates normalized to ``[-1, 1]``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

FAILED_VALUE = 1e6
DUPLICATE_TOL = 1e-8
DUPLICATE_RADIUS = 1e-3


@dataclass(frozen=True)
class PsoSettings:
    swarm_size: int = 40
    iterations: int = 100
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    vmax_fraction: float = 0.5

    def __post_init__(self):
        if self.swarm_size < 1 or self.iterations < 1:
            raise ValueError("swarm_size and iterations must be >= 1")
        if not self.vmax_fraction > 0:
            raise ValueError("vmax_fraction must be positive")


@dataclass(frozen=True)
class GlisSettings:
    n_max: int = 100
    n_init: int | None = None
    alpha: float = 1.0
    delta: float = 0.5
    rbf_epsilon: float = 1.0
    rbf_kind: str = "inverse_quadratic"
    svd_tol: float = 1e-6
    pso: PsoSettings = field(default_factory=PsoSettings)
    seed: int = 0

    def __post_init__(self):
        if self.n_init is not None and not 1 <= self.n_init < self.n_max:
            raise ValueError("need 1 <= n_init < n_max")
        if self.alpha < 0 or self.delta < 0:
            raise ValueError("alpha and delta must be nonnegative")
        if not self.rbf_epsilon > 0:
            raise ValueError("rbf_epsilon must be positive")
        if self.rbf_kind != "inverse_quadratic":
            raise ValueError("only the inverse_quadratic kernel is supported")
        if not 0 <= self.svd_tol < 1:
            raise ValueError("svd_tol must lie in [0, 1)")

    def initial_samples(self, d: int) -> int:
        return self.n_init if self.n_init is not None else 2 * d


@dataclass
class GlisState:
    X: np.ndarray
    F: np.ndarray
    beta: np.ndarray | None = None
    epsilon: float = 1.0

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.F))

    def append(self, x, f):
        self.X = np.vstack([self.X, np.asarray(x, dtype=float)[None, :]])
        self.F = np.append(self.F, float(f))
        self.beta = None


@dataclass
class GlisResult:
    x_best: np.ndarray
    f_best: float
    history: list
    state: GlisState


def lhs_sample(n: int, d: int, seed=None) -> np.ndarray:
    """Latin hypercube design on ``[-1, 1]^d``: one point per stratum per axis."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    u = (rng.permuted(np.tile(np.arange(n), (d, 1)), axis=1).T + rng.random((n, d))) / n
    return 2.0 * u - 1.0


def _kernel(r, epsilon: float):
    return 1.0 / (1.0 + (epsilon * r) ** 2)


def _pairwise(Xa, Xb):
    d2 = (
        np.sum(Xa * Xa, axis=1)[:, None]
        + np.sum(Xb * Xb, axis=1)[None, :]
        - 2.0 * Xa @ Xb.T
    )
    return np.sqrt(np.maximum(d2, 0.0))


def fit_surrogate(X, F, settings: GlisSettings | None = None) -> np.ndarray:
    """RBF coefficients from a truncated-SVD solve of the interpolation system."""
    settings = settings or GlisSettings()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    F = np.asarray(F, dtype=float)
    if X.shape[0] < 1 or X.shape[0] != F.shape[0]:
        raise ValueError("need at least one sample and matching X, F")
    M = _kernel(_pairwise(X, X), settings.rbf_epsilon)
    U, s, Vt = np.linalg.svd(M)
    keep = s > settings.svd_tol * s[0]
    return Vt[keep].T @ ((U[:, keep].T @ F) / s[keep])


def surrogate(x, state: GlisState) -> np.ndarray:
    x = np.atleast_2d(x)
    return _kernel(_pairwise(x, state.X), state.epsilon) @ state.beta


def acquisition(x, state: GlisState, settings: GlisSettings | None = None) -> np.ndarray:
    """Acquisition ``fhat - alpha*s - delta*dF*z`` at each row of ``x``.

    At an archived sample the exploration terms vanish and the value is that
    sample's objective (up to surrogate interpolation error).
    """
    settings = settings or GlisSettings()
    if state.beta is None:
        state.beta = fit_surrogate(state.X, state.F, settings)
        state.epsilon = settings.rbf_epsilon
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dist = _pairwise(x, state.X)
    fhat = _kernel(dist, state.epsilon) @ state.beta
    hit = dist <= 1e-12
    at_sample = hit.any(axis=1)
    with np.errstate(divide="ignore"):
        w = 1.0 / dist**4
    w[hit] = 0.0
    wsum = w.sum(axis=1)
    v = w / np.where(wsum > 0, wsum, 1.0)[:, None]
    s = np.sqrt(np.maximum(np.sum(v * (state.F[None, :] - fhat[:, None]) ** 2, axis=1), 0.0))
    with np.errstate(divide="ignore"):
        z = (2.0 / math.pi) * np.arctan(1.0 / wsum)
    s[at_sample] = 0.0
    z[at_sample] = 0.0
    dF = max(float(np.max(state.F) - np.min(state.F)), 1.0)
    return fhat - settings.alpha * s - settings.delta * dF * z


def pso_minimize(objective: Callable, lb, ub, settings: PsoSettings | None = None,
                 seed=None) -> tuple[np.ndarray, float]:
    """Global-best particle swarm with velocity clamping and clipping to the box.

    ``objective`` is evaluated on a whole swarm at once: it maps an
    ``(n, d)`` array to ``n`` values.
    """
    settings = settings or PsoSettings()
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub)) and np.all(lb <= ub)):
        raise ValueError("PSO needs finite bounds with lb <= ub")
    rng = np.random.default_rng(seed)
    n, d = settings.swarm_size, lb.size
    span = ub - lb
    vmax = settings.vmax_fraction * span
    pos = lb + rng.random((n, d)) * span
    vel = (rng.random((n, d)) * 2.0 - 1.0) * vmax
    val = np.asarray(objective(pos), dtype=float)
    pbest, pval = pos.copy(), val.copy()
    g = int(np.argmin(pval))
    gbest, gval = pbest[g].copy(), float(pval[g])
    for _ in range(settings.iterations):
        r1 = rng.random((n, d))
        r2 = rng.random((n, d))
        vel = (
            settings.inertia * vel
            + settings.cognitive * r1 * (pbest - pos)
            + settings.social * r2 * (gbest - pos)
        )
        np.clip(vel, -vmax, vmax, out=vel)
        pos = np.clip(pos + vel, lb, ub)
        val = np.asarray(objective(pos), dtype=float)
        better = val < pval
        pbest[better] = pos[better]
        pval[better] = val[better]
        g = int(np.argmin(pval))
        if pval[g] < gval:
            gbest, gval = pbest[g].copy(), float(pval[g])
    return gbest, gval


def _call(objective, x):
    try:
        out = objective(x)
    except Exception as exc:  # any failure of the black box becomes a bad sample
        log.warning("objective failed at %s: %s", np.array2string(x, precision=4), exc)
        return FAILED_VALUE, {"error": f"{type(exc).__name__}: {exc}"}
    if isinstance(out, tuple):
        f, info = out
    else:
        f, info = out, {}
    f = float(f)
    if not math.isfinite(f):
        return FAILED_VALUE, {**info, "error": "non-finite objective"}
    return f, info


def glis_run(objective: Callable, bounds, settings: GlisSettings | None = None,
             callback: Callable | None = None) -> GlisResult:
    """Minimize ``objective`` over a box within ``settings.n_max`` evaluations.

    Parameters
    ----------
    objective : callable
        Maps a point (natural coordinates) to a float, or to ``(float, info)``
        where ``info`` is a JSON-serializable dict stored in the history.
    bounds : (lb, ub) pair, or anything with ``len()`` (taken as ``[-1, 1]^len``)
    callback : callable, optional
        Called with each history record right after its evaluation.
    """
    settings = settings or GlisSettings()
    if isinstance(bounds, tuple) and len(bounds) == 2:
        lb = np.atleast_1d(np.asarray(bounds[0], dtype=float))
        ub = np.atleast_1d(np.asarray(bounds[1], dtype=float))
    else:
        lb = -np.ones(len(bounds))
        ub = np.ones(len(bounds))
    if lb.shape != ub.shape or np.any(lb >= ub) or not np.all(np.isfinite(lb + ub)):
        raise ValueError("bounds must be finite with lb < ub")
    d = lb.size
    n_init = settings.initial_samples(d)
    if settings.n_max < n_init + 1:
        raise ValueError("budget must exceed the number of initial samples")
    rng = np.random.default_rng(settings.seed)
    center, half = 0.5 * (ub + lb), 0.5 * (ub - lb)

    def to_natural(xn):
        return center + half * xn

    history = []
    state = GlisState(X=np.empty((0, d)), F=np.empty(0), epsilon=settings.rbf_epsilon)

    def evaluate(xn):
        xn = np.clip(xn, -1.0, 1.0)
        f, info = _call(objective, to_natural(xn))
        state.append(xn, f)
        rec = {
            "index": len(history),
            "x": to_natural(xn).tolist(),
            "f": f,
            "incumbent": float(np.min(state.F)),
            "info": info,
        }
        history.append(rec)
        if callback is not None:
            callback(rec)

    for xn in lhs_sample(n_init, d, rng):
        evaluate(xn)
    lo, hi = -np.ones(d), np.ones(d)
    while len(history) < settings.n_max:
        state.beta = fit_surrogate(state.X, state.F, settings)
        x_new, _ = pso_minimize(
            lambda P: acquisition(P, state, settings), lo, hi, settings.pso, rng
        )
        if np.min(np.linalg.norm(state.X - x_new, axis=1)) <= DUPLICATE_TOL:
            step = rng.uniform(-1.0, 1.0, d)
            step *= DUPLICATE_RADIUS / max(np.linalg.norm(step), 1e-300)
            x_new = np.clip(x_new + step, -1.0, 1.0)
        evaluate(x_new)
    b = state.best_index
    return GlisResult(x_best=to_natural(state.X[b]), f_best=float(state.F[b]),
                      history=history, state=state)


def settings_to_dict(settings: GlisSettings) -> dict:
    return asdict(settings)


def write_history_jsonl(path, history: list) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, default=_json_default) + "\n")


def read_history_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
