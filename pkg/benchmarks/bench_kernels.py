"""Compare the compiled kernels against the pure-Python fallback.

Times one MPC solve (warm-started ADMM on the cart-pole QP) and one full
40 s plant integration on the 1 ms grid for every available backend.

Usage: python benchmarks/bench_kernels.py [--np 50] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mpc_calib import _backend
from mpc_calib.calib import CALIBRATION_WAYPOINTS, cartpole_theta_spec, decode
from mpc_calib.mpc import MpcController, reference_preview
from mpc_calib.plant import CartPoleParams, NoiseRealization, NoiseSpec


def bench_mpc(backend: str, Np: int, repeat: int) -> float:
    spec = cartpole_theta_spec()
    theta = spec.normalize({
        "qy11": 1.0, "qy22": 1.0, "qdu": 1e-4, "Np": Np, "eps_c": 0.3, "Ts_ms": 10,
        "log_eps_abs": -4, "log_eps_rel": -4, "ww1": 1, "ww2": 1, "ww3": 1, "ww4": 1,
        "wv1": 1e-2, "wv2": 1e-2,
    })
    cfg, _, _ = decode(theta)
    ctl = MpcController(cfg, backend=backend)
    x = np.array([0.0, 0.0, 0.1, 0.0])
    u = np.zeros(1)
    best = np.inf
    for _ in range(repeat):
        ctl.reset()
        t0 = time.perf_counter()
        for k in range(50):
            step = ctl.step(x, u, reference_preview(CALIBRATION_WAYPOINTS, 5 + 0.01 * k, Np, 0.01))
            u = step.u
            x = cfg.model.A @ x + cfg.model.B @ u
        best = min(best, (time.perf_counter() - t0) / 50)
    return best


def bench_plant(backend: str, repeat: int) -> float:
    kernels = _backend.load(backend)
    n = 40_000
    force = NoiseRealization.draw(n + 1, 1e-3, NoiseSpec()).force
    params = CartPoleParams().as_tuple()
    best = np.inf
    for _ in range(repeat):
        x = np.array([0.0, 0.0, 0.01, 0.0])
        out = np.empty((n + 1, 4))
        t0 = time.perf_counter()
        kernels.simulate_segment(x, 0.0, force, 0, n, 1e-3, params, 1e9, 1e9, out)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--np", type=int, default=50, help="prediction horizon")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    rows = []
    for backend in _backend.available():
        rows.append((backend, bench_mpc(backend, args.np, args.repeat), bench_plant(backend, args.repeat)))
    print(f"{'backend':<10} {'MPC step (ms)':>14} {'40 s plant (ms)':>16}")
    for name, t_mpc, t_plant in rows:
        print(f"{name:<10} {t_mpc * 1e3:14.3f} {t_plant * 1e3:16.1f}")
    if len(rows) == 2:
        (_, c_mpc, c_plant), (_, p_mpc, p_plant) = rows
        print(f"speed-up   {p_mpc / c_mpc:14.1f}x {p_plant / c_plant:15.1f}x")


if __name__ == "__main__":
    main()
