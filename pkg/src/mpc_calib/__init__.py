"""Performance-driven calibration of an MPC + observer loop on a cart-pole."""

from ._backend import BACKEND, available
from .calib import (
    ExperimentResult,
    ExperimentSpec,
    FixedDesign,
    ThetaCoord,
    ThetaSpec,
    cartpole_theta_spec,
    decode,
    performance_index,
    run_experiment,
)
from .estimator import ObserverConfig, kalman_gain, observer_step
from .glis import GlisSettings, glis_run
from .model import LinearModel, cartpole_model, discretize_zoh, linearize_upright
from .mpc import MpcConfig, MpcController, MpcLimits, MpcWeights, build_qp, mpc_step
from .plant import CartPoleParams, NoiseSpec, derivatives, step_rk4
from .qp import AdmmSolver, QpProblem, QpSettings, Status, solve

__all__ = [
    "BACKEND", "available",
    "ExperimentResult", "ExperimentSpec", "FixedDesign", "ThetaCoord", "ThetaSpec",
    "cartpole_theta_spec", "decode", "performance_index", "run_experiment",
    "ObserverConfig", "kalman_gain", "observer_step",
    "GlisSettings", "glis_run",
    "LinearModel", "cartpole_model", "discretize_zoh", "linearize_upright",
    "MpcConfig", "MpcController", "MpcLimits", "MpcWeights", "build_qp", "mpc_step",
    "CartPoleParams", "NoiseSpec", "derivatives", "step_rk4",
    "AdmmSolver", "QpProblem", "QpSettings", "Status", "solve",
]

__version__ = "0.1.0"
