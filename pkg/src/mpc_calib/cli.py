"""Command-line entry point: ``calibrate``, ``evaluate`` and ``validate``.

Exit codes: 0 success, 1 validation run stopped early, 2 bad input
(config, theta file or arguments).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import _backend
from .calib import ExperimentResult, ExperimentSpec, run_experiment, write_trace_csv
from .config import ConfigError, RunConfig, load_config
from .glis import glis_run, write_history_jsonl

EXIT_OK = 0
EXIT_EARLY_STOP = 1
EXIT_INPUT = 2

log = logging.getLogger("mpc_calib")


class ThetaFileError(ValueError):
    pass


def read_theta(path, cfg: RunConfig) -> np.ndarray:
    """Read a design point from JSON: ``{"theta": [...]}`` in normalized units."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ThetaFileError(f"{path}: cannot read: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ThetaFileError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict) or "theta" not in data:
        raise ThetaFileError(f"{path}: expected an object with a 'theta' list")
    theta = data["theta"]
    n = len(cfg.theta)
    if (not isinstance(theta, list) or len(theta) != n
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in theta)):
        raise ThetaFileError(f"{path}: 'theta' must be a list of {n} numbers")
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)) or np.any(np.abs(theta) > 1.0):
        bad = [cfg.theta.names[i] for i in np.flatnonzero(~(np.abs(theta) <= 1.0))]
        raise ThetaFileError(f"{path}: theta outside [-1, 1] for {', '.join(bad)}")
    return theta


def theta_record(theta, cfg: RunConfig, result: ExperimentResult | None = None) -> dict:
    rec = {
        "names": cfg.theta.names,
        "theta": [float(v) for v in theta],
        "values": cfg.theta.values(theta),
    }
    if result is not None:
        rec["decoded"] = result.decoded
        rec["J"] = result.summary()
    return rec


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _finite(v):
    return v if isinstance(v, (int, str)) or (isinstance(v, float) and math.isfinite(v)) else None


def _report(result: ExperimentResult, label: str, exp: ExperimentSpec) -> str:
    d = result.decoded
    lines = [
        f"{label}: J~ = {result.J_tilde:.4f}  (J_perf {result.J_perf:.4f}, "
        f"ell_rt {result.ell_rt:.4f}, ell_stop {result.ell_stop:.4f})",
        f"  Ts = {d['Ts'] * 1e3:.0f} ms, Np = {d['Np']}, Nu = {d['Nu']}, "
        f"eps_abs = {d['eps_abs']:.2e}, eps_rel = {d['eps_rel']:.2e}",
        f"  T_calc = {result.T_calc * 1e3:.3f} ms (budget {exp.eta * d['Ts'] * 1e3:.3f} ms), "
        f"T_stop = {result.T_stop:.3f} s ({result.stop_reason})",
        f"  QP iterations: mean {result.qp_iter_mean:.1f}, max {result.qp_iter_max}, "
        f"capped {result.n_max_iter} of {result.n_mpc_steps}",
    ]
    return "\n".join(lines)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_calibrate(cfg: RunConfig, quiet: bool = False) -> int:
    out = _out_dir(cfg)
    exp = cfg.calibration_experiment()
    best = {"f": math.inf, "result": None}
    t_start = time.perf_counter()

    def objective(theta):
        res = run_experiment(theta, exp, cfg.theta, cfg.design)
        if res.J_tilde < best["f"]:
            best.update(f=res.J_tilde, result=res, theta=np.array(theta))
        info = {"decoded": res.decoded, "J": {k: _finite(v) for k, v in res.summary().items()}}
        return res.J_tilde, info

    def progress(rec):
        if quiet:
            return
        j = rec["info"].get("J", {})
        d = rec["info"].get("decoded", {})
        print(
            f"[{rec['index'] + 1:4d}/{cfg.glis.n_max}] J~ {rec['f']:9.4f}  incumbent {rec['incumbent']:9.4f}"
            f"  Ts {d.get('Ts', float('nan')) * 1e3:4.0f} ms  Np {d.get('Np', '-'):>3}"
            f"  {j.get('stop_reason', rec['info'].get('error', ''))}",
            flush=True,
        )

    result = glis_run(objective, cfg.theta, cfg.glis, callback=progress)
    write_history_jsonl(out / "history.jsonl", result.history)
    best_res = best["result"]
    _write_json(out / "best_theta.json", theta_record(result.x_best, cfg, best_res))
    if best_res is not None:
        write_trace_csv(out / "best_trace.csv", best_res.traces)
    if not quiet:
        print(f"done in {time.perf_counter() - t_start:.1f} s, backend {_backend.BACKEND}")
        if best_res is not None:
            print(_report(best_res, "best", exp))
        print(f"wrote {out / 'history.jsonl'}, {out / 'best_theta.json'}, {out / 'best_trace.csv'}")
    return EXIT_OK


def _single_run(cfg: RunConfig, theta, exp: ExperimentSpec, label: str, quiet: bool):
    out = _out_dir(cfg)
    res = run_experiment(theta, exp, cfg.theta, cfg.design)
    _write_json(out / f"{label}_result.json", theta_record(theta, cfg, res))
    write_trace_csv(out / f"{label}_trace.csv", res.traces)
    if not quiet:
        print(_report(res, label, exp))
        print(f"wrote {out / f'{label}_result.json'}, {out / f'{label}_trace.csv'}")
    return res


def cmd_evaluate(cfg: RunConfig, theta, quiet: bool = False) -> int:
    _single_run(cfg, theta, cfg.calibration_experiment(), "evaluate", quiet)
    return EXIT_OK


def cmd_validate(cfg: RunConfig, theta, quiet: bool = False) -> int:
    res = _single_run(cfg, theta, cfg.validation_experiment(), "validate", quiet)
    return EXIT_OK if res.stop_reason == "completed" else EXIT_EARLY_STOP


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--budget", type=int, default=argparse.SUPPRESS,
                        help="number of closed-loop experiments (overrides glis.n_max)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="base seed: optimizer and calibration noise use it, validation noise seed+1")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--backend", choices=["compiled", "python"], default=argparse.SUPPRESS,
                        help="kernel implementation (default: compiled when available)")
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(
        prog="mpc-calib",
        description="Performance-driven MPC calibration by global surrogate optimization.",
    )
    parser.add_argument("--budget", type=int, default=None, help=argparse.SUPPRESS)
    parser.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    parser.add_argument("--out-dir", default=None, help=argparse.SUPPRESS)
    parser.add_argument("--backend", default=None, help=argparse.SUPPRESS)
    parser.add_argument("-q", "--quiet", action="store_true", default=False, help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("calibrate", parents=[common], help="run the optimizer over closed-loop experiments")
    p.add_argument("config")
    for name, text in (("evaluate", "run one experiment on the calibration reference"),
                       ("validate", "run one experiment on the validation reference")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config")
        p.add_argument("theta", help="JSON file with a 'theta' list (e.g. best_theta.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.backend is not None:
            _backend.select(args.backend)
        cfg = load_config(args.config).with_overrides(args.budget, args.seed, args.out_dir)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, args.quiet)
        theta = read_theta(args.theta, cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, theta, args.quiet)
        return cmd_validate(cfg, theta, args.quiet)
    except (ConfigError, ThetaFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ImportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
