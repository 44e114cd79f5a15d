"""Kernel backend selection.

The compiled extension is used when importable; ``MPC_CALIB_BACKEND=python``
forces the pure-Python fallback.
"""

from __future__ import annotations

import os

from . import _pycore


def load(name: str | None = None):
    """Return the kernel module for ``name`` ("compiled", "python" or None=auto)."""
    if name is None:
        name = os.environ.get("MPC_CALIB_BACKEND", "auto")
    if name not in ("auto", "compiled", "python"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "python":
        return _pycore
    try:
        from . import _core
    except ImportError:
        if name == "compiled":
            raise
        return _pycore
    return _core


kernels = load()
BACKEND = kernels.BACKEND


def select(name: str | None):
    """Switch the process-wide default backend."""
    global kernels, BACKEND
    kernels = load(name)
    BACKEND = kernels.BACKEND
    return kernels


def available() -> list[str]:
    names = ["python"]
    try:
        from . import _core  # noqa: F401
    except ImportError:
        return names
    return ["compiled"] + names
