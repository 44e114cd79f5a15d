import itertools

import numpy as np
import pytest

from mpc_calib import _backend


def box_qp_oracle(P, q, lo, hi):
    """Minimize ``1/2 z'Pz + q'z`` over a box by enumerating active sets.

    Each coordinate is free, at its lower bound or at its upper bound; the
    candidate satisfying all KKT conditions is the solution (P positive
    definite makes it unique).
    """
    n = len(q)
    for pattern in itertools.product((0, -1, 1), repeat=n):
        z = np.zeros(n)
        fixed = np.array([s != 0 for s in pattern])
        for i, s in enumerate(pattern):
            if s == -1:
                z[i] = lo[i]
            elif s == 1:
                z[i] = hi[i]
        free = ~fixed
        if free.any():
            rhs = -q[free] - P[np.ix_(free, fixed)] @ z[fixed]
            z[free] = np.linalg.solve(P[np.ix_(free, free)], rhs)
        if np.any(z < lo - 1e-12) or np.any(z > hi + 1e-12):
            continue
        grad = P @ z + q
        # multipliers of active bounds must have the right sign
        ok = all(
            (s == -1 and grad[i] >= -1e-12) or (s == 1 and grad[i] <= 1e-12) or s == 0
            for i, s in enumerate(pattern)
        )
        if ok:
            return z
    raise AssertionError("no KKT point found")


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
