import sys

import numpy as np
import pytest

from elastic_fcl.numeric import LabeledSet, MlpSpec


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-8):
    """Largest relative error over coordinates where either side exceeds ``floor``."""
    a = np.asarray(a)
    b = np.asarray(b)
    mask = (np.abs(a) > floor) | (np.abs(b) > floor)
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a[mask] - b[mask]) / np.maximum(np.abs(a[mask]), np.abs(b[mask]))))


def random_instance(rng, n=5, activation=None):
    d = int(rng.integers(1, 5))
    hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(1, 3)))
    act = activation or ("relu", "tanh")[int(rng.integers(2))]
    spec = MlpSpec((d, *hidden, 1), act)
    theta = rng.normal(0.0, 0.7, spec.n_params)
    data = LabeledSet(rng.uniform(-1, 1, (n, d)), rng.uniform(0, 1, n))
    return spec, theta, data


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
