import numpy as np
import pytest

from peerstyle.nn import LatentCode
from peerstyle.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def random_code(rng, b=1, c=(4, 4, 4), hw=(4, 4), scale=1.0):
    h, w = hw
    return LatentCode(Tensor(rng.normal(size=(b, c[0], h, w)) * scale),
                      Tensor(rng.normal(size=(b, c[1], h, w)) * scale),
                      Tensor(rng.normal(size=(b, c[2], 1, 1)) * scale))


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar f() w.r.t. every entry of array x (mutated in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


# one line per acceptance criterion, filled by test_acceptance.py and printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
