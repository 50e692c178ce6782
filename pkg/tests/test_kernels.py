import os
import subprocess
import sys

import numpy as np
import pytest

from peerstyle import _kernels as K

numba_only = pytest.mark.skipif(not hasattr(K, "im2col_numba"), reason="numba not installed")


@pytest.fixture
def shapes(rng):
    xp = rng.normal(size=(2, 3, 9, 9))
    return {
        "im2col": (xp, 3, 3, 2, 4, 4),
        "col2im": (rng.normal(size=(2, 27, 16)), 3, 9, 9, 3, 3, 2, 4, 4),
        "knn": (rng.integers(-2, 3, size=(30, 4)).astype(float), rng.integers(-2, 3, size=(25, 4)).astype(float), 5),
        "gather": (rng.normal(size=(2, 3, 10)), rng.integers(0, 10, size=(2, 6, 3))),
        "scatter": (rng.normal(size=(2, 3, 6, 3)), rng.integers(0, 10, size=(2, 6, 3)), 10),
    }


@numba_only
@pytest.mark.parametrize("name", ["im2col", "col2im", "knn", "gather", "scatter"])
def test_numba_matches_numpy(shapes, name):
    args = shapes[name]
    a = getattr(K, name + "_numpy")(*args)
    b = getattr(K, name + "_numba")(*args)
    for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        assert x.shape == y.shape
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


def test_knn_tie_break_lower_index():
    q = np.zeros((1, 1))
    t = np.array([[1.0], [-1.0], [1.0], [0.5]])
    idx, d2 = K.knn(q, t, 3)
    assert idx[0].tolist() == [3, 0, 1]
    np.testing.assert_allclose(d2[0], [0.25, 1.0, 1.0])


def test_col2im_is_adjoint_of_im2col(rng):
    xp = rng.normal(size=(1, 2, 7, 7))
    cols = K.im2col(xp, 3, 3, 2, 3, 3)
    other = rng.normal(size=cols.shape)
    lhs = np.sum(cols * other)
    rhs = np.sum(xp * K.col2im(other, 2, 7, 7, 3, 3, 2, 3, 3))
    assert lhs == pytest.approx(rhs, rel=1e-12)


SNIPPET = """
import numpy as np
from peerstyle import _kernels
from peerstyle.config import TrainConfig
from peerstyle.nn import NetConfig
from peerstyle.data import DatasetSpec
from peerstyle.training import Trainer
net = NetConfig.desk(base_width=4, content_channels=4, style_local_channels=4,
                     style_global_channels=4, n_resnet_blocks=1, k_neighbors=2)
t = Trainer(TrainConfig.desk(net=net, data=DatasetSpec(crop_size=16)))
rows = t.run(2)
print(_kernels.BACKEND)
print(repr([r["total"] for r in rows]))
"""


def run_backend(flag):
    env = dict(os.environ, PEERSTYLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", SNIPPET], env=env, capture_output=True, text=True, check=True)
    backend, totals = out.stdout.strip().splitlines()
    return backend, eval(totals)


@numba_only
def test_env_flag_selects_backend_and_training_agrees():
    b0, t0 = run_backend("0")
    b1, t1 = run_backend("1")
    assert (b0, b1) == ("numpy", "numba")
    np.testing.assert_allclose(t0, t1, rtol=1e-9)
