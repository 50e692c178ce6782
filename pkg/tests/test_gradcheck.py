import numpy as np
import pytest

from peerstyle import gradcheck as G
from peerstyle import tensor as T
from peerstyle.tensor import Tensor


@pytest.mark.parametrize("scope", list(G.SCOPES))
def test_scope_passes(scope):
    results = G.run_scope(scope, seed=0)
    assert results
    bad = [(r.name, r.max_rel_error) for r in results if not r.passed()]
    assert not bad


def test_other_seed_passes():
    assert all(r.passed() for r in G.run_scope("op", seed=5))


def broken_tanh(x):
    out = np.tanh(x.data)
    return T.make_node(out, (x,), lambda g: (g * (1.0 - out * out) * 1.01,), "tanh")


def test_broken_backward_is_caught(monkeypatch):
    monkeypatch.setattr(T, "tanh", broken_tanh)
    (res,) = G.run_scope("op", seed=0, only={"tanh"})
    assert not res.passed()
    assert res.max_rel_error > 1e-3


def test_check_gradients_direct():
    x = Tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
    err, count, kinks = G.check_gradients(lambda: T.sum_(T.exp(x) * x), [x])
    assert err < 1e-8 and count == 3 and kinks == 0


def test_kink_is_recognised():
    """An input sitting within the probe step of a ReLU corner is classed as a kink, not a failure."""
    x = Tensor(np.array([2e-5, 0.7]), requires_grad=True)
    err, count, kinks = G.check_gradients(lambda: T.sum_(T.relu(x)), [x])
    assert kinks == 1 and err < 1e-8


def test_zero_gradient_entries_use_joint_scale():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    unused_dir = Tensor(np.array([0.5]), requires_grad=True)
    err, _, _ = G.check_gradients(lambda: T.sum_(T.square(a)) + T.sum_(unused_dir * 0.0), [a, unused_dir])
    assert err < 1e-8


def test_unknown_scope():
    with pytest.raises(KeyError):
        G.run_scope("everything")


def test_result_nan_fails():
    assert not G.CheckResult("x", float("nan"), 1).passed()
    assert G.CheckResult("x", 1e-6, 1).passed()
