import numpy as np
import pytest

from peerstyle import losses as L
from peerstyle import tensor as T
from peerstyle.model import StyleTransferModel
from peerstyle.nn import LatentCode, NetConfig
from peerstyle.tensor import ShapeError, Tensor

from conftest import numeric_grad, random_code


def np_huber_dist(a, b):
    """Plain numpy smooth-L1 distance, one pixel loop per batch item."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    bsz, _, h, w = d.shape
    total = 0.0
    for x in d.reshape(-1):
        total += 0.5 * x * x if abs(x) < 1 else abs(x) - 0.5
    return total / (bsz * h * w)


def np_style(z1, z2):
    return (np_huber_dist(z1.style_local.data, z2.style_local.data)
            + np_huber_dist(z1.style_global.data, z2.style_global.data))


def map1(values):
    return Tensor(np.asarray(values, dtype=float).reshape(1, 1, 1, -1))


# ---------------------------------------------------------------- smooth_l1

def test_smooth_l1_zero(rng):
    z = rng.normal(size=(2, 3, 4, 4))
    assert L.smooth_l1(z, z).item() == 0.0


def test_smooth_l1_examples():
    assert L.smooth_l1(map1([0.5, 2.0]), map1([0.0, 0.0])).item() == pytest.approx(0.8125, abs=1e-15)
    assert L.smooth_l1(map1([-3.0]), map1([0.0])).item() == pytest.approx(2.5, abs=1e-15)


def test_smooth_l1_divides_by_pixels_not_channels():
    one = L.smooth_l1(Tensor(np.full((1, 1, 2, 2), 0.5)), Tensor(np.zeros((1, 1, 2, 2)))).item()
    four = L.smooth_l1(Tensor(np.full((1, 4, 2, 2), 0.5)), Tensor(np.zeros((1, 4, 2, 2)))).item()
    assert one == pytest.approx(0.125) and four == pytest.approx(0.5)


def test_smooth_l1_matches_loop_reference(rng):
    a, b = rng.normal(size=(3, 4, 5, 2)) * 2, rng.normal(size=(3, 4, 5, 2))
    assert L.smooth_l1(a, b).item() == pytest.approx(np_huber_dist(a, b), abs=1e-12)


def test_smooth_l1_rejects_mismatch(rng):
    with pytest.raises(ShapeError):
        L.smooth_l1(rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 2, 3, 4)))
    with pytest.raises(ShapeError):
        L.smooth_l1(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))


@pytest.mark.parametrize("junction", [1.0, -1.0])
def test_smooth_l1_gradient_continuous_at_junction(junction):
    def grad_at(v):
        x = Tensor(np.array(v).reshape(1, 1, 1, 1), requires_grad=True)
        L.smooth_l1(x, np.zeros((1, 1, 1, 1))).backward()
        return x.grad.item()
    eps = 1e-9
    assert abs(grad_at(junction - eps) - grad_at(junction + eps)) < 1e-6
    # one-sided numeric slopes agree as well
    f = lambda v: L.smooth_l1(map1([v]), map1([0.0])).item()  # noqa: E731
    h = 1e-7
    left = (f(junction) - f(junction - h)) / h
    right = (f(junction + h) - f(junction)) / h
    assert abs(left - right) < 1e-6


def test_smooth_l1_gradient_matches_finite_differences(rng):
    a = rng.normal(size=(2, 2, 3, 3)) * 1.5
    a[np.abs(np.abs(a) - 1) < 1e-3] += 0.01
    b = np.zeros_like(a)
    x = Tensor(a.copy(), requires_grad=True)
    L.smooth_l1(x, b).backward()
    num = numeric_grad(lambda: L.smooth_l1(a, b).item(), a)
    np.testing.assert_allclose(x.grad, num, atol=1e-8)


# ---------------------------------------------------------------- style metric

def test_style_metric_collapsed_case(rng):
    z = random_code(rng)
    assert L.style_metric_loss(z, z, z, z, margin=1.0).item() == 1.0


def test_style_metric_satisfied_margin(rng):
    zi, zt = random_code(rng), random_code(rng, scale=0.0)
    zt.style_local.data[:] = 10.0
    assert L.style_metric_loss(zi, zi, zt, zt, margin=1.0).item() == 0.0


def test_style_metric_hand_value():
    def code(local, glob):
        return LatentCode(Tensor(np.zeros((1, 1, 1, 2))), Tensor(np.asarray(local, float).reshape(1, 1, 1, 2)),
                          Tensor(np.full((1, 1, 1, 1), glob)))
    zi1, zi2 = code([0.0, 0.0], 0.0), code([0.5, 0.0], 0.0)
    zt1, zt2 = code([0.0, 0.0], 0.5), code([0.0, 0.0], 0.5)
    # pos: local 0.125/2 + 0 + 0 = 0.0625; neg: global 0.125 + (local 0.0625 + global 0.125)
    pos, neg = L.style_metric_terms(zi1, zi2, zt1, zt2)
    assert pos.item() == pytest.approx(0.0625, abs=1e-12)
    assert neg.item() == pytest.approx(0.3125, abs=1e-12)
    assert L.style_metric_loss(zi1, zi2, zt1, zt2, 1.0).item() == pytest.approx(0.0625 + 0.6875, abs=1e-12)


def test_style_metric_monotone(rng):
    """Tighter classes that drift further apart never raise the loss."""
    base, other, noise = random_code(rng, scale=0.2), random_code(rng, scale=0.2), random_code(rng, scale=0.5)

    def moved(z, shift, jitter):
        return LatentCode(z.content, Tensor(z.style_local.data + shift + jitter * noise.style_local.data),
                          Tensor(z.style_global.data + shift + jitter * noise.style_global.data))

    values = []
    for t in np.linspace(0, 1, 6):
        zi2 = moved(base, 0.0, 1 - t)
        zt1, zt2 = moved(other, 3 * t, 0.0), moved(other, 3 * t, 1 - t)
        values.append(L.style_metric_loss(base, zi2, zt1, zt2, 1.0).item())
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] == 0.0


# ---------------------------------------------------------------- identity and cycles

def test_identity_loss_examples(rng):
    x = Tensor(np.full((1, 1, 1, 1), 0.5))
    assert L.identity_loss(x, x, lambda v: Tensor(np.zeros(v.shape))).item() == pytest.approx(0.25)
    a, b = Tensor(rng.normal(size=(1, 3, 4, 4))), Tensor(rng.normal(size=(1, 3, 4, 4)))
    assert L.identity_loss(a, b, lambda v: v).item() == 0.0
    half = lambda v: v * 0.5  # noqa: E731
    assert L.identity_loss(a, b, half).item() == L.identity_loss(b, a, half).item()


@pytest.fixture(scope="module")
def tiny_model():
    cfg = NetConfig.desk(base_width=4, content_channels=4, style_local_channels=4,
                         style_global_channels=4, n_resnet_blocks=1, k_neighbors=2)
    return StyleTransferModel(cfg, np.random.default_rng(3))


def test_cycle_losses_fixed_point_are_zero(rng):
    zi, zt = random_code(rng), random_code(rng)
    ident = lambda z: z  # noqa: E731
    assert L.latent_cycle_loss(zi, zt, ident, ident).item() == 0.0
    swap = lambda a, b: LatentCode(a.content, b.style_local, b.style_global)  # noqa: E731
    assert L.transfer_cycle_loss(zi, zt, ident, ident, swap).item() == 0.0
    assert L.content_cycle_loss(zi, zt, ident, ident, swap).item() == 0.0


def test_compositional_oracles(tiny_model):
    m = tiny_model
    rng = np.random.default_rng(9)
    xi, xt = rng.uniform(-1, 1, size=(2, 3, 16, 16)), rng.uniform(-1, 1, size=(2, 3, 16, 16))
    with T.no_grad():
        zi, zt = m.encode(xi), m.encode(xt)
        enc, dec, aux, tp = m.encoder, m.main_decoder, m.aux_decoder, m.tpfr

        got = L.content_cycle_loss(zi, zt, enc, dec, tp).item()
        a = enc(dec(tp(zi, zt))).content.data
        b = enc(dec(tp(zi, zi))).content.data
        want = np_huber_dist(a, zi.content.data) + np_huber_dist(b, zi.content.data)
        assert got == pytest.approx(want, abs=1e-12)

        got = L.latent_cycle_loss(zi, zt, enc, aux).item()
        want = 0.0
        for z in (zi, zt):
            r = enc(aux(z))
            want += np_huber_dist(r.content.data, z.content.data) + np_style(r, z)
        assert got == pytest.approx(want, abs=1e-12)

        got = L.transfer_cycle_loss(zi, zt, enc, dec, tp).item()
        zf = enc(dec(tp(zi, zt)))
        want = np_huber_dist(zf.content.data, zi.content.data) + np_style(zf, zt)
        assert got == pytest.approx(want, abs=1e-12)

        for value in (L.content_cycle_loss(zi, zt, enc, dec, tp), L.latent_cycle_loss(zi, zt, enc, aux),
                      L.transfer_cycle_loss(zi, zt, enc, dec, tp)):
            assert value.item() >= 0


# ---------------------------------------------------------------- relativistic losses

def test_ragan_constant_discriminator():
    c = np.full((2, 1, 3, 3), 0.7)
    assert L.ragan_gen_loss(c, c).item() == pytest.approx(2.0)
    assert L.ragan_disc_loss(c, c).item() == pytest.approx(2.0)


def test_ragan_examples():
    ones, zeros = np.ones((2, 1, 3, 3)), np.zeros((2, 1, 3, 3))
    assert L.ragan_disc_loss(ones, zeros).item() == pytest.approx(0.0)
    assert L.ragan_gen_loss(ones, zeros).item() == pytest.approx(8.0)
    assert L.ragan_gen_loss(zeros, ones).item() == pytest.approx(0.0)
    assert L.ragan_disc_loss(zeros, ones).item() == pytest.approx(8.0)


def test_ragan_shift_invariance(rng):
    real, fake = rng.normal(size=(2, 1, 4, 4)), rng.normal(size=(2, 1, 4, 4))
    for fn in (L.ragan_gen_loss, L.ragan_disc_loss):
        base = fn(real, fake).item()
        for c in (-5.0, 0.3, 17.0):
            assert abs(fn(real + c, fake + c).item() - base) <= 1e-10


def test_ragan_matches_direct_formula(rng):
    real, fake = rng.normal(size=(3, 1, 2, 2)), rng.normal(size=(3, 1, 2, 2))
    gen = np.mean((real - fake.mean() + 1) ** 2) + np.mean((real.mean() - fake + 1) ** 2)
    disc = np.mean((real - fake.mean() - 1) ** 2) + np.mean((real.mean() - fake - 1) ** 2)
    assert L.ragan_gen_loss(real, fake).item() == pytest.approx(gen, abs=1e-12)
    assert L.ragan_disc_loss(real, fake).item() == pytest.approx(disc, abs=1e-12)


def test_ragan_rejects_empty():
    with pytest.raises(ShapeError):
        L.ragan_gen_loss(np.zeros((0, 1, 2, 2)), np.zeros((1, 1, 2, 2)))


# ---------------------------------------------------------------- totals and report

def test_totals():
    assert L.aux_total(0, 0, 0, 0) == 0
    assert L.aux_total(1.0, 1.0, 1.0, 1.0, lam=25.0) == 28.0
    assert L.main_total(1.0, 2.0, 0.5, lam=25.0) == 15.5


def test_loss_report():
    r = L.LossReport(z_cont=1, z_style=2, aux_z_cycle=3, aux_idt=0.5, gen=1, z_transf=1, main_idt=0.1, disc_total=2)
    r.aux_total = L.aux_total(r.z_cont, r.z_style, r.aux_z_cycle, r.aux_idt)
    r.main_total = L.main_total(r.gen, r.z_transf, r.main_idt)
    assert r.check_totals(25.0)
    assert r.total == pytest.approx(r.aux_total + r.main_total + 2)
    assert r.first_nonfinite() is None
    r.gen = float("nan")
    assert r.first_nonfinite() == "gen"
    assert list(r.as_dict())[:3] == ["z_cont", "z_style_pos", "z_style_neg"]
