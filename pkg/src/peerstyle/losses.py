"""Training objectives: smooth-L1 latent distance, cycle, metric and relativistic losses."""

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .nn import LatentCode
from .tensor import ShapeError, Tensor


def _huber(d):
    """0.5 d^2 where |d| < 1, |d| - 0.5 elsewhere."""
    a = np.abs(d.data)
    inner = a < 1.0
    out = np.where(inner, 0.5 * d.data * d.data, a - 0.5)

    def backward(g):
        return (g * np.where(inner, d.data, np.sign(d.data)),)

    return T.make_node(out, (d,), backward, "huber")


def smooth_l1(z1, z2):
    """Smooth-L1 distance summed over channels and pixels, divided by the pixel count.

    Batched inputs are averaged over the batch as well.
    """
    z1, z2 = T.as_tensor(z1), T.as_tensor(z2)
    if z1.shape != z2.shape:
        raise ShapeError(f"smooth_l1: shapes {z1.shape} and {z2.shape} differ")
    if z1.ndim != 4:
        raise ShapeError(f"smooth_l1 expects (B, N, H, W) tensors, got {z1.ndim}-D")
    b, _, h, w = z1.shape
    return T.sum_(_huber(z1 - z2)) / float(b * h * w)


def style_distance(s1, s2):
    """f over the full style code: local and global parts, each normalized by its own extent."""
    return smooth_l1(s1[0], s2[0]) + smooth_l1(s1[1], s2[1])


def latent_distance(z1, z2):
    return smooth_l1(z1.content, z2.content) + style_distance(z1.style(), z2.style())


def content_cycle_loss(z_i, z_t, encode, decode_main, tpfr):
    """Re-encoded stylizations keep the input's content code (transfer and self-transfer)."""
    stylized = encode(decode_main(tpfr(z_i, z_t)))
    selfed = encode(decode_main(tpfr(z_i, z_i)))
    return smooth_l1(stylized.content, z_i.content) + smooth_l1(selfed.content, z_i.content)


def style_metric_terms(z_i1, z_i2, z_t1, z_t2):
    pos = style_distance(z_i1.style(), z_i2.style()) + style_distance(z_t1.style(), z_t2.style())
    neg = style_distance(z_i1.style(), z_t1.style()) + style_distance(z_i2.style(), z_t2.style())
    return pos, neg


def style_metric_loss(z_i1, z_i2, z_t1, z_t2, margin=1.0):
    """Pull same-class style codes together, push the two classes at least ``margin`` apart."""
    pos, neg = style_metric_terms(z_i1, z_i2, z_t1, z_t2)
    return pos + T.maximum(margin - neg, 0.0)


def identity_loss(x_i, x_t, reconstruct):
    return smooth_l1(reconstruct(x_i), x_i) + smooth_l1(reconstruct(x_t), x_t)


def latent_cycle_loss(z_i, z_t, encode, decode_aux):
    return (latent_distance(encode(decode_aux(z_i)), z_i)
            + latent_distance(encode(decode_aux(z_t)), z_t))


def transfer_cycle_loss(z_i, z_t, encode, decode_main, tpfr):
    z_f = encode(decode_main(tpfr(z_i, z_t)))
    return smooth_l1(z_f.content, z_i.content) + style_distance(z_f.style(), z_t.style())


def _check_scores(real, fake):
    if real.size == 0 or fake.size == 0:
        raise ShapeError("relativistic loss needs non-empty score maps")


def ragan_gen_loss(real_scores, fake_scores):
    """Relativistic average least-squares loss for the generator (targets flipped)."""
    real, fake = T.as_tensor(real_scores), T.as_tensor(fake_scores)
    _check_scores(real, fake)
    return (T.mean(T.square(real - T.mean(fake) + 1.0))
            + T.mean(T.square(T.mean(real) - fake + 1.0)))


def ragan_disc_loss(real_scores, fake_scores):
    real, fake = T.as_tensor(real_scores), T.as_tensor(fake_scores)
    _check_scores(real, fake)
    return (T.mean(T.square(real - T.mean(fake) - 1.0))
            + T.mean(T.square(T.mean(real) - fake - 1.0)))


def aux_total(z_cont, z_style, aux_z_cycle, aux_idt, lam=25.0):
    return z_cont + z_style + aux_z_cycle + lam * aux_idt


def main_total(gen, z_transf, main_idt, lam=25.0):
    return gen + z_transf + lam * main_idt


@dataclass
class LossReport:
    z_cont: float = 0.0
    z_style_pos: float = 0.0
    z_style_neg: float = 0.0
    z_style: float = 0.0
    aux_idt: float = 0.0
    aux_z_cycle: float = 0.0
    aux_total: float = 0.0
    gen: float = 0.0
    z_transf: float = 0.0
    main_idt: float = 0.0
    main_total: float = 0.0
    disc_total: float = 0.0

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @property
    def total(self):
        return self.disc_total + self.main_total + self.aux_total

    def as_dict(self):
        out = {name: getattr(self, name) for name in self.field_names()}
        out["total"] = self.total
        return out

    def first_nonfinite(self):
        for name in self.field_names():
            if not np.isfinite(getattr(self, name)):
                return name
        return None

    def check_totals(self, lam, tol=1e-10):
        aux = self.z_cont + self.z_style + self.aux_z_cycle + lam * self.aux_idt
        main = self.gen + self.z_transf + lam * self.main_idt
        return abs(aux - self.aux_total) <= tol and abs(main - self.main_total) <= tol
