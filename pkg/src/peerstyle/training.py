"""Interleaved optimization: auxiliary step, main step, discriminator step."""

import csv
import itertools
import logging
import os

import numpy as np

from . import losses as L
from . import tensor as T
from .data import Dataset, sample_batch, steps_per_epoch
from .model import StyleTransferModel
from .nn import frozen
from .optim import Adam

log = logging.getLogger(__name__)

RNG_STREAMS = ("init", "data", "dropout", "noise")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, component, step):
        super().__init__(f"non-finite loss component {component!r} at step {step}")
        self.component = component
        self.step = step


def make_rngs(seed):
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(RNG_STREAMS, children)}


def lr_schedule(epoch, cfg):
    """Constant base rate until ``decay_start_epoch``, then linear decay to zero at ``epochs``."""
    base = cfg.learning_rate
    if epoch < cfg.decay_start_epoch:
        return base
    span = cfg.epochs - cfg.decay_start_epoch
    if span == 0:
        return 0.0
    return base * max(0.0, (cfg.epochs - epoch) / span)


def make_optimizers(model, cfg):
    return {
        role: Adam(model.group(role), cfg.learning_rate, cfg.beta1, cfg.beta2)
        for role in ("aux", "main", "disc")
    }


def _check(values, step):
    for name, value in values.items():
        if not np.isfinite(value):
            raise NonFiniteLossError(name, step)


def train_step(batch, model, optimizers, rngs, cfg, step=0):
    """One aux -> main -> disc pass; returns the LossReport."""
    lam, mu = cfg.lambda_idt, cfg.margin_mu
    E, D_aux, D = model.encoder, model.aux_decoder, model.main_decoder
    C = model.discriminator
    dropout_rng, noise_rng = rngs["dropout"], rngs["noise"]

    def transfer(a, b):
        return model.tpfr(a, b, rng=dropout_rng, training=True)

    x_i, x_i2 = T.Tensor(batch.x_i), T.Tensor(batch.x_i2)
    x_t, x_t2 = T.Tensor(batch.x_t), T.Tensor(batch.x_t2)
    rep = L.LossReport()

    # (a) encoder + auxiliary decoder; main decoder, TPFR and critic are constants
    opt = optimizers["aux"]
    opt.zero_grad()
    with frozen(D, model.tpfr, C):
        z_i, z_i2, z_t, z_t2 = E(x_i), E(x_i2), E(x_t), E(x_t2)
        z_cont = L.content_cycle_loss(z_i, z_t, E, D, transfer)
        pos, neg = L.style_metric_terms(z_i, z_i2, z_t, z_t2)
        z_style = pos + T.maximum(mu - neg, 0.0)
        rec_i, rec_t = D_aux(z_i), D_aux(z_t)
        aux_idt = L.smooth_l1(rec_i, x_i) + L.smooth_l1(rec_t, x_t)
        aux_z_cycle = L.latent_distance(E(rec_i), z_i) + L.latent_distance(E(rec_t), z_t)
        aux = L.aux_total(z_cont, z_style, aux_z_cycle, aux_idt, lam)
        rep.z_cont, rep.z_style_pos, rep.z_style_neg = z_cont.item(), pos.item(), neg.item()
        rep.z_style, rep.aux_idt, rep.aux_z_cycle = z_style.item(), aux_idt.item(), aux_z_cycle.item()
        rep.aux_total = aux.item()
        _check({"z_cont": rep.z_cont, "z_style": rep.z_style, "aux_idt": rep.aux_idt,
                "aux_z_cycle": rep.aux_z_cycle, "aux_total": rep.aux_total}, step)
        aux.backward()
    opt.step()

    # (b) main decoder + TPFR heads; encoder fixed, critic only passes gradient
    opt = optimizers["main"]
    opt.zero_grad()
    with frozen(E, D_aux, C):
        z_i, z_t = E(x_i), E(x_t)
        x_f = D(transfer(z_i, z_t))
        real = C(x_t2, x_t, noise_rng, training=True)
        fake = C(x_f, x_t, noise_rng, training=True)
        gen = L.ragan_gen_loss(real, fake)
        z_f = E(x_f)
        z_transf = L.smooth_l1(z_f.content, z_i.content) + L.style_distance(z_f.style(), z_t.style())
        main_idt = (L.smooth_l1(D(transfer(z_i, z_i)), x_i)
                    + L.smooth_l1(D(transfer(z_t, z_t)), x_t))
        main = L.main_total(gen, z_transf, main_idt, lam)
        rep.gen, rep.z_transf, rep.main_idt = gen.item(), z_transf.item(), main_idt.item()
        rep.main_total = main.item()
        _check({"gen": rep.gen, "z_transf": rep.z_transf, "main_idt": rep.main_idt,
                "main_total": rep.main_total}, step)
        main.backward()
    opt.step()

    # (c) critic on (same-class painting pair) vs (generated, its conditioning style)
    opt = optimizers["disc"]
    opt.zero_grad()
    fake_img = x_f.detach()
    real = C(x_t2, x_t, noise_rng, training=True)
    fake = C(fake_img, x_t, noise_rng, training=True)
    disc = L.ragan_disc_loss(real, fake)
    rep.disc_total = disc.item()
    _check({"disc_total": rep.disc_total}, step)
    disc.backward()
    opt.step()
    return rep


LOG_FIELDS = ["step", "epoch", "lr"] + L.LossReport.field_names() + ["total"]


class Trainer:
    """Owns model, optimizers, RNG streams and the step counter."""

    def __init__(self, cfg, dataset=None):
        self.cfg = cfg
        self.rngs = make_rngs(cfg.seed)
        self.model = StyleTransferModel(cfg.net, self.rngs["init"])
        self.optimizers = make_optimizers(self.model, cfg)
        self.dataset = dataset if dataset is not None else Dataset(cfg.data)
        self.step = 0

    @property
    def steps_per_epoch(self):
        return steps_per_epoch(self.cfg.photos_per_epoch, self.cfg.batch_size)

    @property
    def total_steps(self):
        return self.cfg.epochs * self.steps_per_epoch

    @property
    def epoch(self):
        return self.step // self.steps_per_epoch

    def set_lr(self):
        lr = lr_schedule(self.epoch, self.cfg)
        for opt in self.optimizers.values():
            opt.lr = lr
        return lr

    def train_step(self):
        lr = self.set_lr()
        batch = sample_batch(self.dataset, self.cfg.batch_size, self.rngs["data"])
        report = train_step(batch, self.model, self.optimizers, self.rngs, self.cfg, self.step)
        row = {"step": self.step + 1, "epoch": self.epoch, "lr": lr}
        row.update(report.as_dict())
        self.step += 1
        return report, row

    def run(self, n_steps, on_row=None):
        """Run ``n_steps`` steps (capped at the schedule's end); returns the log rows."""
        rows = []
        n_steps = max(0, min(n_steps, self.total_steps - self.step))
        for _ in range(n_steps):
            _, row = self.train_step()
            rows.append(row)
            if on_row is not None:
                on_row(row)
        return rows


class CsvLog:
    """Append-only CSV training log; floats written with repr so they round-trip exactly."""

    def __init__(self, path, append=False):
        self.path = path
        fresh = not (append and os.path.exists(path))
        self.fh = open(path, "a" if not fresh else "w", newline="", encoding="utf-8")
        self.writer = csv.DictWriter(self.fh, fieldnames=LOG_FIELDS)
        if fresh:
            self.writer.writeheader()

    def write(self, row):
        self.writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        self.fh.flush()

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def eval_style_separation(model, dataset, n_per_class=8, rng=None, classes=None):
    """Mean smooth-L1 style distance within classes and across classes.

    Codes come from the eval-mode encoder; each image is encoded once.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    classes = list(classes) if classes is not None else dataset.classes
    codes = []
    with T.no_grad():
        for c in classes:
            stack = dataset.sample_stack(c, n_per_class, rng)
            z = model.encode(stack)
            for n in range(n_per_class):
                codes.append((c, z.style_local.data[n:n + 1], z.style_global.data[n:n + 1]))
        intra, inter = [], []
        for (ca, la, ga), (cb, lb, gb) in itertools.combinations(codes, 2):
            d = L.style_distance((T.Tensor(la), T.Tensor(ga)), (T.Tensor(lb), T.Tensor(gb))).item()
            (intra if ca == cb else inter).append(d)
    return float(np.mean(intra)) if intra else 0.0, float(np.mean(inter)) if inter else 0.0
