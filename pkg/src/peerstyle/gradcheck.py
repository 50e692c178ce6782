"""Central finite-difference checks for ops, networks and losses.

The relative error of one check is ``max|analytic - numeric|`` divided by
``max(max|analytic|, max|numeric|)``, both taken jointly over the sampled
entries of every tensor in the check. Tensors whose true gradient is exactly
zero (e.g. a conv bias feeding instance norm) are thus compared against the
check's overall gradient scale instead of against their own rounding noise.

Networks are piecewise smooth (relu, k-NN selection). A perturbation that
crosses a kink yields a central difference that is not a derivative; such
entries are detected by re-probing with a finer step, counted, and excluded.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import tensor as T
from .nn import Decoder, Discriminator, Encoder, GlobalStyleTransform, LatentCode, NetConfig
from .tpfr import TPFR, AttentionHead, attention_weights

STEP = 1e-4
TOLERANCE = 1e-4
# a miss at STEP is re-probed at STEP / KINK_REFINE to tell kinks from wrong gradients
KINK_REFINE = 100.0


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_entries: int
    seconds: float = 0.0
    n_kinks: int = 0

    def passed(self, tol=TOLERANCE):
        return np.isfinite(self.max_rel_error) and self.max_rel_error <= tol


def rel_error(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    diff = np.abs(analytic - numeric).max(initial=0.0)
    if scale == 0.0:
        return diff
    return diff / scale


def _scalar(out):
    return float(out.data) if isinstance(out, T.Tensor) else float(out)


def _central(fn, flat, i, h):
    old = flat[i]
    flat[i] = old + h
    up = _scalar(fn())
    flat[i] = old - h
    down = _scalar(fn())
    flat[i] = old
    return (up - down) / (2 * h)


def check_gradients(fn, tensors, max_entries=None, rng=None, h=STEP, tol=TOLERANCE):
    """Compare backprop gradients of scalar ``fn()`` against central differences.

    ``tensors`` are leaves with ``requires_grad=True`` that ``fn`` reads. At most
    ``max_entries`` randomly chosen entries per tensor are perturbed. An entry
    that misses at step ``h`` is probed again at ``h / KINK_REFINE``; if the fine
    difference agrees with backprop the miss came from a relu kink or neighbor
    switch inside ``[-h, h]``. Such entries are counted and left out of the
    error; a wrong gradient disagrees at every step and still fails. Returns
    ``(max relative error, entries checked, kinks)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]
    entries, a, central = [], [], []
    with T.no_grad():
        for t, grad in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            n = flat.size
            picks = np.arange(n) if max_entries is None or n <= max_entries else rng.choice(n, max_entries, replace=False)
            for i in picks:
                entries.append((flat, i))
                a.append(grad.reshape(-1)[i])
                central.append(_central(fn, flat, i, h))
        a, central = np.array(a), np.array(central)
        scale = max(np.abs(a).max(initial=0.0), np.abs(central).max(initial=0.0))
        kinks = np.zeros(len(a), dtype=bool)
        for j in np.flatnonzero(np.abs(a - central) > tol * scale):
            flat, i = entries[j]
            kinks[j] = abs(a[j] - _central(fn, flat, i, h / KINK_REFINE)) <= tol * scale
    for t in tensors:
        t.grad = None
    return rel_error(a[~kinks], central[~kinks]), a.size, int(kinks.sum())


def _projection(rng, shape):
    return T.Tensor(rng.normal(size=shape))


def _project(out, weights):
    """Random linear functional of a tensor or latent code, as a scalar."""
    if isinstance(out, LatentCode):
        return sum(T.sum_(p * w) for p, w in zip(out.parts(), weights))
    return T.sum_(out * weights)


def _proj_weights(out, rng):
    if isinstance(out, LatentCode):
        return [_projection(rng, p.shape) for p in out.parts()]
    return _projection(rng, out.shape)


def _leaf(rng, shape, scale=1.0, positive=False):
    data = rng.normal(size=shape) * scale
    if positive:
        data = np.abs(data) + 0.5
    return T.Tensor(data, requires_grad=True)


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

def _off_kink_pipeline(rng, margin=5e-3, tries=100):
    """Inputs whose normalized pre-activations all keep ``margin`` away from relu's kink.

    A central difference straddling the kink is not a derivative, so such draws are skipped.
    """
    for _ in range(tries):
        x = _leaf(rng, (2, 3, 5, 5))
        w = _leaf(rng, (4, 3, 3, 3), 0.5)
        b = _leaf(rng, (4,))
        with T.no_grad():
            pre = T.instance_norm(T.conv2d(x, w, b, 1, 1), None, None).data
        if np.abs(pre).min() > margin:
            return x, w, b
    raise RuntimeError("could not draw kink-free pipeline inputs")


def _op_cases(rng):
    a = _leaf(rng, (2, 3, 4))
    b = _leaf(rng, (1, 3, 1))
    pos = _leaf(rng, (2, 3, 4), positive=True)
    x4 = _leaf(rng, (2, 3, 5, 5))
    w = _leaf(rng, (4, 3, 3, 3), 0.5)
    bias = _leaf(rng, (4,))
    wt = _leaf(rng, (3, 2, 4, 4), 0.5)
    bt = _leaf(rng, (2,))
    scale = _leaf(rng, (3,))
    shift = _leaf(rng, (3,))
    m1 = _leaf(rng, (2, 3, 4))
    m2 = _leaf(rng, (2, 4, 5))
    vals = _leaf(rng, (2, 3, 6))
    idx = rng.integers(0, 6, size=(2, 4, 2))
    c1 = _leaf(rng, (2, 2, 3, 3))
    c2 = _leaf(rng, (2, 3, 3, 3))

    def proj(fn, *leaves):
        weights = _proj_weights(fn(), np.random.default_rng(1))
        return (lambda: _project(fn(), weights)), list(leaves)

    px, pw, pb = _off_kink_pipeline(rng)
    drop_seed = 11
    cases = {
        "add": proj(lambda: a + b, a, b),
        "sub": proj(lambda: a - b, a, b),
        "mul": proj(lambda: a * b, a, b),
        "div": proj(lambda: a / pos, a, pos),
        "relu": proj(lambda: T.relu(a), a),
        "leaky_relu": proj(lambda: T.leaky_relu(a, 0.2), a),
        "tanh": proj(lambda: T.tanh(a), a),
        "exp": proj(lambda: T.exp(a), a),
        "sqrt": proj(lambda: T.sqrt(pos), pos),
        "square": proj(lambda: T.square(a), a),
        "abs": proj(lambda: T.abs_(a), a),
        "max_with_scalar": proj(lambda: T.maximum(a, 0.1), a),
        "sum": proj(lambda: T.sum_(a, axis=1, keepdims=True), a),
        "mean": proj(lambda: T.mean(a, axis=(0, 2)), a),
        "concat": proj(lambda: T.concat([c1, c2], axis=1), c1, c2),
        "slice": proj(lambda: T.slice_axis(a, 2, 1, 3), a),
        "broadcast_to": proj(lambda: T.broadcast_to(b, (2, 3, 4)), b),
        "reshape_transpose": proj(lambda: T.transpose(T.reshape(a, (4, 6)), (1, 0)), a),
        "matmul": proj(lambda: T.matmul(m1, m2), m1, m2),
        "gather_pixels": proj(lambda: T.gather_pixels(vals, idx), vals),
        "conv2d": proj(lambda: T.conv2d(x4, w, bias, 1, 1), x4, w, bias),
        "conv2d_stride2": proj(lambda: T.conv2d(x4, w, bias, 2, 1), x4, w, bias),
        "conv2d_transpose": proj(lambda: T.conv2d_transpose(x4, wt, bt, 2, 1), x4, wt, bt),
        "instance_norm": proj(lambda: T.instance_norm(x4, scale, shift, 1e-5), x4, scale, shift),
        "dropout": proj(lambda: T.dropout(a, 0.3, True, np.random.default_rng(drop_seed)), a),
        "global_avg_pool": proj(lambda: T.global_avg_pool(x4), x4),
        "pipeline": proj(lambda: T.mean(T.relu(T.instance_norm(T.conv2d(px, pw, pb, 1, 1), None, None))),
                         px, pw, pb),
    }
    return {k: (fn, leaves, None) for k, (fn, leaves) in cases.items()}


def _net_cases(rng, cfg=None, size=16):
    cfg = cfg or NetConfig.desk(base_width=4, content_channels=3, style_local_channels=3,
                                style_global_channels=3, n_resnet_blocks=1, k_neighbors=2)
    init = np.random.default_rng(3)
    enc, dec, disc = Encoder(cfg, init), Decoder(cfg, init), Discriminator(cfg, init)
    gst = GlobalStyleTransform(cfg.style_global_channels, init)
    tp = TPFR(cfg, init)
    head = AttentionHead(3, init)
    # projections on untrained nets have tiny gradients for the earliest layers;
    # larger weights keep the checked values well above rounding noise
    for module in (enc, dec, disc, gst, tp, head):
        for p in module.parameters():
            if p.ndim > 1 or p.shape[0] > 1:
                p.data *= 1.0 if p.data.std() == 0 else 10.0

    h = size // 4
    img = _leaf(rng, (2, 3, size, size), 0.5)
    cond = _leaf(rng, (2, 3, size, size), 0.5)
    tail = _leaf(rng, (2, cfg.style_global_channels, h, h))

    def latent():
        return LatentCode(_leaf(rng, (2, cfg.content_channels, h, h)),
                          _leaf(rng, (2, cfg.style_local_channels, h, h)),
                          _leaf(rng, (2, cfg.style_global_channels, 1, 1)))

    z_in, z_t = latent(), latent()
    gq = _leaf(rng, (2, 3, 5))
    gn = _leaf(rng, (2, 3, 5, 2))

    def make(fn, leaves):
        weights = _proj_weights(fn(), np.random.default_rng(5))
        return (lambda: _project(fn(), weights)), leaves, 6

    return {
        "encoder": make(lambda: enc(img), [img] + enc.parameters()),
        "global_style_transform": make(lambda: gst(tail), [tail] + gst.parameters()),
        "decoder": make(lambda: dec(z_in), list(z_in.parts()) + dec.parameters()),
        "discriminator": make(lambda: disc(img, cond), [img, cond] + disc.parameters()),
        "discriminator_noise": make(
            lambda: disc(img, cond, np.random.default_rng(9), training=True), [img, cond] + disc.parameters()),
        "attention_weights": make(lambda: attention_weights(gq, gn, head), [gq, gn] + head.parameters()),
        "tpfr": make(lambda: tp(z_in, z_t), list(z_in.parts()) + list(z_t.parts()) + tp.parameters()),
        "tpfr_dropout": make(
            lambda: tp(z_in, z_t, np.random.default_rng(4), training=True),
            list(z_in.parts()) + list(z_t.parts()) + tp.parameters()),
        "encode_decode": make(lambda: dec(enc(img)), [img] + enc.parameters() + dec.parameters()),
    }


def _loss_cases(rng):
    cfg = NetConfig.desk(base_width=4, content_channels=3, style_local_channels=3,
                         style_global_channels=3, n_resnet_blocks=1, k_neighbors=2)
    init = np.random.default_rng(7)
    enc, dec, aux = Encoder(cfg, init), Decoder(cfg, init), Decoder(cfg, init)
    tp = TPFR(cfg, init)
    for module in (enc, dec, aux, tp):
        for p in module.parameters():
            if p.ndim > 1:
                p.data *= 10.0
    size = 8
    z1 = _leaf(rng, (2, 4, 3, 3), 1.5)
    z2 = _leaf(rng, (2, 4, 3, 3), 1.5)
    x_i = _leaf(rng, (1, 3, size, size), 0.5)
    x_t = _leaf(rng, (1, 3, size, size), 0.5)
    real = _leaf(rng, (2, 1, 2, 2))
    fake = _leaf(rng, (2, 1, 2, 2))

    def codes(n):
        return [LatentCode(_leaf(rng, (1, 3, 2, 2)), _leaf(rng, (1, 3, 2, 2)), _leaf(rng, (1, 3, 1, 1)))
                for _ in range(n)]

    zs = codes(4)
    # push the two classes apart enough that the hinge stays active but off its kink
    for z in zs[2:]:
        for p in z.parts():
            p.data += 0.3
    style_leaves = [p for z in zs for p in z.style()]

    def transfer(a, b):
        return tp(a, b)

    enc_params = enc.parameters()
    return {
        "smooth_l1": (lambda: L.smooth_l1(z1, z2), [z1, z2], None),
        "style_metric": (lambda: L.style_metric_loss(*zs, margin=3.0), style_leaves, None),
        "identity": (lambda: L.identity_loss(x_i, x_t, lambda x: aux(enc(x))),
                     [x_i, x_t] + enc_params + aux.parameters(), 4),
        "latent_cycle": (lambda: L.latent_cycle_loss(enc(x_i), enc(x_t), enc, aux),
                         [x_i, x_t] + enc_params + aux.parameters(), 4),
        "content_cycle": (lambda: L.content_cycle_loss(enc(x_i), enc(x_t), enc, dec, transfer),
                          [x_i, x_t] + enc_params + dec.parameters() + tp.parameters(), 4),
        "transfer_cycle": (lambda: L.transfer_cycle_loss(enc(x_i), enc(x_t), enc, dec, transfer),
                           [x_i, x_t] + enc_params + dec.parameters() + tp.parameters(), 4),
        "ragan_gen": (lambda: L.ragan_gen_loss(real, fake), [real, fake], None),
        "ragan_disc": (lambda: L.ragan_disc_loss(real, fake), [real, fake], None),
    }


SCOPES = {"op": _op_cases, "network": _net_cases, "loss": _loss_cases}


def run_scope(scope, seed=0, only=None):
    if scope not in SCOPES:
        raise KeyError(f"unknown gradcheck scope {scope!r} (choose from {', '.join(SCOPES)})")
    rng = np.random.default_rng(seed)
    results = []
    for name, (fn, leaves, max_entries) in SCOPES[scope](rng).items():
        if only is not None and name not in only:
            continue
        start = time.perf_counter()
        err, count, kinks = check_gradients(fn, leaves, max_entries, np.random.default_rng(seed + 1))
        results.append(CheckResult(f"{scope}/{name}", err, count, time.perf_counter() - start, kinks))
    return results
