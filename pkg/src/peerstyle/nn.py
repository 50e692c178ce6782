"""Network building blocks: encoder, decoders, conditional discriminator."""

import contextlib
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

INIT_STD = 0.02
IN_EPS = 1e-5


@dataclass
class NetConfig:
    image_channels: int = 3
    base_width: int = 64
    content_channels: int = 256
    style_local_channels: int = 256
    style_global_channels: int = 256
    n_resnet_blocks: int = 4
    k_neighbors: int = 5
    attention_dropout: float = 0.2
    discriminator_noise_sigma: float = 0.1

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0.0 <= self.attention_dropout < 1.0:
            raise ValueError("attention_dropout must lie in [0, 1)")
        if self.discriminator_noise_sigma < 0:
            raise ValueError("discriminator_noise_sigma must be >= 0")
        for name in ("image_channels", "base_width", "content_channels",
                     "style_local_channels", "style_global_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_resnet_blocks < 0:
            raise ValueError("n_resnet_blocks must be >= 0")

    @property
    def latent_channels(self):
        return self.content_channels + self.style_local_channels + self.style_global_channels

    def to_dict(self):
        return asdict(self)

    @classmethod
    def desk(cls, **overrides):
        """Small CPU-friendly configuration (16/16/16 latent split, K=3)."""
        base = dict(base_width=16, content_channels=16, style_local_channels=16,
                    style_global_channels=16, n_resnet_blocks=2, k_neighbors=3)
        base.update(overrides)
        return cls(**base)


@dataclass
class LatentCode:
    """Encoder output split into content, per-pixel style and global style."""

    content: Tensor
    style_local: Tensor
    style_global: Tensor

    def style(self):
        return self.style_local, self.style_global

    def parts(self):
        return self.content, self.style_local, self.style_global

    def detach(self):
        return LatentCode(*(p.detach() for p in self.parts()))

    @property
    def spatial(self):
        return self.content.shape[2:]


# --------------------------------------------------------------------------
# module plumbing
# --------------------------------------------------------------------------

class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out[path] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(path + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{path}.{i}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


@contextlib.contextmanager
def frozen(*modules):
    """Temporarily exclude the modules' parameters from gradient tracking."""
    params = [p for m in modules for p in m.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def _normal(rng, shape):
    return rng.normal(0.0, INIT_STD, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, rng=None, bias=True):
        self.weight = Parameter(_normal(rng, (cout, cin, kernel, kernel)))
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, rng=None, bias=True):
        self.weight = Parameter(_normal(rng, (cin, cout, kernel, kernel)))
        self.bias = Parameter(np.zeros(cout)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv2d_transpose(x, self.weight, self.bias, self.stride, self.padding)


class InstanceNorm2d(Module):
    def __init__(self, channels):
        self.scale = Parameter(np.ones(channels))
        self.shift = Parameter(np.zeros(channels))

    def forward(self, x):
        return T.instance_norm(x, self.scale, self.shift, IN_EPS)


class ConvBlock(Module):
    """conv -> IN -> activation; ``transposed`` swaps in a fractionally-strided conv.

    The conv has no bias: IN would subtract it, the IN shift takes its place.
    """

    def __init__(self, cin, cout, kernel, stride, padding, rng, act="relu", transposed=False):
        cls = ConvTranspose2d if transposed else Conv2d
        self.conv = cls(cin, cout, kernel, stride, padding, rng, bias=False)
        self.norm = InstanceNorm2d(cout)
        self.act = act

    def forward(self, x):
        y = self.norm(self.conv(x))
        if self.act == "relu":
            return T.relu(y)
        if self.act == "lrelu":
            return T.leaky_relu(y, 0.2)
        return y


class ResBlock(Module):
    def __init__(self, channels, rng):
        self.conv1 = ConvBlock(channels, channels, 3, 1, 1, rng)
        self.conv2 = ConvBlock(channels, channels, 3, 1, 1, rng, act=None)

    def forward(self, x):
        return x + self.conv2(self.conv1(x))


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------

class GlobalStyleTransform(Module):
    """Collapse a style map to one value per channel: two stride-2 convs, then average pooling."""

    def __init__(self, channels, rng):
        self.conv1 = Conv2d(channels, channels, 3, 2, 1, rng)
        self.conv2 = Conv2d(channels, channels, 3, 2, 1, rng)

    def forward(self, x):
        y = T.relu(self.conv1(x))
        y = self.conv2(y)
        return T.global_avg_pool(y)

    def set_average_pool(self):
        """Reset weights so the block passes non-negative inputs' channel means straight through."""
        for conv in (self.conv1, self.conv2):
            c = conv.weight.shape[0]
            w = np.zeros(conv.weight.shape)
            w[np.arange(c), np.arange(c), 1, 1] = 1.0
            conv.weight.data[...] = w
            conv.bias.data[...] = 0.0


class Encoder(Module):
    def __init__(self, cfg, rng):
        bw = cfg.base_width
        self.cfg = cfg
        self.ingress = ConvBlock(cfg.image_channels, bw, 7, 1, 3, rng)
        self.down1 = ConvBlock(bw, 2 * bw, 3, 2, 1, rng)
        self.down2 = ConvBlock(2 * bw, cfg.latent_channels, 3, 2, 1, rng)
        self.blocks = [ResBlock(cfg.latent_channels, rng) for _ in range(cfg.n_resnet_blocks)]
        self.global_style = GlobalStyleTransform(cfg.style_global_channels, rng)

    def forward(self, image):
        cfg = self.cfg
        if image.ndim != 4 or image.shape[1] != cfg.image_channels:
            raise ShapeError(f"encoder expects (B, {cfg.image_channels}, H, W), got {image.shape}")
        h, w = image.shape[2:]
        if h % 4 or w % 4:
            raise ShapeError(f"image extent {h}x{w} is not divisible by 4")
        y = self.down2(self.down1(self.ingress(image)))
        for block in self.blocks:
            y = block(y)
        cc, cs = cfg.content_channels, cfg.style_local_channels
        content = T.slice_axis(y, 1, 0, cc)
        style_local = T.slice_axis(y, 1, cc, cc + cs)
        tail = T.slice_axis(y, 1, cc + cs, cfg.latent_channels)
        return LatentCode(content, style_local, self.global_style(tail))


def assemble_latent(z):
    """Concatenate content, local style and broadcast global style over channels."""
    b, _, h, w = z.content.shape
    glob = T.broadcast_to(z.style_global, (b, z.style_global.shape[1], h, w))
    return T.concat([z.content, z.style_local, glob], axis=1)


class Decoder(Module):
    def __init__(self, cfg, rng):
        bw = cfg.base_width
        c = cfg.latent_channels
        self.blocks = [ResBlock(c, rng) for _ in range(cfg.n_resnet_blocks)]
        self.up1 = ConvBlock(c, 2 * bw, 4, 2, 1, rng, transposed=True)
        self.up2 = ConvBlock(2 * bw, bw, 4, 2, 1, rng, transposed=True)
        self.out = Conv2d(bw, cfg.image_channels, 7, 1, 3, rng)

    def forward(self, z):
        y = assemble_latent(z)
        for block in self.blocks:
            y = block(y)
        y = self.up2(self.up1(y))
        return T.tanh(self.out(y))


class Discriminator(Module):
    """Conditional patch discriminator emitting a raw (B, 1, H/4, W/4) score map."""

    def __init__(self, cfg, rng):
        bw = cfg.base_width
        self.sigma = cfg.discriminator_noise_sigma
        self.ingress = Conv2d(2 * cfg.image_channels, bw, 3, 1, 1, rng)
        self.down1 = ConvBlock(bw, 2 * bw, 4, 2, 1, rng, act="lrelu")
        self.down2 = ConvBlock(2 * bw, 4 * bw, 4, 2, 1, rng, act="lrelu")
        self.head = Conv2d(4 * bw, 1, 3, 1, 1, rng)

    def forward(self, candidate, condition, rng=None, training=False):
        if candidate.shape != condition.shape:
            raise ShapeError(f"discriminator inputs differ in shape: {candidate.shape} vs {condition.shape}")
        if training and self.sigma > 0:
            candidate = candidate + rng.normal(0.0, self.sigma, size=candidate.shape)
            condition = condition + rng.normal(0.0, self.sigma, size=condition.shape)
        y = T.concat([candidate, condition], axis=1)
        y = T.leaky_relu(self.ingress(y), 0.2)
        y = self.down2(self.down1(y))
        return self.head(y)
