"""The full system: encoder, auxiliary and main decoders, TPFR heads, discriminator."""

import numpy as np

from . import tensor as T
from .nn import Decoder, Discriminator, Encoder, LatentCode
from .tpfr import TPFR

# optimization roles; each group gets its own optimizer
GROUPS = {
    "aux": ("encoder", "aux_decoder"),
    "main": ("main_decoder", "tpfr"),
    "disc": ("discriminator",),
}


class StyleTransferModel:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.aux_decoder = Decoder(cfg, rng)
        self.main_decoder = Decoder(cfg, rng)
        self.tpfr = TPFR(cfg, rng)
        self.discriminator = Discriminator(cfg, rng)

    def modules(self):
        return {name: getattr(self, name) for names in GROUPS.values() for name in names}

    def named_parameters(self):
        out = {}
        for name, module in self.modules().items():
            out.update(module.named_parameters(name + "."))
        return out

    def group(self, role):
        out = {}
        for name in GROUPS[role]:
            out.update(getattr(self, name).named_parameters(name + "."))
        return out

    # --- inference helpers (eval mode: no dropout, no noise) --------------------
    def encode(self, image):
        return self.encoder(T.as_tensor(image))

    def stylize(self, content, style):
        with T.no_grad():
            z = self.tpfr(self.encode(content), self.encode(style), training=False)
            return self.main_decoder(z).data

    def reconstruct(self, image, zero_content=False, zero_style=False):
        """Self-transfer through TPFR, optionally zeroing latent parts before decoding."""
        with T.no_grad():
            z = self.encode(image)
            z = self.tpfr(z, z, training=False)
            content, local, glob = z.parts()
            if zero_content:
                content = T.Tensor(np.zeros(content.shape))
            if zero_style:
                local = T.Tensor(np.zeros(local.shape))
                glob = T.Tensor(np.zeros(glob.shape))
            return self.main_decoder(LatentCode(content, local, glob)).data
