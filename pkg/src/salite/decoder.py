"""Five-stage attending decoder and the full network forward.

Stage wiring for the reference geometry (resolutions 27, 27, 55, 111, 224):

1. fuse(bottleneck, low-res skip) -> global attending decode
2. global attending decode (no new skip at this resolution)
3. fuse(upsampled state, mid-res skip) -> local attending decode
4. fuse(upsampled state, high-res skip) -> local attending decode
5. fuse(upsampled state, the normalized input image) -> plain decode
then a 1x1 conv + sigmoid saliency head.

Fusing resizes the previous decoder state up to the skip's resolution,
concatenates channels, and projects with a 3x3 conv + ReLU. A decode step
concatenates the fused map with its attended version (or with itself for the
plain stage) and projects the same way. The global attending weights are
shared by stages 1 and 2 (both run at the same resolution and width), which
keeps the whole model under the parameter budget; it is still applied twice
per forward pass.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .attention import AttentionTrace, GlobalAttention, LocalAttention
from .encoder import Encoder, EncoderOutput, count_params
from .errors import DimensionError
from .params import ParamRegistry
from .rng import Rng, derive
from .specs import ModelSpec
from .tensor import Tensor


def fuse_features(dprev: Tensor, eskip: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Upsample dprev to eskip's grid, concat channels, 3x3 conv, ReLU."""
    if eskip.shape[2] < dprev.shape[2] or eskip.shape[3] < dprev.shape[3]:
        raise DimensionError(
            f"fuse_features: skip {eskip.shape} smaller than decoder state {dprev.shape}")
    up = ops.resize_bilinear(dprev, eskip.shape[2], eskip.shape[3])
    return ops.relu(ops.conv2d(ops.concat([up, eskip], axis=1), w, b, pad=1))


def decode_step(feat: Tensor, kind: str, attention, w: Tensor, b: Tensor,
                trace: AttentionTrace | None = None) -> Tensor:
    """Concat the map with its attended version (itself for 'none'), project."""
    if kind == "none":
        att = feat
    else:
        att = attention(feat, trace)
    return ops.relu(ops.conv2d(ops.concat([feat, att], axis=1), w, b, pad=1))


class SaliteModel:
    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = dtype
        self.seed = seed
        reg = ParamRegistry(Rng(derive(seed, 0x1417)), dtype=dtype)
        self.registry = reg
        self.encoder = Encoder(spec.encoder, spec.input_size, reg)

        enc = spec.encoder
        c = [s.channels for s in spec.decoder.stages]
        kinds = [s.kind for s in spec.decoder.stages]
        self.kinds = kinds

        self.fuse1 = reg.conv("decoder.fuse1", c[0], enc.bottleneck_ch + enc.tap_channels[2], 3, 3, "decoder")
        self.fuse3 = reg.conv("decoder.fuse3", c[2], c[1] + enc.tap_channels[1], 3, 3, "decoder")
        self.fuse4 = reg.conv("decoder.fuse4", c[3], c[2] + enc.tap_channels[0], 3, 3, "decoder")
        self.fuse5 = reg.conv("decoder.fuse5", c[4], c[3] + enc.in_ch, 3, 3, "decoder")

        if c[0] != c[1]:
            raise DimensionError(f"stages 1 and 2 share attending weights and need equal widths, got {c[0]} vs {c[1]}")
        self.global_attn = GlobalAttention("decoder.gatt", c[0], spec.attention, reg)
        self.local3 = LocalAttention("decoder.latt3", c[2], spec.attention, reg)
        self.local4 = LocalAttention("decoder.latt4", c[3], spec.attention, reg)
        self._attends = [self.global_attn, self.global_attn, self.local3, self.local4, None]

        self.dec = [reg.conv(f"decoder.decode{i + 1}", c[i], 2 * c[i], 3, 3, "decoder")
                    for i in range(5)]
        self.head = reg.conv("decoder.head", 1, c[4], 1, 1, "decoder")

    # ------------------------------------------------------------------ api

    def encode(self, img: Tensor) -> EncoderOutput:
        return self.encoder(img)

    def saliency_head(self, d_final: Tensor) -> Tensor:
        w, b = self.head
        return ops.sigmoid(ops.conv2d(d_final, w, b))

    def forward(self, img: Tensor, trace: AttentionTrace | None = None) -> Tensor:
        """img: (N, 3, S, S) normalized; returns saliency maps (N, 1, S, S)."""
        enc = self.encode(img)
        skip_hi, skip_mid, skip_lo = enc.skips

        x = fuse_features(enc.bottleneck, skip_lo, *self.fuse1)
        x = decode_step(x, self.kinds[0], self._attends[0], *self.dec[0], trace=trace)
        x = decode_step(x, self.kinds[1], self._attends[1], *self.dec[1], trace=trace)
        x = fuse_features(x, skip_mid, *self.fuse3)
        x = decode_step(x, self.kinds[2], self._attends[2], *self.dec[2], trace=trace)
        x = fuse_features(x, skip_hi, *self.fuse4)
        x = decode_step(x, self.kinds[3], self._attends[3], *self.dec[3], trace=trace)
        x = fuse_features(x, img, *self.fuse5)
        x = decode_step(x, self.kinds[4], None, *self.dec[4], trace=trace)
        return self.saliency_head(x)

    __call__ = forward

    def parameters(self):
        return list(self.registry)

    def named_tensors(self) -> dict[str, Tensor]:
        return self.registry.tensors()

    def count_params(self) -> dict:
        return count_params(self.registry)
