"""Modified SqueezeNet encoder: one leading conv block, eight Fire modules,
and a dilated two-conv tail, with skip taps at three resolutions.

For the reference 224 input the taps land at 111, 55, and 27, and the
bottleneck keeps the 27 x 27 grid (overall stride 8: the pool that would
follow the last Fire module is dropped, and the tail convs are stride 1).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DimensionError
from .ops import concat, conv2d, pool2d, relu
from .params import ParamRegistry
from .specs import EncoderSpec, FireSpec
from .tensor import Tensor


@dataclass
class EncoderOutput:
    skips: list[Tensor]      # resolutions high -> low (e.g. 111, 55, 27)
    bottleneck: Tensor


class Fire:
    """Squeeze 1x1 -> parallel expand 1x1 / expand 3x3 (pad 1) -> concat."""

    def __init__(self, name: str, spec: FireSpec, reg: ParamRegistry):
        self.spec = spec
        self.sq_w, self.sq_b = reg.conv(f"{name}.squeeze", spec.squeeze_ch, spec.in_ch, 1, 1, "encoder")
        self.e1_w, self.e1_b = reg.conv(f"{name}.expand1", spec.expand1_ch, spec.squeeze_ch, 1, 1, "encoder")
        self.e3_w, self.e3_b = reg.conv(f"{name}.expand3", spec.expand3_ch, spec.squeeze_ch, 3, 3, "encoder")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.spec.in_ch:
            raise DimensionError(
                f"fire module expects {self.spec.in_ch} input channels, got {x.shape[1]}")
        s = relu(conv2d(x, self.sq_w, self.sq_b))
        e1 = relu(conv2d(s, self.e1_w, self.e1_b))
        e3 = relu(conv2d(s, self.e3_w, self.e3_b, pad=1))
        return concat([e1, e3], axis=1)


class Encoder:
    def __init__(self, spec: EncoderSpec, input_size: int, reg: ParamRegistry):
        self.spec = spec
        self.input_size = input_size
        self.conv1_w, self.conv1_b = reg.conv("encoder.conv1", spec.conv1_ch, spec.in_ch, 3, 3, "encoder")
        self.fires = [Fire(f"encoder.fire{i + 2}", f, reg) for i, f in enumerate(spec.fires)]
        last_ch = spec.fires[-1].out_ch
        self.tail3_w, self.tail3_b = reg.conv("encoder.tail3x3", spec.tail_ch, last_ch, 3, 3, "encoder")
        self.tail1_w, self.tail1_b = reg.conv("encoder.tail1x1", spec.tail_ch, spec.tail_ch, 1, 1, "encoder")

    def __call__(self, img: Tensor) -> EncoderOutput:
        n = img.shape[0] if img.data.ndim == 4 else 0
        want = (n, self.spec.in_ch, self.input_size, self.input_size)
        if img.data.ndim != 4 or img.shape != want:
            raise DimensionError(
                f"encoder expects input shaped {want}, got {img.shape} (no implicit resize)")
        x = relu(conv2d(img, self.conv1_w, self.conv1_b, stride=2))
        skip_hi = x
        x = pool2d(x, "max", 3, 2)
        for fire in self.fires[:3]:
            x = fire(x)
        skip_mid = x
        x = pool2d(x, "max", 3, 2)
        for fire in self.fires[3:]:
            x = fire(x)
        skip_lo = x
        d = self.spec.tail_dilation
        x = relu(conv2d(x, self.tail3_w, self.tail3_b, pad=d, dilation=d))
        x = relu(conv2d(x, self.tail1_w, self.tail1_b))
        return EncoderOutput(skips=[skip_hi, skip_mid, skip_lo], bottleneck=x)


def count_params(reg: ParamRegistry) -> dict:
    """Exact learnable-scalar counts from live weights, grouped per layer."""
    per_layer: dict[str, int] = {}
    for p in reg:
        layer = p.name.rsplit(".", 1)[0]
        per_layer[layer] = per_layer.get(layer, 0) + p.size
    return {"total": sum(per_layer.values()), "per_layer": per_layer}
