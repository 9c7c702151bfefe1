"""Static architecture descriptions and the two built-in presets.

``full`` is the reference geometry: 224 x 224 input, stride-8 SqueezeNet
encoder (taps at 111/55/27), 1024-channel dilated tail, and a five-stage
decoder running global attention at the two 27-resolution stages and local
attention at 55 and 111. ``desk`` is the same code at reduced geometry
(56 x 56, narrower channels) for CPU-scale training and end-to-end gradient
checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, DimensionError
from .ops import conv_out_size


@dataclass(frozen=True)
class FireSpec:
    in_ch: int
    squeeze_ch: int
    expand1_ch: int
    expand3_ch: int

    def __post_init__(self):
        if min(self.in_ch, self.squeeze_ch, self.expand1_ch, self.expand3_ch) <= 0:
            raise ConfigError(f"fire spec channels must be positive: {self}")
        if self.squeeze_ch > self.expand1_ch + self.expand3_ch:
            raise ConfigError(
                f"fire squeeze {self.squeeze_ch} exceeds expand {self.expand1_ch}+{self.expand3_ch}")

    @property
    def out_ch(self) -> int:
        return self.expand1_ch + self.expand3_ch

    @property
    def param_count(self) -> int:
        return (self.in_ch * self.squeeze_ch + self.squeeze_ch
                + self.squeeze_ch * self.expand1_ch + self.expand1_ch
                + self.squeeze_ch * self.expand3_ch * 9 + self.expand3_ch)


@dataclass(frozen=True)
class EncoderSpec:
    """Layer plan: conv 3x3/2 -> maxpool 3/2 -> 3 fires -> maxpool 3/2 ->
    5 fires -> dilated 3x3 tail -> 1x1 tail. Skip taps: conv1 output, third
    fire output, last fire output."""

    in_ch: int = 3
    conv1_ch: int = 64
    fires: tuple[FireSpec, ...] = ()
    tail_ch: int = 1024
    tail_dilation: int = 12

    def __post_init__(self):
        if len(self.fires) != 8:
            raise ConfigError(f"encoder needs exactly 8 fire modules, got {len(self.fires)}")
        want = self.conv1_ch
        for i, f in enumerate(self.fires):
            if f.in_ch != want:
                raise ConfigError(f"fire {i} expects {f.in_ch} input channels, pipeline provides {want}")
            want = f.out_ch

    @property
    def tap_channels(self) -> tuple[int, int, int]:
        return (self.conv1_ch, self.fires[2].out_ch, self.fires[7].out_ch)

    @property
    def bottleneck_ch(self) -> int:
        return self.tail_ch

    def tap_sizes(self, input_size: int) -> tuple[int, int, int]:
        s1 = conv_out_size(input_size, 3, 2, 0, 1)
        s2 = conv_out_size(s1, 3, 2, 0, 1)
        s3 = conv_out_size(s2, 3, 2, 0, 1)
        return (s1, s2, s3)

    def param_table(self) -> list[tuple[str, int]]:
        rows = [("encoder.conv1", self.in_ch * self.conv1_ch * 9 + self.conv1_ch)]
        rows += [(f"encoder.fire{i + 2}", f.param_count) for i, f in enumerate(self.fires)]
        rows.append(("encoder.tail3x3",
                     self.fires[7].out_ch * self.tail_ch * 9 + self.tail_ch))
        rows.append(("encoder.tail1x1", self.tail_ch * self.tail_ch + self.tail_ch))
        return rows


@dataclass(frozen=True)
class AttentionSpec:
    scales: tuple[int, ...] = (5, 7, 10)
    renet_hidden: int = 256          # total biLSTM width per sweep (128 per direction)
    local_kernel: int = 7
    local_dilation: int = 2
    local_mid_ch: int = 16
    multiscale_mode: str = "sum"     # "sum" follows the combining equation; "concat" is the prose reading

    def __post_init__(self):
        if tuple(sorted(self.scales)) != tuple(self.scales):
            raise ConfigError(f"attention scales must be ascending, got {self.scales}")
        if self.renet_hidden % 2 != 0 or self.renet_hidden <= 0:
            raise ConfigError(f"renet_hidden must be a positive even number, got {self.renet_hidden}")
        if self.multiscale_mode not in ("sum", "concat"):
            raise ConfigError(f"multiscale_mode must be 'sum' or 'concat', got {self.multiscale_mode!r}")
        if self.local_kernel % 2 != 1:
            raise ConfigError(f"local kernel must be odd, got {self.local_kernel}")

    @property
    def local_window(self) -> int:
        return self.local_kernel * self.local_kernel


@dataclass(frozen=True)
class StageSpec:
    channels: int
    kind: str  # global | local | none

    def __post_init__(self):
        if self.kind not in ("global", "local", "none"):
            raise ConfigError(f"unknown stage kind {self.kind!r}")


@dataclass(frozen=True)
class DecoderSpec:
    stages: tuple[StageSpec, ...] = ()

    def __post_init__(self):
        if len(self.stages) != 5:
            raise ConfigError(f"decoder needs exactly 5 stages, got {len(self.stages)}")
        kinds = [s.kind for s in self.stages]
        if kinds.count("global") != 2 or kinds.count("local") != 2:
            raise ConfigError(f"decoder needs 2 global and 2 local stages, got {kinds}")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_size: int
    encoder: EncoderSpec
    attention: AttentionSpec
    decoder: DecoderSpec

    def __post_init__(self):
        sizes = self.encoder.tap_sizes(self.input_size)
        if min(sizes) < 2:
            raise DimensionError(f"input size {self.input_size} collapses encoder taps to {sizes}")

    def stage_resolutions(self) -> tuple[int, int, int, int, int]:
        s1, s2, s3 = self.encoder.tap_sizes(self.input_size)
        return (s3, s3, s2, s1, self.input_size)


_FULL_FIRES = (
    FireSpec(64, 16, 64, 64),
    FireSpec(128, 16, 64, 64),
    FireSpec(128, 32, 128, 128),
    FireSpec(256, 32, 128, 128),
    FireSpec(256, 48, 192, 192),
    FireSpec(384, 48, 192, 192),
    FireSpec(384, 64, 256, 256),
    FireSpec(512, 64, 256, 256),
)

_DESK_FIRES = (
    FireSpec(16, 4, 16, 16),
    FireSpec(32, 4, 16, 16),
    FireSpec(32, 8, 32, 32),
    FireSpec(64, 8, 32, 32),
    FireSpec(64, 12, 48, 48),
    FireSpec(96, 12, 48, 48),
    FireSpec(96, 16, 64, 64),
    FireSpec(128, 16, 64, 64),
)

_STAGE_KINDS = ("global", "global", "local", "local", "none")


def full_spec(input_size: int = 224) -> ModelSpec:
    return ModelSpec(
        name="full",
        input_size=input_size,
        encoder=EncoderSpec(in_ch=3, conv1_ch=64, fires=_FULL_FIRES,
                            tail_ch=1024, tail_dilation=12),
        attention=AttentionSpec(renet_hidden=256, local_mid_ch=16),
        decoder=DecoderSpec(tuple(
            StageSpec(c, k) for c, k in zip((32, 32, 32, 32, 16), _STAGE_KINDS))),
    )


def desk_spec(input_size: int = 56) -> ModelSpec:
    return ModelSpec(
        name="desk",
        input_size=input_size,
        encoder=EncoderSpec(in_ch=3, conv1_ch=16, fires=_DESK_FIRES,
                            tail_ch=128, tail_dilation=2),
        attention=AttentionSpec(renet_hidden=64, local_mid_ch=8),
        decoder=DecoderSpec(tuple(
            StageSpec(c, k) for c, k in zip((16, 16, 16, 16, 8), _STAGE_KINDS))),
    )


PRESETS = {"full": full_spec, "default": full_spec, "desk": desk_spec}


def preset_spec(name: str, input_size: int = 0) -> ModelSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}")
    fn = PRESETS[name]
    return fn(input_size) if input_size else fn()
