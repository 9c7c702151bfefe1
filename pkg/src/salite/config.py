"""Flat key = value run configuration.

Precedence: built-in defaults, then the config file, then explicit overrides
(CLI `--set key=value`). Unknown keys and unparsable values are rejected with
the offending line or flag named. Every key has a documented default; `salite
<cmd> --help` prints them.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .losses import LossWeights
from .specs import AttentionSpec, ModelSpec, preset_spec
from .trainer import TrainConfig
from .data_io import SynthSpec


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_tuple(s: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in s.split(",") if part.strip())


def _parse_str_tuple(s: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in s.split(",") if part.strip())


# key -> (default, parser, help)
DEFAULTS: dict[str, tuple] = {
    "model.preset": ("desk", str, "model preset: desk (56px, narrow) or full (224px reference; 'default' is an alias)"),
    "model.input_size": (0, int, "input edge length; 0 keeps the preset's size"),
    "attention.scales": ((5, 7, 10), _parse_int_tuple, "global attending grid sizes"),
    "attention.renet_hidden": (0, int, "total biLSTM width per sweep; 0 keeps the preset's width"),
    "attention.local_kernel": (7, int, "local attending window edge"),
    "attention.local_dilation": (2, int, "local attending dilation"),
    "attention.multiscale_mode": ("sum", str, "combine scales by 'sum' or 'concat'"),
    "loss.w0": (0.6, float, "boundary emphasis amplitude"),
    "loss.sigma": (5.0, float, "boundary emphasis falloff in pixels"),
    "loss.delta": (1.0, float, "Huber quadratic/linear switch point"),
    "loss.lambda1": (0.6, float, "weight of the balanced BCE term"),
    "loss.lambda2": (0.4, float, "weight of the Huber term"),
    "loss.patch_size": (5, int, "loss tile edge"),
    "loss.eq5_strict": (False, _parse_bool, "additive (gradient-free) boundary term instead of multiplicative"),
    "metrics.beta2": (0.3, float, "beta^2 in the F-measure"),
    "trainer.lr_decoder": (0.01, float, "decoder-group learning rate"),
    "trainer.lr_encoder": (0.001, float, "encoder-group learning rate"),
    "trainer.decay": (0.1, float, "learning-rate decay factor"),
    "trainer.decay_every": (5000, int, "steps between decays"),
    "trainer.batch": (5, int, "batch size"),
    "trainer.max_steps": (2000, int, "training steps (reference protocol: 20000)"),
    "trainer.momentum": (0.9, float, "SGD momentum"),
    "trainer.weight_decay": (5e-4, float, "L2 decay on kernels (never biases)"),
    "trainer.seed": (42, int, "master seed"),
    "trainer.flip_augment": (True, _parse_bool, "random horizontal flips"),
    "trainer.checkpoint_every": (500, int, "steps between checkpoints (0 = final only)"),
    "synth.seed": (42, int, "generator seed"),
    "synth.count": (200, int, "number of images"),
    "synth.size": (224, int, "image edge length"),
    "synth.min_shapes": (1, int, "min shapes per image"),
    "synth.max_shapes": (3, int, "max shapes per image"),
    "synth.kinds": (("ellipse", "rectangle", "triangle"), _parse_str_tuple, "shape kinds"),
    "synth.noise_octaves": (3, int, "background value-noise octaves"),
    "synth.contrast_lo": (0.25, float, "min shape/background contrast"),
    "synth.contrast_hi": (0.6, float, "max shape/background contrast"),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def to_meta(self) -> dict[str, str]:
        out = {}
        for key, value in sorted(self.values.items()):
            if isinstance(value, tuple):
                out[key] = ",".join(str(v) for v in value)
            else:
                out[key] = str(value)
        return out

    # ---------------------------------------------------------------- builders

    def model_spec(self) -> ModelSpec:
        spec = preset_spec(self["model.preset"], self["model.input_size"])
        att = AttentionSpec(
            scales=self["attention.scales"],
            renet_hidden=self["attention.renet_hidden"] or spec.attention.renet_hidden,
            local_kernel=self["attention.local_kernel"],
            local_dilation=self["attention.local_dilation"],
            local_mid_ch=spec.attention.local_mid_ch,
            multiscale_mode=self["attention.multiscale_mode"],
        )
        return ModelSpec(name=spec.name, input_size=spec.input_size,
                         encoder=spec.encoder, attention=att, decoder=spec.decoder)

    def loss_weights(self) -> LossWeights:
        if abs(self["loss.lambda1"] + self["loss.lambda2"] - 1.0) > 1e-9:
            raise ConfigError("loss.lambda1 + loss.lambda2 must equal 1")
        return LossWeights(w0=self["loss.w0"], sigma=self["loss.sigma"],
                           delta=self["loss.delta"], lambda1=self["loss.lambda1"],
                           lambda2=self["loss.lambda2"], patch_size=self["loss.patch_size"],
                           strict_boundary=self["loss.eq5_strict"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr_decoder=self["trainer.lr_decoder"], lr_encoder=self["trainer.lr_encoder"],
            decay=self["trainer.decay"], decay_every=self["trainer.decay_every"],
            batch=self["trainer.batch"], max_steps=self["trainer.max_steps"],
            momentum=self["trainer.momentum"], weight_decay=self["trainer.weight_decay"],
            seed=self["trainer.seed"], flip_augment=self["trainer.flip_augment"],
            checkpoint_every=self["trainer.checkpoint_every"],
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(seed=self["synth.seed"], count=self["synth.count"],
                         size=self["synth.size"], min_shapes=self["synth.min_shapes"],
                         max_shapes=self["synth.max_shapes"], kinds=self["synth.kinds"],
                         noise_octaves=self["synth.noise_octaves"],
                         contrast=(self["synth.contrast_lo"], self["synth.contrast_hi"]))


def _convert(key: str, raw: str, where: str):
    default, parser, _ = DEFAULTS[key]
    try:
        if parser is str:
            return raw.strip()
        if parser is int:
            return int(raw.strip())
        if parser is float:
            return float(raw.strip())
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def parse_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    values = {key: default for key, (default, _, _) in DEFAULTS.items()}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}: line {lineno}: expected key = value")
                key, _, raw = stripped.partition("=")
                key = key.strip()
                if key not in DEFAULTS:
                    raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
                values[key] = _convert(key, raw, f"{path}: line {lineno}")
    for key, raw in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"--set {key}: unknown key")
        values[key] = _convert(key, raw, f"--set {key}")
    return RunConfig(values)


def config_from_meta(meta: dict[str, str]) -> RunConfig:
    """Rebuild a RunConfig from checkpoint metadata, ignoring foreign keys."""
    overrides = {k: v for k, v in meta.items() if k in DEFAULTS}
    return parse_config(None, overrides)
