"""Momentum-SGD training with two learning-rate groups and step decay.

The optimizer is momentum SGD (v = mu*v + g + wd*w; w -= lr*v) with weight
decay applied to kernels and matrices but never to biases. The decoder group
trains at lr_decoder, the encoder group at lr_encoder, both decayed by
`decay` every `decay_every` steps.

Randomness is derived, not streamed: the epoch-k shuffle comes from
derive(seed, "shuffle", k) and the flip decision for slot i of step s from
derive(seed, "flip", s, i). Resuming from a checkpoint at step k therefore
reproduces the uninterrupted run bit-for-bit: weights, velocities, and step
counter come from the file, and every later random decision is a pure
function of (seed, step).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .checkpoint import OPT_PREFIX, Checkpoint, save_checkpoint
from .data_io import DatasetManifest, load_image, load_mask
from .decoder import SaliteModel
from .errors import ConfigError, NumericError
from .losses import LossWeights, make_grid, total_loss
from .rng import Rng, derive
from .tensor import Tensor, backward

_SHUFFLE_TAG = 0x5F57
_FLIP_TAG = 0xF11B


@dataclass
class TrainConfig:
    lr_decoder: float = 0.01
    lr_encoder: float = 0.001
    decay: float = 0.1
    decay_every: int = 5000
    batch: int = 5
    max_steps: int = 2000          # desk-scale default; the reference protocol runs 20000
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 42
    flip_augment: bool = True
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.lr_decoder <= 0 or self.lr_encoder <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if not (0 < self.decay <= 1):
            raise ConfigError("decay must be in (0, 1]")

    def to_meta(self) -> dict[str, str]:
        return {f"trainer.{f.name}": str(getattr(self, f.name)) for f in fields(self)}


def lr_schedule(step: int, cfg: TrainConfig) -> tuple[float, float]:
    """(lr_encoder, lr_decoder) at a step: base * decay^(step // decay_every)."""
    factor = cfg.decay ** (step // cfg.decay_every)
    return (cfg.lr_encoder * factor, cfg.lr_decoder * factor)


@dataclass
class StepStats:
    loss: float
    grad_norm: float
    bce: float
    huber: float
    lr_encoder: float
    lr_decoder: float


class Sgd:
    def __init__(self, model: SaliteModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.velocity: dict[str, np.ndarray] = {
            p.name: np.zeros(p.tensor.shape, dtype=np.float32) for p in model.parameters()
        }

    def step(self, lr_enc: float, lr_dec: float) -> float:
        """Apply one update from accumulated grads; returns the global L2 grad norm."""
        sq = 0.0
        for p in self.model.parameters():
            g = p.tensor.grad
            if g is None:
                continue
            sq += float((g.astype(np.float64) ** 2).sum())
            g = g.astype(np.float32)
            if p.decay and self.cfg.weight_decay:
                g = g + self.cfg.weight_decay * p.tensor.data
            v = self.velocity[p.name]
            v *= self.cfg.momentum
            v += g
            lr = lr_enc if p.group == "encoder" else lr_dec
            p.tensor.data -= lr * v
        for p in self.model.parameters():
            p.tensor.grad = None
        return float(np.sqrt(sq))


def train_step(model: SaliteModel, sgd: Sgd, images: np.ndarray, masks: np.ndarray,
               cfg: TrainConfig, step: int, loss_weights: LossWeights) -> StepStats:
    """Forward, loss, backward, update. images (B,3,S,S); masks (B,1,S,S)."""
    pred = model.forward(Tensor(images))
    grid = make_grid(masks.shape[-2], masks.shape[-1], loss_weights.patch_size)
    tot, bce, hub = total_loss(pred, masks, loss_weights, grid)
    for name, term in (("balanced BCE", bce), ("Huber", hub)):
        if not np.isfinite(term.item()):
            raise NumericError(f"step {step}: {name} term is non-finite")
    backward(tot)
    lr_enc, lr_dec = lr_schedule(step, cfg)
    norm = sgd.step(lr_enc, lr_dec)
    return StepStats(loss=tot.item(), grad_norm=norm, bce=bce.item(),
                     huber=hub.item(), lr_encoder=lr_enc, lr_decoder=lr_dec)


def load_dataset(manifest: DatasetManifest, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Materialize every (image, mask) pair at the working size."""
    if len(manifest) == 0:
        raise ConfigError(f"manifest {manifest.source!r} is empty")
    images = np.stack([load_image(img, size) for img, _ in manifest.rows])
    masks = np.stack([load_mask(msk, size)[None] for _, msk in manifest.rows])
    return images, masks


def _epoch_perm(seed: int, epoch: int, n: int) -> list[int]:
    order = list(range(n))
    Rng(derive(seed, _SHUFFLE_TAG, epoch)).shuffle(order)
    return order


def _batch_for_step(step: int, n: int, cfg: TrainConfig) -> list[int]:
    steps_per_epoch = (n + cfg.batch - 1) // cfg.batch
    epoch, pos = divmod(step, steps_per_epoch)
    perm = _epoch_perm(cfg.seed, epoch, n)
    return perm[pos * cfg.batch:(pos + 1) * cfg.batch]


def _maybe_flip(images: np.ndarray, masks: np.ndarray, cfg: TrainConfig,
                step: int) -> tuple[np.ndarray, np.ndarray]:
    if not cfg.flip_augment:
        return images, masks
    out_i, out_m = images.copy(), masks.copy()
    for slot in range(images.shape[0]):
        if Rng(derive(cfg.seed, _FLIP_TAG, step, slot)).bernoulli():
            out_i[slot] = out_i[slot, :, :, ::-1]
            out_m[slot] = out_m[slot, :, :, ::-1]
    return out_i, out_m


def _snapshot(model: SaliteModel, sgd: Sgd, cfg: TrainConfig, step: int,
              meta: dict[str, str]) -> Checkpoint:
    tensors = {name: t.data.copy() for name, t in model.named_tensors().items()}
    for name, v in sgd.velocity.items():
        tensors[OPT_PREFIX + name] = v.copy()
    return Checkpoint(step=step, seed=cfg.seed, meta=meta, tensors=tensors)


def train_loop(model: SaliteModel, manifest: DatasetManifest, cfg: TrainConfig,
               out_dir: str, loss_weights: LossWeights = LossWeights(),
               meta: dict[str, str] | None = None, start_step: int = 0,
               velocities: dict[str, np.ndarray] | None = None,
               log=print) -> str:
    """Run (or resume) training; returns the path of the final checkpoint.

    Emits `step<TAB>loss<TAB>lr_enc<TAB>lr_dec` lines via ``log`` and to
    ``train.log`` in ``out_dir``; checkpoints every ``checkpoint_every`` steps
    and at the end as ``ckpt_step{N}.salt`` plus ``model_final.salt``.
    """
    os.makedirs(out_dir, exist_ok=True)
    meta = dict(meta or {})
    meta.update(cfg.to_meta())
    images, masks = load_dataset(manifest, model.spec.input_size)
    sgd = Sgd(model, cfg)
    if velocities:
        for name, v in velocities.items():
            if name in sgd.velocity:
                sgd.velocity[name] = v.astype(np.float32).copy()
    logf = open(os.path.join(out_dir, "train.log"), "a", encoding="utf-8")

    def emit(line: str):
        logf.write(line + "\n")
        logf.flush()
        if log:
            log(line)

    t0 = time.time()
    final_path = os.path.join(out_dir, "model_final.salt")
    if start_step >= cfg.max_steps:
        save_checkpoint(_snapshot(model, sgd, cfg, start_step, meta), final_path)
        logf.close()
        return final_path
    for step in range(start_step, cfg.max_steps):
        idx = _batch_for_step(step, len(manifest), cfg)
        bi, bm = _maybe_flip(images[idx], masks[idx], cfg, step)
        stats = train_step(model, sgd, bi, bm, cfg, step, loss_weights)
        emit(f"{step}\t{stats.loss:.6f}\t{stats.lr_encoder:.6g}\t{stats.lr_decoder:.6g}")
        done = step + 1
        if cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.max_steps:
            save_checkpoint(_snapshot(model, sgd, cfg, done, meta),
                            os.path.join(out_dir, f"ckpt_step{done}.salt"))
    save_checkpoint(_snapshot(model, sgd, cfg, cfg.max_steps, meta), final_path)
    emit(f"# finished {cfg.max_steps - start_step} steps in {time.time() - t0:.1f}s")
    logf.close()
    return final_path
