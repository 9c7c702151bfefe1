"""Saliency evaluation: threshold-swept precision/recall, F-measure with
beta^2 = 0.3, and mean absolute error.

Thresholding convention: the map is quantized to byte levels
q = floor(255*s + 0.5) and a pixel counts as predicted-positive at level t
when q > t, for t in 0..255. Precision is defined as 1 when nothing is
predicted (vacuous), recall as 0 when the ground truth has no positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

BETA2 = 0.3


@dataclass
class PRCurve:
    thresholds: np.ndarray      # 0..255
    precision: np.ndarray
    recall: np.ndarray


@dataclass
class ImageScores:
    name: str
    max_f: float
    adaptive_f: float
    mae: float


@dataclass
class EvalReport:
    images: list[ImageScores] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.images)

    def mean(self, key: str) -> float:
        return float(np.mean([getattr(im, key) for im in self.images])) if self.images else 0.0

    def to_tsv(self) -> str:
        lines = ["name\tmaxF\tadaptF\tmae"]
        for im in self.images:
            lines.append(f"{im.name}\t{im.max_f:.6f}\t{im.adaptive_f:.6f}\t{im.mae:.6f}")
        lines.append(f"__mean__\t{self.mean('max_f'):.6f}\t{self.mean('adaptive_f'):.6f}\t{self.mean('mae'):.6f}")
        return "\n".join(lines) + "\n"


def quantize(s: np.ndarray) -> np.ndarray:
    """Byte levels with round-half-up, matching the map codec."""
    return np.floor(255.0 * np.clip(s, 0.0, 1.0) + 0.5).astype(np.int32)


def _check_same(s: np.ndarray, g: np.ndarray) -> None:
    if s.shape != g.shape:
        raise DimensionError(f"metrics: map {s.shape} vs mask {g.shape}")


def pr_curve(s: np.ndarray, g: np.ndarray) -> PRCurve:
    _check_same(s, g)
    q = quantize(s)
    gpos = g > 0.5
    n_pos = int(gpos.sum())
    hist_all = np.bincount(q.reshape(-1), minlength=256)
    hist_pos = np.bincount(q.reshape(-1)[gpos.reshape(-1)], minlength=256)
    # predicted-positive at t counts levels strictly above t
    pred = np.cumsum(hist_all[::-1])[::-1]
    tp = np.cumsum(hist_pos[::-1])[::-1]
    pred_at = np.append(pred[1:], 0).astype(np.float64)
    tp_at = np.append(tp[1:], 0).astype(np.float64)
    precision = np.where(pred_at > 0, tp_at / np.maximum(pred_at, 1), 1.0)
    recall = tp_at / n_pos if n_pos > 0 else np.zeros(256)
    return PRCurve(np.arange(256), precision, recall)


def f_measure(p: float, r: float, beta2: float = BETA2) -> float:
    denom = beta2 * p + r
    if denom == 0.0:
        return 0.0
    return (1.0 + beta2) * p * r / denom


def mae(s: np.ndarray, g: np.ndarray) -> float:
    _check_same(s, g)
    return float(np.abs(np.asarray(s, dtype=np.float64) - g).mean())


def max_f_measure(s: np.ndarray, g: np.ndarray, beta2: float = BETA2) -> float:
    curve = pr_curve(s, g)
    fs = [f_measure(p, r, beta2) for p, r in zip(curve.precision, curve.recall)]
    return float(max(fs))


def adaptive_f_measure(s: np.ndarray, g: np.ndarray, beta2: float = BETA2) -> float:
    """F at the adaptive threshold 2*mean(s), clamped to [0, 1]."""
    _check_same(s, g)
    tau = min(2.0 * float(np.mean(s)), 1.0)
    pred = np.asarray(s) >= tau
    gpos = g > 0.5
    tp = float(np.logical_and(pred, gpos).sum())
    npred = float(pred.sum())
    npos = float(gpos.sum())
    p = tp / npred if npred > 0 else 1.0
    r = tp / npos if npos > 0 else 0.0
    return f_measure(p, r, beta2)


def score_image(name: str, s: np.ndarray, g: np.ndarray, beta2: float = BETA2) -> ImageScores:
    return ImageScores(name=name, max_f=max_f_measure(s, g, beta2),
                       adaptive_f=adaptive_f_measure(s, g, beta2), mae=mae(s, g))
