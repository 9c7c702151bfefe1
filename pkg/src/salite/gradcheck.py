"""Finite-difference verification of analytic gradients.

The op under test is reduced to a scalar through a fixed random projection
(plain summation would make some checks vacuous: the channel softmax sums to
a constant, so d(sum)/dx is identically zero). Central differences in float64
are compared coordinate-by-coordinate against the tape's gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import Rng, derive
from .tensor import Tensor, backward, zero_grads


@dataclass
class GradCheckEntry:
    input_index: int
    max_rel_err: float
    checked_coords: int


@dataclass
class GradCheckReport:
    name: str
    eps: float
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: max rel err {self.max_rel_err:.3e} (tol {self.tol:.0e})"


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
               eps: float = 1e-5, tol: float = 1e-4, name: str = "op",
               seed: int = 7, max_coords: int | None = None) -> GradCheckReport:
    """Compare tape gradients of ``fn(*inputs)`` against central differences.

    Inputs must be float64 tensors; only those with ``requires_grad`` are
    perturbed. ``max_coords`` caps the coordinates sampled per input (all
    coordinates when None); sampling is deterministic in ``seed``.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError(f"grad_check requires float64 inputs, got {t.dtype}")
    rng = Rng(derive(seed, 0xC0DE))

    out = fn(*inputs)
    proj = Tensor(rng.uniform_array(-1.0, 1.0, out.shape), dtype=np.float64)

    def scalar_from(raw: Tensor) -> float:
        return float((raw.data * proj.data).sum())

    zero_grads(inputs)
    from . import ops

    root = ops.sum_all(ops.mul(out, proj))
    backward(root)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    report = GradCheckReport(name=name, eps=eps, tol=tol)
    for ti, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is None or max_coords >= n:
            coords = range(n)
        else:
            coords = sorted({rng.randint(0, n - 1) for _ in range(max_coords)})
        worst = 0.0
        count = 0
        for ci in coords:
            orig = flat[ci]
            flat[ci] = orig + eps
            f_plus = scalar_from(fn(*inputs))
            flat[ci] = orig - eps
            f_minus = scalar_from(fn(*inputs))
            flat[ci] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, _rel_err(float(analytic[ti].reshape(-1)[ci]), numeric))
            count += 1
        report.entries.append(GradCheckEntry(ti, worst, count))
    zero_grads(inputs)
    return report
