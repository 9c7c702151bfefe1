"""Global and local pixel attending.

Global attending pools the feature map to small square grids (scales 5, 7,
10 by default), runs a ReNet sweep (bidirectional LSTM over rows, then over
columns of that result) on each pooled grid, converts the sweep output to one
logit per grid cell via a 1x1 conv, softmaxes per pixel, takes the convex
combination of the pooled feature vectors, and resizes the attended grid back
to the input resolution. The per-scale maps are combined by element-wise sum
(or channel concat, configurable) and projected back to the input channel
count with a 1x1 conv.

Local attending scores each pixel's dilated k x k neighborhood with a small
conv stack (k x k dilated conv -> ReLU -> 1x1 to k*k logits), softmaxes over
the window, and sums the zero-padded neighborhood features under those
weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import DimensionError
from .params import ParamRegistry
from .specs import AttentionSpec
from .tensor import Tensor


@dataclass
class AttentionTrace:
    """Test instrumentation: attention weight tensors and application counts."""

    global_applications: int = 0
    local_applications: int = 0
    global_weights: list = field(default_factory=list)   # (scale, alpha Tensor)
    local_weights: list = field(default_factory=list)


class BiLstm:
    """One bidirectional sweep along the last axis of an (N, C, L) sequence
    batch, hidden units split evenly between the two directions."""

    def __init__(self, name: str, input_size: int, hidden_total: int, reg: ParamRegistry):
        self.hidden = hidden_total // 2
        self.input_size = input_size
        self.fwd = reg.lstm(f"{name}.fwd", input_size, self.hidden, "decoder")
        self.bwd = reg.lstm(f"{name}.bwd", input_size, self.hidden, "decoder")

    def _run(self, xs: list[Tensor], weights) -> list[Tensor]:
        wx, wh, b = weights
        bsz = xs[0].shape[0]
        h = Tensor(np.zeros((bsz, self.hidden), dtype=xs[0].dtype))
        c = Tensor(np.zeros((bsz, self.hidden), dtype=xs[0].dtype))
        outs = []
        for x in xs:
            h, c = ops.lstm_cell(x, h, c, wx, wh, b)
            outs.append(h)
        return outs

    def __call__(self, x: Tensor) -> Tensor:
        """x: (N, C, H, L) swept along L; returns (N, hidden_total, H, L)."""
        if x.shape[1] != self.input_size:
            raise DimensionError(
                f"bilstm expects {self.input_size} input channels, got {x.shape[1]}")
        n, c, h, length = x.shape
        slabs = ops.unstack(x, axis=3)                      # each (N, C, H)
        rows = [ops.reshape(ops.permute(s, (0, 2, 1)), (n * h, c)) for s in slabs]
        f_out = self._run(rows, self.fwd)
        b_out = self._run(list(reversed(rows)), self.bwd)[::-1]
        cols = []
        for hf, hb in zip(f_out, b_out):
            both = ops.concat([hf, hb], axis=1)             # (N*H, hidden_total)
            both = ops.reshape(both, (n, h, 2 * self.hidden))
            cols.append(ops.permute(both, (0, 2, 1)))       # (N, hidden_total, H)
        return ops.stack(cols, axis=3)


class ReNet:
    """Horizontal sweep over rows, then vertical sweep over columns."""

    def __init__(self, name: str, input_size: int, hidden_total: int, reg: ParamRegistry):
        self.hidden_total = hidden_total
        self.horizontal = BiLstm(f"{name}.h", input_size, hidden_total, reg)
        self.vertical = BiLstm(f"{name}.v", hidden_total, hidden_total, reg)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.horizontal(x)
        y = ops.transpose_hw(y)
        y = self.vertical(y)
        return ops.transpose_hw(y)


class GlobalAttention:
    def __init__(self, name: str, channels: int, spec: AttentionSpec, reg: ParamRegistry):
        self.channels = channels
        self.spec = spec
        self.renet = ReNet(f"{name}.renet", channels, spec.renet_hidden, reg)
        self.logit_convs = {
            m: reg.conv(f"{name}.logits{m}", m * m, spec.renet_hidden, 1, 1, "decoder")
            for m in spec.scales
        }
        in_proj = channels * (len(spec.scales) if spec.multiscale_mode == "concat" else 1)
        self.out_w, self.out_b = reg.conv(f"{name}.out", channels, in_proj, 1, 1, "decoder")

    def attend_scale(self, feat: Tensor, m: int, trace: AttentionTrace | None = None) -> Tensor:
        """Single-scale global attending of an (N,C,H,W) map."""
        if m not in self.logit_convs:
            raise DimensionError(f"scale {m} not in configured scales {tuple(self.logit_convs)}")
        n, c, h, w = feat.shape
        pooled = ops.resize_bilinear(feat, m, m)
        lw, lb = self.logit_convs[m]
        logits = ops.conv2d(self.renet(pooled), lw, lb)
        alpha = ops.softmax_channels(logits)                # (N, m*m, m, m)
        if trace is not None:
            trace.global_weights.append((m, alpha))
        values = ops.reshape(pooled, (n, c, m * m))
        attended = ops.attend_global(values, alpha)         # (N, C, m, m)
        return ops.resize_bilinear(attended, h, w)

    def __call__(self, feat: Tensor, trace: AttentionTrace | None = None) -> Tensor:
        if feat.shape[1] != self.channels:
            raise DimensionError(
                f"global attention built for {self.channels} channels, got {feat.shape[1]}")
        per_scale = [self.attend_scale(feat, m, trace) for m in self.spec.scales]
        if self.spec.multiscale_mode == "concat":
            merged = ops.concat(per_scale, axis=1)
        else:
            merged = per_scale[0]
            for t in per_scale[1:]:
                merged = ops.add(merged, t)
        out = ops.conv2d(merged, self.out_w, self.out_b)
        if trace is not None:
            trace.global_applications += 1
        return out


class LocalAttention:
    def __init__(self, name: str, channels: int, spec: AttentionSpec, reg: ParamRegistry):
        self.channels = channels
        self.spec = spec
        k, d = spec.local_kernel, spec.local_dilation
        self.pad = d * (k - 1) // 2
        self.c1_w, self.c1_b = reg.conv(f"{name}.score1", spec.local_mid_ch, channels, k, k, "decoder")
        self.c2_w, self.c2_b = reg.conv(f"{name}.score2", spec.local_window, spec.local_mid_ch, 1, 1, "decoder")

    def __call__(self, feat: Tensor, trace: AttentionTrace | None = None) -> Tensor:
        if feat.shape[1] != self.channels:
            raise DimensionError(
                f"local attention built for {self.channels} channels, got {feat.shape[1]}")
        k, d = self.spec.local_kernel, self.spec.local_dilation
        hid = ops.relu(ops.conv2d(feat, self.c1_w, self.c1_b, pad=self.pad, dilation=d))
        logits = ops.conv2d(hid, self.c2_w, self.c2_b)
        alpha = ops.softmax_channels(logits)                # (N, k*k, H, W)
        if trace is not None:
            trace.local_weights.append(alpha)
            trace.local_applications += 1
        return ops.attend_local(feat, alpha, k, d)
