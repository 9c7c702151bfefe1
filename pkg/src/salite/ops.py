"""Differentiable operators: convolution, pooling, resize, softmax, LSTM,
element-wise maps, attention gathers, and the fused loss kernels.

All spatial operators take NCHW tensors. Backward rules are hand-derived and
validated by the finite-difference harness in ``gradcheck``. Reductions use a
fixed order (numpy's row-major sums / BLAS GEMM), so gradients are
deterministic for a given build.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DimensionError, NumericError
from .tensor import Tensor, accumulate, make_multi_op, make_op, require_same_shape

# --------------------------------------------------------------------------
# element-wise maps
# --------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    require_same_shape(a, b, "add")
    out = make_op(a.data + b.data, (a, b), lambda g: (accumulate(a, g), accumulate(b, g)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    require_same_shape(a, b, "sub")
    return make_op(a.data - b.data, (a, b), lambda g: (accumulate(a, g), accumulate(b, -g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    require_same_shape(a, b, "mul")

    def bw(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return make_op(a.data * b.data, (a, b), bw)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar (the one permitted broadcast)."""
    c = float(c)
    return make_op(x.data * np.asarray(c, dtype=x.dtype), (x,), lambda g: accumulate(x, g * c))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # derivative at exactly 0 is 0
    return make_op(np.where(mask, x.data, 0), (x,), lambda g: accumulate(x, g * mask))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    pos = z >= 0
    ez = np.exp(np.where(pos, -z, z))  # exp(-|z|): never overflows
    return np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_op(s, (x,), lambda g: accumulate(x, g * s * (1.0 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make_op(t, (x,), lambda g: accumulate(x, g * (1.0 - t * t)))


# --------------------------------------------------------------------------
# reductions and shape plumbing
# --------------------------------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    return make_op(
        np.asarray(x.data.sum(), dtype=x.dtype),
        (x,),
        lambda g: accumulate(x, np.full_like(x.data, g)),
    )


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return make_op(
        np.asarray(x.data.mean(), dtype=x.dtype),
        (x,),
        lambda g: accumulate(x, np.full_like(x.data, g / n)),
    )


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    return make_op(x.data.reshape(shape), (x,), lambda g: accumulate(x, g.reshape(x.shape)))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(
        np.ascontiguousarray(x.data.transpose(axes)),
        (x,),
        lambda g: accumulate(x, g.transpose(inv)),
    )


def transpose_hw(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise DimensionError(f"transpose_hw expects NCHW, got shape {x.shape}")
    return permute(x, (0, 1, 3, 2))


def concat(tensors: list[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty list")
    ref = tensors[0]
    for t in tensors[1:]:
        if t.data.ndim != ref.data.ndim or t.dtype != ref.dtype:
            raise DimensionError(f"concat: incompatible operands {ref.shape}/{ref.dtype} vs {t.shape}/{t.dtype}")
        for ax in range(ref.data.ndim):
            if ax != axis and t.shape[ax] != ref.shape[ax]:
                raise DimensionError(f"concat: shapes differ off-axis, {ref.shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            accumulate(t, g[tuple(sl)])

    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def unstack(x: Tensor, axis: int) -> tuple[Tensor, ...]:
    """Split along an axis into slabs with that axis removed (one tape node)."""
    n = x.shape[axis]
    datas = [np.ascontiguousarray(np.take(x.data, i, axis=axis)) for i in range(n)]

    def bw(*gs):
        accumulate(x, np.stack(gs, axis=axis))

    return make_multi_op(datas, (x,), bw)


def stack(tensors: list[Tensor], axis: int) -> Tensor:
    ref = tensors[0]
    for t in tensors[1:]:
        require_same_shape(ref, t, "stack")

    def bw(g):
        for i, t in enumerate(tensors):
            accumulate(t, np.take(g, i, axis=axis))

    return make_op(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


# --------------------------------------------------------------------------
# convolution / pooling / resize
# --------------------------------------------------------------------------


def conv_out_size(n: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def _conv_view(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int,
               oh: int, ow: int) -> np.ndarray:
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh * dilation, sw * dilation, sh * stride, sw * stride),
        writeable=False,
    )


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0,
           dilation: int = 1) -> Tensor:
    """Cross-correlation with bias. x: (N,Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout,)."""
    if x.data.ndim != 4 or w.data.ndim != 4 or b.data.ndim != 1:
        raise DimensionError(
            f"conv2d: expected ranks (4,4,1), got x {x.shape}, w {w.shape}, b {b.shape}")
    n, cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d: input has {cin} channels but kernel expects {cin_w}")
    if b.shape[0] != cout:
        raise DimensionError(f"conv2d: bias has {b.shape[0]} entries for {cout} output channels")
    if kh < 1 or kw < 1 or stride < 1 or dilation < 1:
        raise DimensionError(f"conv2d: bad hyperparameters k=({kh},{kw}) stride={stride} dilation={dilation}")
    if h + 2 * pad < dilation * (kh - 1) + 1 or wid + 2 * pad < dilation * (kw - 1) + 1:
        raise DimensionError(
            f"conv2d: kernel span {dilation * (kh - 1) + 1} exceeds padded input ({h + 2 * pad}, {wid + 2 * pad})")
    oh = conv_out_size(h, kh, stride, pad, dilation)
    ow = conv_out_size(wid, kw, stride, pad, dilation)

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        # 1x1 projection: a single batched GEMM over flattened pixels
        w2 = w.data.reshape(cout, cin)
        out = np.matmul(w2, x.data.reshape(n, cin, h * wid)).reshape(n, cout, h, wid)
        out = out + b.data[None, :, None, None]

        def bw1(g):
            g2 = g.reshape(n, cout, h * wid)
            if b.requires_grad:
                accumulate(b, g.sum(axis=(0, 2, 3)))
            if w.requires_grad:
                dw = np.einsum("nop,ncp->oc", g2, x.data.reshape(n, cin, h * wid), optimize=True)
                accumulate(w, dw.reshape(w.shape))
            if x.requires_grad:
                accumulate(x, np.matmul(w2.T, g2).reshape(x.shape))

        return make_op(out, (x, w, b), bw1)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    view = _conv_view(xp, kh, kw, stride, dilation, oh, ow)
    # one im2col copy, reused by the forward GEMM and both backward GEMMs
    cols = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3)).reshape(n * oh * ow, cin * kh * kw)
    w2 = w.data.reshape(cout, -1)
    out = (cols @ w2.T).reshape(n, oh, ow, cout)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += b.data[None, :, None, None]

    def bw(g):
        if b.requires_grad:
            accumulate(b, g.sum(axis=(0, 2, 3)))
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, cout)
        if w.requires_grad:
            accumulate(w, (g2.T @ cols).reshape(w.shape))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, oh, ow, cin, kh, kw)
            dcols = np.ascontiguousarray(dcols.transpose(0, 3, 4, 5, 1, 2))
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :,
                        i * dilation: i * dilation + stride * oh: stride,
                        j * dilation: j * dilation + stride * ow: stride] += dcols[:, :, i, j]
            accumulate(x, dxp[:, :, pad:pad + h, pad:pad + wid] if pad else dxp)

    return make_op(out, (x, w, b), bw)


def pool2d(x: Tensor, kind: str, k: int, stride: int) -> Tensor:
    """Max or average pooling, no padding. Max routes gradient to the first
    maximal cell of each window in row-major scan order."""
    if kind not in ("max", "avg"):
        raise ValueError(f"pool2d: unknown kind {kind!r}")
    if x.data.ndim != 4:
        raise DimensionError(f"pool2d expects NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    if k > h or k > w:
        raise DimensionError(f"pool2d: window {k} exceeds spatial extent ({h}, {w})")
    oh = conv_out_size(h, k, stride, 0, 1)
    ow = conv_out_size(w, k, stride, 0, 1)
    view = _conv_view(x.data, k, k, stride, 1, oh, ow)  # (N,C,k,k,oh,ow)

    if kind == "avg":
        out = view.mean(axis=(2, 3))

        def bw(g):
            if not x.requires_grad:
                return
            dx = np.zeros_like(x.data)
            gk = g / (k * k)
            for i in range(k):
                for j in range(k):
                    dx[:, :, i: i + stride * oh: stride, j: j + stride * ow: stride] += gk
            accumulate(x, dx)

        return make_op(np.ascontiguousarray(out), (x,), bw)

    flat = view.reshape(n, c, k * k, oh, ow)
    idx = flat.argmax(axis=2)  # first occurrence on ties (row-major window scan)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def bw(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        ni, ci, hi, wi = np.indices((n, c, oh, ow), sparse=False)
        rows = hi * stride + idx // k
        cols = wi * stride + idx % k
        np.add.at(dx, (ni, ci, rows, cols), g)
        accumulate(x, dx)

    return make_op(np.ascontiguousarray(out), (x,), bw)


def linear_interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Align-corners 1-D interpolation matrix (n_out, n_in); rows sum to 1.

    With matching sizes this is exactly the identity. A single output sample
    is taken at the input's center coordinate (n_in - 1) / 2.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if n_out == 1:
        src = np.array([(n_in - 1) / 2.0])
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.floor(src).astype(int)
    i0 = np.clip(i0, 0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    for r in range(n_out):
        m[r, i0[r]] += 1.0 - t[r]
        m[r, i1[r]] += t[r]
    return m.astype(dtype)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Align-corners bilinear resize; exact identity when sizes are unchanged."""
    if x.data.ndim != 4:
        raise DimensionError(f"resize_bilinear expects NCHW, got shape {x.shape}")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"resize_bilinear: bad output size ({out_h}, {out_w})")
    n, c, h, w = x.shape
    if out_h == h and out_w == w:
        return make_op(x.data, (x,), lambda g: accumulate(x, g))
    mh = linear_interp_matrix(h, out_h, x.dtype)
    mw = linear_interp_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def bw(g):
        accumulate(x, np.matmul(np.matmul(mh.T, g), mw))

    return make_op(np.ascontiguousarray(out), (x,), bw)


def resize_bilinear_array(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Same resampling on a raw (..., H, W) array, outside the tape."""
    h, w = a.shape[-2:]
    if out_h == h and out_w == w:
        return a
    mh = linear_interp_matrix(h, out_h)
    mw = linear_interp_matrix(w, out_w)
    return np.matmul(np.matmul(mh, a.astype(np.float64)), mw.T).astype(a.dtype)


# --------------------------------------------------------------------------
# softmax / LSTM
# --------------------------------------------------------------------------


def softmax_channels(x: Tensor) -> Tensor:
    """Per-pixel softmax over the channel axis of an NCHW tensor.

    Uses max-subtraction so huge logits from untrained nets cannot overflow.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"softmax_channels expects NCHW, got shape {x.shape}")
    bad = ~np.isfinite(x.data)
    if bad.any():
        where = tuple(int(v) for v in np.argwhere(bad)[0])
        raise NumericError(f"softmax_channels: non-finite logit at index {where}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        accumulate(x, out * (g - dot))

    return make_op(out, (x,), bw)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor,
              b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step. Gate order in the packed weights: input, forget, cell, output.

    x: (B,I), h/c: (B,H), wx: (4H,I), wh: (4H,H), b: (4H,). Returns (h', c').
    """
    if x.data.ndim != 2 or h.data.ndim != 2 or c.data.ndim != 2:
        raise DimensionError(f"lstm_cell: x/h/c must be rank 2, got {x.shape}/{h.shape}/{c.shape}")
    bsz, isz = x.shape
    hsz = h.shape[1]
    if h.shape != (bsz, hsz) or c.shape != (bsz, hsz):
        raise DimensionError(f"lstm_cell: state shapes {h.shape}/{c.shape} disagree with batch {bsz}")
    if wx.shape != (4 * hsz, isz):
        raise DimensionError(f"lstm_cell: wx shape {wx.shape}, expected {(4 * hsz, isz)}")
    if wh.shape != (4 * hsz, hsz):
        raise DimensionError(f"lstm_cell: wh shape {wh.shape}, expected {(4 * hsz, hsz)}")
    if b.shape != (4 * hsz,):
        raise DimensionError(f"lstm_cell: bias shape {b.shape}, expected {(4 * hsz,)}")

    z = x.data @ wx.data.T + h.data @ wh.data.T + b.data
    zi, zf, zg, zo = (z[:, k * hsz:(k + 1) * hsz] for k in range(4))
    gi, gf, go = _sigmoid(zi), _sigmoid(zf), _sigmoid(zo)
    gg = np.tanh(zg)
    c2 = gf * c.data + gi * gg
    tc = np.tanh(c2)
    h2 = go * tc

    def bw(gh, gc):
        d_c2 = gc + gh * go * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                d_c2 * gg * gi * (1.0 - gi),
                d_c2 * c.data * gf * (1.0 - gf),
                d_c2 * gi * (1.0 - gg * gg),
                gh * tc * go * (1.0 - go),
            ],
            axis=1,
        )
        if x.requires_grad:
            accumulate(x, dz @ wx.data)
        if h.requires_grad:
            accumulate(h, dz @ wh.data)
        if c.requires_grad:
            accumulate(c, d_c2 * gf)
        if wx.requires_grad:
            accumulate(wx, dz.T @ x.data)
        if wh.requires_grad:
            accumulate(wh, dz.T @ h.data)
        if b.requires_grad:
            accumulate(b, dz.sum(axis=0))

    return make_multi_op((h2, c2), (x, h, c, wx, wh, b), bw)


# --------------------------------------------------------------------------
# attention gathers
# --------------------------------------------------------------------------


def attend_global(values: Tensor, alpha: Tensor) -> Tensor:
    """Weighted sum of global attendees: values (N,C,D), alpha (N,D,h,w) -> (N,C,h,w)."""
    if values.data.ndim != 3 or alpha.data.ndim != 4:
        raise DimensionError(f"attend_global: ranks must be (3,4), got {values.shape}, {alpha.shape}")
    if values.shape[0] != alpha.shape[0] or values.shape[2] != alpha.shape[1]:
        raise DimensionError(f"attend_global: values {values.shape} vs alpha {alpha.shape}")
    out = np.einsum("ncd,ndhw->nchw", values.data, alpha.data, optimize=True)

    def bw(g):
        if values.requires_grad:
            accumulate(values, np.einsum("nchw,ndhw->ncd", g, alpha.data, optimize=True))
        if alpha.requires_grad:
            accumulate(alpha, np.einsum("nchw,ncd->ndhw", g, values.data, optimize=True))

    return make_op(np.ascontiguousarray(out), (values, alpha), bw)


def attend_local(feat: Tensor, alpha: Tensor, k: int, dilation: int) -> Tensor:
    """Weighted sum over each pixel's k x k dilated neighborhood (zero-padded).

    feat: (N,C,H,W); alpha: (N,k*k,H,W) with weights ordered row-major over
    the window. Output (N,C,H,W).
    """
    if feat.data.ndim != 4 or alpha.data.ndim != 4:
        raise DimensionError(f"attend_local: expected NCHW operands, got {feat.shape}, {alpha.shape}")
    n, c, h, w = feat.shape
    if alpha.shape[0] != n or alpha.shape[2:] != (h, w):
        raise DimensionError(f"attend_local: alpha {alpha.shape} does not match features {feat.shape}")
    if alpha.shape[1] != k * k:
        raise DimensionError(f"attend_local: alpha has {alpha.shape[1]} weight channels, window needs {k * k}")
    rad = dilation * (k - 1) // 2
    fp = np.pad(feat.data, ((0, 0), (0, 0), (rad, rad), (rad, rad)))
    sn, sc, sh, sw = fp.strides
    view = as_strided(fp, shape=(n, c, k, k, h, w),
                      strides=(sn, sc, sh * dilation, sw * dilation, sh, sw),
                      writeable=False)
    a4 = alpha.data.reshape(n, k, k, h, w)
    out = np.einsum("ncklhw,nklhw->nchw", view, a4, optimize=True)

    def bw(g):
        if alpha.requires_grad:
            da = np.einsum("ncklhw,nchw->nklhw", view, g, optimize=True)
            accumulate(alpha, da.reshape(alpha.shape))
        if feat.requires_grad:
            dfp = np.zeros_like(fp)
            for i in range(k):
                for j in range(k):
                    dfp[:, :, i * dilation: i * dilation + h,
                        j * dilation: j * dilation + w] += g * a4[:, None, i, j]
            accumulate(feat, dfp[:, :, rad:rad + h, rad:rad + w])

    return make_op(np.ascontiguousarray(out), (feat, alpha), bw)


# --------------------------------------------------------------------------
# fused loss kernels
# --------------------------------------------------------------------------

CLAMP_EPS = 1e-7


def weighted_bce_sum(s: Tensor, target: np.ndarray, coeff: np.ndarray) -> Tensor:
    """sum(coeff * BCE(clamp(s), target)), the building block of the patch loss.

    Predictions are clamped to [CLAMP_EPS, 1-CLAMP_EPS] before the logs; the
    clamp's derivative is taken as 0 at the clamped points (deterministic).
    """
    if s.shape != target.shape or s.shape != coeff.shape:
        raise DimensionError(f"weighted_bce_sum: shapes {s.shape}, {target.shape}, {coeff.shape} differ")
    sc = np.clip(s.data, CLAMP_EPS, 1.0 - CLAMP_EPS)
    loss = -(coeff * (target * np.log(sc) + (1.0 - target) * np.log1p(-sc))).sum()

    def bw(g):
        inside = (s.data > CLAMP_EPS) & (s.data < 1.0 - CLAMP_EPS)
        ds = coeff * (-target / sc + (1.0 - target) / (1.0 - sc)) * inside
        accumulate(s, g * ds.astype(s.dtype))

    return make_op(np.asarray(loss, dtype=s.dtype), (s,), bw)


def weighted_huber_sum(s: Tensor, target: np.ndarray, coeff: np.ndarray,
                       delta: float) -> Tensor:
    """sum(coeff * huber(s - target, delta)): quadratic up to |e| = delta,
    linear beyond, continuous in value and slope at the joint."""
    if s.shape != target.shape or s.shape != coeff.shape:
        raise DimensionError(f"weighted_huber_sum: shapes {s.shape}, {target.shape}, {coeff.shape} differ")
    e = s.data - target
    ae = np.abs(e)
    q = np.where(ae <= delta, 0.5 * e * e, delta * ae - 0.5 * delta * delta)
    loss = (coeff * q).sum()

    def bw(g):
        accumulate(s, (g * coeff * np.clip(e, -delta, delta)).astype(s.dtype))

    return make_op(np.asarray(loss, dtype=s.dtype), (s,), bw)
