"""Differentiable layer operations over :class:`~defog.kernel.tensor.Tensor`.

Everything the defogging networks need, nothing more: 2-D convolution and
its transpose, block sum-pooling, batch normalization, the usual
activations, inverted dropout, a dense layer, and mean squared error.

Convolution and transposed convolution share one im2col / col2im pair, so
``tconv2d`` forward is exactly the adjoint of ``conv2d`` forward with the
same geometry (and vice versa for the backward passes).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# im2col / col2im
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather k*k patches: (N,C,Hp,Wp) -> (N,C,k,k,ho,wo)."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols


def _col2im(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    """Scatter-add patches back: (N,C,k,k,ho,wo) -> (N,C,hp,wp).

    For a fixed kernel offset the strided destination slices are disjoint,
    so the in-place adds are well defined.
    """
    n, c, k, _, ho, wo = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return out


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


# ---------------------------------------------------------------------------
# conv2d / tconv2d
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
           pad: int = 0) -> Tensor:
    """Cross-correlation of (N,Ci,H,W) with (Co,Ci,k,k) plus bias.

    Output height is (H + 2*pad - k) / stride + 1; the division must be
    exact, fractional geometries are rejected.  b=None skips the bias,
    for layers whose shift is absorbed by a following batchnorm.
    """
    _check(x.data.ndim == 4, f"conv2d: input must be 4-D, got shape {x.shape}")
    _check(w.data.ndim == 4 and w.shape[2] == w.shape[3],
           f"conv2d: weight must be (Co,Ci,k,k), got {w.shape}")
    n, ci, h, wd = x.shape
    co, ci_w, k, _ = w.shape
    _check(k >= 1 and pad >= 0 and stride >= 1,
           f"conv2d: bad geometry k={k} stride={stride} pad={pad}")
    _check(ci == ci_w, f"conv2d: input has {ci} channels but weight expects {ci_w}")
    _check(b is None or b.shape == (co,),
           f"conv2d: bias shape {None if b is None else b.shape} != ({co},)")
    _check((h + 2 * pad - k) % stride == 0 and (wd + 2 * pad - k) % stride == 0,
           f"conv2d: extent {h}x{wd} with pad={pad} k={k} not divisible by stride={stride}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1

    xp = _pad_hw(x.data, pad)
    cols = _im2col(xp, k, stride, ho, wo)
    out = np.tensordot(cols, w.data, axes=([1, 2, 3], [1, 2, 3]))  # (N,ho,wo,Co)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1)

    def backward(g: np.ndarray) -> None:
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))  # (Co,C,k,k)
            w.accumulate_grad(gw)
        if x.requires_grad:
            gcols = np.tensordot(g, w.data, axes=([1], [0]))  # (N,ho,wo,Ci,k,k)
            gcols = gcols.transpose(0, 3, 4, 5, 1, 2)
            gxp = _col2im(gcols, h + 2 * pad, wd + 2 * pad, stride)
            x.accumulate_grad(gxp[:, :, pad:pad + h, pad:pad + wd])

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, "conv2d", backward)


def tconv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1,
            pad: int = 0, output_pad: int = 0) -> Tensor:
    """Transposed convolution: the adjoint of conv2d with the same geometry.

    Weight layout is (Ci,Co,k,k).  Output height is
    (H-1)*stride - 2*pad + k + output_pad; output_pad (< stride) resolves
    the ambiguity of strided downsampling so 4->8->16->32 mirrors exactly.
    b=None skips the bias, as for conv2d.
    """
    _check(x.data.ndim == 4, f"tconv2d: input must be 4-D, got shape {x.shape}")
    _check(w.data.ndim == 4 and w.shape[2] == w.shape[3],
           f"tconv2d: weight must be (Ci,Co,k,k), got {w.shape}")
    n, ci, h, wd = x.shape
    ci_w, co, k, _ = w.shape
    _check(k >= 1 and pad >= 0 and stride >= 1,
           f"tconv2d: bad geometry k={k} stride={stride} pad={pad}")
    _check(0 <= output_pad < max(stride, 1),
           f"tconv2d: output_pad={output_pad} must lie in [0, stride={stride})")
    _check(ci == ci_w, f"tconv2d: input has {ci} channels but weight expects {ci_w}")
    _check(b is None or b.shape == (co,),
           f"tconv2d: bias shape {None if b is None else b.shape} != ({co},)")
    ho = (h - 1) * stride - 2 * pad + k + output_pad
    wo = (wd - 1) * stride - 2 * pad + k + output_pad
    _check(ho >= 1 and wo >= 1,
           f"tconv2d: geometry yields empty output {ho}x{wo} from {h}x{wd}")

    # Scatter into the padded buffer, then crop pad from each border.  The
    # output_pad rows/cols at the bottom/right stay zero-filled.
    hp, wp = ho + 2 * pad, wo + 2 * pad
    gcols = np.tensordot(x.data, w.data, axes=([1], [0]))  # (N,H,W,Co,k,k)
    gcols = gcols.transpose(0, 3, 4, 5, 1, 2)
    full = _col2im(gcols, hp, wp, stride)
    out = np.ascontiguousarray(full[:, :, pad:pad + ho, pad:pad + wo])
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1)

    def backward(g: np.ndarray) -> None:
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3)))
        gbuf = np.zeros((n, co, hp, wp), dtype=g.dtype)
        gbuf[:, :, pad:pad + ho, pad:pad + wo] = g
        cols_g = _im2col(gbuf, k, stride, h, wd)
        if w.requires_grad:
            gw = np.tensordot(x.data, cols_g, axes=([0, 2, 3], [0, 4, 5]))  # (Ci,Co,k,k)
            w.accumulate_grad(gw)
        if x.requires_grad:
            gx = np.tensordot(cols_g, w.data, axes=([1, 2, 3], [1, 2, 3]))  # (N,H,W,Ci)
            x.accumulate_grad(np.ascontiguousarray(gx.transpose(0, 3, 1, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, "tconv2d", backward)


# ---------------------------------------------------------------------------
# sum pooling
# ---------------------------------------------------------------------------

def sumpool(m: Tensor, s: int) -> Tensor:
    """Block sum with equal filter and stride over the last two axes.

    Every s*s block collapses to its sum, so the total over the tensor is
    preserved at every scale.
    """
    _check(s >= 1, f"sumpool: stride {s} must be >= 1")
    *lead, h, w = m.shape
    _check(h % s == 0 and w % s == 0,
           f"sumpool: extent {h}x{w} not divisible by stride {s}")
    if s == 1:
        return m * 1.0 if m.requires_grad else m
    ho, wo = h // s, w // s
    blocks = m.data.reshape(*lead, ho, s, wo, s)
    out = blocks.sum(axis=(-3, -1))

    def backward(g: np.ndarray) -> None:
        if m.requires_grad:
            gexp = np.broadcast_to(
                g.reshape(*lead, ho, 1, wo, 1), (*lead, ho, s, wo, s)
            ).reshape(m.shape)
            m.accumulate_grad(np.ascontiguousarray(gexp))

    return Tensor.from_op(out, (m,), "sumpool", backward)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
              running_var: Tensor, running_count: Tensor, mode: str,
              momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (batch, height, width).

    Train mode normalizes with batch statistics and folds them into the
    running estimates (keep factor ``momentum``); eval mode replays the
    running estimates and requires at least one recorded train batch.
    Biased variance is used throughout, stabilized by ``eps``.
    """
    _check(x.data.ndim == 4, f"batchnorm: input must be 4-D, got shape {x.shape}")
    c = x.shape[1]
    _check(gamma.shape == (c,) and beta.shape == (c,),
           f"batchnorm: gamma/beta shapes {gamma.shape}/{beta.shape} != ({c},)")
    _check(mode in ("train", "eval"), f"batchnorm: unknown mode {mode!r}")

    if mode == "eval":
        _check(running_count.data.reshape(()) > 0,
               "batchnorm: eval mode before any train batch (running stats empty)")
        mu = running_mean.data
        var = running_var.data
    else:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        one = np.asarray(1.0, dtype=x.dtype)
        running_mean.data[...] = momentum * running_mean.data + (one - momentum) * mu
        running_var.data[...] = momentum * running_var.data + (one - momentum) * var
        running_count.data[...] = running_count.data + 1

    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xc = x.data - mu.reshape(1, c, 1, 1)
    xhat = xc * inv_std.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)

    m = x.shape[0] * x.shape[2] * x.shape[3]

    def backward(g: np.ndarray) -> None:
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data.reshape(1, c, 1, 1)
        if mode == "eval":
            x.accumulate_grad(gxhat * inv_std.reshape(1, c, 1, 1))
            return
        # Batch statistics depend on x, so the gradient carries the mean
        # and variance terms as well.
        sum_gxhat = gxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_gxhat_xhat = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        gx = (inv_std.reshape(1, c, 1, 1) / m) * (
            m * gxhat - sum_gxhat - xhat * sum_gxhat_xhat
        )
        x.accumulate_grad(gx.astype(x.dtype, copy=False))

    return Tensor.from_op(out, (x, gamma, beta), "batchnorm", backward)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    # np.maximum, unlike np.where on the mask, propagates NaN so the
    # trainer's divergence guard can see poisoned activations
    return Tensor.from_op(np.maximum(x.data, np.asarray(0, dtype=x.dtype)),
                          (x,), "relu", backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    s = np.asarray(slope, dtype=x.dtype)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.where(mask, g, g * s))

    return Tensor.from_op(np.where(mask, x.data, x.data * s), (x,), "leaky_relu", backward)


def sigmoid(x: Tensor) -> Tensor:
    # Piecewise form avoids exp overflow on large negatives.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * out * (1.0 - out))

    return Tensor.from_op(out, (x,), "sigmoid", backward)


# ---------------------------------------------------------------------------
# dropout / dense / mse
# ---------------------------------------------------------------------------

def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time,
    eval mode is the identity (exactly: the input tensor is returned)."""
    _check(0.0 <= rate < 1.0, f"dropout: rate {rate} outside [0, 1)")
    _check(mode in ("train", "eval"), f"dropout: unknown mode {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    _check(rng is not None, "dropout: train mode needs an rng")
    keep = (rng.random(x.shape) >= rate)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    return Tensor.from_op(x.data * mask, (x,), "dropout", backward)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w + b for (N,D) inputs."""
    _check(x.data.ndim == 2 and w.data.ndim == 2,
           f"dense: need 2-D input and weight, got {x.shape} and {w.shape}")
    _check(x.shape[1] == w.shape[0],
           f"dense: inner extents disagree, input D={x.shape[1]} vs weight D={w.shape[0]}")
    _check(b.shape == (w.shape[1],), f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    out = x.data @ w.data + b.data

    def backward(g: np.ndarray) -> None:
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))
        if w.requires_grad:
            w.accumulate_grad(x.data.T @ g)
        if x.requires_grad:
            x.accumulate_grad(g @ w.data.T)

    return Tensor.from_op(out, (x, w, b), "dense", backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    _check(a.shape == b.shape, f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=a.dtype)

    def backward(g: np.ndarray) -> None:
        scale = 2.0 * g.reshape(()) / n
        if a.requires_grad:
            a.accumulate_grad(diff * scale)
        if b.requires_grad:
            b.accumulate_grad(diff * (-scale))

    return Tensor.from_op(out, (a, b), "mse", backward)


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------

def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
               dtype=np.float32) -> np.ndarray:
    """Centered uniform scaled by fan-in, sized for ReLU-family stacks."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
