"""Neural-network layer primitives with forward and backward rules.

Every operation is a pure function over tensors and records a single tape
node (or composes primitives that do).  Convolutions use cross-correlation
semantics (no kernel flip) and a shift-and-GEMM evaluation: one matrix
product per kernel offset, avoiding large im2col buffers.

Padding is ``"same"`` (symmetric, extra pixel on bottom/right) or
``"valid"``.  Weight init policy: He-uniform ahead of ReLU, Glorot-uniform
ahead of sigmoid/softmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    _check_finite,
    add,
    matmul,
    record,
    relu,
    sigmoid,
)

__all__ = [
    "DenseParams",
    "ConvParams",
    "he_uniform",
    "glorot_uniform",
    "dense_params",
    "conv_params",
    "depthwise_params",
    "dense_forward",
    "conv2d",
    "depthwise_conv2d",
    "pointwise_conv2d",
    "separable_conv2d",
    "max_pool2d",
    "global_avg_pool2d",
    "weighted_global_avg_pool",
    "softmax",
    "cross_entropy_loss",
    "LOG_EPS",
]

LOG_EPS = 1e-12  # clamp inside cross-entropy log


# ---------------------------------------------------------------------------
# parameter containers and initialisers

@dataclass
class DenseParams:
    weight: Tensor  # (in_features, out_features)
    bias: Tensor    # (out_features,)


@dataclass
class ConvParams:
    """Kernel is (kh, kw, c_in, c_out) for standard/pointwise convolutions
    and (kh, kw, c) for depthwise ones."""

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: str = "same"


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def dense_params(in_features: int, out_features: int, rng: np.random.Generator,
                 init: str = "he", dtype=np.float32) -> DenseParams:
    shape = (in_features, out_features)
    if init == "he":
        w = he_uniform(rng, shape, in_features, dtype)
    elif init == "glorot":
        w = glorot_uniform(rng, shape, in_features, out_features, dtype)
    else:
        raise ValueError(f"unknown init {init!r}")
    return DenseParams(
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True),
    )


def conv_params(kh: int, kw: int, c_in: int, c_out: int, rng: np.random.Generator,
                stride: int = 1, padding: str = "same", dtype=np.float32) -> ConvParams:
    fan_in = kh * kw * c_in
    k = he_uniform(rng, (kh, kw, c_in, c_out), fan_in, dtype)
    return ConvParams(
        kernel=Tensor(k, requires_grad=True),
        bias=Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True),
        stride=stride,
        padding=padding,
    )


def depthwise_params(kh: int, kw: int, channels: int, rng: np.random.Generator,
                     stride: int = 1, padding: str = "same", dtype=np.float32) -> ConvParams:
    k = he_uniform(rng, (kh, kw, channels), kh * kw, dtype)
    return ConvParams(
        kernel=Tensor(k, requires_grad=True),
        bias=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
        stride=stride,
        padding=padding,
    )


# ---------------------------------------------------------------------------
# dense

_ACTIVATIONS = ("none", "relu", "sigmoid", "softmax")


def dense_forward(x: Tensor, p: DenseParams, activation: str = "none") -> Tensor:
    """activation(x @ W + b) for a rank-2 batch of feature vectors."""
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if x.ndim != 2:
        raise ShapeError(f"dense input must be rank 2, got {x.shape}")
    if x.shape[1] != p.weight.shape[0]:
        raise ShapeError(
            f"dense input features {x.shape[1]} != weight rows {p.weight.shape[0]}")
    z = add(matmul(x, p.weight), p.bias)
    if activation == "relu":
        return relu(z)
    if activation == "sigmoid":
        return sigmoid(z)
    if activation == "softmax":
        return softmax(z)
    return z


# ---------------------------------------------------------------------------
# convolution helpers

def _conv_geometry(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    """Output size plus (top, bottom, left, right) zero padding."""
    if padding == "valid":
        if kh > h or kw > w:
            raise ShapeError(
                f"kernel {kh}x{kw} larger than input {h}x{w} under valid padding")
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        return oh, ow, (0, 0, 0, 0)
    if padding == "same":
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
        return oh, ow, (ph // 2, ph - ph // 2, pw // 2, pw - pw // 2)
    raise ValueError(f"unknown padding {padding!r}")


def _pad_input(x: np.ndarray, pads) -> np.ndarray:
    pt, pb, pl, pr = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))


def _shifted(xp: np.ndarray, i: int, j: int, stride: int, oh: int, ow: int) -> np.ndarray:
    return xp[:, i:i + stride * (oh - 1) + 1:stride,
              j:j + stride * (ow - 1) + 1:stride, :]


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Standard 2-D cross-correlation over NHWC input."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4 (n,h,w,c), got {x.shape}")
    if p.kernel.ndim != 4:
        raise ShapeError(f"conv2d kernel must be rank 4, got {p.kernel.shape}")
    n, h, w, c_in = x.shape
    kh, kw, kc_in, c_out = p.kernel.shape
    if kc_in != c_in:
        raise ShapeError(f"kernel input channels {kc_in} != input channels {c_in}")
    if p.bias.shape != (c_out,):
        raise ShapeError(f"bias shape {p.bias.shape} != ({c_out},)")
    oh, ow, pads = _conv_geometry(h, w, kh, kw, p.stride, p.padding)

    xp = _pad_input(x.data, pads)
    kern = p.kernel.data
    y = np.zeros((n, oh, ow, c_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            y += _shifted(xp, i, j, p.stride, oh, ow) @ kern[i, j]
    y += p.bias.data
    out = Tensor(y)
    _check_finite(out.data, "conv2d")

    need_x, need_k, need_b = x.requires_grad, p.kernel.requires_grad, p.bias.requires_grad
    stride = p.stride

    def bwd(g: np.ndarray):
        gk = np.zeros_like(kern) if need_k else None
        gxp = np.zeros_like(xp) if need_x else None
        g2d = np.ascontiguousarray(g).reshape(-1, c_out) if need_k else None
        for i in range(kh):
            for j in range(kw):
                if need_k:
                    xs = _shifted(xp, i, j, stride, oh, ow)
                    gk[i, j] = np.ascontiguousarray(xs).reshape(-1, c_in).T @ g2d
                if need_x:
                    gxp[:, i:i + stride * (oh - 1) + 1:stride,
                        j:j + stride * (ow - 1) + 1:stride, :] += g @ kern[i, j].T
        gb = g.sum(axis=(0, 1, 2)) if need_b else None
        gx = None
        if need_x:
            pt, pb_, pl, pr = pads
            gx = gxp[:, pt:pt + h, pl:pl + w, :]
        return gx, gk, gb

    record((x, p.kernel, p.bias), out, bwd)
    return out


def depthwise_conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """Per-channel 2-D cross-correlation; no cross-channel mixing."""
    if x.ndim != 4:
        raise ShapeError(f"depthwise input must be rank 4, got {x.shape}")
    if p.kernel.ndim != 3:
        raise ShapeError(f"depthwise kernel must be rank 3 (kh,kw,c), got {p.kernel.shape}")
    n, h, w, c = x.shape
    kh, kw, kc = p.kernel.shape
    if kc != c:
        raise ShapeError(f"depthwise kernel channels {kc} != input channels {c}")
    if p.bias.shape != (c,):
        raise ShapeError(f"bias shape {p.bias.shape} != ({c},)")
    oh, ow, pads = _conv_geometry(h, w, kh, kw, p.stride, p.padding)

    xp = _pad_input(x.data, pads)
    kern = p.kernel.data
    y = np.zeros((n, oh, ow, c), dtype=x.dtype)
    scratch = np.empty_like(y)
    for i in range(kh):
        for j in range(kw):
            np.multiply(_shifted(xp, i, j, p.stride, oh, ow), kern[i, j], out=scratch)
            y += scratch
    y += p.bias.data
    out = Tensor(y)
    _check_finite(out.data, "depthwise_conv2d")

    need_x, need_k, need_b = x.requires_grad, p.kernel.requires_grad, p.bias.requires_grad
    stride = p.stride

    def bwd(g: np.ndarray):
        gk = np.zeros_like(kern) if need_k else None
        gxp = np.zeros_like(xp) if need_x else None
        for i in range(kh):
            for j in range(kw):
                if need_k:
                    xs = _shifted(xp, i, j, stride, oh, ow)
                    gk[i, j] = np.einsum("nhwc,nhwc->c", xs, g)
                if need_x:
                    gxp[:, i:i + stride * (oh - 1) + 1:stride,
                        j:j + stride * (ow - 1) + 1:stride, :] += g * kern[i, j]
        gb = g.sum(axis=(0, 1, 2)) if need_b else None
        gx = None
        if need_x:
            pt, pb_, pl, pr = pads
            gx = gxp[:, pt:pt + h, pl:pl + w, :]
        return gx, gk, gb

    record((x, p.kernel, p.bias), out, bwd)
    return out


def pointwise_conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """1x1 convolution: a per-pixel linear map across channels."""
    if x.ndim != 4:
        raise ShapeError(f"pointwise input must be rank 4, got {x.shape}")
    if p.kernel.ndim != 4 or p.kernel.shape[0] != 1 or p.kernel.shape[1] != 1:
        raise ShapeError(f"pointwise kernel must be 1x1, got {p.kernel.shape}")
    n, h, w, c_in = x.shape
    _, _, kc_in, c_out = p.kernel.shape
    if kc_in != c_in:
        raise ShapeError(f"kernel input channels {kc_in} != input channels {c_in}")
    if p.stride != 1:
        raise ShapeError("pointwise convolution uses stride 1")

    kmat = p.kernel.data[0, 0]  # (c_in, c_out)
    out = Tensor(x.data @ kmat + p.bias.data)
    _check_finite(out.data, "pointwise_conv2d")

    need_x, need_k, need_b = x.requires_grad, p.kernel.requires_grad, p.bias.requires_grad

    def bwd(g: np.ndarray):
        gx = g @ kmat.T if need_x else None
        gk = None
        if need_k:
            gk = np.tensordot(x.data, g, axes=([0, 1, 2], [0, 1, 2]))[None, None]
        gb = g.sum(axis=(0, 1, 2)) if need_b else None
        return gx, gk, gb

    record((x, p.kernel, p.bias), out, bwd)
    return out


def separable_conv2d(x: Tensor, depthwise_p: ConvParams, pointwise_p: ConvParams) -> Tensor:
    """Depthwise filtering followed by pointwise channel mixing (exact composition)."""
    return pointwise_conv2d(depthwise_conv2d(x, depthwise_p), pointwise_p)


# ---------------------------------------------------------------------------
# pooling

def max_pool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """2x2/stride-2 max pooling; odd extents are padded with -inf.

    Gradient routes to the argmax of each window; ties go to the lowest
    flat (row-major) index within the window.
    """
    if window != 2 or stride != 2:
        raise ValueError("max_pool2d supports window=2, stride=2")
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d input must be rank 4, got {x.shape}")
    n, h, w, c = x.shape
    ph, pw = h % 2, w % 2
    xp = x.data
    if ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, ph), (0, pw), (0, 0)),
                    constant_values=-np.inf)
    hp, wp = h + ph, w + pw

    slices = (xp[:, 0::2, 0::2, :], xp[:, 0::2, 1::2, :],
              xp[:, 1::2, 0::2, :], xp[:, 1::2, 1::2, :])
    y = np.maximum(np.maximum(slices[0], slices[1]),
                   np.maximum(slices[2], slices[3]))
    out = Tensor(y)
    _check_finite(out.data, "max_pool2d")

    need = x.requires_grad

    def bwd(g: np.ndarray):
        if not need:
            return (None,)
        gxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
        targets = (gxp[:, 0::2, 0::2, :], gxp[:, 0::2, 1::2, :],
                   gxp[:, 1::2, 0::2, :], gxp[:, 1::2, 1::2, :])
        taken = np.zeros(y.shape, dtype=bool)
        for source, target in zip(slices, targets):
            hit = (source == y) & ~taken
            target += g * hit
            taken |= hit
        return (gxp[:, :h, :w, :],)

    record((x,), out, bwd)
    return out


def global_avg_pool2d(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: (n,h,w,c) -> (n,c)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool2d input must be rank 4, got {x.shape}")
    n, h, w, c = x.shape
    out = Tensor(x.data.mean(axis=(1, 2)))
    need = x.requires_grad

    def bwd(g: np.ndarray):
        if not need:
            return (None,)
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).copy(),)

    record((x,), out, bwd)
    return out


def weighted_global_avg_pool(x: Tensor, spatial_logits: Tensor) -> Tensor:
    """Softmax-weighted spatial pooling with a learned (h,w) logit map.

    Weights are softmax over all h*w logits (shared across channels), so
    all-equal logits reduce exactly to plain global average pooling.
    """
    if x.ndim != 4:
        raise ShapeError(f"weighted pooling input must be rank 4, got {x.shape}")
    n, h, w, c = x.shape
    if spatial_logits.shape != (h, w):
        raise ShapeError(
            f"spatial logits shape {spatial_logits.shape} != input spatial ({h}, {w})")

    logits = spatial_logits.data
    shifted = logits - logits.max()
    e = np.exp(shifted)
    weights = e / e.sum()
    out = Tensor(np.tensordot(x.data, weights, axes=([1, 2], [0, 1])))
    _check_finite(out.data, "weighted_global_avg_pool")

    need_x, need_l = x.requires_grad, spatial_logits.requires_grad

    def bwd(g: np.ndarray):
        gx = None
        if need_x:
            gx = g[:, None, None, :] * weights[None, :, :, None]
        gl = None
        if need_l:
            t = np.tensordot(g, x.data, axes=([0, 1], [0, 3]))  # (h, w)
            gl = weights * (t - (t * weights).sum())
        return gx, gl

    record((x, spatial_logits), out, bwd)
    return out


# ---------------------------------------------------------------------------
# classification head pieces

def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction for stability."""
    if x.ndim != 2:
        raise ShapeError(f"softmax input must be rank 2, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)
    _check_finite(out.data, "softmax")
    need = x.requires_grad

    def bwd(g: np.ndarray):
        if not need:
            return (None,)
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    record((x,), out, bwd)
    return out


def cross_entropy_loss(probs: Tensor, one_hot: Tensor) -> Tensor:
    """Mean categorical cross-entropy: -(1/n) sum(one_hot * log(probs + eps))."""
    if probs.shape != one_hot.shape:
        raise ShapeError(f"probs shape {probs.shape} != labels shape {one_hot.shape}")
    if probs.ndim != 2:
        raise ShapeError(f"cross entropy expects rank-2 inputs, got {probs.shape}")
    oh = one_hot.data
    if not (np.all((oh == 0) | (oh == 1)) and np.all(oh.sum(axis=1) == 1)):
        raise ValueError("labels must be one-hot rows")
    n = probs.shape[0]
    clamped = probs.data + LOG_EPS
    out = Tensor(-(oh * np.log(clamped)).sum() / n)
    _check_finite(out.data, "cross_entropy_loss")
    need = probs.requires_grad

    def bwd(g: np.ndarray):
        gp = (-float(g) / n) * (oh / clamped) if need else None
        return gp, None

    record((probs, one_hot), out, bwd)
    return out
