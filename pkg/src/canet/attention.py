"""Multi-head channel attention over a weighted-pooling channel summary.

The block squeezes an (n,h,w,C) feature map to an (n,C) summary via
softmax-weighted global average pooling, then runs H independent dense
bottlenecks (C -> C/r with ReLU, back to C with sigmoid).  The per-head
gates are averaged into one gate in (0,1) per channel, combined with the
features by elementwise multiplication, and passed through one extra
dense layer that mixes channels.

Two combination modes are provided:

* ``pooled`` - the gate multiplies the pooled summary itself; the result
  is reshaped to (n,1,1,C) so downstream spatial reductions degenerate to
  a 1x1 pass-through.
* ``spatial`` - the post-dense gate broadcasts over the spatial map,
  rescaling every pixel's channels (squeeze-excitation style), output
  (n,h,w,C).

Initialisation makes the block a transparent 0.5-scale recalibration:
zero pooling logits (weighted pooling == plain pooling), zero second
dense layers (every head's gate is exactly sigmoid(0) = 0.5), identity
post-dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import he_uniform, weighted_global_avg_pool
from .tensor import ShapeError, Tensor, add, matmul, multiply, record, relu, reshape, sigmoid

__all__ = [
    "GATE_MODES",
    "AttentionConfig",
    "AttentionParams",
    "init_attention_params",
    "compute_channel_gate",
    "attention_forward",
]

GATE_MODES = ("pooled", "spatial")


@dataclass
class AttentionConfig:
    channels: int
    heads: int = 16
    reduction: int = 8
    gate_mode: str = "pooled"

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.heads < 1:
            raise ValueError(f"heads must be >= 1, got {self.heads}")
        if self.reduction < 1:
            raise ValueError(f"reduction must be >= 1, got {self.reduction}")
        if self.gate_mode not in GATE_MODES:
            raise ValueError(f"gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")

    @property
    def bottleneck(self) -> int:
        return max(1, self.channels // self.reduction)


@dataclass
class HeadParams:
    w1: Tensor  # (C, C/r)
    b1: Tensor  # (C/r,)
    w2: Tensor  # (C/r, C)
    b2: Tensor  # (C,)


@dataclass
class AttentionParams:
    spatial_logits: Tensor          # (h, w)
    heads: list[HeadParams] = field(default_factory=list)
    post_weight: Tensor = None      # (C, C)
    post_bias: Tensor = None        # (C,)

    def named_tensors(self, prefix: str = "attention") -> dict[str, Tensor]:
        named = {f"{prefix}.spatial_logits": self.spatial_logits}
        for i, head in enumerate(self.heads):
            named[f"{prefix}.head{i}.w1"] = head.w1
            named[f"{prefix}.head{i}.b1"] = head.b1
            named[f"{prefix}.head{i}.w2"] = head.w2
            named[f"{prefix}.head{i}.b2"] = head.b2
        named[f"{prefix}.post.weight"] = self.post_weight
        named[f"{prefix}.post.bias"] = self.post_bias
        return named


def init_attention_params(cfg: AttentionConfig, spatial: tuple[int, int], seed: int,
                          dtype=np.float32) -> AttentionParams:
    """Deterministic parameter initialisation for a given seed.

    Zero pooling logits, He-uniform first dense layers, zero second dense
    layers and an identity post-dense leave the whole block equal to a
    0.5-scaled recalibration at initialisation (the gate is exactly
    sigmoid(0) everywhere), so inserting it perturbs nothing until the
    gates start to learn.
    """
    rng = np.random.default_rng(seed)
    c, bn = cfg.channels, cfg.bottleneck
    heads = []
    for _ in range(cfg.heads):
        heads.append(HeadParams(
            w1=Tensor(he_uniform(rng, (c, bn), c, dtype), requires_grad=True),
            b1=Tensor(np.zeros(bn, dtype=dtype), requires_grad=True),
            w2=Tensor(np.zeros((bn, c), dtype=dtype), requires_grad=True),
            b2=Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
        ))
    return AttentionParams(
        spatial_logits=Tensor(np.zeros(spatial, dtype=dtype), requires_grad=True),
        heads=heads,
        post_weight=Tensor(np.eye(c, dtype=dtype), requires_grad=True),
        post_bias=Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
    )


def _head_mean(gates: list[Tensor]) -> Tensor:
    """Arithmetic mean of the per-head gates, bit-identical under any
    permutation of the heads: each component's addends are put in sorted
    order before summation, which fixes the floating-point rounding path."""
    heads = len(gates)
    stacked = np.sort(np.stack([g.data for g in gates]), axis=0)
    out = Tensor(stacked.sum(axis=0) / heads)
    needs = [g.requires_grad for g in gates]

    def bwd(g: np.ndarray):
        share = g / heads
        return tuple(share if need else None for need in needs)

    record(tuple(gates), out, bwd)
    return out


def compute_channel_gate(pooled: Tensor, params: AttentionParams, cfg: AttentionConfig) -> Tensor:
    """Average of H per-head sigmoid bottleneck gates; components in (0,1).

    Head i computes sigmoid(relu(pooled @ W1_i + b1_i) @ W2_i + b2_i); the
    arithmetic mean over heads is permutation-symmetric in the head order.
    """
    if pooled.ndim != 2 or pooled.shape[1] != cfg.channels:
        raise ShapeError(
            f"pooled summary must be (n, {cfg.channels}), got {pooled.shape}")
    if len(params.heads) != cfg.heads:
        raise ShapeError(f"expected {cfg.heads} head parameter sets, got {len(params.heads)}")
    gates = []
    for head in params.heads:
        hidden = relu(add(matmul(pooled, head.w1), head.b1))
        gates.append(sigmoid(add(matmul(hidden, head.w2), head.b2)))
    return _head_mean(gates)


def attention_forward(x: Tensor, params: AttentionParams, cfg: AttentionConfig) -> Tensor:
    """Apply the attention block to an (n,h,w,C) feature map.

    pooled mode: gate * pooled summary, post-dense on the channel vector,
    reshaped to (n,1,1,C).  spatial mode: post-dense on the gate, then
    broadcast multiplication with the full feature map, (n,h,w,C).
    """
    if x.ndim != 4:
        raise ShapeError(f"attention input must be rank 4, got {x.shape}")
    n, h, w, c = x.shape
    if c != cfg.channels:
        raise ShapeError(f"input channels {c} != configured channels {cfg.channels}")

    pooled = weighted_global_avg_pool(x, params.spatial_logits)
    gate = compute_channel_gate(pooled, params, cfg)

    if cfg.gate_mode == "pooled":
        v = multiply(gate, pooled)
        z = add(matmul(v, params.post_weight), params.post_bias)
        return reshape(z, (n, 1, 1, c))
    if cfg.gate_mode == "spatial":
        g2 = add(matmul(gate, params.post_weight), params.post_bias)
        return multiply(x, reshape(g2, (n, 1, 1, c)))
    raise ValueError(f"invalid gate_mode {cfg.gate_mode!r}")
