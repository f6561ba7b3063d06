"""Gradient-check battery covering every differentiable operation.

Each named check compares tape gradients against double-precision central
differences over several seeds, for the operation's input and each of its
parameters.  Losses contract outputs with a fixed random weighting so
that structurally-constrained outputs (softmax rows, probabilities) still
produce informative gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, AttentionParams, HeadParams, attention_forward
from .layers import (
    ConvParams,
    DenseParams,
    conv2d,
    cross_entropy_loss,
    dense_forward,
    depthwise_conv2d,
    global_avg_pool2d,
    max_pool2d,
    pointwise_conv2d,
    separable_conv2d,
    softmax,
    weighted_global_avg_pool,
)
from .model import build_xception_lite, model_forward
from .tensor import (
    Tensor,
    add,
    grad_check,
    matmul,
    multiply,
    relu,
    sigmoid,
    tensor_sum,
)
from .training import one_hot

__all__ = ["CheckResult", "run_gradient_check_suite", "LAYER_TOLERANCE", "MODEL_TOLERANCE"]

LAYER_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_error: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold


def _t(rng: np.random.Generator, *shape, scale: float = 1.0, grad: bool = True) -> Tensor:
    return Tensor(scale * rng.standard_normal(shape), requires_grad=grad, dtype=np.float64)


def _weighted_sum(out: Tensor, weights: Tensor) -> Tensor:
    return tensor_sum(multiply(out, weights))


def _check_all(fn_of, targets: dict[str, Tensor], eps: float = 1e-5) -> float:
    """Max grad_check error of a shared forward over each target tensor."""
    worst = 0.0
    for target in targets.values():
        worst = max(worst, grad_check(lambda _t_: fn_of(), target, eps=eps))
    return worst


def _elementwise_cases(rng):
    a = _t(rng, 3, 4)
    b = _t(rng, 4)      # broadcast along the batch axis
    w = _t(rng, 3, 4, grad=False)
    yield "add", lambda: _weighted_sum(add(a, b), w), {"a": a, "b": b}
    yield "multiply", lambda: _weighted_sum(multiply(a, b), w), {"a": a, "b": b}
    x = _t(rng, 3, 4)
    wx = _t(rng, 3, 4, grad=False)
    yield "relu", lambda: _weighted_sum(relu(x), wx), {"x": x}
    yield "sigmoid", lambda: _weighted_sum(sigmoid(x), wx), {"x": x}
    m1, m2 = _t(rng, 3, 5), _t(rng, 5, 2)
    wm = _t(rng, 3, 2, grad=False)
    yield "matmul", lambda: _weighted_sum(matmul(m1, m2), wm), {"a": m1, "b": m2}


def _layer_cases(rng):
    # dense, relu and sigmoid heads
    x = _t(rng, 3, 5)
    for act in ("relu", "sigmoid"):
        p = DenseParams(weight=_t(rng, 5, 4, scale=0.5), bias=_t(rng, 4, scale=0.1))
        w = _t(rng, 3, 4, grad=False)
        yield (f"dense_{act}",
               lambda p=p, act=act, w=w: _weighted_sum(dense_forward(x, p, act), w),
               {"x": x, "weight": p.weight, "bias": p.bias})

    # standard convolution, same/stride-1 and valid/stride-2
    for name, stride, padding, hw in (("conv2d_same_s1", 1, "same", 6),
                                      ("conv2d_valid_s2", 2, "valid", 7)):
        cx = _t(rng, 2, hw, hw, 3, scale=0.5)
        cp = ConvParams(kernel=_t(rng, 3, 3, 3, 4, scale=0.4),
                        bias=_t(rng, 4, scale=0.1), stride=stride, padding=padding)
        oh = -(-hw // stride) if padding == "same" else (hw - 3) // stride + 1
        w = _t(rng, 2, oh, oh, 4, grad=False)
        yield (name,
               lambda cx=cx, cp=cp, w=w: _weighted_sum(conv2d(cx, cp), w),
               {"x": cx, "kernel": cp.kernel, "bias": cp.bias})

    # depthwise / pointwise / separable
    dx = _t(rng, 2, 5, 5, 3, scale=0.5)
    dp = ConvParams(kernel=_t(rng, 3, 3, 3, scale=0.4), bias=_t(rng, 3, scale=0.1))
    wd = _t(rng, 2, 5, 5, 3, grad=False)
    yield ("depthwise_conv2d",
           lambda: _weighted_sum(depthwise_conv2d(dx, dp), wd),
           {"x": dx, "kernel": dp.kernel, "bias": dp.bias})

    px = _t(rng, 2, 4, 4, 3, scale=0.5)
    pp = ConvParams(kernel=_t(rng, 1, 1, 3, 5, scale=0.4), bias=_t(rng, 5, scale=0.1))
    wp = _t(rng, 2, 4, 4, 5, grad=False)
    yield ("pointwise_conv2d",
           lambda: _weighted_sum(pointwise_conv2d(px, pp), wp),
           {"x": px, "kernel": pp.kernel, "bias": pp.bias})

    sx = _t(rng, 2, 5, 5, 3, scale=0.5)
    sdp = ConvParams(kernel=_t(rng, 3, 3, 3, scale=0.4), bias=_t(rng, 3, scale=0.1))
    spp = ConvParams(kernel=_t(rng, 1, 1, 3, 4, scale=0.4), bias=_t(rng, 4, scale=0.1))
    ws = _t(rng, 2, 5, 5, 4, grad=False)
    yield ("separable_conv2d",
           lambda: _weighted_sum(separable_conv2d(sx, sdp, spp), ws),
           {"x": sx, "dw_kernel": sdp.kernel, "dw_bias": sdp.bias,
            "pw_kernel": spp.kernel, "pw_bias": spp.bias})

    # pooling
    mx = _t(rng, 2, 6, 6, 3)
    wm = _t(rng, 2, 3, 3, 3, grad=False)
    yield "max_pool2d", lambda: _weighted_sum(max_pool2d(mx), wm), {"x": mx}

    gx = _t(rng, 2, 5, 5, 4)
    wg = _t(rng, 2, 4, grad=False)
    yield "global_avg_pool2d", lambda: _weighted_sum(global_avg_pool2d(gx), wg), {"x": gx}

    wgx = _t(rng, 2, 4, 4, 3)
    logits = _t(rng, 4, 4, scale=0.5)
    ww = _t(rng, 2, 3, grad=False)
    yield ("weighted_global_avg_pool",
           lambda: _weighted_sum(weighted_global_avg_pool(wgx, logits), ww),
           {"x": wgx, "spatial_logits": logits})

    # classification head pieces
    zx = _t(rng, 3, 4)
    wz = _t(rng, 3, 4, grad=False)
    yield "softmax", lambda: _weighted_sum(softmax(zx), wz), {"x": zx}

    labels = Tensor(one_hot(rng.integers(0, 4, size=3), 4, dtype=np.float64))
    zl = _t(rng, 3, 4)
    yield ("softmax_cross_entropy",
           lambda: cross_entropy_loss(softmax(zl), labels),
           {"logits": zl})


def _random_attention(rng, cfg: AttentionConfig, spatial) -> AttentionParams:
    c, bn = cfg.channels, cfg.bottleneck
    heads = [
        HeadParams(
            w1=_t(rng, c, bn, scale=0.5), b1=_t(rng, bn, scale=0.2),
            w2=_t(rng, bn, c, scale=0.5), b2=_t(rng, c, scale=0.2),
        )
        for _ in range(cfg.heads)
    ]
    return AttentionParams(
        spatial_logits=_t(rng, *spatial, scale=0.5),
        heads=heads,
        post_weight=_t(rng, c, c, scale=0.4),
        post_bias=_t(rng, c, scale=0.2),
    )


def _attention_cases(rng):
    for mode in ("pooled", "spatial"):
        cfg = AttentionConfig(channels=8, heads=3, reduction=4, gate_mode=mode)
        x = _t(rng, 1, 4, 4, 8, scale=0.5)
        params = _random_attention(rng, cfg, (4, 4))
        out_shape = (1, 1, 1, 8) if mode == "pooled" else (1, 4, 4, 8)
        w = _t(rng, *out_shape, grad=False)
        targets = {"x": x}
        targets.update(params.named_tensors())
        yield (f"attention_{mode}",
               lambda x=x, params=params, cfg=cfg, w=w:
               _weighted_sum(attention_forward(x, params, cfg), w),
               targets)


def _model_case(rng):
    cfg = AttentionConfig(channels=8, heads=4, reduction=4, gate_mode="pooled")
    model, params = build_xception_lite([4, 8], cfg, num_classes=2,
                                        seed=int(rng.integers(0, 2**31)),
                                        input_size=8, hidden_units=16,
                                        dtype=np.float64)
    # perturb the zero-initialized gate layers so their gradients are non-trivial
    for name, tensor in params.items():
        if ".w2" in name or ".b2" in name or "spatial_logits" in name:
            tensor.data += 0.3 * rng.standard_normal(tensor.shape)
    x = Tensor(rng.uniform(0.0, 1.0, size=(2, 8, 8, 3)), requires_grad=True,
               dtype=np.float64)
    labels = Tensor(one_hot(rng.integers(0, 2, size=2), 2, dtype=np.float64))

    def loss():
        return cross_entropy_loss(model_forward(model, params, x), labels)

    targets = {"x": x}
    targets.update(params)
    return "xception_lite_tiny", loss, targets


def run_gradient_check_suite(seeds=(0, 1, 2, 3, 4), threshold: float = LAYER_TOLERANCE,
                             model_threshold: float = MODEL_TOLERANCE,
                             model_seeds: int = 2) -> list[CheckResult]:
    """Run every check over the given seeds; returns per-check worst errors."""
    worst: dict[str, float] = {}
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        for name, fn, targets in _elementwise_cases(rng):
            worst[name] = max(worst.get(name, 0.0), _check_all(fn, targets))
        for name, fn, targets in _layer_cases(rng):
            worst[name] = max(worst.get(name, 0.0), _check_all(fn, targets))
        for name, fn, targets in _attention_cases(rng):
            worst[name] = max(worst.get(name, 0.0), _check_all(fn, targets))

    results = [CheckResult(name, err, threshold) for name, err in worst.items()]

    model_worst = 0.0
    for seed in list(seeds)[:model_seeds]:
        rng = np.random.default_rng(5000 + seed)
        name, fn, targets = _model_case(rng)
        model_worst = max(model_worst, _check_all(fn, targets))
    results.append(CheckResult("xception_lite_tiny", model_worst, model_threshold))
    return results
