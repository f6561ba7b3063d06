"""The multi-head channel attention block, step by step.

An (n,h,w,C) feature map is pooled to one value per channel with learned
softmax spatial weights, H dense bottleneck heads each propose a gate in
(0,1), the gates are averaged, and the result reweights the features.

Run:  python3 demos/03_channel_attention.py
"""

import numpy as np

from canet import (
    AttentionConfig,
    Tensor,
    attention_forward,
    compute_channel_gate,
    global_avg_pool2d,
    init_attention_params,
    weighted_global_avg_pool,
)

rng = np.random.default_rng(2)
C, H = 8, 4
x = Tensor(rng.standard_normal((2, 5, 5, C)).astype(np.float32))

cfg = AttentionConfig(channels=C, heads=H, reduction=4, gate_mode="pooled")
params = init_attention_params(cfg, spatial=(5, 5), seed=0)

# At initialisation the block is deliberately inert: pooling logits are
# zero (weighted pooling == plain pooling), every head's second dense
# layer is zero (gate == sigmoid(0) == 0.5), post-dense is the identity.
pooled = weighted_global_avg_pool(x, params.spatial_logits)
plain = global_avg_pool2d(x)
print("weighted pooling == plain pooling at init:",
      np.allclose(pooled.data, plain.data, atol=1e-7))

gate = compute_channel_gate(pooled, params, cfg)
print("gate at init (all 0.5):", np.unique(gate.data))

out = attention_forward(x, params, cfg)
print("pooled mode output shape:", out.shape,
      "| equals 0.5 * GAP(x):", np.allclose(out.data.reshape(2, C), 0.5 * plain.data, atol=1e-6))

spatial_cfg = AttentionConfig(channels=C, heads=H, reduction=4, gate_mode="spatial")
out_s = attention_forward(x, params, spatial_cfg)
print("spatial mode output shape:", out_s.shape,
      "| equals 0.5 * x:", np.allclose(out_s.data, 0.5 * x.data, atol=1e-6))

# Once the head weights move, the gate becomes input-dependent but stays
# strictly inside (0,1); the mean over heads is permutation-symmetric.
for head in params.heads:
    head.w2.data += 0.8 * rng.standard_normal(head.w2.shape).astype(np.float32)
gate = compute_channel_gate(pooled, params, cfg)
print("\nafter perturbing the heads:")
print("  gate range: [%.4f, %.4f]" % (gate.data.min(), gate.data.max()))

# A saturated spatial logit turns the pooling into pixel selection.
params.spatial_logits.data[2, 3] = 1e6
focused = weighted_global_avg_pool(x, params.spatial_logits)
print("  saturated logit picks pixel (2,3):",
      np.allclose(focused.data, x.data[:, 2, 3, :], atol=1e-6))
