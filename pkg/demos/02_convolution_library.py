"""Convolution family: standard, depthwise, pointwise, separable.

Shows the factorization identity and the parameter savings that motivate
separable convolutions.

Run:  python3 demos/02_convolution_library.py
"""

import numpy as np

from canet import ConvParams, Tensor, conv2d, depthwise_conv2d, pointwise_conv2d, separable_conv2d

rng = np.random.default_rng(1)
x = Tensor(rng.standard_normal((1, 8, 8, 16)).astype(np.float32))

# A separable convolution is a depthwise filter (one kernel per channel)
# followed by a 1x1 pointwise mix across channels.
dw = ConvParams(kernel=Tensor(rng.standard_normal((3, 3, 16)).astype(np.float32)),
                bias=Tensor(np.zeros(16, dtype=np.float32)))
pw = ConvParams(kernel=Tensor(rng.standard_normal((1, 1, 16, 32)).astype(np.float32)),
                bias=Tensor(np.zeros(32, dtype=np.float32)))

fused = separable_conv2d(x, dw, pw)
stepwise = pointwise_conv2d(depthwise_conv2d(x, dw), pw)
print("separable == depthwise-then-pointwise, bit-exact:",
      np.array_equal(fused.data, stepwise.data))

# Parameter accounting against a full 3x3 convolution with the same shape.
full = ConvParams(kernel=Tensor(rng.standard_normal((3, 3, 16, 32)).astype(np.float32)),
                  bias=Tensor(np.zeros(32, dtype=np.float32)))
sep_params = dw.kernel.size + pw.kernel.size
print(f"separable kernel parameters: {dw.kernel.size} + {pw.kernel.size} = {sep_params}")
print(f"full conv kernel parameters: {full.kernel.size}")
print(f"reduction factor: {full.kernel.size / sep_params:.2f}x")

out = conv2d(x, full)
print("full conv output shape:", out.shape, "| separable output shape:", fused.shape)

# Depthwise really is per-channel: scaling kernel for channel 0 only
# changes channel 0 of the output.
iso = ConvParams(kernel=Tensor(np.zeros((1, 1, 16), dtype=np.float32)),
                 bias=Tensor(np.zeros(16, dtype=np.float32)))
iso.kernel.data[0, 0, 0] = 5.0
y = depthwise_conv2d(x, iso)
print("channel 0 scaled by 5:", np.allclose(y.data[..., 0], 5 * x.data[..., 0]))
print("all other channels zeroed:", float(np.abs(y.data[..., 1:]).max()) == 0.0)
