"""
Tensors, gradients and the stage ladder
=======================================

A tour of the numpy engine underneath the network: build a tiny graph,
backpropagate through it, confirm the gradient numerically, then look at how
an input volume shrinks through the four stages.
"""

import numpy as np

from vmixer.engine import Tensor, default_dtype, finite_diff_gradcheck, gelu, layer_norm, linear, mean
from vmixer.model import ModelConfig, build_model, count_params, stage_shapes

rng = np.random.default_rng(0)

# A leaf tensor with requires_grad=True collects a gradient after backward().
# The input is kept in float64 so the numerical check further down is not
# limited by float32 rounding; parameters are promoted by the check itself.
with default_dtype(np.float64):
    x = Tensor(rng.normal(size=(4, 6)))
w = Tensor(rng.normal(size=(6, 3)).astype(np.float32) * 0.5, requires_grad=True)
b = Tensor(np.zeros(3, np.float32), requires_grad=True)
gamma = Tensor(np.ones(6, np.float32), requires_grad=True)
beta = Tensor(np.zeros(6, np.float32), requires_grad=True)


def small_net():
    h = layer_norm(x, gamma, beta)
    return mean(gelu(linear(h, w, b)))


loss = small_net()
loss.backward()
print("loss", float(loss.data))
print("dL/dw row 0", np.round(w.grad[0], 4))

# Central differences in float64. A small step matters: layer_norm has
# near-zero gradient coordinates where the O(eps^2) truncation dominates.
err = finite_diff_gradcheck(small_net, [w, b, gamma, beta], eps=1e-4)
print(f"worst relative error against finite differences: {err:.2e}")

# The stem divides H and W by 4 and D by 2; every later stage halves again.
config = ModelConfig()
print("\nstage  channels  dims   (input 128x128x64)")
for s in stage_shapes(config, (128, 128, 64)):
    print(f"{s.stage:>5}  {s.channels:>8}  {s.dims}")

# The same arithmetic at desk scale, and the size of a micro model.
micro = ModelConfig(base_channels=8, training_volume_dims=(32, 32, 16))
model = build_model(micro)
print("\nmicro model stages:", [s.dims for s in stage_shapes(micro)])
print("micro model parameters:", count_params(model))
print("block kinds per stage:", micro.block_kinds)
