"""
Causal neighborhood attention, step by step
===========================================

Each query looks at itself and the k-1 positions behind it, spaced by the
dilation.  We print the neighbor map, watch what the attention weights do at
the left edge, check that the future never leaks in, and finally widen the
window to the whole sequence to recover ordinary masked self-attention.
"""

import numpy as np

from nactcn import CausalDinaLayer, Rng, Tensor, causal_dina_forward, dense_causal_self_attention
from nactcn.attention import neighbor_indices

k, dilation, n = 3, 2, 8

# which positions does each query read?  negative entries are left padding
print(f"neighbors for k={k}, dilation={dilation}")
for t in range(n):
    print(f"  t={t}: {neighbor_indices(t, k, dilation)}")

# a random two-head layer; a small relative bias so offsets are not symmetric
layer = CausalDinaLayer.init(channels=8, heads=2, window=k, dilation=dilation, rng=Rng(0))
layer.rel_bias.data[:] = [[0.5, 0.0, -0.5], [-0.3, 0.2, 0.1]]
x = Rng(1).normal(size=(1, 8, n))

out, weights = causal_dina_forward(Tensor(x), layer, return_weights=True)

# columns are offsets j = 0 (self), 1, 2 steps-of-dilation back
np.set_printoptions(precision=3, suppress=True)
print("\nhead 0 attention weights (rows: t, cols: offset j)")
print(weights.data[0, 0])
print("padding slots get exactly zero weight; every row sums to", weights.data.sum(-1).max())

# perturb the last three steps by a lot: earlier outputs do not move at all
x2 = x.copy()
x2[..., 5:] += 100.0
out2 = causal_dina_forward(Tensor(x2), layer)
print("\nlargest change before t=5 after editing the future:",
      np.abs(out2.data[..., :5] - out.data[..., :5]).max())

# with dilation 1 and a window as long as the sequence, the neighborhood is the
# whole past and the layer is ordinary causal self-attention
full = CausalDinaLayer.init(channels=8, heads=2, window=n, dilation=1, rng=Rng(2))
a = causal_dina_forward(Tensor(x), full).data
b = dense_causal_self_attention(Tensor(x), full.w_q, full.w_k, full.w_v, full.w_o, heads=2).data
print("full-window DiNA vs dense masked attention, max abs diff:", np.abs(a - b).max())
