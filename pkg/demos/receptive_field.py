"""
How far back does a NAC-TCN see?
================================

Each block stacks a dilated causal convolution and a causal neighborhood
attention with the same kernel and dilation, so it widens the view twice.
The analytic count is 1 + sum_i d_i (k - 1) over all windowed stages; here we
compare it against a gradient probe that simply asks which inputs move the
last output.
"""

import numpy as np

from nactcn import NacTcnConfig, NacTcnModel, Rng, blocks_for_context, empirical_receptive_field
from nactcn.blocks import input_gradient_support, receptive_span

print(f"{'k':>3} {'blocks':>7} {'analytic':>9} {'probe':>6}")
for k in (2, 3, 5):
    for n_blocks in (1, 2, 3, 4):
        config = NacTcnConfig(input_channels=2, channels=[8] * n_blocks, kernel=k)
        model = NacTcnModel.build(config, Rng(0))
        rf = model.receptive_field()
        print(f"{k:>3} {n_blocks:>7} {rf:>9} {empirical_receptive_field(model, rf + 4):>6}")

# what the probe sees: a contiguous run of influential inputs ending at t
model = NacTcnModel.build(NacTcnConfig(input_channels=2, channels=[8, 8], kernel=3), Rng(0))
support = input_gradient_support(lambda x: model.features(x, linear=True), 2, 20, 19)
print("\ninfluence on t=19:", "".join("#" if s else "." for s in support))

# a centered (acausal) model spends half its reach on the future
acausal = NacTcnModel.build(NacTcnConfig(input_channels=2, channels=[8, 8], kernel=3, causal=False), Rng(0))
print("causal   span (past, future) at t=10:", receptive_span(model, 21, 10))
print("acausal  span (past, future) at t=10:", receptive_span(acausal, 21, 10))

# depth needed to cover a given context with geometric dilations
for context in (32, 128, 256, 1024):
    print(f"context {context:>5}: {blocks_for_context(context, kernel=3)} blocks at k=3")
