"""
Counting parameters and multiply-accumulates
============================================

Neighborhood attention costs a fixed number of logits per query, so its
attention term grows linearly with sequence length.  Dense attention pays for
every pair.  We profile three models of equal width and depth and then watch
how the attention term scales.
"""

from nactcn import CausalDinaLayer, NacTcnConfig, NacTcnModel, Rng, profile
from nactcn.attention import DenseCausalAttention
from nactcn.profiler import attention_term_macs

common = dict(input_channels=16, channels=[64] * 4, kernel=5, heads=4)
for variant in ("nac_tcn", "tcn", "attn_only"):
    report = profile(NacTcnModel.build(NacTcnConfig(**common, variant=variant), Rng(0)), seq_len=256)
    print(f"== {variant}")
    print(report.to_text(), "\n")

# only the logits and the weighted sum depend on n beyond the projections
dina, dense = CausalDinaLayer.init(64, 4, 5), DenseCausalAttention.init(64, 4)
print(f"{'n':>6} {'DiNA term':>12} {'dense term':>14}")
for n in (64, 128, 256, 512, 1024):
    print(f"{n:>6} {attention_term_macs(dina, n):>12,} {attention_term_macs(dense, n):>14,}")

# the parameter trade-off depends on k: attention adds 4c^2 regardless of
# kernel size, a second conv adds k c^2
for k in (3, 4, 5, 7):
    cfg = dict(common, kernel=k)
    p = {v: profile(NacTcnModel.build(NacTcnConfig(**cfg, variant=v), Rng(0)), 1).total_params
         for v in ("nac_tcn", "tcn")}
    print(f"k={k}: nac_tcn {p['nac_tcn']:,} params, tcn {p['tcn']:,} params")
