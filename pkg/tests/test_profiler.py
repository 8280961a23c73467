import json

import numpy as np
import pytest

from nactcn import (CausalConv1d, CausalDinaLayer, NacTcnConfig, NacTcnModel, PointwiseConv, Rng,
                    count_macs, count_params, profile)
from nactcn.attention import DenseCausalAttention
from nactcn.blocks import model_to_dict
from nactcn.profiler import attention_term_macs


class TestCountParams:
    def test_pointwise(self):
        assert count_params(PointwiseConv.init(4, 3)) == 15

    def test_conv(self):
        assert count_params(CausalConv1d.init(2, 2, 3)) == 14

    def test_dina(self):
        assert count_params(CausalDinaLayer.init(8, 2, 3)) == 262

    @pytest.mark.parametrize("variant", ["nac_tcn", "tcn", "attn_only"])
    def test_model_matches_checkpoint(self, variant):
        model = NacTcnModel.build(NacTcnConfig(input_channels=5, channels=[8, 8, 16], variant=variant), Rng(0))
        n_scalars = sum(len(p["data"]) for p in model_to_dict(model)["parameters"].values())
        assert count_params(model) == n_scalars == profile(model, 4).total_params

    def test_unknown_object(self):
        with pytest.raises(TypeError):
            count_params(object())


class TestCountMacs:
    def test_pointwise_single_step(self):
        assert count_macs(PointwiseConv.init(4, 3), 1) == 12

    def test_conv(self):
        assert count_macs(CausalConv1d.init(3, 5, 4), 10, batch=2) == 2 * 10 * 3 * 5 * 4

    def test_dina_enumeration(self):
        # 4*16*64 projections + 2*(16*3*4*2) logits and weighted sum
        assert count_macs(CausalDinaLayer.init(8, 2, 3), 16) == 4096 + 768

    def test_dense(self):
        assert count_macs(DenseCausalAttention.init(8, 2), 16) == 4096 + 2 * 16 * 16 * 4 * 2

    def test_dina_exactly_linear(self):
        layer = CausalDinaLayer.init(16, 4, 5, 2)
        m = {n: count_macs(layer, n) for n in (64, 128, 256)}
        assert m[128] == 2 * m[64] and m[256] == 2 * m[128]

    def test_dense_attention_term_exactly_quadratic(self):
        layer = DenseCausalAttention.init(16, 4)
        proj = {n: 4 * n * 16 * 16 for n in (64, 128, 256)}
        term = {n: count_macs(layer, n) - proj[n] for n in proj}
        assert term[128] == 4 * term[64] and term[256] == 4 * term[128]
        assert term[64] == attention_term_macs(layer, 64)

    def test_ratio_halves(self):
        dina, dense = CausalDinaLayer.init(8, 2, 7), DenseCausalAttention.init(8, 2)
        for n in (32, 64):
            r1 = attention_term_macs(dina, n) / attention_term_macs(dense, n)
            r2 = attention_term_macs(dina, 2 * n) / attention_term_macs(dense, 2 * n)
            assert r2 == r1 / 2

    def test_batch_scales(self):
        model = NacTcnModel.build(NacTcnConfig(input_channels=3, channels=[8, 8]), Rng(0))
        assert count_macs(model, 20, batch=3) == 3 * count_macs(model, 20)


class TestProfileReport:
    def model(self, **kwargs):
        return NacTcnModel.build(NacTcnConfig(input_channels=3, channels=[8, 16], **kwargs), Rng(0))

    def test_rows_and_totals(self):
        report = profile(self.model(), 32)
        names = [r.name for r in report.rows]
        assert names == ["block.0.conv", "block.0.dina", "block.0.residual",
                         "block.1.conv", "block.1.dina", "block.1.residual", "head"]
        assert report.total_macs == sum(r.macs for r in report.rows)
        assert report.total_mmac == report.total_macs / 1e6

    def test_rule_by_rule(self):
        n = 32
        expected = (n * 3 * 8 * 3 + 4 * n * 64 + 2 * n * 3 * 4 * 2 + n * 3 * 8
                    + n * 8 * 16 * 3 + 4 * n * 256 + 2 * n * 3 * 8 * 2 + n * 8 * 16
                    + n * 16 * 1)
        assert profile(self.model(), n).total_macs == expected

    def test_last_frame_head_counts_one_step(self):
        frame = profile(self.model(), 50).rows[-1].macs
        last = profile(self.model(label_at="last"), 50).rows[-1].macs
        assert frame == 50 * last == 50 * 16

    def test_ablated_residual_has_no_macs(self):
        rows = profile(self.model(use_residual=False), 10).rows
        res = [r for r in rows if r.name.endswith("residual")]
        assert all(r.macs == 0 and r.params > 0 for r in res)

    def test_json_and_text(self):
        report = profile(self.model(), 64)
        data = json.loads(report.to_json())
        assert data["total_params"] == report.total_params and len(data["rows"]) == 7
        text = report.to_text()
        assert "block.1.dina" in text and f"{report.total_macs:,}" in text

    def test_bad_length(self):
        with pytest.raises(ValueError):
            profile(self.model(), 0)


def test_nac_tcn_lighter_than_tcn_and_dense_at_larger_kernel():
    common = dict(input_channels=4, channels=[32] * 4, kernel=5)
    nac = NacTcnModel.build(NacTcnConfig(**common), Rng(0))
    tcn = NacTcnModel.build(NacTcnConfig(**common, variant="tcn"), Rng(0))
    dense = NacTcnModel.build(NacTcnConfig(**common, variant="attn_only"), Rng(0))
    assert count_params(nac) < count_params(tcn)
    assert count_macs(nac, 256) < count_macs(dense, 256)
    assert np.isfinite(profile(nac, 256).total_mmac)
