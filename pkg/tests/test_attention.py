import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numeric_grad, rel_err, tape_grad
from nactcn import (CausalDinaLayer, ConfigError, DenseCausalAttention, Rng, Tensor,
                    causal_dina_forward, dense_causal_self_attention, neighbor_indices)
from nactcn.attention import MASK_VALUE, window_mask
from nactcn.profiler import attention_term_macs, count_macs


def dina_oracle(x, layer):
    """Per-query loop over the valid left neighbors, no padding tricks."""
    b, c, n = x.shape
    h, dk, k, d = layer.heads, layer.head_dim, layer.window, layer.dilation
    q = np.einsum("oc,bcn->bon", layer.w_q.data, x).reshape(b, h, dk, n)
    kk = np.einsum("oc,bcn->bon", layer.w_k.data, x).reshape(b, h, dk, n)
    v = np.einsum("oc,bcn->bon", layer.w_v.data, x).reshape(b, h, dk, n)
    mixed = np.zeros((b, h, dk, n))
    for s in range(b):
        for head in range(h):
            for t in range(n):
                js = [j for j in range(k) if t - d * j >= 0]
                logits = np.array([(q[s, head, :, t] @ kk[s, head, :, t - d * j]
                                    + layer.rel_bias.data[head, j]) / math.sqrt(dk) for j in js])
                w = np.exp(logits - logits.max())
                w /= w.sum()
                mixed[s, head, :, t] = sum(wi * v[s, head, :, t - d * j] for wi, j in zip(w, js))
    return np.einsum("oc,bcn->bon", layer.w_o.data, mixed.reshape(b, c, n))


def random_layer(c, h, k, d, seed, bias_scale=0.0):
    layer = CausalDinaLayer.init(c, h, k, d, Rng(seed))
    layer.rel_bias.data[:] = Rng(seed + 1).normal(0.0, 1.0, (h, k)) * bias_scale
    return layer


class TestNeighborIndices:
    @pytest.mark.parametrize("t,k,d,expected", [
        (5, 3, 2, [1, 3, 5]),
        (0, 2, 1, [-1, 0]),
        (4, 1, 4, [4]),
    ])
    def test_examples(self, t, k, d, expected):
        assert neighbor_indices(t, k, d) == expected

    @given(st.integers(0, 50), st.integers(1, 8), st.integers(1, 8))
    def test_map_invariants(self, t, k, d):
        idx = neighbor_indices(t, k, d)
        assert len(idx) == k
        assert all(i <= t for i in idx)
        assert all(a < b for a, b in zip(idx, idx[1:]))
        assert idx[-1] == t and t - idx[0] == d * (k - 1)

    def test_window_mask_marks_pad(self):
        mask = window_mask(4, np.array([0, -2]))
        assert mask[:2, 1].tolist() == [MASK_VALUE, MASK_VALUE]
        assert np.all(mask[2:, 1] == 0) and np.all(mask[:, 0] == 0)


class TestCausalDina:
    def test_singleton_window_identity(self, rng):
        layer = CausalDinaLayer.init(4, 2, 1, 1, rng)
        layer.w_v.data[:] = np.eye(4)
        layer.w_o.data[:] = np.eye(4)
        x = rng.normal(size=(2, 4, 6))
        np.testing.assert_allclose(causal_dina_forward(Tensor(x), layer).data, x, atol=1e-15)

    @pytest.mark.parametrize("c,h,k,d", [(4, 1, 3, 1), (4, 2, 3, 2), (6, 3, 4, 3), (8, 4, 2, 5)])
    def test_matches_loop_oracle(self, c, h, k, d):
        layer = random_layer(c, h, k, d, seed=c + k + d, bias_scale=0.7)
        x = Rng(99).normal(size=(2, c, 13))
        out = causal_dina_forward(Tensor(x), layer).data
        np.testing.assert_allclose(out, dina_oracle(x, layer), atol=1e-12)

    def test_shape_preserved(self, rng):
        layer = CausalDinaLayer.init(6, 3, 3, 2, rng)
        assert causal_dina_forward(Tensor(rng.normal(size=(3, 6, 7))), layer).shape == (3, 6, 7)

    def test_channel_mismatch(self, rng):
        layer = CausalDinaLayer.init(4, 2, 3, 1, rng)
        with pytest.raises(ConfigError):
            causal_dina_forward(Tensor(np.zeros((1, 5, 3))), layer)

    def test_heads_must_divide(self, rng):
        with pytest.raises(ConfigError):
            CausalDinaLayer.init(6, 4, 3, 1, rng)

    def test_rel_bias_shape_checked(self, rng):
        layer = CausalDinaLayer.init(4, 2, 3, 1, rng)
        with pytest.raises(ConfigError):
            CausalDinaLayer(4, 2, 3, 1, layer.w_q, layer.w_k, layer.w_v, layer.w_o,
                            rel_bias=Tensor(np.zeros((2, 4))))

    def test_init(self):
        layer = CausalDinaLayer.init(16, 4, 5, 2, Rng(0))
        assert np.all(layer.rel_bias.data == 0) and layer.rel_bias.shape == (4, 5)
        bound = math.sqrt(6.0 / 32)
        assert np.all(np.abs(layer.w_q.data) <= bound)

    @settings(max_examples=30, deadline=None)
    @given(k=st.integers(1, 5), d=st.integers(1, 4), n=st.integers(2, 16), seed=st.integers(0, 10**6),
           data=st.data())
    def test_future_perturbation_bit_exact(self, k, d, n, seed, data):
        layer = random_layer(4, 2, k, d, seed, bias_scale=1.0)
        rng = Rng(seed + 7)
        x = rng.normal(size=(1, 4, n))
        cut = data.draw(st.integers(1, n - 1))
        x2 = x.copy()
        x2[..., cut:] = rng.normal(size=(1, 4, n - cut)) * 1e3
        y1 = causal_dina_forward(Tensor(x), layer).data
        y2 = causal_dina_forward(Tensor(x2), layer).data
        assert np.array_equal(y1[..., :cut], y2[..., :cut])

    @pytest.mark.parametrize("k,d", [(1, 1), (3, 1), (3, 3), (5, 2)])
    def test_weights_normalized(self, k, d):
        layer = random_layer(8, 4, k, d, seed=5, bias_scale=2.0)
        x = Tensor(Rng(1).normal(size=(2, 8, 20)) * 3)
        _, w = causal_dina_forward(x, layer, return_weights=True)
        assert np.all(w.data >= 0)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_pad_neighbors_get_zero_weight(self):
        layer = random_layer(4, 2, 3, 2, seed=3, bias_scale=1.0)
        _, w = causal_dina_forward(Tensor(Rng(2).normal(size=(1, 4, 6))), layer, return_weights=True)
        assert np.all(w.data[:, :, :4, 2] == 0.0)  # t - 4 < 0
        assert np.all(w.data[:, :, :2, 1] == 0.0)  # t - 2 < 0
        assert np.all(w.data[:, :, 4:, :] > 0.0)

    @pytest.mark.parametrize("shift", [1, 4, 7])
    def test_translation_equivariance(self, shift):
        k, d, n = 3, 2, 24
        layer = random_layer(6, 3, k, d, seed=11, bias_scale=0.5)
        x = Rng(4).normal(size=(1, 6, n))
        shifted = np.zeros_like(x)
        shifted[..., shift:] = x[..., :-shift]
        y = causal_dina_forward(Tensor(x), layer).data
        ys = causal_dina_forward(Tensor(shifted), layer).data
        start = d * (k - 1)
        np.testing.assert_allclose(ys[..., start + shift:], y[..., start:n - shift], atol=1e-12)

    def test_gradient(self):
        layer = random_layer(4, 2, 3, 2, seed=8, bias_scale=0.5)
        x = Tensor(Rng(3).normal(size=(2, 4, 7)))
        w = Rng(4).normal(size=(2, 4, 7))

        def f():
            return (causal_dina_forward(x, layer) * w).sum()

        tensors = [x, *layer.parameters().values()]
        grads = tape_grad(f, *tensors)
        for g, t in zip(grads, tensors):
            assert rel_err(g, numeric_grad(lambda: f().item(), t.data)) < 1e-6


class TestDenseOracle:
    @pytest.mark.parametrize("n", range(1, 9))
    @pytest.mark.parametrize("h", [1, 2, 4])
    def test_full_window_reduction(self, n, h):
        layer = CausalDinaLayer.init(8, h, n, 1, Rng(n * 10 + h))
        x = Tensor(Rng(n).normal(size=(2, 8, n)))
        a = causal_dina_forward(x, layer).data
        b = dense_causal_self_attention(x, layer.w_q, layer.w_k, layer.w_v, layer.w_o, heads=h).data
        assert np.max(np.abs(a - b)) < 1e-10

    def test_single_step_matches_unit_window(self, rng):
        layer = CausalDinaLayer.init(4, 2, 1, 1, rng)
        x = Tensor(rng.normal(size=(3, 4, 1)))
        a = causal_dina_forward(x, layer).data
        b = dense_causal_self_attention(x, layer.w_q, layer.w_k, layer.w_v, layer.w_o, heads=2).data
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_upper_triangle_exact_zero(self, rng):
        att = DenseCausalAttention.init(4, 2, rng)
        x = Tensor(rng.normal(size=(2, 4, 9)) * 5)
        _, w = dense_causal_self_attention(x, att.w_q, att.w_k, att.w_v, att.w_o, 2, return_weights=True)
        upper = np.triu(np.ones((9, 9), dtype=bool), k=1)
        assert np.all(w.data[..., upper] == 0.0)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_causal_future_invariance(self, rng):
        att = DenseCausalAttention.init(4, 1, rng)
        x = rng.normal(size=(1, 4, 10))
        x2 = x.copy()
        x2[..., 6:] += 50.0
        assert np.array_equal(att(Tensor(x)).data[..., :6], att(Tensor(x2)).data[..., :6])

    def test_acausal_sees_future(self, rng):
        att = DenseCausalAttention.init(4, 1, rng, causal=False)
        x = rng.normal(size=(1, 4, 10))
        x2 = x.copy()
        x2[..., 6:] += 50.0
        assert not np.allclose(att(Tensor(x)).data[..., :6], att(Tensor(x2)).data[..., :6])


class TestWorkScaling:
    @pytest.mark.parametrize("n", [16, 64, 256])
    def test_logit_macs(self, n):
        layer = CausalDinaLayer.init(8, 2, 3, 1)
        # logits and weighted sum each b*h*n*k*dk
        assert attention_term_macs(layer, n, batch=3) == 2 * 3 * 2 * n * 3 * 4
        dense = DenseCausalAttention.init(8, 2)
        assert attention_term_macs(dense, n, batch=3) == 2 * 3 * 2 * n * n * 4

    def test_doubling_n(self):
        layer = CausalDinaLayer.init(8, 2, 5, 1)
        dense = DenseCausalAttention.init(8, 2)
        for n in (32, 64, 128):
            ratio = attention_term_macs(layer, n) / attention_term_macs(dense, n)
            ratio2 = attention_term_macs(layer, 2 * n) / attention_term_macs(dense, 2 * n)
            assert ratio2 * 2 == ratio

    def test_total_macs_example(self):
        layer = CausalDinaLayer.init(8, 2, 3, 1)
        assert count_macs(layer, 16) == 4864
