"""Causal dilated neighborhood attention and the dense masked oracle.

For a query at time ``t`` the neighborhood is the ``k`` positions
``t - dilation*j`` for ``j = 0..k-1`` (the query itself included), so the
farthest key sits ``dilation*(k-1)`` steps back.  Per head::

    logits[t, j]  = (Q[t] . K[t - dilation*j] + bias[j]) / sqrt(d_head)
    weights[t, :] = softmax(logits[t, :])
    out[t]        = sum_j weights[t, j] * V[t - dilation*j]

The sequence is zero padded by ``dilation*(k-1)`` on the left before the
windows are taken and nothing is kept past ``n``.  Neighbors falling in the
pad are excluded from the softmax (their logit is pushed to -1e30), which
makes ``k = n, dilation = 1`` with zero bias identical to dense causal
self-attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .convnet import tap_offsets
from .errors import ConfigError
from .numcore import Rng, Tensor, add, einsum, reshape, scale, shift_stack, softmax_last

MASK_VALUE = -1e30


def neighbor_indices(t: int, k: int, dilation: int) -> list[int]:
    """Source positions attended by query ``t``, oldest first.

    Negative entries fall inside the causal zero pad.
    """
    return [t - dilation * j for j in range(k - 1, -1, -1)]


def window_mask(n: int, offsets: np.ndarray) -> np.ndarray:
    """``[n, k]`` additive mask: 0 for real neighbors, ``MASK_VALUE`` for pad."""
    pos = np.arange(n)[:, None] + np.asarray(offsets)[None, :]
    return np.where((pos >= 0) & (pos < n), 0.0, MASK_VALUE)


def xavier_uniform(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


@dataclass
class CausalDinaLayer:
    channels: int
    heads: int
    window: int
    dilation: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    rel_bias: Tensor  # [heads, window], indexed by left offset j
    causal: bool = True

    def __post_init__(self):
        if self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) not divisible by heads ({self.heads})")
        if self.window < 1 or self.dilation < 1:
            raise ConfigError("window and dilation must be >= 1")
        if self.rel_bias.shape != (self.heads, self.window):
            raise ConfigError(f"rel_bias must be [{self.heads}, {self.window}], got {self.rel_bias.shape}")

    @classmethod
    def init(cls, channels: int, heads: int, window: int, dilation: int = 1,
             rng: Rng | None = None, causal: bool = True) -> "CausalDinaLayer":
        """Xavier-uniform projections and zero relative bias."""
        if channels < 1 or heads < 1:
            raise ConfigError("channels and heads must be >= 1")
        rng = rng or Rng(0)
        mats = [Tensor(xavier_uniform(rng, channels, channels), requires_grad=True) for _ in range(4)]
        bias = Tensor(np.zeros((heads, window)), requires_grad=True)
        return cls(channels, heads, window, dilation, *mats, rel_bias=bias, causal=causal)

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def offsets(self) -> np.ndarray:
        return tap_offsets(self.window, self.dilation, self.causal)

    def parameters(self) -> dict[str, Tensor]:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o,
                "rel_bias": self.rel_bias}

    def __call__(self, x: Tensor) -> Tensor:
        return causal_dina_forward(x, self)


def _project_heads(w: Tensor, x: Tensor, heads: int) -> Tensor:
    b, c, n = x.shape
    return reshape(einsum("oc,bcn->bon", w, x), (b, heads, c // heads, n))


def causal_dina_forward(x: Tensor, layer: CausalDinaLayer, return_weights: bool = False):
    """Neighborhood attention over ``[b, c, n]``; output has the same shape.

    With ``return_weights`` also returns the ``[b, heads, n, window]`` weights.
    """
    if x.ndim != 3 or x.shape[1] != layer.channels:
        raise ConfigError(f"attention expects [b, {layer.channels}, n] input, got {x.shape}")
    b, c, n = x.shape
    h, dk, k = layer.heads, layer.head_dim, layer.window
    offsets = layer.offsets()

    q = _project_heads(layer.w_q, x, h)
    keys = shift_stack(_project_heads(layer.w_k, x, h), offsets)  # [b, h, dk, n, k]
    values = shift_stack(_project_heads(layer.w_v, x, h), offsets)

    logits = einsum("bhdn,bhdnk->bhnk", q, keys)
    logits = add(logits, reshape(layer.rel_bias, (1, h, 1, k)))
    logits = scale(logits, 1.0 / math.sqrt(dk))
    logits = add(logits, Tensor(window_mask(n, offsets), dtype=x.dtype))
    weights = softmax_last(logits)

    mixed = reshape(einsum("bhnk,bhdnk->bhdn", weights, values), (b, c, n))
    out = einsum("oc,bcn->bon", layer.w_o, mixed)
    return (out, weights) if return_weights else out


@dataclass
class DenseCausalAttention:
    """Full self-attention over every earlier timestep (the ``attn_only`` stage)."""

    channels: int
    heads: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    causal: bool = True

    @classmethod
    def init(cls, channels: int, heads: int, rng: Rng | None = None, causal: bool = True):
        if channels % heads:
            raise ConfigError(f"channels ({channels}) not divisible by heads ({heads})")
        rng = rng or Rng(0)
        mats = [Tensor(xavier_uniform(rng, channels, channels), requires_grad=True) for _ in range(4)]
        return cls(channels, heads, *mats, causal=causal)

    def parameters(self) -> dict[str, Tensor]:
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_o": self.w_o}

    def __call__(self, x: Tensor) -> Tensor:
        return dense_causal_self_attention(x, self.w_q, self.w_k, self.w_v, self.w_o,
                                           self.heads, causal=self.causal)


def dense_causal_self_attention(x: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor, w_o: Tensor,
                                heads: int = 1, causal: bool = True, return_weights: bool = False):
    """Reference attention over the full ``n x n`` logit matrix.

    Entries above the diagonal get ``MASK_VALUE`` before the softmax, which
    underflows to exact zeros.
    """
    if x.ndim != 3 or x.shape[1] != w_q.shape[1]:
        raise ConfigError(f"attention expects [b, {w_q.shape[1]}, n] input, got {x.shape}")
    b, c, n = x.shape
    if c % heads:
        raise ConfigError(f"channels ({c}) not divisible by heads ({heads})")
    dk = c // heads
    q = _project_heads(w_q, x, heads)
    k = _project_heads(w_k, x, heads)
    v = _project_heads(w_v, x, heads)
    logits = scale(einsum("bhdi,bhdj->bhij", q, k), 1.0 / math.sqrt(dk))
    if causal:
        mask = np.triu(np.full((n, n), MASK_VALUE), k=1)
        logits = add(logits, Tensor(mask, dtype=x.dtype))
    weights = softmax_last(logits)
    mixed = reshape(einsum("bhij,bhdj->bhdi", weights, v), (b, c, n))
    out = einsum("oc,bcn->bon", w_o, mixed)
    return (out, weights) if return_weights else out
