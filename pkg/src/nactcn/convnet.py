"""Dilated causal 1-D convolution, pointwise convolution and spatial dropout.

All activations are ``[batch, channels, time]``.  A causal convolution with
kernel ``k`` and dilation ``d`` computes

    y[t] = bias + sum_j weight[..., j] * x[t - d*j],   j = 0..k-1

with zeros standing in for ``t - d*j < 0`` (left pad of ``d*(k-1)``), so the
output keeps the input length and never reads the future.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numcore import Rng, Tensor, einsum, mul, reshape, shift_stack


def tap_offsets(kernel: int, dilation: int, causal: bool = True) -> np.ndarray:
    """Time offset read by tap ``j`` relative to the output position.

    Causal taps look back: ``-dilation * j``.  Acausal (centered) taps put
    ``kernel // 2`` taps ahead and ``(kernel - 1) // 2`` behind, which is a
    symmetric ``dilation * (kernel - 1) / 2`` pad for odd kernels.
    """
    if kernel < 1 or dilation < 1:
        raise ConfigError(f"kernel and dilation must be >= 1, got {kernel}, {dilation}")
    j = np.arange(kernel)
    if causal:
        return -dilation * j
    return dilation * (kernel // 2 - j)


def he_normal(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


@dataclass
class CausalConv1d:
    in_channels: int
    out_channels: int
    kernel: int
    dilation: int
    weight: Tensor  # [out, in, kernel]; tap j reads x[t - dilation*j]
    bias: Tensor  # [out]
    causal: bool = True

    @classmethod
    def init(cls, in_channels: int, out_channels: int, kernel: int, dilation: int = 1,
             rng: Rng | None = None, causal: bool = True) -> "CausalConv1d":
        """He-normal weights, zero bias."""
        for name, v in (("in_channels", in_channels), ("out_channels", out_channels),
                        ("kernel", kernel), ("dilation", dilation)):
            if int(v) < 1:
                raise ConfigError(f"{name} must be >= 1, got {v}")
        rng = rng or Rng(0)
        w = he_normal(rng, (out_channels, in_channels, kernel), in_channels * kernel)
        return cls(in_channels, out_channels, kernel, dilation,
                   Tensor(w, requires_grad=True), Tensor(np.zeros(out_channels), requires_grad=True),
                   causal)

    @property
    def pad(self) -> int:
        return self.dilation * (self.kernel - 1)

    def offsets(self) -> np.ndarray:
        return tap_offsets(self.kernel, self.dilation, self.causal)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return causal_conv_forward(x, self)


def causal_conv_forward(x: Tensor, layer: CausalConv1d) -> Tensor:
    if x.ndim != 3 or x.shape[1] != layer.in_channels:
        raise ConfigError(f"conv expects [b, {layer.in_channels}, n] input, got {x.shape}")
    taps = shift_stack(x, layer.offsets())  # [b, in, n, k]
    y = einsum("oik,bink->bon", layer.weight, taps)
    return y + reshape(layer.bias, (1, layer.out_channels, 1))


@dataclass
class PointwiseConv:
    """1x1 convolution: a per-timestep linear map with no temporal mixing."""

    in_channels: int
    out_channels: int
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]

    @classmethod
    def init(cls, in_channels: int, out_channels: int, rng: Rng | None = None,
             scheme: str = "he") -> "PointwiseConv":
        rng = rng or Rng(0)
        if scheme == "he":
            w = he_normal(rng, (out_channels, in_channels), in_channels)
        elif scheme == "xavier":
            bound = math.sqrt(6.0 / (in_channels + out_channels))
            w = rng.uniform(-bound, bound, size=(out_channels, in_channels))
        else:
            raise ConfigError(f"unknown init scheme {scheme!r}")
        return cls(in_channels, out_channels, Tensor(w, requires_grad=True),
                   Tensor(np.zeros(out_channels), requires_grad=True))

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def __call__(self, x: Tensor) -> Tensor:
        return pointwise_conv(x, self.weight, self.bias)


def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out_ch, in_ch = weight.shape
    if x.ndim != 3 or x.shape[1] != in_ch:
        raise ConfigError(f"pointwise conv expects [b, {in_ch}, n] input, got {x.shape}")
    y = einsum("oi,bin->bon", weight, x)
    if bias is not None:
        y = y + reshape(bias, (1, out_ch, 1))
    return y


@dataclass
class SpatialDropout:
    """Drops whole channels across all timesteps; identity in eval mode."""

    p: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"dropout probability must be in [0, 1), got {self.p}")

    def __call__(self, x: Tensor, rng: Rng | None = None, train: bool = False) -> Tensor:
        return spatial_dropout(x, self.p, rng, train)


def spatial_dropout(x: Tensor, p: float, rng: Rng | None = None, train: bool = False) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs an Rng")
    b, c = x.shape[0], x.shape[1]
    keep = rng.random((b, c, 1)) >= p
    mask = keep.astype(x.dtype) / (1.0 - p)
    return mul(x, Tensor(mask, dtype=x.dtype))
