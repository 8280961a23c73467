"""Temporal blocks, model assembly, receptive fields and checkpoints.

A NAC-TCN temporal block computes::

    F(x) = drop(relu(dina(drop(relu(conv(x))))))
    H(x) = F(x) + G(x)

where ``conv`` is a dilated causal convolution, ``dina`` is causal dilated
neighborhood attention sharing the block's kernel size and dilation, and
``G`` is the identity or a 1x1 convolution when the channel count changes.
The ``tcn`` variant swaps the attention stage for a second convolution (the
classic two-conv block); ``attn_only`` uses a 1x1 projection followed by
dense causal self-attention.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attention import CausalDinaLayer, DenseCausalAttention
from .convnet import CausalConv1d, PointwiseConv, pointwise_conv, spatial_dropout
from .errors import ConfigError, ContractError, ParseError
from .numcore import Rng, Tape, Tensor, add, einsum, relu, sigmoid, softmax_last, tanh, transpose

VARIANTS = ("nac_tcn", "tcn", "attn_only")
HEAD_TYPES = ("tanh_regression", "sigmoid_multilabel", "softmax_classification", "linear")
LABEL_AT = ("frame", "last")
CHECKPOINT_FORMAT = "nactcn-checkpoint/1"


def geometric_dilations(n_blocks: int, base: int = 2) -> list[int]:
    return [base ** i for i in range(n_blocks)]


@dataclass
class NacTcnConfig:
    input_channels: int
    channels: list[int]
    kernel: int = 3
    dilations: list[int] | None = None  # defaults to 1, 2, 4, ...
    heads: int = 2
    dropout: float = 0.0
    head_type: str = "linear"
    output_size: int = 1
    label_at: str = "frame"  # per-frame labels or one label at the last frame
    variant: str = "nac_tcn"
    causal: bool = True
    use_residual: bool = True

    def __post_init__(self):
        self.channels = [int(c) for c in self.channels]
        if not self.channels:
            raise ConfigError("at least one block is required")
        if self.dilations is None:
            self.dilations = geometric_dilations(len(self.channels))
        self.dilations = [int(d) for d in self.dilations]
        if len(self.dilations) != len(self.channels):
            raise ConfigError(f"{len(self.dilations)} dilations for {len(self.channels)} blocks")
        if self.input_channels < 1 or self.output_size < 1 or self.kernel < 1:
            raise ConfigError("input_channels, output_size and kernel must be >= 1")
        if min(self.channels) < 1 or min(self.dilations) < 1:
            raise ConfigError("channel widths and dilations must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.head_type not in HEAD_TYPES:
            raise ConfigError(f"head_type must be one of {HEAD_TYPES}, got {self.head_type!r}")
        if self.label_at not in LABEL_AT:
            raise ConfigError(f"label_at must be one of {LABEL_AT}, got {self.label_at!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.variant != "tcn":
            bad = [c for c in self.channels if c % self.heads]
            if bad:
                raise ConfigError(f"channel widths {bad} not divisible by heads={self.heads}")

    @property
    def n_blocks(self) -> int:
        return len(self.channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NacTcnConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def for_context(cls, input_channels: int, context: int, width: int, kernel: int = 3,
                    **kwargs) -> "NacTcnConfig":
        """Shallowest geometric-dilation model whose receptive field covers ``context``."""
        stages = 1 if kwargs.get("variant") == "attn_only" else 2
        n = blocks_for_context(context, kernel, stages_per_block=stages)
        return cls(input_channels=input_channels, channels=[width] * n, kernel=kernel, **kwargs)


@dataclass
class TemporalBlock:
    in_channels: int
    out_channels: int
    conv: CausalConv1d | PointwiseConv
    mixer: CausalDinaLayer | CausalConv1d | DenseCausalAttention | None
    residual_proj: PointwiseConv | None
    dropout: float = 0.0
    causal: bool = True
    use_residual: bool = True
    conv_name: str = "conv"
    mixer_name: str = "dina"

    @classmethod
    def build(cls, in_channels: int, out_channels: int, kernel: int, dilation: int, heads: int,
              rng: Rng, dropout: float = 0.0, variant: str = "nac_tcn", causal: bool = True,
              use_residual: bool = True) -> "TemporalBlock":
        if variant == "attn_only":
            conv = PointwiseConv.init(in_channels, out_channels, rng)
            mixer = DenseCausalAttention.init(out_channels, heads, rng, causal=causal)
            names = ("proj", "attn")
        else:
            conv = CausalConv1d.init(in_channels, out_channels, kernel, dilation, rng, causal=causal)
            if variant == "tcn":
                mixer = CausalConv1d.init(out_channels, out_channels, kernel, dilation, rng, causal=causal)
                names = ("conv", "conv2")
            else:
                mixer = CausalDinaLayer.init(out_channels, heads, kernel, dilation, rng, causal=causal)
                names = ("conv", "dina")
        proj = PointwiseConv.init(in_channels, out_channels, rng) if in_channels != out_channels else None
        return cls(in_channels, out_channels, conv, mixer, proj, dropout, causal, use_residual, *names)

    def parameters(self) -> dict[str, Tensor]:
        params = {f"{self.conv_name}.{k}": v for k, v in self.conv.parameters().items()}
        if self.mixer is not None:
            params.update({f"{self.mixer_name}.{k}": v for k, v in self.mixer.parameters().items()})
        if self.residual_proj is not None:
            params.update({f"residual.{k}": v for k, v in self.residual_proj.parameters().items()})
        return params

    def stage_dilations(self) -> list[int] | None:
        """Dilation of each windowed stage, or None if a stage sees the whole past."""
        if isinstance(self.mixer, DenseCausalAttention):
            return None
        out = []
        for stage in (self.conv, self.mixer):
            if isinstance(stage, CausalConv1d):
                out.append(stage.dilation)
            elif isinstance(stage, CausalDinaLayer):
                out.append(stage.dilation)
        return out

    def __call__(self, x: Tensor, rng: Rng | None = None, train: bool = False,
                 linear: bool = False) -> Tensor:
        return block_forward(x, self, rng, train, linear)


def block_forward(x: Tensor, block: TemporalBlock, rng: Rng | None = None, train: bool = False,
                  linear: bool = False) -> Tensor:
    """``H(x) = F(x) + G(x)``; ``linear`` swaps ReLU for identity (probing only)."""
    if x.ndim != 3 or x.shape[1] != block.in_channels:
        raise ConfigError(f"block expects [b, {block.in_channels}, n] input, got {x.shape}")
    act = (lambda t: t) if linear else relu
    h = spatial_dropout(act(block.conv(x)), block.dropout, rng, train)
    if block.mixer is not None:
        h = block.mixer(h)
    h = spatial_dropout(act(h), block.dropout, rng, train)
    if not block.use_residual:
        return h
    skip = x if block.residual_proj is None else block.residual_proj(x)
    return add(h, skip)


@dataclass
class NacTcnModel:
    config: NacTcnConfig
    blocks: list[TemporalBlock]
    head: PointwiseConv
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config: NacTcnConfig, rng: Rng | int = 0) -> "NacTcnModel":
        if not isinstance(rng, Rng):
            rng = Rng(rng)
        blocks = []
        in_ch = config.input_channels
        for width, d in zip(config.channels, config.dilations):
            blocks.append(TemporalBlock.build(
                in_ch, width, config.kernel, d, config.heads, rng, dropout=config.dropout,
                variant=config.variant, causal=config.causal, use_residual=config.use_residual))
            in_ch = width
        head = PointwiseConv.init(in_ch, config.output_size, rng, scheme="xavier")
        return cls(config, blocks, head)

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, blk in enumerate(self.blocks):
            params.update({f"block.{i}.{k}": v for k, v in blk.parameters().items()})
        params.update({f"head.{k}": v for k, v in self.head.parameters().items()})
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def astype(self, dtype) -> "NacTcnModel":
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    @property
    def dtype(self):
        return self.head.weight.dtype

    def stage_dilations(self) -> list[int] | None:
        out: list[int] = []
        for blk in self.blocks:
            ds = blk.stage_dilations()
            if ds is None:
                return None
            out.extend(ds)
        return out

    def receptive_field(self) -> int | None:
        """Analytic receptive field in timesteps; None when attention spans the whole past."""
        ds = self.stage_dilations()
        if ds is None:
            return None
        return receptive_field(len(ds), ds, self.config.kernel)

    def features(self, x: Tensor, rng: Rng | None = None, train: bool = False,
                 linear: bool = False) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x, dtype=self.dtype)
        if h.ndim != 3 or h.shape[1] != self.config.input_channels:
            raise ConfigError(f"model expects [b, {self.config.input_channels}, n] input, got {h.shape}")
        for blk in self.blocks:
            h = block_forward(h, blk, rng, train, linear)
        return h

    def logits(self, x: Tensor, rng: Rng | None = None, train: bool = False) -> Tensor:
        """Head output before its squashing function.

        Shape ``[b, out, n]`` for per-frame labels, ``[b, out]`` for last-frame.
        """
        h = self.features(x, rng, train)
        if self.config.label_at == "last":
            return add(einsum("oc,bc->bo", self.head.weight, h[:, :, -1]), self.head.bias)
        return pointwise_conv(h, self.head.weight, self.head.bias)

    def forward(self, x: Tensor, rng: Rng | None = None, train: bool = False) -> Tensor:
        return apply_head(self.logits(x, rng, train), self.config.head_type)

    __call__ = forward


def apply_head(z: Tensor, head_type: str) -> Tensor:
    if head_type == "tanh_regression":
        return tanh(z)
    if head_type == "sigmoid_multilabel":
        return sigmoid(z)
    if head_type == "softmax_classification":
        if z.ndim == 2:
            return softmax_last(z)
        return transpose(softmax_last(transpose(z, (0, 2, 1))), (0, 2, 1))
    return z


def model_forward(x: Tensor, model: NacTcnModel, rng: Rng | None = None, train: bool = False) -> Tensor:
    return model.forward(x, rng, train)


# receptive field ---------------------------------------------------------

def receptive_field(n_layers: int, d_schedule: list[int], k: int) -> int:
    """``1 + sum_i d_i (k - 1)`` over ``n_layers`` windowed layers."""
    if n_layers < 1 or not d_schedule:
        raise ConfigError("receptive_field needs at least one layer")
    if k < 1:
        raise ConfigError(f"kernel must be >= 1, got {k}")
    if len(d_schedule) < n_layers:
        raise ConfigError(f"dilation schedule has {len(d_schedule)} entries for {n_layers} layers")
    return 1 + sum(int(d) * (k - 1) for d in d_schedule[:n_layers])


def blocks_for_context(context: int, kernel: int, stages_per_block: int = 2, base: int = 2) -> int:
    """Fewest blocks with dilations ``base**i`` whose receptive field is >= ``context``."""
    if kernel < 2:
        raise ConfigError("a kernel of 1 never widens the receptive field")
    n = 1
    while True:
        ds = [d for d in geometric_dilations(n, base) for _ in range(stages_per_block)]
        if receptive_field(len(ds), ds, kernel) >= context:
            return n
        n += 1


def input_gradient_support(forward, in_channels: int, n: int, position: int, seed: int = 0) -> np.ndarray:
    """Boolean ``[n]``: timesteps whose input moves ``forward(x)[..., position]``.

    ``forward`` maps a ``[1, c, n]`` tensor to ``[1, c', n]``.
    """
    rng = Rng(seed)
    x = Tensor(rng.normal(size=(1, in_channels, n)), requires_grad=True)
    with Tape() as tape:
        y = forward(x)
        out = y[:, :, position].sum()
    tape.backward(out, [x])
    return np.abs(x.grad[0]).sum(axis=0) > 0


def empirical_receptive_field(model: NacTcnModel, n: int, position: int | None = None,
                              seed: int = 0) -> int:
    """Count timesteps with nonzero input gradient at ``position`` (default: last).

    ReLUs are replaced by identity so no unit is dead for the probe.
    """
    analytic = model.receptive_field()
    if analytic is not None and n < analytic:
        raise ContractError(f"sequence length {n} is shorter than the receptive field {analytic}")
    position = n - 1 if position is None else position
    support = input_gradient_support(lambda x: model.features(x, linear=True),
                                     model.config.input_channels, n, position, seed)
    return int(support.sum())


def receptive_span(model: NacTcnModel, n: int, position: int, seed: int = 0) -> tuple[int, int]:
    """(steps reached into the past, steps reached into the future) at ``position``."""
    support = input_gradient_support(lambda x: model.features(x, linear=True),
                                     model.config.input_channels, n, position, seed)
    idx = np.flatnonzero(support)
    return int(position - idx.min()), int(idx.max() - position)


# checkpoints -------------------------------------------------------------

def model_to_dict(model: NacTcnModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "dtype": str(model.dtype),
        "parameters": {
            name: {"shape": list(p.shape), "data": [float(v) for v in p.data.reshape(-1)]}
            for name, p in model.parameters().items()
        },
    }


def model_from_dict(data: dict) -> NacTcnModel:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"not a checkpoint (format={data.get('format')!r})")
    model = NacTcnModel.build(NacTcnConfig.from_dict(data["config"]), Rng(0))
    dtype = np.dtype(data.get("dtype", "float64"))
    params = model.parameters()
    stored = data["parameters"]
    if set(stored) != set(params):
        missing = sorted(set(params) - set(stored))
        extra = sorted(set(stored) - set(params))
        raise ParseError(f"checkpoint parameters mismatch: missing={missing} unexpected={extra}")
    for name, p in params.items():
        entry = stored[name]
        arr = np.asarray(entry["data"], dtype=np.float64)
        if list(p.shape) != list(entry["shape"]) or arr.size != math.prod(entry["shape"]):
            raise ParseError(f"{name}: shape {entry['shape']} does not match model shape {list(p.shape)}")
        p.data = arr.reshape(p.shape).astype(dtype)
    return model


def save_checkpoint(model: NacTcnModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model)))
    return path


def load_checkpoint(path: str | Path) -> NacTcnModel:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return model_from_dict(data)
