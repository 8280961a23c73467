"""Parameter and multiply-accumulate (MAC) counting.

One MAC is one multiply-accumulate of an ``XW + B`` product.  Softmax,
activations and bias additions are not counted.  Rules per layer, for
sequence length ``n`` and batch 1:

* pointwise conv          ``n * in * out``
* causal conv             ``n * in * out * k``
* neighborhood attention  ``4 n c^2`` projections + ``2 n k d_head h`` (logits, weighted sum)
* dense attention         ``4 n c^2`` projections + ``2 n^2 d_head h``
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import singledispatch

from .attention import CausalDinaLayer, DenseCausalAttention
from .blocks import NacTcnModel, TemporalBlock
from .convnet import CausalConv1d, PointwiseConv


@dataclass
class LayerProfile:
    name: str
    kind: str
    params: int
    macs: int


@dataclass
class ProfileReport:
    seq_len: int
    batch: int
    rows: list[LayerProfile] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_mmac(self) -> float:
        return self.total_macs / 1e6

    def to_dict(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "batch": self.batch,
            "rows": [asdict(r) for r in self.rows],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "total_mmac": self.total_mmac,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        header = ("layer", "kind", "params", "MACs")
        lines = [(r.name, r.kind, f"{r.params:,}", f"{r.macs:,}") for r in self.rows]
        lines.append(("total", "", f"{self.total_params:,}", f"{self.total_macs:,}"))
        widths = [max(len(row[i]) for row in [header, *lines]) for i in range(4)]

        def fmt(row):
            return "  ".join([row[0].ljust(widths[0]), row[1].ljust(widths[1]),
                              row[2].rjust(widths[2]), row[3].rjust(widths[3])])

        rule = "-" * len(fmt(header))
        out = [f"seq_len={self.seq_len} batch={self.batch}", fmt(header), rule]
        out += [fmt(r) for r in lines[:-1]] + [rule, fmt(lines[-1])]
        out.append(f"{self.total_params / 1e6:.4f} M params, {self.total_mmac:.4f} MMac")
        return "\n".join(out)


# parameters --------------------------------------------------------------

@singledispatch
def count_params(obj) -> int:
    """Scalar parameter entries, biases and relative-position biases included."""
    params = getattr(obj, "parameters", None)
    if params is None:
        raise TypeError(f"cannot count parameters of {type(obj).__name__}")
    return sum(p.size for p in params().values())


# MACs --------------------------------------------------------------------

def attention_term_macs(layer, n: int, batch: int = 1) -> int:
    """Logit and weighted-sum MACs only, projections excluded."""
    if isinstance(layer, CausalDinaLayer):
        return batch * 2 * n * layer.window * layer.head_dim * layer.heads
    if isinstance(layer, DenseCausalAttention):
        return batch * 2 * n * n * (layer.channels // layer.heads) * layer.heads
    raise TypeError(f"{type(layer).__name__} is not an attention layer")


@singledispatch
def count_macs(obj, seq_len: int, batch: int = 1) -> int:
    raise TypeError(f"cannot count MACs of {type(obj).__name__}")


@count_macs.register
def _(layer: PointwiseConv, seq_len: int, batch: int = 1) -> int:
    return batch * seq_len * layer.in_channels * layer.out_channels


@count_macs.register
def _(layer: CausalConv1d, seq_len: int, batch: int = 1) -> int:
    return batch * seq_len * layer.in_channels * layer.out_channels * layer.kernel


@count_macs.register
def _(layer: CausalDinaLayer, seq_len: int, batch: int = 1) -> int:
    proj = batch * 4 * seq_len * layer.channels * layer.channels
    return proj + attention_term_macs(layer, seq_len, batch)


@count_macs.register
def _(layer: DenseCausalAttention, seq_len: int, batch: int = 1) -> int:
    proj = batch * 4 * seq_len * layer.channels * layer.channels
    return proj + attention_term_macs(layer, seq_len, batch)


@count_macs.register
def _(block: TemporalBlock, seq_len: int, batch: int = 1) -> int:
    return sum(r.macs for r in _block_rows("block", block, seq_len, batch))


@count_macs.register
def _(model: NacTcnModel, seq_len: int, batch: int = 1) -> int:
    return profile(model, seq_len, batch).total_macs


def _kind(layer) -> str:
    return type(layer).__name__


def _block_rows(prefix: str, block: TemporalBlock, seq_len: int, batch: int) -> list[LayerProfile]:
    rows = [LayerProfile(f"{prefix}.{block.conv_name}", _kind(block.conv),
                         count_params(block.conv), count_macs(block.conv, seq_len, batch))]
    if block.mixer is not None:
        rows.append(LayerProfile(f"{prefix}.{block.mixer_name}", _kind(block.mixer),
                                 count_params(block.mixer), count_macs(block.mixer, seq_len, batch)))
    if block.residual_proj is not None:
        # the projection is still stored when the residual path is ablated
        macs = count_macs(block.residual_proj, seq_len, batch) if block.use_residual else 0
        rows.append(LayerProfile(f"{prefix}.residual", _kind(block.residual_proj),
                                 count_params(block.residual_proj), macs))
    return rows


def profile(model: NacTcnModel, seq_len: int, batch: int = 1) -> ProfileReport:
    """Per-layer parameter and MAC counts for one forward pass."""
    if seq_len < 1 or batch < 1:
        raise ValueError("seq_len and batch must be >= 1")
    report = ProfileReport(seq_len, batch)
    for i, blk in enumerate(model.blocks):
        report.rows.extend(_block_rows(f"block.{i}", blk, seq_len, batch))
    head_steps = 1 if model.config.label_at == "last" else seq_len
    report.rows.append(LayerProfile("head", "PointwiseConv", count_params(model.head),
                                    count_macs(model.head, head_steps, batch)))
    return report
