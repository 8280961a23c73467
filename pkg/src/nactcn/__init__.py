"""NAC-TCN: temporal convolutional networks with causal dilated neighborhood attention."""

from .attention import (CausalDinaLayer, DenseCausalAttention, causal_dina_forward,
                        dense_causal_self_attention, neighbor_indices)
from .blocks import (NacTcnConfig, NacTcnModel, TemporalBlock, block_forward, blocks_for_context,
                     empirical_receptive_field, load_checkpoint, model_forward, receptive_field,
                     save_checkpoint)
from .convnet import CausalConv1d, PointwiseConv, SpatialDropout, causal_conv_forward, pointwise_conv, spatial_dropout
from .errors import (ConfigError, ContractError, DimensionError, DivergenceError, LeakageError,
                     NacTcnError, NumericError, ParseError, UndefinedMetricError)
from .metrics import CccParts, accuracy, ccc, ccc_parts, roc_auc
from .numcore import Rng, Tape, Tensor, finite_diff_check
from .profiler import ProfileReport, count_macs, count_params, profile

__version__ = "0.1.0"
