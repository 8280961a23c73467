"""Synthetic sequence tasks: copy memory, adding problem, lagged affect."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..numcore import Rng

# label kinds and the array layout of ``targets``
#   frame_class       int   [N, T]        class id per timestep
#   frame_regression  float [N, out, T]   value per timestep
#   seq_regression    float [N, out]      one value per sequence
#   seq_multilabel    0/1   [N, out]      independent binary labels
#   seq_class         int   [N]           one class id per sequence
LABEL_KINDS = ("frame_class", "frame_regression", "seq_regression", "seq_multilabel", "seq_class")


@dataclass
class SequenceDataset:
    inputs: np.ndarray  # [N, channels, T]
    targets: np.ndarray
    kind: str
    n_outputs: int
    ids: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise ConfigError(f"unknown label kind {self.kind!r}")
        if self.inputs.ndim != 3:
            raise ConfigError(f"inputs must be [N, channels, T], got {self.inputs.shape}")
        if len(self.targets) != len(self.inputs):
            raise ConfigError("inputs and targets disagree on the number of sequences")
        if not self.ids:
            self.ids = [f"seq{i:05d}" for i in range(len(self.inputs))]

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def channels(self) -> int:
        return self.inputs.shape[1]

    @property
    def length(self) -> int:
        return self.inputs.shape[2]

    def subset(self, index) -> "SequenceDataset":
        index = np.asarray(index)
        return SequenceDataset(self.inputs[index], self.targets[index], self.kind, self.n_outputs,
                               [self.ids[i] for i in index], dict(self.meta))


# copy memory -------------------------------------------------------------

def gen_copy_memory(T: int, n_symbols: int, mem_len: int, count: int, rng: Rng) -> SequenceDataset:
    """Remember ``mem_len`` symbols across ``T`` blanks and replay them after a delimiter.

    Layout: symbols, T blanks, delimiter, mem_len query slots.  Class 0 is the
    blank, 1..n_symbols are symbols, n_symbols + 1 is the delimiter (input only).
    Targets are blank everywhere except the query slots.
    """
    if mem_len < 1 or T < 0 or n_symbols < 2 or count < 1:
        raise ConfigError(f"invalid copy-memory sizes T={T} n_symbols={n_symbols} mem_len={mem_len}")
    length = mem_len + T + 1 + mem_len
    symbols = rng.integers(1, n_symbols + 1, size=(count, mem_len))
    tokens = np.zeros((count, length), dtype=np.int64)
    tokens[:, :mem_len] = symbols
    tokens[:, mem_len + T] = n_symbols + 1
    targets = np.zeros((count, length), dtype=np.int64)
    targets[:, -mem_len:] = symbols
    inputs = np.eye(n_symbols + 2)[tokens].transpose(0, 2, 1)
    meta = {"task": "copy_memory", "query_slots": mem_len, "n_symbols": n_symbols, "T": T}
    return SequenceDataset(inputs, targets, "frame_class", n_symbols + 1, meta=meta)


def copy_memory_baseline(T: int, n_symbols: int, mem_len: int) -> dict[str, float]:
    """Cross-entropy of predicting blanks, and a uniform guess at the query slots.

    ``query_slot`` is the per-slot loss at the query positions, ``amortized``
    spreads the same total over every timestep of the sequence.
    """
    length = mem_len + T + 1 + mem_len
    per_slot = math.log(n_symbols)
    return {"query_slot": per_slot, "amortized": mem_len * per_slot / length}


# adding problem ----------------------------------------------------------

def gen_adding(T: int, count: int, rng: Rng) -> SequenceDataset:
    """Sum the two values flagged in the marker channel (MSE, last-frame target)."""
    if T < 2 or count < 1:
        raise ConfigError(f"adding problem needs T >= 2, got {T}")
    values = rng.uniform(0.0, 1.0, size=(count, T))
    marks = np.zeros((count, T))
    for i in range(count):
        marks[i, rng.choice(T, size=2, replace=False)] = 1.0
    inputs = np.stack([values, marks], axis=1)
    targets = (values * marks).sum(axis=1, keepdims=True)
    return SequenceDataset(inputs, targets, "seq_regression", 1, meta={"task": "adding", "T": T})


# lagged affect -----------------------------------------------------------

def ema_weights(lag: int) -> np.ndarray:
    """Normalized exponential weights over offsets 0..lag (span ``lag + 1``)."""
    alpha = 2.0 / (lag + 2.0)
    w = alpha * (1.0 - alpha) ** np.arange(lag + 1)
    return w / w.sum()


def gen_lagged_affect(T: int, lag: int, count: int, rng: Rng, gain: float = 2.0,
                      step_std: float = 0.15, label_at: str = "frame") -> SequenceDataset:
    """Valence-like regression target from a smoothed past of a random walk.

    The input is a clipped Gaussian random walk in [-1, 1]; the target at t is
    ``tanh(gain * sum_j w_j x[t - j])`` over ``j = 0..lag`` with EMA weights
    (missing history counts as 0).  ``label_at='last'`` keeps only the final
    frame's target, one label per sequence.
    """
    if T < 1 or lag < 0 or count < 1:
        raise ConfigError(f"invalid lagged-affect sizes T={T} lag={lag}")
    if label_at not in ("frame", "last"):
        raise ConfigError(f"label_at must be 'frame' or 'last', got {label_at!r}")
    steps = rng.normal(0.0, step_std, size=(count, T))
    x = np.empty((count, T))
    level = rng.uniform(-0.5, 0.5, size=count)
    for t in range(T):
        level = np.clip(level + steps[:, t], -1.0, 1.0)
        x[:, t] = level
    w = ema_weights(lag)
    smoothed = np.zeros_like(x)
    for j, wj in enumerate(w):
        smoothed[:, j:] += wj * x[:, : T - j]
    y = np.tanh(gain * smoothed)
    meta = {"task": "lagged_affect", "T": T, "lag": lag}
    if label_at == "last":
        return SequenceDataset(x[:, None, :], y[:, -1:], "seq_regression", 1, meta=meta)
    return SequenceDataset(x[:, None, :], y[:, None, :], "frame_regression", 1, meta=meta)
