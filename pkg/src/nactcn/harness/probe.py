"""Future-perturbation probe for temporal leakage."""

from __future__ import annotations

import numpy as np

from ..blocks import NacTcnModel
from ..errors import ContractError
from ..numcore import Rng, Tensor


def probe_causality(model: NacTcnModel, n: int, trials: int, rng: Rng) -> float:
    """Largest change of any output before a perturbed timestep.

    Each trial draws a random input, picks a cut ``p`` in ``[1, n)`` and
    redraws every input at times ``>= p``.  The block-stack outputs at times
    ``< p`` are compared; a causal model returns exactly 0.0.
    """
    if n < 2 or trials < 1:
        raise ContractError("probe needs n >= 2 and trials >= 1")
    c = model.config.input_channels
    dtype = model.dtype
    worst = 0.0
    for _ in range(trials):
        x = rng.normal(size=(1, c, n)).astype(dtype)
        cut = int(rng.integers(1, n))
        x2 = x.copy()
        x2[..., cut:] = rng.normal(size=(1, c, n - cut))
        y1 = model.features(Tensor(x)).data
        y2 = model.features(Tensor(x2)).data
        worst = max(worst, float(np.max(np.abs(y1[..., :cut] - y2[..., :cut]))))
    return worst
