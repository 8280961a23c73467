"""Affect-recognition metrics: CCC, ROC-AUC and accuracy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, UndefinedMetricError


@dataclass(frozen=True)
class CccParts:
    """Population (1/N) moments entering the concordance correlation."""

    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov: float

    @property
    def denominator(self) -> float:
        return self.var_x + self.var_y + (self.mean_x - self.mean_y) ** 2

    @property
    def value(self) -> float:
        den = self.denominator
        return 0.0 if den == 0.0 else 2.0 * self.cov / den


def _paired(pred, target) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ContractError(f"length mismatch: {x.size} predictions vs {y.size} targets")
    if x.size == 0:
        raise ContractError("metrics need at least one sample")
    return x, y


def ccc_parts(pred, target) -> CccParts:
    x, y = _paired(pred, target)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    return CccParts(float(mx), float(my), float(np.mean(dx * dx)), float(np.mean(dy * dy)),
                    float(np.mean(dx * dy)))


def ccc(pred, target) -> float:
    """Concordance correlation coefficient ``2 s_xy / (s_x^2 + s_y^2 + (mx - my)^2)``.

    Returns 0 when the denominator vanishes (both constant with equal means).
    """
    return ccc_parts(pred, target).value


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Equals P(score+ > score-) + P(tie)/2 over all positive/negative pairs.
    """
    s, lab = _paired(scores, labels)
    if not np.all((lab == 0) | (lab == 1)):
        raise ContractError("labels must be binary 0/1")
    pos = lab == 1
    n_pos = int(pos.sum())
    n_neg = lab.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs at least one positive and one negative label")
    ranks = rankdata(s)  # average ranks give ties half credit
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mean_roc_auc(scores, labels) -> float:
    """Macro ROC-AUC over label columns ``[n_samples, n_labels]``; skips single-class columns."""
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.float64)
    if s.shape != lab.shape:
        raise ContractError(f"shape mismatch: {s.shape} vs {lab.shape}")
    s = s.reshape(s.shape[0], -1)
    lab = lab.reshape(lab.shape[0], -1)
    values = []
    for j in range(s.shape[1]):
        try:
            values.append(roc_auc(s[:, j], lab[:, j]))
        except UndefinedMetricError:
            continue
    if not values:
        raise UndefinedMetricError("no label column has both classes")
    return float(np.mean(values))


def accuracy(pred_labels, true_labels) -> float:
    p = np.asarray(pred_labels).reshape(-1)
    t = np.asarray(true_labels).reshape(-1)
    if p.size != t.size:
        raise ContractError(f"length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ContractError("accuracy needs at least one sample")
    return float(np.mean(p == t))
