"""Selection and refurbishment diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import CorruptionMatrix, NoisyDataset
from .model import Classifier, predict_proba


def selection_auc(scores, is_clean) -> float:
    """ROC AUC of ``scores`` for separating clean from corrupted samples.

    Rank-sum (Mann-Whitney) form with tied scores counted as one half.
    Returns NaN when one of the two groups is empty.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_clean, dtype=bool)
    if s.shape != pos.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _accuracy(f: Classifier, X, labels) -> float:
    pred = np.argmax(predict_proba(f, X), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def refurbishment_accuracy(f: Classifier, data: NoisyDataset) -> float:
    """Fraction of training samples whose argmax prediction is the true label."""
    if data.true_labels is None:
        raise ValueError("refurbishment accuracy needs true labels")
    return _accuracy(f, data.features, data.true_labels)


def test_accuracy(f: Classifier, test: NoisyDataset) -> float:
    labels = test.true_labels if test.true_labels is not None else test.noisy_labels
    return _accuracy(f, test.features, labels)


test_accuracy.__test__ = False  # not a pytest test


def t_estimation_error(est, truth) -> float:
    """Mean over rows of the L1 distance between two transition matrices."""
    A = est.entries if isinstance(est, CorruptionMatrix) else np.asarray(est)
    B = truth.entries if isinstance(truth, CorruptionMatrix) else np.asarray(truth)
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return float(np.abs(A - B).sum(axis=1).mean())


@dataclass
class CycleMetrics:
    cycle: int
    gamma: float
    selection_auc: float
    refurb_acc: float
    test_acc: float
    t_row_l1: float
    mix_ll: float
    extra: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        rec = asdict(self)
        extra = rec.pop("extra")
        rec.update(extra)
        # JSON has no NaN; undefined values become null
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in rec.items()}
