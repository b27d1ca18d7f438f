import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flywheel.core import CorruptionMatrix, NoisyDataset
from flywheel.metrics import (CycleMetrics, refurbishment_accuracy, selection_auc,
                              t_estimation_error, test_accuracy)
from flywheel.model import Classifier, init_classifier, predict_proba


def auc_by_pairs(scores, clean):
    pos = [s for s, c in zip(scores, clean) if c]
    neg = [s for s, c in zip(scores, clean) if not c]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert selection_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75
    assert selection_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert selection_auc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    assert math.isnan(selection_auc([0.1, 0.2], [1, 1]))
    with pytest.raises(ValueError):
        selection_auc([0.1], [1, 0])


@given(st.integers(0, 2**31 - 1))
def test_auc_properties(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 40))
    s = r.integers(0, 6, size=n) / 5.0  # plenty of ties
    lab = r.random(n) < 0.5
    lab[0], lab[1] = True, False
    a = selection_auc(s, lab)
    assert a == pytest.approx(auc_by_pairs(s, lab), abs=1e-12)
    assert abs(a + selection_auc(s, ~lab) - 1) <= 1e-12
    assert selection_auc(np.exp(3 * s) - 7, lab) == pytest.approx(a, abs=1e-12)


def test_accuracy_examples():
    K, N = 4, 40
    y = np.arange(N) % K
    X = np.eye(K)[y] * 10.0
    oracle = Classifier("linear", K, K, np.concatenate([np.eye(K).ravel(), np.zeros(K)]))
    data = NoisyDataset(X, (y + 1) % K, K, y)
    assert refurbishment_accuracy(oracle, data) == 1.0
    uniform = Classifier("linear", K, K, np.zeros(K * (K + 1)))
    assert refurbishment_accuracy(uniform, data) == 1 / K
    with pytest.raises(ValueError):
        refurbishment_accuracy(oracle, data.hide_truth())
    assert test_accuracy(oracle, data) == 1.0
    assert test_accuracy(oracle, data.hide_truth()) == 0.0


@given(st.integers(0, 2**31 - 1))
def test_accuracy_matches_recount(seed):
    r = np.random.default_rng(seed)
    f = init_classifier("mlp", 3, 4, 5, seed=seed % 100)
    X = r.standard_normal((30, 3))
    y = r.integers(0, 4, 30)
    data = NoisyDataset(X, r.integers(0, 4, 30), 4, y)
    P = predict_proba(f, X)
    hits = 0
    for i in range(30):
        best = max(range(4), key=lambda k: (P[i, k], -k))
        hits += best == y[i]
    assert refurbishment_accuracy(f, data) == hits / 30
    assert test_accuracy(f, data) == hits / 30


def test_t_estimation_error_examples():
    I = CorruptionMatrix(np.eye(2))
    assert t_estimation_error(I, I) == 0
    assert t_estimation_error(np.full((2, 2), 0.5), I) == 1.0
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert t_estimation_error(flip, I) == 2.0
    with pytest.raises(ValueError):
        t_estimation_error(np.eye(3), I)


def test_cycle_metrics_record():
    m = CycleMetrics(1, 0.5, math.nan, 0.9, 0.8, 0.1, -1.0, {"eps_mean": 0.25})
    rec = m.to_record()
    assert rec["selection_auc"] is None and rec["eps_mean"] == 0.25 and "extra" not in rec
