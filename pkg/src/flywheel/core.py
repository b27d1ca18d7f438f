"""Shared value types and exact probability helpers.

Class indices are 0-based everywhere inside the package. Files on disk use
1-based labels; the conversion lives in :mod:`flywheel.datagen` only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

GAMMA_MIN = 1e-3
EPS_FLOOR = 1e-8
SIMPLEX_TOL = 1e-9


class DegenerateDistribution(ValueError):
    """Raised when a vector cannot be normalized onto the simplex."""


class NumericalAbort(RuntimeError):
    """Raised when training produces a non-finite loss or gradient."""


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ClassDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("a class distribution needs K >= 2 entries")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DegenerateDistribution("entries must be finite and nonnegative")
        if abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise DegenerateDistribution(f"entries sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    @property
    def K(self) -> int:
        return self.probs.size

    def __len__(self):
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)


def normalize(v) -> ClassDistribution:
    """Rescale a nonnegative vector so that it sums to one."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DegenerateDistribution("non-finite entry")
    if np.any(v < 0):
        raise DegenerateDistribution("negative entry")
    total = v.sum()
    if total <= 0:
        raise DegenerateDistribution("all-zero vector")
    return ClassDistribution(v / total)


def one_hot(c: int, K: int) -> ClassDistribution:
    if not 0 <= c < K:
        raise IndexError(f"class index {c} out of range for K={K}")
    e = np.zeros(K)
    e[c] = 1.0
    return ClassDistribution(e)


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def clamp_gamma(gamma: float) -> float:
    return float(min(max(gamma, GAMMA_MIN), 1.0 - GAMMA_MIN))


@dataclass(frozen=True)
class NoisyDataset:
    """Features with observed labels and, for evaluation only, true labels.

    Parameters
    ----------
    features : (N, d) array of finite floats.
    noisy_labels : (N,) int array with entries in ``0..K-1``.
    n_classes : K.
    true_labels : optional (N,) int array. Training code never receives
        this; the harness hands training paths a :meth:`hide_truth` copy.
    """

    features: np.ndarray
    noisy_labels: np.ndarray
    n_classes: int
    true_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        X = _frozen(self.features)
        if X.ndim != 2:
            raise ValueError("features must be an N x d matrix")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite entries")
        K = int(self.n_classes)
        if K < 2:
            raise ValueError("need at least two classes")
        y = _frozen(self.noisy_labels, dtype=np.int64)
        if y.shape != (X.shape[0],):
            raise ValueError("noisy_labels must have one entry per row")
        if y.size and (y.min() < 0 or y.max() >= K):
            raise ValueError("noisy label out of range")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "noisy_labels", y)
        object.__setattr__(self, "n_classes", K)
        if self.true_labels is not None:
            t = _frozen(self.true_labels, dtype=np.int64)
            if t.shape != y.shape:
                raise ValueError("true_labels must have length N")
            if t.size and (t.min() < 0 or t.max() >= K):
                raise ValueError("true label out of range")
            object.__setattr__(self, "true_labels", t)

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def K(self) -> int:
        return self.n_classes

    def with_noisy_labels(self, labels) -> "NoisyDataset":
        return NoisyDataset(self.features, labels, self.n_classes, self.true_labels)

    def hide_truth(self) -> "NoisyDataset":
        return NoisyDataset(self.features, self.noisy_labels, self.n_classes, None)

    def is_clean(self) -> np.ndarray:
        if self.true_labels is None:
            raise ValueError("true labels are not available")
        return self.noisy_labels == self.true_labels


@dataclass(frozen=True)
class MixtureState:
    gamma: float
    epsilons: np.ndarray

    def __post_init__(self):
        g = float(self.gamma)
        if not GAMMA_MIN <= g <= 1.0 - GAMMA_MIN:
            raise ValueError(f"gamma={g} outside [{GAMMA_MIN}, {1 - GAMMA_MIN}]")
        eps = _frozen(self.epsilons)
        if eps.ndim != 1 or np.any(eps < EPS_FLOOR) or np.any(eps > 1.0):
            raise ValueError("epsilons must lie in [EPS_FLOOR, 1]")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "epsilons", eps)

    @classmethod
    def uniform(cls, gamma: float, N: int, K: int) -> "MixtureState":
        return cls(clamp_gamma(gamma), np.full(N, 1.0 / K))


@dataclass(frozen=True)
class PosteriorSet:
    clean_prob: np.ndarray
    class_post: np.ndarray

    def __post_init__(self):
        c = _frozen(self.clean_prob)
        Q = _frozen(self.class_post)
        if np.any(c < 0) or np.any(c > 1):
            raise ValueError("clean_prob entries must lie in [0, 1]")
        if Q.shape[0] != c.shape[0]:
            raise ValueError("one class posterior row per sample")
        if np.any(np.abs(Q.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise ValueError("class posterior rows must sum to 1")
        object.__setattr__(self, "clean_prob", c)
        object.__setattr__(self, "class_post", Q)


@dataclass(frozen=True)
class CorruptionMatrix:
    """Row-stochastic K x K matrix; ``entries[y, y2] = p(observed y2 | true y)``.

    ``flagged_rows`` lists rows that had zero mass and were replaced by the
    uniform distribution.
    """

    entries: np.ndarray
    flagged_rows: tuple = field(default=())

    def __post_init__(self):
        T = _frozen(self.entries)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValueError("corruption matrix must be square")
        if np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise ValueError("corruption matrix must be row-stochastic")
        object.__setattr__(self, "entries", T)
        object.__setattr__(self, "flagged_rows", tuple(int(r) for r in self.flagged_rows))

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_masses(cls, masses) -> "CorruptionMatrix":
        """Row-normalize nonnegative masses; empty rows become uniform."""
        M = np.asarray(masses, dtype=np.float64)
        K = M.shape[1]
        totals = M.sum(axis=1)
        flagged = np.flatnonzero(totals <= 0)
        T = np.empty_like(M)
        ok = totals > 0
        T[ok] = M[ok] / totals[ok, None]
        T[~ok] = 1.0 / K
        return cls(T, tuple(flagged))
