"""Synthetic datasets, label-noise injectors, and the dataset CSV format.

CSV layout: header ``f0,...,f{d-1},noisy_label[,true_label]``, one sample
per row, labels 1-based on disk and 0-based in memory.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import truncnorm

from .core import CorruptionMatrix, NoisyDataset

GENERATORS = ("gaussian_blobs", "concentric_rings")
NOISE_KINDS = ("symmetric", "asymmetric", "instance_dependent")


class DatasetFormatError(ValueError):
    """Malformed dataset file; the message names the offending line."""


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "gaussian_blobs"
    n_classes: int = 4
    n_samples: int = 4000
    dim: int = 2
    separation: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"generator kind must be one of {GENERATORS}")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_samples < self.n_classes:
            raise ValueError("need at least one sample per class")
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if not self.separation > 0:
            raise ValueError("separation must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "symmetric"
    rate: float = 0.0
    mapping: Optional[Sequence[int]] = None
    tau_sigma: float = 0.1
    include_self: bool = False
    projection_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}")
        if not 0 <= self.rate < 1:
            raise ValueError("noise rate must lie in [0, 1)")
        if self.tau_sigma < 0:
            raise ValueError("tau_sigma must be nonnegative")
        if self.mapping is not None:
            object.__setattr__(self, "mapping", tuple(int(m) for m in self.mapping))


def class_means(K, d, radius):
    """K points on a sphere of the given radius, equally spaced.

    For d >= K the means are scaled axis directions (pairwise equidistant);
    otherwise they sit on a circle in the first two coordinates.
    """
    M = np.zeros((K, d))
    if d >= K:
        M[np.arange(K), np.arange(K)] = radius
        return M
    angles = 2 * np.pi * np.arange(K) / K
    M[:, 0] = radius * np.cos(angles)
    M[:, 1] = radius * np.sin(angles)
    return M


def generate(spec: GeneratorSpec) -> NoisyDataset:
    """Balanced noise-free dataset; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    K, N, d = spec.n_classes, spec.n_samples, spec.dim
    y = rng.permutation(np.arange(N) % K)
    noise = rng.standard_normal((N, d))
    if spec.kind == "gaussian_blobs":
        X = class_means(K, d, spec.separation)[y] + noise
    else:
        theta = rng.uniform(0, 2 * np.pi, size=N)
        r = (y + 1) * spec.separation
        X = noise
        X[:, 0] += r * np.cos(theta)
        X[:, 1] += r * np.sin(theta)
    return NoisyDataset(X, y, K, y.copy())


def _require_truth(data):
    if data.true_labels is None:
        raise ValueError("noise injection needs true labels")
    return data.true_labels


def inject_symmetric(data: NoisyDataset, rate, rng, include_self=False) -> NoisyDataset:
    """Flip each label with probability ``rate`` to a uniformly drawn class.

    By default the new class is drawn from the other K-1 classes, so ``rate``
    is exactly the corruption probability. ``include_self=True`` draws from
    all K classes instead.
    """
    y = _require_truth(data)
    K = data.K
    flip = rng.random(data.N) < rate
    if include_self:
        new = rng.integers(0, K, size=data.N)
    else:
        new = (y + rng.integers(1, K, size=data.N)) % K
    return data.with_noisy_labels(np.where(flip, new, y))


def cyclic_mapping(K):
    return tuple((np.arange(K) + 1) % K)


def inject_asymmetric(data: NoisyDataset, rate, mapping, rng) -> NoisyDataset:
    """Flip each label y to ``mapping[y]`` with probability ``rate``."""
    y = _require_truth(data)
    K = data.K
    m = np.asarray(cyclic_mapping(K) if mapping is None else mapping)
    if sorted(m.tolist()) != list(range(K)):
        raise ValueError("mapping must be a permutation of the classes")
    if np.any(m == np.arange(K)):
        raise ValueError("mapping must not have fixed points")
    flip = rng.random(data.N) < rate
    return data.with_noisy_labels(np.where(flip, m[y], y))


def instance_flip_probs(y, X, K, rate, tau_sigma, rng, projection_scale=1.0):
    """Per-sample noisy-label distributions for instance-dependent noise.

    Each sample keeps its label with probability ``1 - q_i`` where ``q_i`` is
    a draw from N(rate, tau_sigma) truncated to [0, 1]. The remaining mass is
    split over the wrong classes by a softmax of ``x @ W[y]`` with a random
    projection ``W`` of shape (K, d, K).
    """
    N, d = X.shape
    if tau_sigma == 0:
        q = np.full(N, float(rate))
    else:
        a, b = (0 - rate) / tau_sigma, (1 - rate) / tau_sigma
        q = truncnorm.rvs(a, b, loc=rate, scale=tau_sigma, size=N, random_state=rng)
    W = rng.standard_normal((K, d, K)) * projection_scale
    Xn = X / np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1e-12)
    scores = np.einsum("nd,ndk->nk", Xn, W[y])
    scores[np.arange(N), y] = -np.inf
    scores -= scores.max(axis=1, keepdims=True)
    P = np.exp(scores)
    P /= P.sum(axis=1, keepdims=True)
    P *= q[:, None]
    P[np.arange(N), y] = 1 - q
    return P


def inject_instance_dependent(data: NoisyDataset, rate, tau_sigma, rng,
                              projection_scale=1.0) -> NoisyDataset:
    y = _require_truth(data)
    P = instance_flip_probs(y, data.features, data.K, rate, tau_sigma, rng,
                            projection_scale)
    u = rng.random(data.N)
    new = np.minimum((P.cumsum(axis=1) < u[:, None]).sum(axis=1), data.K - 1)
    return data.with_noisy_labels(new)


def inject(data: NoisyDataset, spec: NoiseSpec, rng) -> NoisyDataset:
    if spec.kind == "symmetric":
        return inject_symmetric(data, spec.rate, rng, spec.include_self)
    if spec.kind == "asymmetric":
        return inject_asymmetric(data, spec.rate, spec.mapping, rng)
    return inject_instance_dependent(data, spec.rate, spec.tau_sigma, rng,
                                     spec.projection_scale)


def ground_truth_T(data: NoisyDataset) -> CorruptionMatrix:
    """Empirical p(observed | true) by counting."""
    y = _require_truth(data)
    K = data.K
    counts = np.zeros((K, K))
    np.add.at(counts, (y, data.noisy_labels), 1.0)
    if np.any(counts.sum(axis=1) == 0):
        raise ValueError("a class has no samples")
    return CorruptionMatrix(counts / counts.sum(axis=1, keepdims=True))


def ground_truth_Tc(data: NoisyDataset) -> CorruptionMatrix:
    """Empirical p(observed | true, corrupted); rows with no flips become uniform."""
    y = _require_truth(data)
    K = data.K
    counts = np.zeros((K, K))
    np.add.at(counts, (y, data.noisy_labels), 1.0)
    counts[np.arange(K), np.arange(K)] = 0.0
    return CorruptionMatrix.from_masses(counts)


def save_dataset(path, data: NoisyDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"f{j}" for j in range(data.d)] + ["noisy_label"]
        if data.true_labels is not None:
            header.append("true_label")
        w.writerow(header)
        for i in range(data.N):
            row = ["%.17g" % v for v in data.features[i]]
            row.append(str(int(data.noisy_labels[i]) + 1))
            if data.true_labels is not None:
                row.append(str(int(data.true_labels[i]) + 1))
            w.writerow(row)


def _parse_label(tok, lineno, K):
    try:
        v = int(tok)
    except ValueError:
        raise DatasetFormatError(f"line {lineno}: label {tok!r} is not an integer") from None
    if v < 1 or (K is not None and v > K):
        raise DatasetFormatError(f"line {lineno}: label {v} outside 1..{K or 'K'}")
    return v - 1


def load_dataset(path, n_classes: Optional[int] = None) -> NoisyDataset:
    """Read the CSV format; ``n_classes`` defaults to the largest label seen."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError("line 1: empty file")
    header = rows[0]
    has_true = header[-1:] == ["true_label"]
    n_feat = len(header) - (2 if has_true else 1)
    expected = [f"f{j}" for j in range(n_feat)] + ["noisy_label"]
    if header[:n_feat + 1] != expected or n_feat < 1:
        raise DatasetFormatError("line 1: header must be f0,...,noisy_label[,true_label]")
    X, noisy, true = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetFormatError(
                f"line {lineno}: expected {len(header)} fields, found {len(row)}")
        try:
            feats = [float(t) for t in row[:n_feat]]
        except ValueError:
            raise DatasetFormatError(f"line {lineno}: non-numeric feature") from None
        if not np.all(np.isfinite(feats)):
            raise DatasetFormatError(f"line {lineno}: non-finite feature")
        X.append(feats)
        noisy.append(_parse_label(row[n_feat], lineno, n_classes))
        if has_true:
            true.append(_parse_label(row[n_feat + 1], lineno, n_classes))
    if not X:
        raise DatasetFormatError("line 2: no samples")
    K = n_classes or (max(noisy + true) + 1)
    return NoisyDataset(np.array(X), np.array(noisy), max(K, 2),
                        np.array(true) if has_true else None)
