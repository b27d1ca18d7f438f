"""Auxiliary EM cycle: true-class posteriors, the refurbishing network, and
the label-corruption matrices that feed per-sample outlier likelihoods back
into the main cycle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EPS_FLOOR, CorruptionMatrix, NoisyDataset, NumericalAbort
from .model import (Classifier, OptimizerConfig, OptState, predict_proba,
                    run_epoch, weighted_ce)


@dataclass(frozen=True)
class AuxCycleConfig:
    mixup_alpha: float = 4.0
    weak_aug_sigma: float = 0.05
    aug_copies: int = 2
    epochs_per_cycle: int = 1

    def __post_init__(self):
        if not self.mixup_alpha > 0:
            raise ValueError("mixup_alpha must be positive")
        if self.weak_aug_sigma < 0:
            raise ValueError("weak_aug_sigma must be nonnegative")
        if self.aug_copies < 1:
            raise ValueError("aug_copies must be at least 1")
        if self.epochs_per_cycle < 1:
            raise ValueError("epochs_per_cycle must be positive")


def true_class_posterior(clean_prob, noisy_labels, f_out):
    """Mix the observed label (if clean) with the network's guess (if corrupted).

    Works on a single sample (scalar ``clean_prob``, 1-D ``f_out``) or on a
    batch (vector ``clean_prob``, N x K ``f_out``).
    """
    f_out = np.asarray(f_out, dtype=np.float64)
    single = f_out.ndim == 1
    F = np.atleast_2d(f_out)
    c = np.atleast_1d(np.asarray(clean_prob, dtype=np.float64))
    y = np.atleast_1d(np.asarray(noisy_labels))
    Q = (1.0 - c)[:, None] * F
    Q[np.arange(F.shape[0]), y] += c
    return Q[0] if single else Q


def feature_scale(X) -> np.ndarray:
    return np.asarray(X, dtype=np.float64).std(axis=0)


def weak_augment(X, sigma, scale, rng):
    """Additive Gaussian jitter with per-dimension std ``sigma * scale``."""
    X = np.asarray(X, dtype=np.float64)
    if sigma == 0:
        return X
    return X + rng.standard_normal(X.shape) * (sigma * scale)


def averaged_predictions(f: Classifier, X, cfg: AuxCycleConfig, rng, scale=None):
    scale = feature_scale(X) if scale is None else scale
    acc = predict_proba(f, weak_augment(X, cfg.weak_aug_sigma, scale, rng))
    for _ in range(cfg.aug_copies - 1):
        acc = acc + predict_proba(f, weak_augment(X, cfg.weak_aug_sigma, scale, rng))
    return acc / cfg.aug_copies


def aux_e_step(f: Classifier, data: NoisyDataset, clean_prob, cfg: AuxCycleConfig,
               rng: np.random.Generator, scale=None):
    """Return ``(class_post, f_outs)``.

    ``f_outs`` are the augmentation-averaged predictions of ``f`` (the network
    as it stood before this cycle's training); they are reused for T_c.
    """
    f_outs = averaged_predictions(f, data.features, cfg, rng, scale)
    return true_class_posterior(clean_prob, data.noisy_labels, f_outs), f_outs


def mixup(x_a, t_a, x_b, t_b, alpha, rng, lam=None):
    """Convex interpolation of two samples (or two aligned batches).

    ``lam`` is drawn from Beta(alpha, alpha) and folded to ``max(lam, 1-lam)``
    so the mix stays closer to ``a``; pass ``lam`` to fix it. Batches get one
    draw per row. Returns ``(x_mix, t_mix, lam)``.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    t_a = np.asarray(t_a, dtype=np.float64)
    t_b = np.asarray(t_b, dtype=np.float64)
    batched = x_a.ndim == 2
    n = x_a.shape[0] if batched else 1
    if lam is None:
        raw = rng.beta(alpha, alpha, size=n)
        lam = np.maximum(raw, 1.0 - raw)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    if batched:
        lw = lam[:, None]
        return lw * x_a + (1 - lw) * x_b, lw * t_a + (1 - lw) * t_b, lam
    l0 = float(lam[0])
    return l0 * x_a + (1 - l0) * x_b, l0 * t_a + (1 - l0) * t_b, l0


def mixed_batch(X, targets, cfg: AuxCycleConfig, rng, scale, lam=None):
    """Jitter a batch, then MixUp it against a shuffled copy of itself."""
    Xa = weak_augment(X, cfg.weak_aug_sigma, scale, rng)
    perm = rng.permutation(Xa.shape[0])
    Xm, Tm, _ = mixup(Xa, targets, Xa[perm], targets[perm], cfg.mixup_alpha, rng, lam)
    return Xm, Tm


def train_aux(f: Classifier, data: NoisyDataset, class_post, cfg: AuxCycleConfig,
              opt: OptimizerConfig, rng: np.random.Generator,
              state: OptState | None = None, aug_rng=None, scale=None, lam=None):
    """Soft-target cross-entropy training of the refurbishing network.

    ``rng`` drives mini-batch order only; jitter and MixUp draw from
    ``aug_rng`` so the batch order matches plain CE training with the same
    seed. Returns ``(f, state, mean_loss_of_last_epoch)``.
    """
    X = data.features
    Q = np.asarray(class_post, dtype=np.float64)
    state = OptState() if state is None else state
    aug_rng = np.random.default_rng(0) if aug_rng is None else aug_rng
    scale = feature_scale(X) if scale is None else scale

    def batch_loss(c, idx):
        Xm, Tm = mixed_batch(X[idx], Q[idx], cfg, aug_rng, scale, lam)
        return weighted_ce(c, Xm, Tm)

    loss = math.nan
    for _ in range(cfg.epochs_per_cycle):
        f, loss = run_epoch(f, data.N, batch_loss, opt, state, rng)
    if not np.all(np.isfinite(f.params)):
        raise NumericalAbort("auxiliary network parameters became non-finite")
    return f, state, loss


def _label_masses(weights, noisy_labels, K):
    # masses[y, y2] = sum over samples observed as y2 of weights[i, y]
    W = np.asarray(weights, dtype=np.float64)
    Y = np.zeros((W.shape[0], K))
    Y[np.arange(W.shape[0]), np.asarray(noisy_labels)] = 1.0
    return W.T @ Y


def estimate_T(class_post, noisy_labels) -> CorruptionMatrix:
    """Transition matrix from all posterior mass; empty rows become uniform."""
    Q = np.asarray(class_post, dtype=np.float64)
    return CorruptionMatrix.from_masses(_label_masses(Q, noisy_labels, Q.shape[1]))


def estimate_Tc(clean_prob, f_outs, noisy_labels) -> CorruptionMatrix:
    """Transition matrix from the corrupted part of the posterior only."""
    F = np.asarray(f_outs, dtype=np.float64)
    c = np.asarray(clean_prob, dtype=np.float64)
    return CorruptionMatrix.from_masses(
        _label_masses((1.0 - c)[:, None] * F, noisy_labels, F.shape[1]))


def epsilon_update(f_out, Tc: CorruptionMatrix, noisy_labels):
    """Outlier likelihood of each observed label under the corruption branch.

    Evaluated as ``T[r, y] + sum_k f[k] (T[k, y] - T[r, y])`` with ``r`` the
    argmax class, which equals ``sum_k f[k] T[k, y]`` because ``f`` sums to
    one, and is exact when column ``y`` is constant or ``f`` is one-hot.
    """
    F = np.asarray(f_out, dtype=np.float64)
    T = Tc.entries if isinstance(Tc, CorruptionMatrix) else np.asarray(Tc)
    single = F.ndim == 1
    F = np.atleast_2d(F)
    y = np.atleast_1d(np.asarray(noisy_labels))
    cols = T[:, y].T                      # cols[i, k] = T[k, y_i]
    ref = cols[np.arange(F.shape[0]), np.argmax(F, axis=1)]
    eps = ref + np.einsum("ik,ik->i", F, cols - ref[:, None])
    eps = np.clip(eps, EPS_FLOOR, 1.0)
    return float(eps[0]) if single else eps


def resample_labels(f: Classifier, data_or_X) -> np.ndarray:
    """Argmax labels of ``f``; ties go to the lowest class index."""
    X = data_or_X.features if isinstance(data_or_X, NoisyDataset) else data_or_X
    return np.argmax(predict_proba(f, X), axis=1)
