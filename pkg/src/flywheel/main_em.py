"""Main EM cycle: per-sample cleanness, the mixture weight, and the main network.

The main network ``g`` models the clean-label manifold of the mixture

    p(y_obs | x) = gamma * g(x)[y_obs] + (1 - gamma) * eps_i

and is trained either on labels resampled by the auxiliary network (with the
confidence regularizer) or, as an ablation, on the observed labels weighted
by their cleanness posterior.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MixtureState, NoisyDataset, NumericalAbort, clamp_gamma
from .model import (Classifier, OptimizerConfig, OptState, predict_log_proba,
                    predict_proba, regularized_ce, run_epoch)

MODES = ("resample", "reweight")
EPSILON_MODES = ("adaptive", "fixed_uniform")


@dataclass(frozen=True)
class MainCycleConfig:
    lambda_cr: float = 3.0
    mode: str = "resample"
    epsilon_mode: str = "adaptive"
    epochs_per_cycle: int = 1

    def __post_init__(self):
        if self.lambda_cr < 0:
            raise ValueError("lambda_cr must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epsilon_mode not in EPSILON_MODES:
            raise ValueError(f"epsilon_mode must be one of {EPSILON_MODES}")
        if self.epochs_per_cycle < 1:
            raise ValueError("epochs_per_cycle must be positive")


def clean_posterior(g_out, gamma, eps):
    """Posterior probability that the observed label came from the clean branch.

    Broadcasts over arrays. ``eps`` is kept above the floor by
    :class:`MixtureState`, so the denominator is positive.
    """
    g_out = np.asarray(g_out, dtype=np.float64)
    num = gamma * g_out
    out = num / (num + (1.0 - gamma) * np.asarray(eps, dtype=np.float64))
    return out if out.ndim else float(out)


def e_step(g: Classifier, data: NoisyDataset, mix: MixtureState) -> np.ndarray:
    probs = predict_proba(g, data.features)
    g_obs = probs[np.arange(data.N), data.noisy_labels]
    return clean_posterior(g_obs, mix.gamma, mix.epsilons)


def update_gamma(clean_prob) -> float:
    """Closed-form M-step for the mixture weight: the mean posterior, clamped."""
    q = np.asarray(clean_prob, dtype=np.float64)
    if q.size == 0:
        raise ValueError("empty posterior vector")
    return clamp_gamma(float(q.mean()))


def _xlogy(x, logy):
    # 0 * log 0 is taken as 0
    return np.where(x == 0, 0.0, x * logy)


def m_step_objective(g: Classifier, data: NoisyDataset, mix: MixtureState,
                     clean_prob, gamma=None):
    """Expected complete-data log-likelihood per sample.

    ``-inf`` if a clean term hits log 0. ``gamma`` optionally overrides
    ``mix.gamma``; an array of values gives one objective per value.
    """
    q = np.asarray(clean_prob, dtype=np.float64)
    logp = predict_log_proba(g, data.features)[np.arange(data.N), data.noisy_labels]
    gam = np.asarray(mix.gamma if gamma is None else gamma, dtype=np.float64)
    G = np.atleast_1d(gam)[:, None]
    with np.errstate(divide="ignore"):
        clean = _xlogy(q, np.log(G) + logp)
        corrupt = _xlogy(1.0 - q, np.log(1.0 - G) + np.log(mix.epsilons))
    total = np.sum(clean + corrupt, axis=1) / data.N
    total = np.where(np.isfinite(total), total, -np.inf)
    return float(total[0]) if gam.ndim == 0 else total


def mixture_log_likelihood(g: Classifier, data: NoisyDataset, mix: MixtureState) -> float:
    probs = predict_proba(g, data.features)
    g_obs = probs[np.arange(data.N), data.noisy_labels]
    return float(np.mean(np.log(mix.gamma * g_obs + (1.0 - mix.gamma) * mix.epsilons)))


def label_prior(labels, K: int) -> np.ndarray:
    """Empirical label marginal, or uniform if any class is missing."""
    counts = np.bincount(np.asarray(labels), minlength=K).astype(np.float64)
    if np.any(counts == 0):
        return np.full(K, 1.0 / K)
    return counts / counts.sum()


def main_loss(g: Classifier, X, labels, weights, prior, lam):
    """Cross-entropy on hard labels (optionally weighted) plus ``lam`` * CR."""
    labels = np.asarray(labels)
    T = np.zeros((labels.size, g.n_classes))
    T[np.arange(labels.size), labels] = 1.0
    return regularized_ce(g, X, T, weights, prior, lam)


def train_main(g: Classifier, X, labels, cfg: MainCycleConfig, opt: OptimizerConfig,
               rng: np.random.Generator, state: OptState | None = None,
               clean_prob=None):
    """Run ``cfg.epochs_per_cycle`` epochs of SGD on the main network.

    In ``resample`` mode ``labels`` are the auxiliary network's argmax labels
    and every sample has weight 1. In ``reweight`` mode ``labels`` are the
    observed labels and ``clean_prob`` supplies the weights. The regularizer's
    class prior is the empirical marginal of ``labels``.

    Returns ``(g, state, mean_loss_of_last_epoch)``.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    state = OptState() if state is None else state
    if cfg.mode == "reweight":
        if clean_prob is None:
            raise ValueError("reweight mode needs clean_prob")
        weights = np.asarray(clean_prob, dtype=np.float64)
    else:
        weights = np.ones(labels.size)
    prior = label_prior(labels, g.n_classes)

    def batch_loss(c, idx):
        return main_loss(c, X[idx], labels[idx], weights[idx], prior, cfg.lambda_cr)

    loss = math.nan
    for _ in range(cfg.epochs_per_cycle):
        g, loss = run_epoch(g, labels.size, batch_loss, opt, state, rng)
    if not np.all(np.isfinite(g.params)):
        raise NumericalAbort("main network parameters became non-finite")
    return g, state, loss
