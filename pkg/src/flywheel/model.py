"""Small softmax classifiers with hand-derived gradients.

Two architectures are supported: ``linear`` (logits = W x + b) and ``mlp``
(one ReLU hidden layer of width H). Parameters live in one flat vector:

    linear: W (K x d), b (K)
    mlp:    W1 (H x d), b1 (H), W2 (K x H), b2 (K)

Every loss returns ``(value, gradient)`` where the gradient is the exact
derivative of the value with respect to the flat parameter vector.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ClassDistribution, NumericalAbort

ARCHS = ("linear", "mlp")


@dataclass(frozen=True)
class Classifier:
    arch: str
    input_dim: int
    n_classes: int
    params: np.ndarray
    hidden: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.arch == "mlp" and self.hidden < 1:
            raise ValueError("mlp needs hidden >= 1")
        p = np.array(self.params, dtype=np.float64, copy=True)
        if p.shape != (param_count(self.arch, self.input_dim, self.n_classes, self.hidden),):
            raise ValueError("parameter vector has the wrong length")
        p.flags.writeable = False
        object.__setattr__(self, "params", p)
        if self.arch == "linear":
            object.__setattr__(self, "hidden", 0)

    def with_params(self, params) -> "Classifier":
        return Classifier(self.arch, self.input_dim, self.n_classes, params,
                          self.hidden, self.seed)

    @property
    def size(self) -> int:
        return self.params.size


def param_count(arch, d, K, H=0):
    if arch == "linear":
        return K * (d + 1)
    return H * (d + 1) + K * (H + 1)


def init_classifier(arch, input_dim, n_classes, hidden=0, seed=0) -> Classifier:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
    rng = np.random.default_rng(seed)
    d, K, H = input_dim, n_classes, hidden
    if arch == "linear":
        b = 1.0 / np.sqrt(d)
        params = rng.uniform(-b, b, size=K * (d + 1))
    elif arch == "mlp":
        if H < 1:
            raise ValueError("mlp needs hidden >= 1")
        b1, b2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(H)
        params = np.concatenate([
            rng.uniform(-b1, b1, size=H * (d + 1)),
            rng.uniform(-b2, b2, size=K * (H + 1)),
        ])
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    return Classifier(arch, d, K, params, H, seed)


def _unpack(c: Classifier):
    p, d, K, H = c.params, c.input_dim, c.n_classes, c.hidden
    if c.arch == "linear":
        return p[: K * d].reshape(K, d), p[K * d:]
    o = 0
    W1 = p[o:o + H * d].reshape(H, d); o += H * d
    b1 = p[o:o + H]; o += H
    W2 = p[o:o + K * H].reshape(K, H); o += K * H
    return W1, b1, W2, p[o:]


def _as_batch(c, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != c.input_dim:
        raise ValueError(f"expected {c.input_dim} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    return X


def _forward(c, X):
    if c.arch == "linear":
        W, b = _unpack(c)
        return X @ W.T + b, None
    W1, b1, W2, b2 = _unpack(c)
    Z = X @ W1.T + b1
    A = np.maximum(Z, 0.0)
    return A @ W2.T + b2, (Z, A)


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def logits(c: Classifier, X) -> np.ndarray:
    return _forward(c, _as_batch(c, X))[0]


def predict_proba(c: Classifier, X) -> np.ndarray:
    """Row-wise softmax outputs for a batch of inputs."""
    return softmax(logits(c, X))


def predict_log_proba(c: Classifier, X) -> np.ndarray:
    return log_softmax(logits(c, X))


def forward(c: Classifier, x) -> ClassDistribution:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single feature vector")
    return ClassDistribution(predict_proba(c, x)[0])


def _backprop(c, X, cache, dlogits):
    """Pull a gradient w.r.t. logits back to the flat parameter vector."""
    if c.arch == "linear":
        return np.concatenate([(dlogits.T @ X).ravel(), dlogits.sum(axis=0)])
    Z, A = cache
    _, _, W2, _ = _unpack(c)
    dW2 = dlogits.T @ A
    db2 = dlogits.sum(axis=0)
    dZ = (dlogits @ W2) * (Z > 0)
    return np.concatenate([(dZ.T @ X).ravel(), dZ.sum(axis=0), dW2.ravel(), db2])


def weighted_ce(c: Classifier, X, targets, weights=None):
    """Soft-target cross-entropy with per-sample weights.

    value = -(1/n) sum_i w_i sum_y t_i[y] log p_i[y]
    """
    X = _as_batch(c, X)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    T = np.asarray(targets, dtype=np.float64).reshape(n, c.n_classes)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    out, cache = _forward(c, X)
    logp = log_softmax(out)
    p = np.exp(logp)
    wt = w[:, None] * T
    value = -np.sum(wt * logp) / n
    dlogits = (p * wt.sum(axis=1, keepdims=True) - wt) / n
    return float(value), _backprop(c, X, cache, dlogits)


def confidence_reg(c: Classifier, X, prior):
    """Mean expected log-probability under a fixed class prior.

    value = (1/n) sum_i sum_y prior[y] log p_i[y]
    """
    X = _as_batch(c, X)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    pi = np.asarray(prior, dtype=np.float64)
    out, cache = _forward(c, X)
    logp = log_softmax(out)
    p = np.exp(logp)
    value = np.sum(logp @ pi) / n
    dlogits = (pi[None, :] - p * pi.sum()) / n
    return float(value), _backprop(c, X, cache, dlogits)


def grad_weighted_ce(c, X, targets, weights=None):
    return weighted_ce(c, X, targets, weights)[1]


def grad_confidence_reg(c, X, prior):
    return confidence_reg(c, X, prior)[1]


def regularized_ce(c: Classifier, X, targets, weights, prior, lam):
    """Weighted cross-entropy plus ``lam`` times the confidence regularizer."""
    v, g = weighted_ce(c, X, targets, weights)
    if lam == 0:
        return v, g
    rv, rg = confidence_reg(c, X, prior)
    return v + lam * rv, g + lam * rg


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    schedule: str = "constant"
    step_factor: float = 0.1
    step_every: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.schedule not in ("constant", "step"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "step" and (self.step_every < 1 or not self.step_factor > 0):
            raise ValueError("step schedule needs step_every >= 1 and step_factor > 0")

    def lr_at(self, epoch: int) -> float:
        if self.schedule == "constant":
            return self.learning_rate
        return self.learning_rate * self.step_factor ** (epoch // self.step_every)


def sgd_step(c: Classifier, grad, cfg: OptimizerConfig, buffer=None, lr=None):
    """One momentum SGD update with coupled weight decay.

    buffer <- momentum * buffer + grad + weight_decay * params
    params <- params - lr * buffer
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != c.params.shape:
        raise ValueError("gradient length does not match parameters")
    if not np.all(np.isfinite(grad)):
        raise NumericalAbort("non-finite gradient")
    if buffer is None:
        buffer = np.zeros_like(grad)
    lr = cfg.learning_rate if lr is None else lr
    buffer = cfg.momentum * buffer + grad + cfg.weight_decay * c.params
    return c.with_params(c.params - lr * buffer), buffer


@dataclass
class OptState:
    """Momentum buffer and epoch counter carried across training calls."""

    buffer: Optional[np.ndarray] = None
    epoch: int = 0
    history: list = field(default_factory=list)


BatchLoss = Callable[[Classifier, np.ndarray], tuple]


def run_epoch(c: Classifier, n: int, batch_loss: BatchLoss, cfg: OptimizerConfig,
              state: OptState, rng: np.random.Generator):
    """Shuffle ``range(n)`` into mini-batches and take one SGD step per batch.

    ``batch_loss(classifier, idx)`` returns ``(value, grad)`` on rows ``idx``.
    Returns the updated classifier and the mean batch loss.
    """
    lr = cfg.lr_at(state.epoch)
    order = rng.permutation(n)
    bs = min(cfg.batch_size, n)
    total = 0.0
    batches = 0
    for start in range(0, n, bs):
        idx = order[start:start + bs]
        value, grad = batch_loss(c, idx)
        if not np.isfinite(value):
            raise NumericalAbort(f"non-finite loss at epoch {state.epoch}, batch {batches}")
        c, state.buffer = sgd_step(c, grad, cfg, state.buffer, lr)
        total += value
        batches += 1
    state.epoch += 1
    mean = total / batches
    state.history.append(mean)
    return c, mean


def _nudge_off_kinks(c: Classifier, X, tol=1e-4, max_rounds=50):
    if c.arch != "mlp":
        return c
    d, H = c.input_dim, c.hidden
    params = c.params.copy()
    for _ in range(max_rounds):
        Z = _forward(c.with_params(params), X)[1][0]
        near = np.any(np.abs(Z) < tol, axis=0)
        if not near.any():
            break
        # b1 occupies params[H*d : H*d + H]
        params[H * d:H * d + H][near] += 3 * tol
    return c.with_params(params)


def gradient_check(c: Classifier, loss: Callable[[Classifier], tuple], h=1e-5,
                   X=None) -> float:
    """Max relative error between the analytic and central-difference gradient.

    ``loss(classifier)`` returns ``(value, grad)``. When ``X`` is given for an
    mlp, biases are nudged first so no hidden pre-activation sits within 1e-4
    of the ReLU kink.
    """
    if X is not None:
        c = _nudge_off_kinks(c, _as_batch(c, X))
    _, analytic = loss(c)
    numeric = np.empty_like(analytic)
    base = c.params
    for j in range(base.size):
        p = base.copy()
        p[j] = base[j] + h
        up = loss(c.with_params(p))[0]
        p[j] = base[j] - h
        down = loss(c.with_params(p))[0]
        numeric[j] = (up - down) / (2 * h)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


_MAGIC = b"FLYWHEEL"
_HEADER = struct.Struct("<8sBqqqqq")


def save_checkpoint(path, c: Classifier) -> None:
    """Header (magic, arch tag, d, K, H, seed, n_params) then float64 LE params."""
    tag = ARCHS.index(c.arch)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, tag, c.input_dim, c.n_classes, c.hidden,
                              c.seed, c.size))
        fh.write(c.params.astype("<f8").tobytes())


def load_checkpoint(path) -> Classifier:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, tag, d, K, H, seed, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC or tag >= len(ARCHS):
        raise ValueError(f"{path}: not a classifier checkpoint")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n:
        raise ValueError(f"{path}: expected {n} parameters, found {len(body) / 8:g}")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return Classifier(ARCHS[tag], d, K, params, H, seed)
