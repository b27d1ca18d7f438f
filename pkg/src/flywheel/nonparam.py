"""Non-parametric limit of the confidence-regularized loss on a finite world.

A :class:`DiscreteWorld` has finitely many inputs with a noisy label law

    p_data(y | x) = gamma' * p_pi(y | x) + (1 - gamma') / K

and a uniform label marginal. The regularized loss over probability tables
``g[x, y]`` has the closed-form minimizer

    g*(x) = normalize( max(p_data(y|x) - lam * p_data(y), 0) )

which equals ``p_pi`` at ``lam = 1 - gamma'``. :func:`brute_force_optimize`
minimizes the same loss numerically without using the closed form, so the
two can be checked against each other.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DegenerateDistribution, NumericalAbort, total_variation

LOG_CLIP = 1e-12
MARGINAL_TOL = 1e-6


@dataclass(frozen=True)
class DiscreteWorld:
    p_x: np.ndarray
    p_pi: np.ndarray
    gamma_prime: float

    def __post_init__(self):
        px = np.array(self.p_x, dtype=np.float64)
        P = np.array(self.p_pi, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != px.size:
            raise ValueError("p_pi must have one row per input")
        if np.any(px < 0) or abs(px.sum() - 1) > 1e-9:
            raise ValueError("p_x must be a distribution")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-9):
            raise ValueError("p_pi rows must lie on the simplex")
        if not 0 < self.gamma_prime < 1:
            raise ValueError("gamma_prime must lie in (0, 1)")
        for a in (px, P):
            a.flags.writeable = False
        object.__setattr__(self, "p_x", px)
        object.__setattr__(self, "p_pi", P)

    @property
    def num_x(self) -> int:
        return self.p_x.size

    @property
    def K(self) -> int:
        return self.p_pi.shape[1]

    @property
    def epsilon(self) -> float:
        return 1.0 / self.K

    @property
    def p_cond(self) -> np.ndarray:
        """Noisy label law p_data(y | x)."""
        return self.gamma_prime * self.p_pi + (1 - self.gamma_prime) * self.epsilon

    @property
    def p_label(self) -> np.ndarray:
        """Label marginal p_data(y)."""
        return self.p_x @ self.p_cond


def sinkhorn_rows(P, col_target, iters=10_000, tol=1e-15):
    """Rescale a positive matrix to unit row sums and the given column sums."""
    P = np.array(P, dtype=np.float64)
    for _ in range(iters):
        P *= (col_target / P.sum(axis=0))[None, :]
        P /= P.sum(axis=1, keepdims=True)
        if np.max(np.abs(P.sum(axis=0) - col_target)) < tol:
            break
    return P


def default_world(seed=0, num_x=6, K=3, gamma_prime=0.7, temperature=0.3) -> DiscreteWorld:
    """Random world with a uniform label marginal.

    Rows of p_pi are Dirichlet(1) draws sharpened by ``temperature``; Sinkhorn
    balancing then makes every class equally frequent under uniform p_x, which
    is the hypothesis the closed form needs.
    """
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(K), size=num_x) ** (1.0 / temperature)
    P /= P.sum(axis=1, keepdims=True)
    P = sinkhorn_rows(P, np.full(K, num_x / K))
    return DiscreteWorld(np.full(num_x, 1.0 / num_x), P, gamma_prime)


def regularized_loss(table, world: DiscreteWorld, lam: float) -> float:
    """Expected CE under the data law plus ``lam`` * expected log-prob under
    the product of marginals, by full enumeration over (x, y)."""
    logg = np.log(np.maximum(np.asarray(table, dtype=np.float64), LOG_CLIP))
    coef = world.p_x[:, None] * (lam * world.p_label[None, :] - world.p_cond)
    return float(np.sum(coef * logg))


def lambda_star(world: DiscreteWorld) -> float:
    """Regularization weight that cancels the uniform corruption term."""
    marg = world.p_label
    if np.max(np.abs(marg - world.epsilon)) > MARGINAL_TOL:
        raise ValueError("label marginal is not uniform; the closed form does not apply")
    return (1 - world.gamma_prime) * world.epsilon / world.epsilon


def closed_form_g_star(world: DiscreteWorld, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    raw = np.maximum(world.p_cond - lam * world.p_label[None, :], 0.0)
    Z = raw.sum(axis=1, keepdims=True)
    if np.any(Z <= 0):
        raise DegenerateDistribution(f"lam={lam} zeroes an entire row")
    return raw / Z


def project_simplex(V):
    """Euclidean projection of each row of ``V`` onto the probability simplex."""
    V = np.asarray(V, dtype=np.float64)
    shape = V.shape
    V2 = V.reshape(-1, shape[-1])
    U = -np.sort(-V2, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    k = np.arange(1, shape[-1] + 1)
    cond = U - css / k > 0
    rho = shape[-1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(V2.shape[0]), rho] / (rho + 1)
    return np.maximum(V2 - theta[:, None], 0.0).reshape(shape)


def project_floored(V, floor=LOG_CLIP):
    """Euclidean projection onto {g >= floor, sum g = 1}, row-wise."""
    K = np.shape(V)[-1]
    r = 1.0 - K * floor
    return floor + r * project_simplex((np.asarray(V, dtype=np.float64) - floor) / r)


@dataclass(frozen=True)
class BruteForceResult:
    table: np.ndarray
    loss: float
    restart: int


def _row_losses(G, coef):
    return np.sum(coef * np.log(G), axis=-1)


def _pgd(G, coef, iters, step):
    for _ in range(iters):
        G = project_floored(G - step * coef / G)
        yield G


def _mirror(G, coef, iters, step):
    # Entropic mirror descent; a per-row step grows by 10% after an accepted
    # move and halves after a rejected one, so every row decreases monotonically.
    eta = np.full(G.shape[:-1], float(step))
    f = _row_losses(G, coef)
    for _ in range(iters):
        Z = np.log(G) - eta[..., None] * coef / G
        Z -= Z.max(axis=-1, keepdims=True)
        C = np.maximum(np.exp(Z), LOG_CLIP)
        C /= C.sum(axis=-1, keepdims=True)
        fC = _row_losses(C, coef)
        ok = fC <= f + 1e-15 * np.abs(f)
        G = np.where(ok[..., None], C, G)
        f = np.where(ok, fC, f)
        eta = np.where(ok, eta * 1.1, eta * 0.5)
        yield G


def brute_force_optimize(world: DiscreteWorld, lam: float, iters=2_000, step=1.0,
                         rng=None, restarts=10, method="mirror") -> BruteForceResult:
    """Minimize :func:`regularized_loss` over tables without the closed form.

    Tables are kept in ``{g >= 1e-12}`` so the logs stay finite. ``method``
    selects the first-order scheme:

    ``"mirror"``
        exponentiated gradient with a self-adjusting per-row step. Its
        progress does not depend on how small the optimal entries are, which
        matters for sharpened worlds whose optimum has entries near 1e-10.
    ``"pgd"``
        Euclidean projected gradient with a fixed ``step``. Fine for
        well-conditioned worlds; stalls when optimal entries are tiny.

    All restarts run side by side from random interior points; each keeps its
    best iterate and the winner is chosen by (loss, restart index).
    """
    if world.num_x > 32 or world.K > 8:
        raise ValueError("world too large for brute-force enumeration")
    rng = np.random.default_rng(0) if rng is None else rng
    coef = world.p_x[:, None] * (lam * world.p_label[None, :] - world.p_cond)
    G = project_floored(rng.dirichlet(np.ones(world.K), size=(restarts, world.num_x)))
    schemes = {"mirror": _mirror, "pgd": _pgd}
    if method not in schemes:
        raise ValueError(f"unknown method {method!r}")

    best = G.copy()
    best_loss = _row_losses(G, coef).sum(axis=-1)
    for G in schemes[method](G, coef, iters, step):
        cur = _row_losses(G, coef).sum(axis=-1)
        if not np.all(np.isfinite(cur)):
            raise NumericalAbort("non-finite loss during brute-force descent")
        better = cur < best_loss
        best[better] = G[better]
        best_loss = np.where(better, cur, best_loss)
    r = int(np.lexsort((np.arange(restarts), best_loss))[0])
    return BruteForceResult(best[r], float(best_loss[r]), r)


def max_row_tv(A, B) -> float:
    return max(total_variation(a, b) for a, b in zip(np.asarray(A), np.asarray(B)))


def closed_form_check(world: DiscreteWorld, lambdas, iters=2_000, step=1.0, seed=0,
                restarts=10, method="mirror"):
    """One row per lambda comparing brute force, closed form, and p_pi."""
    rows = []
    for i, lam in enumerate(lambdas):
        g_star = closed_form_g_star(world, lam)
        bf = brute_force_optimize(world, lam, iters, step,
                                  np.random.default_rng([seed, i]), restarts, method)
        rows.append({
            "lambda": float(lam),
            "bf_loss": bf.loss,
            "cf_loss": regularized_loss(g_star, world, lam),
            "tv_bf_cf": max_row_tv(bf.table, g_star),
            "tv_cf_pi": max_row_tv(g_star, world.p_pi),
        })
    return rows
