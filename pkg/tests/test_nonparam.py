import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flywheel.core import DegenerateDistribution
from flywheel.nonparam import (DiscreteWorld, brute_force_optimize, closed_form_g_star,
                               default_world, lambda_star, closed_form_check, max_row_tv,
                               project_floored, project_simplex, regularized_loss)


def loss_by_enumeration(table, world, lam):
    """Sum over every (x, y) pair, written as plain loops."""
    total = 0.0
    for x in range(world.num_x):
        for y in range(world.K):
            logg = math.log(max(table[x][y], 1e-12))
            joint = world.p_x[x] * world.p_cond[x, y]
            product = world.p_x[x] * world.p_label[y]
            total += -joint * logg + lam * product * logg
    return total


@pytest.fixture(scope="module")
def world():
    return default_world()


def test_default_world_shape(world):
    assert (world.num_x, world.K, world.gamma_prime) == (6, 3, 0.7)
    assert np.max(np.abs(world.p_label - 1 / 3)) < 1e-12
    assert np.max(np.abs(world.p_cond.sum(axis=1) - 1)) < 1e-12


def test_world_validation():
    with pytest.raises(ValueError):
        DiscreteWorld([0.5, 0.5], [[1.0, 0.0]], 0.5)
    with pytest.raises(ValueError):
        DiscreteWorld([1.0], [[1.0, 0.0]], 1.0)


def test_regularized_loss_examples(world):
    P = world.p_cond
    entropy = -np.sum(world.p_x[:, None] * P * np.log(P))
    assert regularized_loss(P, world, 0.0) == pytest.approx(entropy, abs=1e-12)
    U = np.full((6, 3), 1 / 3)
    assert abs(regularized_loss(U, world, 1.0)) <= 1e-15
    T = np.random.default_rng(0).dirichlet(np.ones(3), size=6)
    for lam in (0.0, 0.2, 1.3):
        assert regularized_loss(T, world, lam) == pytest.approx(
            loss_by_enumeration(T, world, lam), abs=1e-12)


def test_lambda_star_examples(world):
    assert lambda_star(world) == pytest.approx(0.3, abs=1e-15)
    assert lambda_star(default_world(gamma_prime=0.999999)) == pytest.approx(0, abs=1e-5)
    assert lambda_star(default_world(seed=4, gamma_prime=0.5)) == pytest.approx(0.5, abs=1e-15)
    skewed = DiscreteWorld([0.5, 0.5], [[1.0, 0.0], [0.9, 0.1]], 0.7)
    with pytest.raises(ValueError):
        lambda_star(skewed)


def test_closed_form_examples(world):
    assert np.max(np.abs(closed_form_g_star(world, 0.0) - world.p_cond)) <= 1e-15
    assert np.max(np.abs(closed_form_g_star(world, lambda_star(world)) - world.p_pi)) <= 1e-12
    with pytest.raises(DegenerateDistribution):
        closed_form_g_star(world, 5.0)
    with pytest.raises(ValueError):
        closed_form_g_star(world, -0.1)


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_closed_form_rows_on_simplex(seed, frac):
    w = default_world(seed=seed)
    G = closed_form_g_star(w, frac * lambda_star(w))
    assert np.all(G >= 0) and np.max(np.abs(G.sum(axis=1) - 1)) <= 1e-12


def test_closed_form_continuous_in_lambda(world):
    def max_step(n):
        grid = np.linspace(0, lambda_star(world), n)
        tabs = [closed_form_g_star(world, l) for l in grid]
        return max(max_row_tv(a, b) for a, b in zip(tabs, tabs[1:]))

    coarse, fine = max_step(21), max_step(41)
    assert fine <= 0.6 * coarse + 1e-12


@given(st.integers(0, 2**31 - 1), st.integers(2, 7))
def test_projections(seed, K):
    V = np.random.default_rng(seed).normal(0, 3, size=(5, K))
    P = project_simplex(V)
    assert np.all(P >= 0) and np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12
    F = project_floored(V)
    assert np.all(F >= 1e-12 - 1e-18) and np.max(np.abs(F.sum(axis=1) - 1)) <= 1e-12
    # projecting a point already on the simplex leaves it there
    S = np.random.default_rng(seed).dirichlet(np.ones(K), size=3)
    assert np.max(np.abs(project_simplex(S) - S)) <= 1e-12


def test_brute_force_unregularized_is_data_law(world):
    bf = brute_force_optimize(world, 0.0, rng=np.random.default_rng(1))
    assert max_row_tv(bf.table, world.p_cond) <= 1e-3


def test_brute_force_at_lambda_star(world):
    lam = lambda_star(world)
    bf = brute_force_optimize(world, lam, rng=np.random.default_rng(2))
    assert max_row_tv(bf.table, world.p_pi) <= 1e-3
    assert max_row_tv(bf.table, closed_form_g_star(world, lam)) <= 1e-3
    assert bf.loss <= regularized_loss(closed_form_g_star(world, lam), world, lam) + 1e-6


def test_brute_force_grid_matches_closed_form(world):
    lams = np.linspace(0, lambda_star(world), 6)
    for row in closed_form_check(world, lams, seed=3):
        assert row["bf_loss"] <= row["cf_loss"] + 1e-6
        assert row["tv_bf_cf"] <= 1e-3
    assert closed_form_check(world, [lambda_star(world)])[0]["tv_cf_pi"] <= 1e-12


def test_pgd_on_unregularized_problem(world):
    bf = brute_force_optimize(world, 0.0, iters=3000, step=0.05,
                              rng=np.random.default_rng(0), method="pgd")
    assert max_row_tv(bf.table, world.p_cond) <= 1e-3


def test_brute_force_rejects_bad_arguments(world):
    with pytest.raises(ValueError):
        brute_force_optimize(world, 0.1, method="newton")
    big = DiscreteWorld(np.full(40, 1 / 40), np.full((40, 2), 0.5), 0.5)
    with pytest.raises(ValueError):
        brute_force_optimize(big, 0.1)


def test_brute_force_is_deterministic(world):
    a = brute_force_optimize(world, 0.1, rng=np.random.default_rng(7), iters=300)
    b = brute_force_optimize(world, 0.1, rng=np.random.default_rng(7), iters=300)
    assert a.table.tobytes() == b.table.tobytes() and a.restart == b.restart
