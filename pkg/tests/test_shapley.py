"""Exact, sampled, and permutation Shapley engines on coalition games."""
from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from pytest import approx

from noisyrca.shapley import (
    TooManyPlayers,
    shapley_classic,
    shapley_permutation,
    shapley_sampling,
)


def additive_game(coeffs: np.ndarray):
    def v(mask: np.ndarray) -> float:
        return float(np.dot(coeffs, mask))

    return v


def size_squared(mask: np.ndarray) -> float:
    return float(mask.sum()) ** 2


def random_game(d: int, seed: int):
    """Tabular game: one independent normal value per coalition."""
    rng = np.random.default_rng(seed)
    table = rng.normal(size=2**d)
    table[0] = 0.0

    def v(mask: np.ndarray) -> float:
        code = int(np.dot(mask, 1 << np.arange(d)))
        return float(table[code])

    return v


def permutation_oracle(d: int, v) -> np.ndarray:
    """Average marginal contribution over all d! orderings."""
    phi = np.zeros(d)
    for order in itertools.permutations(range(d)):
        mask = np.zeros(d)
        before = v(mask)
        for j in order:
            mask[j] = 1.0
            after = v(mask)
            phi[j] += after - before
            before = after
    return phi / math.factorial(d)


# ------------------------------------------------------------------- classic


def test_classic_single_player():
    v = lambda m: 3.0 * m[0] + 2.0  # noqa: E731
    phi = shapley_classic([0], v)
    assert phi == approx([3.0])  # v({0}) - v(empty)


def test_classic_additive_game():
    coeffs = np.asarray([1.5, -2.0, 0.25, 4.0])
    phi = shapley_classic(list(range(4)), additive_game(coeffs))
    assert phi == approx(coeffs, abs=1e-12)


def test_classic_size_squared_three_players():
    phi = shapley_classic([0, 1, 2], size_squared)
    assert phi == approx([3.0, 3.0, 3.0], abs=1e-12)


@pytest.mark.parametrize("d,seed", [(1, 0), (2, 1), (3, 2), (4, 3), (5, 4)])
def test_classic_matches_permutation_enumeration(d, seed):
    v = random_game(d, seed)
    phi = shapley_classic(list(range(d)), v)
    assert phi == approx(permutation_oracle(d, v), rel=1e-9, abs=1e-12)


def test_classic_evaluates_each_subset_once():
    d = 10
    calls = {"rows": 0}

    def v_many(masks: np.ndarray) -> np.ndarray:
        calls["rows"] += masks.shape[0]
        return masks.sum(axis=1) ** 2

    shapley_classic(list(range(d)), lambda m: size_squared(m), v_many=v_many)
    assert calls["rows"] == 2**d


def test_classic_refuses_too_many_players():
    v = size_squared
    with pytest.raises(TooManyPlayers):
        shapley_classic(list(range(21)), v)
    with pytest.raises(TooManyPlayers):
        shapley_classic(list(range(6)), v, hard_cap=5)
    # streaming mode lifts the cap
    phi = shapley_classic(list(range(6)), v, hard_cap=5, early_stop=0.01,
                          rng_seed=0)
    assert phi.shape == (6,)


def test_classic_streaming_close_to_exact():
    d = 8
    v = random_game(d, 7)
    exact = shapley_classic(list(range(d)), v)
    est = shapley_classic(list(range(d)), v, early_stop=1e-3, rng_seed=11)
    assert est == approx(exact, abs=0.1)


def test_classic_streaming_validation():
    v = size_squared
    with pytest.raises(ValueError):
        shapley_classic([0, 1], v, early_stop=0.01)  # rng_seed missing
    with pytest.raises(ValueError):
        shapley_classic([0, 1], v, early_stop=0.0, rng_seed=0)
    with pytest.raises(ValueError):
        shapley_classic([0, 1], v, early_stop=-1.0, rng_seed=0)


# ------------------------------------------------------------------ sampling


def test_sampling_additive_game_is_exact():
    coeffs = np.asarray([2.0, -1.0, 0.5, 3.0, -0.25])
    phi = shapley_sampling(list(range(5)), additive_game(coeffs), 40, rng_seed=0)
    assert phi == approx(coeffs, abs=1e-8)  # the additive surrogate is the game


def test_sampling_size_squared_within_five_percent():
    # the additive surrogate cannot represent |Q|^2, so the estimate converges
    # slowly; 8000 subsets puts this seed at ~1.5% error
    d = 5
    phi = shapley_sampling(list(range(d)), size_squared, 8000, rng_seed=2)
    assert phi == approx(np.full(d, 5.0), rel=0.05)


def test_sampling_efficiency_is_exact():
    d = 6
    v = random_game(d, 13)
    phi = shapley_sampling(list(range(d)), v, 200, rng_seed=5)
    full = v(np.ones(d))
    assert phi.sum() == approx(full - v(np.zeros(d)), abs=1e-10)


def test_sampling_requires_enough_subsets():
    with pytest.raises(ValueError):
        shapley_sampling([0, 1, 2], size_squared, 4, rng_seed=0)


def test_sampling_single_player_gap():
    v = lambda m: 3.0 * m[0] + 2.0  # noqa: E731
    phi = shapley_sampling([0], v, 10, rng_seed=0)
    assert phi == approx([3.0])


# --------------------------------------------------------------- permutation


def test_permutation_additive_game_is_exact():
    coeffs = np.asarray([1.0, -4.0, 2.5])
    phi = shapley_permutation(list(range(3)), additive_game(coeffs), 3,
                              rng_seed=2)
    assert phi == approx(coeffs, abs=1e-12)  # every ordering gives c exactly


def test_permutation_size_squared_within_five_percent():
    d = 5
    phi = shapley_permutation(list(range(d)), size_squared, 5000, rng_seed=9)
    assert phi == approx(np.full(d, 5.0), rel=0.05)


def test_permutation_efficiency_telescopes():
    d = 6
    v = random_game(d, 21)
    phi = shapley_permutation(list(range(d)), v, 7, rng_seed=4)
    assert phi.sum() == approx(v(np.ones(d)) - v(np.zeros(d)), abs=1e-10)


def test_permutation_single_draw_is_unbiased():
    # |Q|^2 with d=3: a player at position p contributes 2p+1, so one draw
    # averages to 3 per player over uniform positions
    runs = 4000
    acc = np.zeros(3)
    for seed in range(runs):
        acc += shapley_permutation([0, 1, 2], size_squared, 1, rng_seed=seed)
    mean = acc / runs
    se = np.sqrt(np.mean((np.asarray([1, 3, 5]) - 3.0) ** 2) / runs)
    assert np.all(np.abs(mean - 3.0) < 4 * se)


def test_permutation_instance_factory_called_per_draw():
    draws = {"n": 0}

    def factory(rng: np.random.Generator):
        draws["n"] += 1
        k = float(draws["n"])
        return (lambda m: k * float(m.sum())), None

    m_draws = 8
    phi = shapley_permutation([0, 1], None, m_draws, rng_seed=0,
                              instance_factory=factory)
    assert draws["n"] == m_draws
    # draw m scores every player k=m, so the average is (1 + ... + M) / M
    assert phi == approx(np.full(2, (m_draws + 1) / 2), abs=1e-12)


def test_permutation_validation():
    with pytest.raises(ValueError):
        shapley_permutation([0, 1], size_squared, 0, rng_seed=0)


# ---------------------------------------------------------------- edge cases


def test_zero_players_all_engines():
    assert shapley_classic([], size_squared).shape == (0,)
    assert shapley_sampling([], size_squared, 10, rng_seed=0).shape == (0,)
    assert shapley_permutation([], size_squared, 5, rng_seed=0).shape == (0,)


def test_engines_agree_on_small_random_games():
    d = 4
    v = random_game(d, 31)
    exact = shapley_classic(list(range(d)), v)
    samp = shapley_sampling(list(range(d)), v, 3000, rng_seed=1)
    perm = shapley_permutation(list(range(d)), v, 4000, rng_seed=1)
    scale = np.abs(exact).max()
    assert np.abs(samp - exact).max() < 0.05 * scale
    assert np.abs(perm - exact).max() < 0.05 * scale
