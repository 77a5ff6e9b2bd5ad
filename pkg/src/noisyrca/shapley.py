"""Shapley values of a set function: exact, kernel-regression, permutation.

Subsets are binary masks (numpy arrays of 0/1 over the ordered player list).
A value function takes one mask and returns a real; callers that can batch
may also supply v_many(masks) -> values for a (B, d) mask matrix. All
randomness flows through explicit seeds.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

ValueFunction = Callable[[np.ndarray], float]
BatchValueFunction = Callable[[np.ndarray], np.ndarray]

HARD_CAP = 20
EARLY_STOP_WINDOW = 25


class TooManyPlayers(ValueError):
    """Exact enumeration refused beyond the player cap."""


class DegenerateSystem(RuntimeError):
    """The kernel regression stayed singular after resampling."""


def _as_batch(
    v: ValueFunction, v_many: BatchValueFunction | None
) -> BatchValueFunction:
    if v_many is not None:
        return v_many
    return lambda masks: np.asarray([float(v(m)) for m in masks], dtype=float)


def _subset_weights(d: int) -> np.ndarray:
    """w[s] = s! (d - s - 1)! / d! for s = 0..d-1."""
    fact = [math.factorial(k) for k in range(d + 1)]
    return np.asarray(
        [fact[s] * fact[d - s - 1] / fact[d] for s in range(d)], dtype=float
    )


def shapley_classic(
    players: Sequence,
    v: ValueFunction,
    *,
    early_stop: float | None = None,
    hard_cap: int = HARD_CAP,
    rng_seed: int | None = None,
    v_many: BatchValueFunction | None = None,
    max_rounds: int = 20000,
) -> np.ndarray:
    """Exact Shapley values by full subset enumeration.

    phi_j = sum over subsets Q of P without j of
            |Q|! (|P| - |Q| - 1)! / |P|! * (v(Q + j) - v(Q)).

    Exact mode evaluates each of the 2^d subsets exactly once and refuses
    more than hard_cap players. With early_stop set, subsets stream in
    random order per player instead: each draw takes a uniformly random
    prefix size then a uniform subset of that size, whose marginal is an
    unbiased sample of phi_j, and the run halts once every player's running
    mean moved less than the tolerance for EARLY_STOP_WINDOW consecutive
    draws (rng_seed required).
    """
    d = len(players)
    if d == 0:
        return np.zeros(0)
    evaluate = _as_batch(v, v_many)
    if early_stop is None:
        if d > hard_cap:
            raise TooManyPlayers(
                f"{d} players need 2^{d} evaluations; pass early_stop to stream"
            )
        return _classic_exact(d, evaluate)
    if early_stop <= 0:
        raise ValueError("early_stop tolerance must be positive")
    if rng_seed is None:
        raise ValueError("early_stop streaming requires rng_seed")
    return _classic_streaming(d, evaluate, early_stop, rng_seed, max_rounds)


def _classic_exact(d: int, evaluate: BatchValueFunction) -> np.ndarray:
    codes = np.arange(2**d, dtype=np.int64)
    masks = (codes[:, None] >> np.arange(d)) & 1
    values = evaluate(masks.astype(float))
    sizes = masks.sum(axis=1)
    weights = _subset_weights(d)
    phi = np.zeros(d)
    for j in range(d):
        without = (codes >> j) & 1 == 0
        q = codes[without]
        phi[j] = np.sum(
            weights[sizes[q]] * (values[q + (1 << j)] - values[q])
        )
    return phi


def _classic_streaming(
    d: int,
    evaluate: BatchValueFunction,
    tol: float,
    rng_seed: int,
    max_rounds: int,
) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    sums = np.zeros(d)
    count = 0
    means = np.zeros(d)
    stable = 0
    for _ in range(max_rounds):
        masks = np.zeros((2 * d, d))
        for j in range(d):
            size = int(rng.integers(0, d))
            others = np.delete(np.arange(d), j)
            chosen = rng.choice(others, size=size, replace=False)
            masks[2 * j, chosen] = 1.0
            masks[2 * j + 1, chosen] = 1.0
            masks[2 * j + 1, j] = 1.0
        values = evaluate(masks)
        deltas = values[1::2] - values[0::2]
        sums += deltas
        count += 1
        new_means = sums / count
        if np.max(np.abs(new_means - means)) < tol:
            stable += 1
        else:
            stable = 0
        means = new_means
        if stable >= EARLY_STOP_WINDOW:
            break
    return means


def shapley_sampling(
    players: Sequence,
    v: ValueFunction,
    num_subsets: int,
    rng_seed: int,
    *,
    v_many: BatchValueFunction | None = None,
    max_attempts: int = 3,
) -> np.ndarray:
    """Shapley values by kernel-weighted least squares on sampled subsets.

    Subsets of size 1..d-1 are drawn with probability proportional to the
    kernel (d - 1) / (C(d, s) s (d - s)); repeats accumulate as regression
    weights. The additive surrogate u(Q) = v(empty) + sum_{i in Q} phi_i is
    fitted to v on the sample, subject to the exact full-set constraint
    sum phi_i = v(P) - v(empty), via the KKT system. A singular system is
    retried with fresh subsets up to max_attempts before raising
    DegenerateSystem.
    """
    d = len(players)
    if d == 0:
        return np.zeros(0)
    if num_subsets < d + 2:
        raise ValueError(f"num_subsets must be at least d + 2 = {d + 2}")
    evaluate = _as_batch(v, v_many)
    empty = float(evaluate(np.zeros((1, d)))[0])
    full = float(evaluate(np.ones((1, d)))[0])
    gap = full - empty
    if d == 1:
        return np.asarray([gap])
    sizes = np.arange(1, d)
    size_probs = 1.0 / (sizes * (d - sizes))
    size_probs = size_probs / size_probs.sum()
    seeds = np.random.SeedSequence(rng_seed).spawn(max_attempts)
    for attempt in range(max_attempts):
        rng = np.random.default_rng(seeds[attempt])
        counts: dict[bytes, int] = {}
        drawn = rng.choice(sizes, size=num_subsets, p=size_probs)
        for s in drawn:
            mask = np.zeros(d, dtype=np.int8)
            mask[rng.choice(d, size=int(s), replace=False)] = 1
            key = mask.tobytes()
            counts[key] = counts.get(key, 0) + 1
        masks = np.asarray(
            [np.frombuffer(key, dtype=np.int8) for key in counts], dtype=float
        )
        weights = np.asarray(list(counts.values()), dtype=float)
        values = evaluate(masks)
        Z = masks
        C = weights
        A = Z.T @ (C[:, None] * Z)
        b = Z.T @ (C * (values - empty))
        kkt = np.zeros((d + 1, d + 1))
        kkt[:d, :d] = 2.0 * A
        kkt[:d, d] = 1.0
        kkt[d, :d] = 1.0
        rhs = np.concatenate([2.0 * b, [gap]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(sol)):
            continue
        return sol[:d]
    raise DegenerateSystem(
        f"kernel regression singular after {max_attempts} attempts"
    )


def shapley_permutation(
    players: Sequence,
    v: ValueFunction,
    num_permutations: int,
    rng_seed: int,
    *,
    v_many: BatchValueFunction | None = None,
    instance_factory: Callable[
        [np.random.Generator], tuple[ValueFunction, BatchValueFunction | None]
    ]
    | None = None,
) -> np.ndarray:
    """Shapley values by permutation sampling.

    Each draw m takes a uniform permutation and credits every player with
    v(predecessors + player) - v(predecessors) along it; the estimate is the
    average over num_permutations draws. When instance_factory is given it
    is called once per draw with the engine rng to realize a fresh value
    function (a new reference instance for the out-of-subset coordinates),
    making each draw an (instance, permutation) sample.
    """
    d = len(players)
    if num_permutations < 1:
        raise ValueError("num_permutations must be at least 1")
    if d == 0:
        return np.zeros(0)
    rng = np.random.default_rng(rng_seed)
    phi = np.zeros(d)
    base = _as_batch(v, v_many) if instance_factory is None else None
    for _ in range(num_permutations):
        if instance_factory is not None:
            v_m, v_m_many = instance_factory(rng)
            evaluate = _as_batch(v_m, v_m_many)
        else:
            assert base is not None
            evaluate = base
        order = rng.permutation(d)
        chain = np.zeros((d + 1, d))
        for pos, j in enumerate(order):
            chain[pos + 1] = chain[pos]
            chain[pos + 1, j] = 1.0
        values = evaluate(chain)
        phi[order] += values[1:] - values[:-1]
    return phi / num_permutations
