"""Search-gradient estimation from seeded perturbations and rewards."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .perturb import PerturbationDraw, gaussian_block, realize_perturbation

# Guard added to the reward standard deviation before dividing; a
# degenerate population (all rewards equal) normalizes to all zeros.
STD_GUARD = 1e-8


def normalize_rewards(rewards: np.ndarray, *, rank: bool = False) -> np.ndarray:
    """Z-score a population's rewards into fitness shaping weights.

    With ``rank=True``, rewards are replaced by centered ranks in
    [-0.5, 0.5] instead (ties broken by member order); the default
    z-score keeps the raw reward spacing.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size < 2:
        raise ValueError(f"population must have at least 2 members, got {rewards.size}")
    if rank:
        order = np.argsort(rewards, kind="stable")
        ranks = np.empty(rewards.size, dtype=np.float64)
        ranks[order] = np.arange(rewards.size, dtype=np.float64)
        return ranks / (rewards.size - 1) - 0.5
    std = float(np.std(rewards))
    return (rewards - np.mean(rewards)) / (std + STD_GUARD)


def make_draws(seeds: Sequence[int], sigma: float, length: int) -> list[PerturbationDraw]:
    return [PerturbationDraw(seed=int(s), sigma=sigma, length=length) for s in seeds]


def estimate_gradient(
    draws: Sequence[PerturbationDraw],
    fitness: np.ndarray,
    sigma: float,
) -> np.ndarray:
    """Fitness-weighted mean of integer perturbations, scaled by 1/(N*sigma).

    Each perturbation is rebuilt from its draw and folded into a float64
    accumulator in member order, so only one d-length delta is alive at a
    time and a replayed estimate is bit-identical to the live one.
    """
    fitness = np.asarray(fitness, dtype=np.float64)
    if len(draws) != fitness.size:
        raise ValueError(f"{len(draws)} draws but {fitness.size} fitness values")
    if fitness.size < 2:
        raise ValueError(f"population must have at least 2 members, got {fitness.size}")
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    acc = np.zeros(draws[0].length, dtype=np.float64)
    for draw, weight in zip(draws, fitness):
        acc += weight * realize_perturbation(draw)
    return acc / (len(draws) * sigma)


def estimate_gradient_gaussian(
    seeds: Sequence[int],
    fitness: np.ndarray,
    sigma: float,
    length: int,
) -> np.ndarray:
    """Classical-space variant: aggregates the raw Gaussian blocks instead
    of the integerized perturbations.  Used by the continuous baseline."""
    fitness = np.asarray(fitness, dtype=np.float64)
    if len(seeds) != fitness.size:
        raise ValueError(f"{len(seeds)} seeds but {fitness.size} fitness values")
    if fitness.size < 2:
        raise ValueError(f"population must have at least 2 members, got {fitness.size}")
    if not sigma > 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    acc = np.zeros(length, dtype=np.float64)
    for seed, weight in zip(seeds, fitness):
        acc += weight * gaussian_block(int(seed), length)
    return acc / (len(seeds) * sigma)
