"""Seeded integer perturbations.

Every population member owns one deterministic stream keyed by a 64-bit
seed derived from (master_seed, generation, member).  A stream is
consumed in a fixed order: first the Gaussian block (``length`` normals),
then the rounding block (``length`` uniforms).  Replays that rebuild a
perturbation from its seed therefore reproduce it bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
# Salt for the auxiliary stream used by stochastic update commits; keeps it
# disjoint from every member stream of the same master seed.
_UPDATE_SALT = 0xA5A5F00DD00DF0F0


def mix64(value: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche on 64-bit integers."""
    x = (value + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * _MIX_A) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX_B) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_member_seed(master_seed: int, generation: int, member: int) -> int:
    """Per-member stream key; collision-free in practice across the run."""
    if generation < 0 or member < 0:
        raise ValueError("generation and member must be non-negative")
    h = mix64(master_seed & _MASK64)
    h = mix64(h ^ (generation & _MASK64))
    h = mix64(h ^ (member & _MASK64))
    return h


def derive_generation_seeds(master_seed: int, generation: int, count: int) -> np.ndarray:
    """Vectorized ``derive_member_seed`` for members ``0..count-1``."""
    h = mix64(mix64(master_seed & _MASK64) ^ (generation & _MASK64))
    x = np.uint64(h) ^ np.arange(count, dtype=np.uint64)
    x = (x + np.uint64(_GOLDEN))
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX_A)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX_B)
    return x ^ (x >> np.uint64(31))


def derive_update_seed(master_seed: int, generation: int) -> int:
    """Stream key for randomness consumed by the update rule itself."""
    return derive_member_seed((master_seed ^ _UPDATE_SALT) & _MASK64, generation, 0)


@dataclass(frozen=True)
class PerturbationDraw:
    """Recipe for one member's perturbation: (seed, sigma, length)."""

    seed: int
    sigma: float
    length: int

    def __post_init__(self) -> None:
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.length <= 0:
            raise ValueError(f"length must be positive, got {self.length}")


def stream(seed: int) -> np.random.Generator:
    """Counter-based generator for one seed; Philox keeps replay cheap."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


def stochastic_round(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Randomized rounding: floor plus a Bernoulli carry on the fraction.

    For each component ``x``, returns ``floor(x) + b`` with
    ``b ~ Bernoulli(x - floor(x))``, so the result is an integer within
    1 of ``x`` and equals ``x`` in expectation over ``b``.
    """
    values = np.asarray(values, dtype=np.float64)
    lower = np.floor(values)
    frac = values - lower
    carry = rng.random(values.shape) < frac
    return (lower + carry).astype(np.int64)


def gaussian_block(seed: int, length: int) -> np.ndarray:
    """The Gaussian prefix of a member stream, without the rounding block."""
    return stream(seed).standard_normal(length)


def realize_perturbation(draw: PerturbationDraw) -> np.ndarray:
    """Materialize the integer perturbation for one member.

    Gaussian block first, rounding block second; the same draw always
    yields the same vector.
    """
    rng = stream(draw.seed)
    eps = rng.standard_normal(draw.length)
    return stochastic_round(draw.sigma * eps, rng)
