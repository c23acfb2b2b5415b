"""Fitness tasks and population evaluation.

A task maps a real-valued parameter vector and an evaluation seed to a
scalar reward (higher is better) and must be deterministic in both
arguments.  The bundled tasks are desk-scale stand-ins for the fine-
tuning regime: smooth bowls, a curved valley, and a small quantized
classifier with a piecewise-constant reward surface.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lattice import QuantLattice, affine_map, gate_apply
from .perturb import PerturbationDraw, realize_perturbation


class EvaluationError(RuntimeError):
    """A task raised while scoring one population member."""

    def __init__(self, member: int, cause: BaseException) -> None:
        super().__init__(f"task evaluation failed for member {member}: {cause!r}")
        self.member = member


@dataclass
class FitnessTask:
    name: str
    dimension: int
    evaluate: Callable[[np.ndarray, int], float] = field(repr=False)


def task_quadratic(dimension: int, optimum: float | Sequence[float] = 0.0) -> FitnessTask:
    """Reward ``-||x - optimum||^2``; maximum 0 at the optimum."""
    target = np.broadcast_to(np.asarray(optimum, dtype=np.float64), (dimension,)).copy()

    def evaluate(x: np.ndarray, eval_seed: int) -> float:
        diff = x - target
        return float(-np.dot(diff, diff))

    return FitnessTask(name="quadratic", dimension=dimension, evaluate=evaluate)


def task_rosenbrock(dimension: int) -> FitnessTask:
    """Negated Rosenbrock valley; maximum 0 at the all-ones vector."""
    if dimension < 2:
        raise ValueError("rosenbrock needs dimension >= 2")

    def evaluate(x: np.ndarray, eval_seed: int) -> float:
        head, tail = x[:-1], x[1:]
        value = np.sum(100.0 * (tail - head**2) ** 2 + (1.0 - head) ** 2)
        return float(-value)

    return FitnessTask(name="rosenbrock", dimension=dimension, evaluate=evaluate)


def task_noise(dimension: int) -> FitnessTask:
    """Structureless reward: deterministic per (x, eval_seed), no gradient.

    Hashing the parameter bytes gives a reward surface with no usable
    slope anywhere, which isolates the pure random-walk behaviour of
    stochastic update rules.
    """

    def evaluate(x: np.ndarray, eval_seed: int) -> float:
        digest = hashlib.blake2b(
            np.ascontiguousarray(x, dtype=np.float64).tobytes(),
            key=int(eval_seed).to_bytes(8, "little"),
            digest_size=8,
        ).digest()
        return int.from_bytes(digest, "little") / 2**64

    return FitnessTask(name="noise", dimension=dimension, evaluate=evaluate)


def _blob_dataset(
    dataset_seed: int,
    n_samples: int,
    n_features: int,
    majority: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Two seeded Gaussian blobs with a fixed class imbalance.

    Exactly ``majority`` class-0 rows, so a classifier stuck at the
    all-zero logits tie-break scores the majority fraction.
    """
    rng = np.random.Generator(np.random.Philox(key=dataset_seed))
    centers = rng.normal(0.0, 1.0, size=(2, n_features))
    labels = np.zeros(n_samples, dtype=np.int64)
    labels[majority:] = 1
    rng.shuffle(labels)
    samples = centers[labels] + rng.normal(0.0, 1.0, size=(n_samples, n_features))
    return samples, labels


def task_quantized_mlp(
    dataset_seed: int = 0,
    hidden: int = 24,
    n_features: int = 8,
    n_samples: int = 512,
) -> FitnessTask:
    """Accuracy of a tiny two-layer tanh classifier on seeded blobs.

    The parameter vector packs W1 (features x hidden), b1, W2 (hidden x 2)
    and b2 in that order.  Accuracy is piecewise constant in the weights,
    which mimics the sparse verifiable-reward setting this optimizer
    targets.
    """
    majority = int(0.6 * n_samples)
    samples, labels = _blob_dataset(dataset_seed, n_samples, n_features, majority)
    sizes = (n_features * hidden, hidden, hidden * 2, 2)
    dimension = sum(sizes)

    def evaluate(x: np.ndarray, eval_seed: int) -> float:
        if x.size != dimension:
            raise ValueError(f"expected {dimension} parameters, got {x.size}")
        o0, o1, o2, _ = np.cumsum(sizes)
        w1 = x[:o0].reshape(n_features, hidden)
        b1 = x[o0:o1]
        w2 = x[o1:o2].reshape(hidden, 2)
        b2 = x[o2:]
        logits = np.tanh(samples @ w1 + b1) @ w2 + b2
        return float(np.mean(np.argmax(logits, axis=1) == labels))

    return FitnessTask(name="quantized_mlp", dimension=dimension, evaluate=evaluate)


REGISTRY: dict[str, Callable[..., FitnessTask]] = {
    "quadratic": task_quadratic,
    "rosenbrock": task_rosenbrock,
    "quantized_mlp": task_quantized_mlp,
    "noise": task_noise,
}


def make_task(name: str, **params) -> FitnessTask:
    if name not in REGISTRY:
        raise ValueError(f"unknown task {name!r}; known: {sorted(REGISTRY)}")
    return REGISTRY[name](**params)


def _score_member(
    lattice: QuantLattice,
    draw: PerturbationDraw,
    task: FitnessTask,
    eval_seed: int,
    member: int,
) -> float:
    delta = realize_perturbation(draw)
    gated = gate_apply(lattice, delta)
    x = affine_map(lattice.weights + gated.applied, lattice.scale, lattice.zero_point)
    try:
        return float(task.evaluate(x, eval_seed))
    except Exception as exc:  # noqa: BLE001 - reported with the member index
        raise EvaluationError(member, exc) from exc


def evaluate_population(
    lattice: QuantLattice,
    member_seeds: Sequence[int],
    task: FitnessTask,
    sigma: float,
    *,
    eval_seed: int = 0,
    workers: int = 0,
) -> np.ndarray:
    """Score every member's gated perturbation of the current weights.

    ``workers == 0`` perturbs in place and reverts after each member;
    ``workers > 0`` fans out over a thread pool with one weight copy per
    member.  Both strategies return identical rewards and leave the
    lattice untouched.
    """
    if task.dimension != lattice.dimension:
        raise ValueError(
            f"task dimension {task.dimension} does not match lattice dimension {lattice.dimension}"
        )
    draws = [
        PerturbationDraw(seed=int(s), sigma=sigma, length=lattice.dimension)
        for s in member_seeds
    ]
    rewards = np.empty(len(draws), dtype=np.float64)
    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_score_member, lattice, draw, task, eval_seed, i)
                for i, draw in enumerate(draws)
            ]
            for i, future in enumerate(futures):
                rewards[i] = future.result()
        return rewards
    for i, draw in enumerate(draws):
        delta = realize_perturbation(draw)
        gated = gate_apply(lattice, delta)
        lattice.weights += gated.applied
        try:
            rewards[i] = float(task.evaluate(lattice.dequantize(), eval_seed))
        except Exception as exc:  # noqa: BLE001
            raise EvaluationError(i, exc) from exc
        finally:
            lattice.weights -= gated.applied
    return rewards
