"""Update engines: integer commits with accumulated rounding feedback.

The central rule never applies a raw step.  Each generation folds the
scaled search gradient into a carry-over residual, commits only the
rounded integer part through the boundary gate, and keeps the rounding
remainder for later generations.  The residual can be stored densely or
rebuilt on demand by replaying a short window of (seed, fitness) records,
which shrinks the persistent optimizer state from O(d) to O(K * N).
"""

from __future__ import annotations

import struct
import time
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .analysis import boundary_hit_ratio, update_ratio
from .gradient import (
    estimate_gradient,
    estimate_gradient_gaussian,
    make_draws,
    normalize_rewards,
)
from .lattice import GatedDelta, QuantLattice, affine_map, gate_apply
from .perturb import (
    derive_generation_seeds,
    derive_update_seed,
    gaussian_block,
    stochastic_round,
    stream,
)
from .tasks import EvaluationError, FitnessTask, evaluate_population

MODES = (
    "full_residual",
    "stateless_replay",
    "naive_round",
    "naive_stochastic_round",
    "continuous_es",
)

# A truncated replay window drops contributions older than K generations;
# their weight decays like gamma**K, so configs above this bound lose a
# non-negligible part of the carry.
TRUNCATION_BOUND = 1e-2


class ReplayTruncationWarning(UserWarning):
    """Replay window too short for the requested decay factor."""


@dataclass
class OptimizerConfig:
    alpha: float
    gamma: float
    sigma: float
    population: int
    window: int = 50
    mode: str = "full_residual"
    rank_fitness: bool = False

    def __post_init__(self) -> None:
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.population < 2:
            raise ValueError(f"population must be >= 2, got {self.population}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "stateless_replay" and self.gamma**self.window > TRUNCATION_BOUND:
            warnings.warn(
                f"gamma**window = {self.gamma ** self.window:.3g} exceeds "
                f"{TRUNCATION_BOUND:g}; truncated replay will drop a "
                "non-negligible part of the residual",
                ReplayTruncationWarning,
                stacklevel=2,
            )


@dataclass
class ResidualState:
    """Dense carry-over residual.  After an ungated commit its entries lie
    in [-0.5, 0.5]; a gated component keeps the full unapplied value."""

    residual: np.ndarray

    @classmethod
    def zeros(cls, dimension: int) -> "ResidualState":
        return cls(np.zeros(dimension, dtype=np.float64))


@dataclass
class GenerationRecord:
    """Everything needed to replay one generation's update: the member
    seeds and their post-normalization fitness."""

    generation: int
    member_seeds: np.ndarray
    fitness: np.ndarray

    def __post_init__(self) -> None:
        if self.generation < 0:
            raise ValueError(f"generation must be non-negative, got {self.generation}")
        seeds = np.asarray(self.member_seeds, dtype=np.uint64)
        fitness = np.asarray(self.fitness, dtype=np.float64)
        if seeds.shape != fitness.shape or seeds.ndim != 1:
            raise ValueError("member_seeds and fitness must be equal-length vectors")
        self.member_seeds = seeds
        self.fitness = fitness


class HistoryWindow:
    """FIFO ring of the most recent GenerationRecords, capacity K."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._records: deque[GenerationRecord] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[GenerationRecord]:
        # Oldest first: replay order.
        return iter(self._records)

    @property
    def last_generation(self) -> int | None:
        return self._records[-1].generation if self._records else None

    def append(self, record: GenerationRecord) -> None:
        last = self.last_generation
        if last is not None and record.generation <= last:
            raise ValueError(
                f"records must arrive in increasing generation order; "
                f"got {record.generation} after {last}"
            )
        self._records.append(record)

    # -- interchange form: plain JSON with seeds as decimal integers ----

    def to_json_obj(self) -> list[dict]:
        return [
            {
                "generation": int(rec.generation),
                "member_seeds": [int(s) for s in rec.member_seeds],
                "fitness": [float(f) for f in rec.fitness],
            }
            for rec in self._records
        ]

    @classmethod
    def from_json_obj(cls, obj: Sequence[dict], capacity: int) -> "HistoryWindow":
        window = cls(capacity)
        for item in obj:
            window.append(
                GenerationRecord(item["generation"], item["member_seeds"], item["fitness"])
            )
        return window

    # -- compact form: the persistent state audited by the memory budget --

    def to_bytes(self) -> bytes:
        """Little-endian dump: 8-byte header, then per record an 8-byte
        generation, 4-byte count, 4 pad bytes, N seeds, N fitness."""
        parts = [struct.pack("<II", 1, len(self._records))]
        for rec in self._records:
            n = rec.member_seeds.size
            parts.append(struct.pack("<QII", rec.generation, n, 0))
            parts.append(rec.member_seeds.astype("<u8").tobytes())
            parts.append(rec.fitness.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, capacity: int) -> "HistoryWindow":
        version, count = struct.unpack_from("<II", data, 0)
        if version != 1:
            raise ValueError(f"unsupported history format version {version}")
        window = cls(capacity)
        offset = 8
        for _ in range(count):
            generation, n, _pad = struct.unpack_from("<QII", data, offset)
            offset += 16
            seeds = np.frombuffer(data, dtype="<u8", count=n, offset=offset)
            offset += 8 * n
            fitness = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            window.append(GenerationRecord(generation, seeds, fitness))
        return window


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Nearest integer, ties away from zero: 0.5 -> 1, -0.5 -> -1."""
    values = np.asarray(values, dtype=np.float64)
    return np.where(
        values >= 0.0, np.floor(values + 0.5), np.ceil(values - 0.5)
    ).astype(np.int64)


def step_full_residual(
    lattice: QuantLattice,
    state: ResidualState,
    g: np.ndarray,
    cfg: OptimizerConfig,
) -> tuple[GatedDelta, ResidualState]:
    """One commit with a dense residual.

    The carry update is gate-aware: a suppressed component leaves its
    whole pre-round value in the residual, so nothing the boundary
    swallowed is forgotten.
    """
    u = cfg.alpha * g + cfg.gamma * state.residual
    gated = gate_apply(lattice, round_half_away(u))
    lattice.commit(gated)
    return gated, ResidualState(u - gated.applied)


def rematerialize_residual(
    lattice: QuantLattice,
    history: HistoryWindow,
    cfg: OptimizerConfig,
) -> np.ndarray:
    """Rebuild the carry by replaying the recorded window from zero.

    Each record's gradient is reconstructed from its seeds and fitness,
    then pushed through the same round/gate/carry recurrence the live
    step uses.  Gating is checked against the current weights.  Pure:
    does not modify the lattice.  Cost grows linearly with len(history).
    """
    residual = np.zeros(lattice.dimension, dtype=np.float64)
    for rec in history:
        draws = make_draws(rec.member_seeds, cfg.sigma, lattice.dimension)
        g = estimate_gradient(draws, rec.fitness, cfg.sigma)
        u = cfg.alpha * g + cfg.gamma * residual
        gated = gate_apply(lattice, round_half_away(u))
        residual = u - gated.applied
    return residual


def step_stateless(
    lattice: QuantLattice,
    history: HistoryWindow,
    new_seeds: Sequence[int],
    new_fitness: np.ndarray,
    cfg: OptimizerConfig,
    *,
    generation: int,
    g: np.ndarray | None = None,
) -> tuple[GatedDelta, np.ndarray, float]:
    """One commit without a stored residual.

    Replays the history window to rematerialize the carry, applies the
    new generation on top, commits, then enqueues the new record.  The
    only state that survives between calls is ``history``.  Returns the
    gated delta, the post-step residual (transient, for reporting), and
    the replay wall time in seconds.
    """
    t0 = time.perf_counter()
    residual = rematerialize_residual(lattice, history, cfg)
    replay_seconds = time.perf_counter() - t0
    if g is None:
        draws = make_draws(new_seeds, cfg.sigma, lattice.dimension)
        g = estimate_gradient(draws, np.asarray(new_fitness, dtype=np.float64), cfg.sigma)
    u = cfg.alpha * g + cfg.gamma * residual
    gated = gate_apply(lattice, round_half_away(u))
    lattice.commit(gated)
    history.append(GenerationRecord(generation, new_seeds, new_fitness))
    return gated, u - gated.applied, replay_seconds


def step_naive(
    lattice: QuantLattice,
    g: np.ndarray,
    cfg: OptimizerConfig,
    rng: np.random.Generator | None = None,
) -> GatedDelta:
    """Carry-free baselines: quantize the scaled gradient and commit.

    ``naive_round`` rounds deterministically and stalls whenever every
    component of ``alpha * g`` is below 0.5 in magnitude;
    ``naive_stochastic_round`` rounds randomly (needs ``rng``) and is
    unbiased per step at the price of a random-walk variance.
    """
    scaled = cfg.alpha * g
    if cfg.mode == "naive_round":
        attempted = round_half_away(scaled)
    elif cfg.mode == "naive_stochastic_round":
        if rng is None:
            raise ValueError("naive_stochastic_round requires an rng")
        attempted = stochastic_round(scaled, rng)
    else:
        raise ValueError(f"step_naive does not handle mode {cfg.mode!r}")
    gated = gate_apply(lattice, attempted)
    lattice.commit(gated)
    return gated


CSV_COLUMNS = (
    "generation",
    "mean_reward",
    "best_reward",
    "fitness_std",
    "update_ratio",
    "hit_ratio",
    "residual_linf",
    "theta_deviation_linf",
    "replay_ms",
)


@dataclass
class GenerationReport:
    """One trajectory row.  ``replay_ms`` is pinned to 0.0 so repeated
    runs stay byte-identical; measured replay times are reported out of
    band in RunResult.replay_ms_measured."""

    generation: int
    mean_reward: float
    best_reward: float
    fitness_std: float
    update_ratio: float
    hit_ratio: float
    residual_linf: float
    theta_deviation_linf: float
    replay_ms: float = 0.0

    def to_row(self) -> list[str]:
        return [
            str(self.generation),
            repr(self.mean_reward),
            repr(self.best_reward),
            repr(self.fitness_std),
            repr(self.update_ratio),
            repr(self.hit_ratio),
            repr(self.residual_linf),
            repr(self.theta_deviation_linf),
            repr(self.replay_ms),
        ]


@dataclass
class RunResult:
    reports: list[GenerationReport]
    lattice: QuantLattice
    history: HistoryWindow | None
    initial_weights: np.ndarray
    final_residual: np.ndarray | None
    continuous_weights: np.ndarray | None
    alpha_g_linf: list[float]
    replay_ms_measured: list[float]
    alpha_g_steps: list[np.ndarray] | None
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)


def run(
    cfg: OptimizerConfig,
    task: FitnessTask,
    lattice: QuantLattice,
    master_seed: int,
    generations: int,
    *,
    eval_seed: int = 0,
    workers: int = 0,
    instrument: bool = False,
    snapshot_generations: Sequence[int] | None = None,
    on_report: Callable[[GenerationReport], None] | None = None,
) -> RunResult:
    """Execute T generations of the configured mode on one lattice.

    Deterministic given (cfg, task, lattice, master_seed, generations,
    eval_seed): member seeds are derived per (master_seed, generation,
    member), and every downstream draw comes from those streams.  The
    lattice is updated in place.

    With ``instrument`` the runner also tracks the ideal unquantized
    trajectory (initial weights plus the running sum of alpha * g) and
    keeps per-step copies of alpha * g for post-hoc decomposition.
    """
    if generations < 0:
        raise ValueError(f"generations must be non-negative, got {generations}")
    if task.dimension != lattice.dimension:
        raise ValueError(
            f"task dimension {task.dimension} does not match lattice dimension {lattice.dimension}"
        )
    d = lattice.dimension
    wanted_snapshots = frozenset(int(t) for t in snapshot_generations or ())

    state = ResidualState.zeros(d) if cfg.mode == "full_residual" else None
    history = HistoryWindow(cfg.window) if cfg.mode == "stateless_replay" else None
    w_float = (
        lattice.weights.astype(np.float64) if cfg.mode == "continuous_es" else None
    )

    initial_weights = lattice.weights.copy()
    ideal = lattice.weights.astype(np.float64) if instrument else None
    alpha_g_steps: list[np.ndarray] | None = [] if instrument else None

    reports: list[GenerationReport] = []
    alpha_g_linf: list[float] = []
    replay_ms_measured: list[float] = []
    snapshots: dict[int, np.ndarray] = {}

    for t in range(generations):
        seeds = derive_generation_seeds(master_seed, t, cfg.population)

        if cfg.mode == "continuous_es":
            rewards = np.empty(cfg.population, dtype=np.float64)
            for i, seed in enumerate(seeds):
                x = affine_map(
                    w_float + cfg.sigma * gaussian_block(int(seed), d),
                    lattice.scale,
                    lattice.zero_point,
                )
                try:
                    rewards[i] = float(task.evaluate(x, eval_seed))
                except Exception as exc:  # noqa: BLE001
                    raise EvaluationError(i, exc) from exc
            fitness = normalize_rewards(rewards, rank=cfg.rank_fitness)
            g = estimate_gradient_gaussian(seeds, fitness, cfg.sigma, d)
            update = cfg.alpha * g
            w_float += update
            ratio = float(np.count_nonzero(update)) / d
            hit = 0.0
            residual_vec = None
            theta = w_float
        else:
            rewards = evaluate_population(
                lattice, seeds, task, cfg.sigma, eval_seed=eval_seed, workers=workers
            )
            fitness = normalize_rewards(rewards, rank=cfg.rank_fitness)
            draws = make_draws(seeds, cfg.sigma, d)
            g = estimate_gradient(draws, fitness, cfg.sigma)

            if cfg.mode == "full_residual":
                gated, state = step_full_residual(lattice, state, g, cfg)
                residual_vec = state.residual
            elif cfg.mode == "stateless_replay":
                gated, residual_vec, replay_seconds = step_stateless(
                    lattice, history, seeds, fitness, cfg, generation=t, g=g
                )
                replay_ms_measured.append(1e3 * replay_seconds)
            else:
                rng = (
                    stream(derive_update_seed(master_seed, t))
                    if cfg.mode == "naive_stochastic_round"
                    else None
                )
                gated = step_naive(lattice, g, cfg, rng=rng)
                residual_vec = None
            ratio = update_ratio(gated.applied, d)
            hit = boundary_hit_ratio(gated.attempted, gated.gated_mask)
            theta = (
                lattice.weights.astype(np.float64) + residual_vec
                if residual_vec is not None
                else None
            )

        scaled = cfg.alpha * g
        alpha_g_linf.append(float(np.max(np.abs(scaled))) if d else 0.0)
        if instrument:
            ideal += scaled
            alpha_g_steps.append(scaled.copy())
        theta_dev = (
            float(np.max(np.abs(theta - ideal)))
            if instrument and theta is not None
            else float("nan")
        )

        report = GenerationReport(
            generation=t,
            mean_reward=float(np.mean(rewards)),
            best_reward=float(np.max(rewards)),
            fitness_std=float(np.std(fitness)),
            update_ratio=ratio,
            hit_ratio=hit,
            residual_linf=(
                float(np.max(np.abs(residual_vec))) if residual_vec is not None else 0.0
            ),
            theta_deviation_linf=theta_dev,
        )
        reports.append(report)
        if on_report is not None:
            on_report(report)
        if t in wanted_snapshots:
            snapshots[t] = (
                w_float.copy() if cfg.mode == "continuous_es" else lattice.weights.copy()
            )

    return RunResult(
        reports=reports,
        lattice=lattice,
        history=history,
        initial_weights=initial_weights,
        final_residual=(
            residual_vec.copy()
            if generations and cfg.mode in ("full_residual", "stateless_replay")
            else None
        ),
        continuous_weights=w_float,
        alpha_g_linf=alpha_g_linf,
        replay_ms_measured=replay_ms_measured,
        alpha_g_steps=alpha_g_steps,
        snapshots=snapshots,
    )
