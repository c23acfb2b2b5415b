"""Evolution-strategies fine-tuning on low-bit integer weight grids.

Parameters live on an integer codebook {0, ..., 2**bits - 1} and every
committed update is an integer step.  Sub-step gradient information
survives through an accumulated rounding residual that can either be
stored densely or rebuilt on demand from a short window of (seed, fitness)
records.
"""

from __future__ import annotations

from .gradient import estimate_gradient, normalize_rewards
from .lattice import GatedDelta, QuantLattice, gate_apply, load_checkpoint, save_checkpoint
from .optimizer import (
    GenerationRecord,
    GenerationReport,
    HistoryWindow,
    OptimizerConfig,
    ResidualState,
    RunResult,
    rematerialize_residual,
    run,
    step_full_residual,
    step_naive,
    step_stateless,
)
from .perturb import PerturbationDraw, derive_member_seed, realize_perturbation
from .tasks import FitnessTask, evaluate_population, make_task

__version__ = "0.1.0"

__all__ = [
    "FitnessTask",
    "GatedDelta",
    "GenerationRecord",
    "GenerationReport",
    "HistoryWindow",
    "OptimizerConfig",
    "PerturbationDraw",
    "QuantLattice",
    "ResidualState",
    "RunResult",
    "derive_member_seed",
    "estimate_gradient",
    "evaluate_population",
    "gate_apply",
    "load_checkpoint",
    "make_task",
    "normalize_rewards",
    "realize_perturbation",
    "rematerialize_residual",
    "run",
    "save_checkpoint",
    "step_full_residual",
    "step_naive",
    "step_stateless",
    "__version__",
]
