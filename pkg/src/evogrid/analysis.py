"""Trajectory metrics and post-hoc diagnostics."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .optimizer import RunResult


def update_ratio(applied: np.ndarray, dimension: int | None = None) -> float:
    """Fraction of weights changed by a committed step."""
    applied = np.asarray(applied)
    d = applied.size if dimension is None else int(dimension)
    if d <= 0:
        raise ValueError("dimension must be positive")
    return float(np.count_nonzero(applied)) / d


def boundary_hit_ratio(attempted: np.ndarray, gated_mask: np.ndarray) -> float:
    """Among nonzero attempted updates, the fraction the gate suppressed.

    0.0 when nothing was attempted.
    """
    attempted = np.asarray(attempted)
    gated_mask = np.asarray(gated_mask, dtype=bool)
    if attempted.shape != gated_mask.shape:
        raise ValueError("attempted and gated_mask must have the same shape")
    n_attempted = int(np.count_nonzero(attempted))
    if n_attempted == 0:
        return 0.0
    return float(np.count_nonzero(gated_mask)) / n_attempted


def fit_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line fit; returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("need at least two paired points")
    slope, intercept = np.polyfit(x, y, 1)
    predicted = slope * x + intercept
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r_squared


def fit_power_law(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Log-log line fit; returns (exponent, r_squared)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive data")
    exponent, _, r_squared = fit_line(np.log10(x), np.log10(y))
    return exponent, r_squared


def decompose_trajectory(result: "RunResult") -> tuple[np.ndarray, np.ndarray]:
    """Split the net weight motion into the ideal and quantization parts.

    Returns ``(ideal, xi)`` with ``ideal = sum_t alpha * g_t`` and
    ``xi = (W_T - W_0) - ideal``, i.e. the accumulated difference between
    what was committed and what the unconstrained update would have done.
    Requires an instrumented run.
    """
    if result.alpha_g_steps is None:
        raise ValueError("decompose_trajectory needs an instrumented run")
    d = result.initial_weights.size
    ideal = np.zeros(d, dtype=np.float64)
    for step in result.alpha_g_steps:
        ideal += step
    final = (
        result.continuous_weights
        if result.continuous_weights is not None
        else result.lattice.weights.astype(np.float64)
    )
    xi = (final - result.initial_weights.astype(np.float64)) - ideal
    return ideal, xi


def replay_divergence(
    result_a: "RunResult", result_b: "RunResult"
) -> dict[int, tuple[int, int]]:
    """Per-generation weight disagreement between two snapshotted runs.

    Maps generation -> (number of differing components, max absolute
    difference).  Both runs must have snapshots at the same generations.
    """
    gens_a = sorted(result_a.snapshots)
    gens_b = sorted(result_b.snapshots)
    if gens_a != gens_b:
        raise ValueError(f"snapshot generations differ: {gens_a} vs {gens_b}")
    out: dict[int, tuple[int, int]] = {}
    for t in gens_a:
        wa = result_a.snapshots[t]
        wb = result_b.snapshots[t]
        diff = wa.astype(np.int64) - wb.astype(np.int64)
        out[t] = (int(np.count_nonzero(diff)), int(np.max(np.abs(diff))) if diff.size else 0)
    return out


def summarize_run(result: "RunResult") -> dict:
    """Scalar roll-up of a run for the diagnostics record."""
    reports = result.reports
    if not reports:
        return {"generations": 0}
    theta_devs = [r.theta_deviation_linf for r in reports if not math.isnan(r.theta_deviation_linf)]
    return {
        "generations": len(reports),
        "final_mean_reward": reports[-1].mean_reward,
        "final_best_reward": reports[-1].best_reward,
        "best_reward_overall": max(r.best_reward for r in reports),
        "mean_update_ratio": float(np.mean([r.update_ratio for r in reports])),
        "mean_hit_ratio": float(np.mean([r.hit_ratio for r in reports])),
        "final_residual_linf": reports[-1].residual_linf,
        "max_theta_deviation_linf": max(theta_devs) if theta_devs else None,
        "max_alpha_g_linf": max(result.alpha_g_linf) if result.alpha_g_linf else None,
        "replay_ms_total": float(sum(result.replay_ms_measured)),
        "replay_ms_per_generation": [round(v, 4) for v in result.replay_ms_measured],
    }
