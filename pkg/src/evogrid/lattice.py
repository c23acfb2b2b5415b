"""Integer weight lattices and boundary-gated updates.

Weights are stored as int64 regardless of the nominal bit width so that
``weights + delta`` can never wrap before the gate check.  The lattice is
the affine codebook ``{0, ..., 2**bits - 1}`` mapped to real values by
``scale * (code - zero_point)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_BITS = 1
MAX_BITS = 16


@dataclass
class QuantLattice:
    """A vector of integer codes plus the affine map to real values.

    Parameters
    ----------
    weights : np.ndarray
        Integer codes, coerced to int64.  Every entry must lie in
        ``[0, 2**bits)``.
    bits : int
        Codebook bit width, between ``MIN_BITS`` and ``MAX_BITS``.
    scale : float
        Positive step size of the dequantization map.
    zero_point : int
        Code that dequantizes to exactly 0.0.
    """

    weights: np.ndarray
    bits: int
    scale: float
    zero_point: int

    def __post_init__(self) -> None:
        if not MIN_BITS <= self.bits <= MAX_BITS:
            raise ValueError(f"bits must be in [{MIN_BITS}, {MAX_BITS}], got {self.bits}")
        if not self.scale > 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        w = np.asarray(self.weights, dtype=np.int64)
        if w.ndim != 1:
            raise ValueError(f"weights must be a vector, got shape {w.shape}")
        hi = (1 << self.bits) - 1
        if w.size and (w.min() < 0 or w.max() > hi):
            raise ValueError(f"weights outside codebook [0, {hi}]")
        self.weights = w

    @property
    def dimension(self) -> int:
        return int(self.weights.size)

    @property
    def codebook_max(self) -> int:
        return (1 << self.bits) - 1

    def dequantize(self) -> np.ndarray:
        """Map integer codes to real values, ``scale * (code - zero_point)``."""
        return self.scale * (self.weights.astype(np.float64) - float(self.zero_point))

    def copy(self) -> "QuantLattice":
        return QuantLattice(self.weights.copy(), self.bits, self.scale, self.zero_point)

    def commit(self, gated: "GatedDelta") -> None:
        """Add an already-gated delta to the weights in place."""
        self.weights += gated.applied


@dataclass
class GatedDelta:
    """Result of pushing an integer update through the boundary gate.

    ``applied`` is zero wherever ``gated_mask`` is true; ``attempted`` is
    the pre-gate update, kept so callers can report how much of the
    attempted step the boundary swallowed.
    """

    applied: np.ndarray
    gated_mask: np.ndarray
    attempted: np.ndarray = field(repr=False)


def gate_apply(lattice: QuantLattice, delta: np.ndarray) -> GatedDelta:
    """Zero every component of ``delta`` that would leave the codebook.

    The gate is element-wise: a component passes when
    ``0 <= weights + delta < 2**bits`` and is suppressed (set to zero,
    flagged in ``gated_mask``) otherwise.  Pure; does not touch the
    lattice.
    """
    delta = np.asarray(delta, dtype=np.int64)
    if delta.shape != lattice.weights.shape:
        raise ValueError(
            f"delta shape {delta.shape} does not match weights shape {lattice.weights.shape}"
        )
    candidate = lattice.weights + delta
    in_range = (candidate >= 0) & (candidate <= lattice.codebook_max)
    applied = np.where(in_range, delta, np.int64(0))
    return GatedDelta(applied=applied, gated_mask=~in_range, attempted=delta)


def affine_map(values: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    """Dequantization map for free-floating (not lattice-bound) vectors."""
    return scale * (np.asarray(values, dtype=np.float64) - float(zero_point))


# Checkpoints are a raw little-endian int64 dump of the codes next to a
# JSON sidecar carrying the affine map and run provenance.

def save_checkpoint(
    lattice: QuantLattice,
    base_path: str | Path,
    *,
    rng_master_seed: int,
    generation: int,
) -> tuple[Path, Path]:
    """Write ``<base>.bin`` (codes) and ``<base>.json`` (metadata)."""
    base = Path(base_path)
    bin_path = base.with_suffix(".bin")
    meta_path = base.with_suffix(".json")
    bin_path.write_bytes(lattice.weights.astype("<i8").tobytes())
    meta = {
        "bits": lattice.bits,
        "scale": lattice.scale,
        "zero_point": lattice.zero_point,
        "d": lattice.dimension,
        "rng_master_seed": int(rng_master_seed),
        "generation": int(generation),
    }
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return bin_path, meta_path


def load_checkpoint(base_path: str | Path) -> tuple[QuantLattice, dict]:
    """Inverse of :func:`save_checkpoint`; returns the lattice and metadata."""
    base = Path(base_path)
    meta = json.loads(base.with_suffix(".json").read_text())
    raw = base.with_suffix(".bin").read_bytes()
    weights = np.frombuffer(raw, dtype="<i8").astype(np.int64)
    if weights.size != meta["d"]:
        raise ValueError(f"checkpoint holds {weights.size} weights, metadata says {meta['d']}")
    lattice = QuantLattice(weights, meta["bits"], meta["scale"], meta["zero_point"])
    return lattice, meta
