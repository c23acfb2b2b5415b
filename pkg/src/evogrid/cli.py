"""Experiment driver.

``evogrid run`` executes one configured optimization and writes the
trajectory, checkpoint, history window, config echo and diagnostics into
an output directory.  ``evogrid ablate`` repeats a base config over a
list of (window, gamma) pairs and seeds and writes a summary table.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .lattice import QuantLattice, save_checkpoint
from .optimizer import (
    CSV_COLUMNS,
    MODES,
    OptimizerConfig,
    RunResult,
    round_half_away,
    run,
)
from .analysis import summarize_run
from .perturb import derive_member_seed, stream
from .tasks import REGISTRY, FitnessTask, make_task

# Salt separating the weight-init stream from member and update streams.
_INIT_SALT = 0x517CC1B727220A95


class ConfigError(Exception):
    """Bad or missing run configuration."""


_REQUIRED = (
    "task",
    "mode",
    "bits",
    "alpha",
    "gamma",
    "sigma",
    "population",
    "generations",
    "master_seed",
)
_OPTIONAL = {
    "task_params": dict,
    "dimension": int,
    "scale": float,
    "zero_point": int,
    "init": str,
    "window": int,
    "dataset_seed": int,
    "workers": int,
    "instrument": bool,
    "out_dir": str,
}
_INITS = ("midpoint", "uniform")


@dataclass
class RunConfig:
    task: str
    mode: str
    bits: int
    alpha: float
    gamma: float
    sigma: float
    population: int
    generations: int
    master_seed: int
    task_params: dict = field(default_factory=dict)
    dimension: int | None = None
    scale: float | None = None
    zero_point: int | None = None
    init: str = "midpoint"
    window: int = 50
    dataset_seed: int = 0
    workers: int = 0
    instrument: bool = False
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.task not in REGISTRY:
            raise ConfigError(f"unknown task {self.task!r}; known: {sorted(REGISTRY)}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; known: {MODES}")
        if self.init not in _INITS:
            raise ConfigError(f"init must be one of {_INITS}, got {self.init!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"master_seed must be an unsigned 64-bit value")
        if self.generations < 0:
            raise ConfigError(f"generations must be non-negative, got {self.generations}")
        if self.workers < 0:
            raise ConfigError(f"workers must be non-negative, got {self.workers}")
        # Defaults chosen so the dequantized codebook spans roughly [-1, 1].
        if self.scale is None:
            self.scale = 2.0 / (1 << self.bits)
        if self.zero_point is None:
            self.zero_point = 1 << (self.bits - 1)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        unknown = set(raw) - set(_REQUIRED) - set(_OPTIONAL)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = [key for key in _REQUIRED if key not in raw]
        if missing:
            raise ConfigError(f"missing required config field(s): {missing}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def optimizer_config(self) -> OptimizerConfig:
        try:
            return OptimizerConfig(
                alpha=self.alpha,
                gamma=self.gamma,
                sigma=self.sigma,
                population=self.population,
                window=self.window,
                mode=self.mode,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self, task: FitnessTask) -> dict[str, Any]:
        """Full resolved config, defaults included, for the output record."""
        return {
            "artifact_version": __version__,
            "task": self.task,
            "task_params": self.task_params,
            "mode": self.mode,
            "dimension": task.dimension,
            "bits": self.bits,
            "scale": self.scale,
            "zero_point": self.zero_point,
            "init": self.init,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "sigma": self.sigma,
            "population": self.population,
            "window": self.window,
            "generations": self.generations,
            "master_seed": self.master_seed,
            "dataset_seed": self.dataset_seed,
            "workers": self.workers,
            "instrument": self.instrument,
        }


def build_task(cfg: RunConfig) -> FitnessTask:
    params = dict(cfg.task_params)
    if cfg.task == "quantized_mlp":
        params.setdefault("dataset_seed", cfg.dataset_seed)
    else:
        if cfg.dimension is None and "dimension" not in params:
            raise ConfigError(f"task {cfg.task!r} needs a dimension")
        params.setdefault("dimension", cfg.dimension)
    try:
        task = make_task(cfg.task, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad task parameters: {exc}") from exc
    if cfg.dimension is not None and task.dimension != cfg.dimension:
        raise ConfigError(
            f"config dimension {cfg.dimension} does not match task dimension {task.dimension}"
        )
    return task


def build_lattice(cfg: RunConfig, task: FitnessTask) -> QuantLattice:
    d = task.dimension
    top = (1 << cfg.bits) - 1
    if not 0 <= cfg.zero_point <= top:
        raise ConfigError(f"zero_point {cfg.zero_point} outside codebook [0, {top}]")
    if cfg.init == "midpoint":
        codes = np.full(d, cfg.zero_point, dtype=np.int64)
    else:
        # Uniform over the central half of the codebook, away from both
        # boundaries, from a stream disjoint from member streams.
        rng = stream(derive_member_seed(cfg.master_seed ^ _INIT_SALT, 0, 0))
        quarter = max(1, (top + 1) // 4)
        codes = rng.integers(quarter, top + 1 - quarter, size=d, dtype=np.int64)
    return QuantLattice(codes, cfg.bits, cfg.scale, cfg.zero_point)


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def execute_run(cfg: RunConfig, out_dir: Path) -> RunResult:
    """Run one config and write all output files into ``out_dir``.

    The config echo is written before the run starts and trajectory rows
    are flushed as they are produced, so a mid-run failure still leaves
    the partial trajectory on disk.
    """
    task = build_task(cfg)
    lattice = build_lattice(cfg, task)
    opt_cfg = cfg.optimizer_config()
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "config.json", cfg.echo(task))

    trajectory_path = out_dir / "trajectory.csv"
    with trajectory_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)

        def on_report(report) -> None:
            writer.writerow(report.to_row())
            fh.flush()

        try:
            result = run(
                opt_cfg,
                task,
                lattice,
                cfg.master_seed,
                cfg.generations,
                eval_seed=cfg.dataset_seed,
                workers=cfg.workers,
                instrument=cfg.instrument,
                on_report=on_report,
            )
        except Exception as exc:
            _write_json(out_dir / "diagnostics.json", {"error": repr(exc)})
            raise

    if cfg.mode == "continuous_es":
        codes = np.clip(
            round_half_away(result.continuous_weights), 0, lattice.codebook_max
        )
        final = QuantLattice(codes, cfg.bits, cfg.scale, cfg.zero_point)
    else:
        final = result.lattice
    save_checkpoint(
        final,
        out_dir / "checkpoint",
        rng_master_seed=cfg.master_seed,
        generation=cfg.generations,
    )
    history_obj = result.history.to_json_obj() if result.history is not None else []
    _write_json(out_dir / "history.json", history_obj)
    diagnostics = summarize_run(result)
    diagnostics["artifact_version"] = __version__
    diagnostics["mode"] = cfg.mode
    _write_json(out_dir / "diagnostics.json", diagnostics)
    return result


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir is None:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    execute_run(cfg, out_dir)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    try:
        sweep = json.loads(Path(args.sweep).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"sweep file not found: {args.sweep}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep file is not valid JSON: {exc}") from exc
    pairs = sweep.get("pairs")
    if not pairs:
        raise ConfigError("sweep file needs a non-empty 'pairs' list")
    seeds = sweep.get("seeds") or [cfg.master_seed]
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir) if cfg.out_dir else None
    if out_dir is None:
        raise ConfigError("no output directory: set out_dir in the config or pass --out")
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for pair in pairs:
        try:
            window = int(pair["window"])
            gamma = float(pair["gamma"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad sweep entry {pair!r}: {exc}") from exc
        finals = []
        for seed in seeds:
            variant = RunConfig.from_dict(
                {
                    **{k: v for k, v in _config_dict(cfg).items()},
                    "window": window,
                    "gamma": gamma,
                    "master_seed": int(seed),
                }
            )
            tag = out_dir / f"K{window}_g{gamma:g}_s{seed}"
            result = execute_run(variant, tag)
            finals.append(result.reports[-1].mean_reward if result.reports else float("nan"))
        rows.append(
            (
                window,
                gamma,
                float(np.mean(finals)),
                float(np.std(finals)),
                len(finals),
            )
        )

    with (out_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("window", "gamma", "mean_final_reward", "std_final_reward", "n_seeds")
        )
        for row in rows:
            writer.writerow([str(row[0]), repr(row[1]), repr(row[2]), repr(row[3]), str(row[4])])
    return 0


def _config_dict(cfg: RunConfig) -> dict[str, Any]:
    return {
        "task": cfg.task,
        "task_params": cfg.task_params,
        "mode": cfg.mode,
        "bits": cfg.bits,
        "alpha": cfg.alpha,
        "gamma": cfg.gamma,
        "sigma": cfg.sigma,
        "population": cfg.population,
        "generations": cfg.generations,
        "master_seed": cfg.master_seed,
        "dimension": cfg.dimension,
        "scale": cfg.scale,
        "zero_point": cfg.zero_point,
        "init": cfg.init,
        "window": cfg.window,
        "dataset_seed": cfg.dataset_seed,
        "workers": cfg.workers,
        "instrument": cfg.instrument,
    }


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit value")
        cfg.master_seed = args.seed
    if args.generations is not None:
        if args.generations < 0:
            raise ConfigError("--generations must be non-negative")
        cfg.generations = args.generations
    if args.mode is not None:
        if args.mode not in MODES:
            raise ConfigError(f"unknown mode {args.mode!r}; known: {MODES}")
        cfg.mode = args.mode
    if args.instrument:
        cfg.instrument = True
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument(
        "--generations", type=int, default=None, help="override generation count"
    )
    parser.add_argument("--mode", default=None, help="override update mode")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument(
        "--instrument",
        action="store_true",
        help="track the ideal trajectory and per-step gradients",
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="evogrid",
        description="Evolution-strategies fine-tuning on integer weight grids",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_parser = sub.add_parser("run", help="execute one configured run")
    _add_common(run_parser)
    run_parser.set_defaults(func=cmd_run)
    ablate_parser = sub.add_parser("ablate", help="sweep (window, gamma) pairs")
    _add_common(ablate_parser)
    ablate_parser.add_argument(
        "--sweep", required=True, help="JSON sweep file: pairs of window/gamma, seeds"
    )
    ablate_parser.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
