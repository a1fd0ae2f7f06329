"""Experiment driver: config files in, CSV/SVG/JSON artifacts out.

Two seeded, deterministic experiments share one artifact pipeline:

* ``oscillator`` — the damped oscillator family with scalar uncertainty on
  symmetric grids; training level ``ell`` scales the grid.
* ``cdr`` — the 1-d convection–diffusion–reaction bench with lognormal
  diffusion fields; ``ell`` scales the drawn training coefficient vectors.

Every paper-default is a config default, so a bare invocation reproduces the
reference setup.  Artifacts per run: ``costs.csv`` (pinned schema),
``gaps.csv``, ``trajectories.csv``, ``errors.csv`` (failed rows; never
dropped), ``metadata.json``, SVG charts, and for the PDE bench
``params.csv`` plus ``field-samples.csv``.  Identical config and seed give
byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import tomli

from . import __version__, svgchart
from .analysis import SweepRow, SweepTable, uncertainty_sweep
from .model import ParameterEnsemble, TimeGrid
from .problems import (
    CdrProblem,
    cdr_problem,
    ensemble_grid,
    oscillator_family,
    oscillator_initial_state,
    oscillator_target,
)
from .svgchart import Series

__all__ = [
    "ConfigError",
    "OscillatorConfig",
    "CdrConfig",
    "RunResult",
    "load_config",
    "run_oscillator",
    "run_cdr",
    "emit_costs_csv",
    "main",
    "COSTS_HEADER",
]

#: Pinned column order of costs.csv; tests compare this string bit-exactly.
COSTS_HEADER = (
    "experiment,ell,test_param_id,test_param,feedback,convention,"
    "tracking_cost,control_cost,terminal_cost,total_cost"
)
GAPS_HEADER = (
    "experiment,ell,test_param_id,test_param,feedback,convention,"
    "gap_vs_single,gap_ensemble_objective,delta_a_norm,"
    "state_sup_gap,control_sup_gap"
)
ERRORS_HEADER = "experiment,ell,test_param_id,test_param,feedback,convention,error"
TRAJECTORIES_HEADER = "t,component,value,series_id"

_FEEDBACK_NAMES = ("ensemble", "averaged")
_CONVENTIONS = ("unit", "paper-literal")


class ConfigError(Exception):
    """Invalid configuration file or CLI override (exit code 2)."""


def _fmt17(x: float) -> str:
    """Serialize a float with 17 significant digits (exact round-trip)."""
    return f"{float(x):.17g}"


# --------------------------------------------------------------------------
# Configuration


@dataclass
class OscillatorConfig:
    """Oscillator experiment configuration (defaults = reference setup)."""

    horizon: float = 5.0
    steps: int = 5000
    levels: tuple[float, ...] = (2.0,)
    train_count: int = 5
    test_scale: float = 2.0
    test_count: int = 6
    feedbacks: tuple[str, ...] = _FEEDBACK_NAMES
    conventions: tuple[str, ...] = ("unit",)
    out_dir: str = "runs/oscillator"
    checkpoint_stride: int = 1
    trajectory_stride: int = 10
    plots: bool = True
    gaps: bool = True
    workers: int = 1
    seed: int | None = None  # accepted for CLI symmetry; experiment is deterministic

    experiment = "oscillator"


@dataclass
class CdrConfig:
    """PDE bench configuration (defaults = reference setup, b = 0)."""

    horizon: float = 5.0
    steps: int = 5000
    levels: tuple[float, ...] = (1.0,)
    train_count: int = 5
    train_seed: int = 2
    test_count: int = 5
    test_seed: int = 3
    nodes: int = 101
    base_diffusivity: float = 0.1
    decay: float = 1.5
    terms: int = 100
    reaction: float = -1.0
    convection: float = 0.0
    kappa: float = 0.1
    output_weight: float = math.sqrt(10.0)
    actuators: tuple[tuple[float, float], ...] = ((0.1, 0.3), (0.4, 0.6), (0.7, 0.9))
    feedbacks: tuple[str, ...] = _FEEDBACK_NAMES
    conventions: tuple[str, ...] = ("unit",)
    out_dir: str = "runs/cdr"
    checkpoint_stride: int = 50
    trajectory_stride: int = 50
    plots: bool = True
    gaps: bool = False
    workers: int = 1

    experiment = "cdr"


# TOML section/key -> dataclass field, shared by both experiments.
_COMMON_KEYS = {
    ("experiment", "horizon"): "horizon",
    ("experiment", "steps"): "steps",
    ("training", "levels"): "levels",
    ("training", "count"): "train_count",
    ("test", "count"): "test_count",
    ("feedbacks", "names"): "feedbacks",
    ("feedbacks", "conventions"): "conventions",
    ("output", "dir"): "out_dir",
    ("output", "checkpoint_stride"): "checkpoint_stride",
    ("output", "trajectory_stride"): "trajectory_stride",
    ("output", "plots"): "plots",
    ("output", "gaps"): "gaps",
    ("output", "workers"): "workers",
}
_OSCILLATOR_KEYS = {
    **_COMMON_KEYS,
    ("test", "scale"): "test_scale",
}
_CDR_KEYS = {
    **_COMMON_KEYS,
    ("training", "seed"): "train_seed",
    ("test", "seed"): "test_seed",
    ("pde", "nodes"): "nodes",
    ("pde", "base_diffusivity"): "base_diffusivity",
    ("pde", "decay"): "decay",
    ("pde", "terms"): "terms",
    ("pde", "reaction"): "reaction",
    ("pde", "convection"): "convection",
    ("pde", "kappa"): "kappa",
    ("pde", "output_weight"): "output_weight",
    ("pde", "actuators"): "actuators",
}


def _coerce(cfg, name: str, value):
    """Coerce a TOML value onto a config field, with a readable error."""
    try:
        if name in ("levels",):
            return tuple(float(v) for v in value)
        if name in ("feedbacks", "conventions"):
            return tuple(str(v) for v in value)
        if name == "actuators":
            return tuple((float(lo), float(hi)) for lo, hi in value)
        current = getattr(cfg, name)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError("expected a boolean")
            return value
        if isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, bool) or isinstance(value, float) and value != int(value):
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(current, float) or current is None:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {name!r}: cannot use {value!r} ({exc})") from exc


def _validate(cfg) -> None:
    def need(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(f"invalid config: {msg}")

    need(cfg.horizon > 0, "experiment.horizon must be positive")
    need(cfg.steps >= 2, "experiment.steps must be at least 2")
    need(len(cfg.levels) > 0, "training.levels must be nonempty")
    need(all(ell >= 0 for ell in cfg.levels), "training levels must be nonnegative")
    need(len(set(cfg.levels)) == len(cfg.levels), "training levels must be distinct")
    need(cfg.test_count >= 1, "test.count must be at least 1")
    need(len(cfg.feedbacks) > 0, "feedbacks.names must be nonempty")
    for name in cfg.feedbacks:
        need(name in _FEEDBACK_NAMES, f"unknown feedback {name!r}")
    for conv in cfg.conventions:
        need(conv in _CONVENTIONS, f"unknown convention {conv!r}")
    if "averaged" in cfg.feedbacks:
        need(len(cfg.conventions) > 0, "averaged feedback needs at least one convention")
    need(cfg.checkpoint_stride >= 1, "output.checkpoint_stride must be at least 1")
    need(cfg.trajectory_stride >= 1, "output.trajectory_stride must be at least 1")
    need(cfg.workers >= 1, "output.workers must be at least 1")
    if isinstance(cfg, OscillatorConfig):
        need(cfg.train_count >= 2, "training.count must be at least 2 (symmetric grid)")
        need(cfg.test_count >= 2, "test.count must be at least 2 (symmetric grid)")
        need(cfg.test_scale > 0, "test.scale must be positive")
    else:
        need(cfg.train_count >= 1, "training.count must be at least 1")
        need(cfg.nodes >= 3, "pde.nodes must be at least 3")
        need(cfg.base_diffusivity > 0, "pde.base_diffusivity must be positive")
        need(cfg.terms >= 1, "pde.terms must be at least 1")
        need(cfg.kappa > 0, "pde.kappa must be positive")
        need(cfg.output_weight > 0, "pde.output_weight must be positive")
        need(len(cfg.actuators) >= 1, "pde.actuators must be nonempty")
        for lo, hi in cfg.actuators:
            need(0.0 <= lo < hi <= 1.0, f"actuator [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")


def load_config(kind: str, path: str | os.PathLike | None = None):
    """Build the config for ``kind`` ("oscillator" | "cdr") from a TOML file.

    Missing file (``path=None``) means all defaults.  Unknown sections or
    keys are rejected, so typos fail loudly instead of silently reverting to
    defaults.
    """
    if kind == "oscillator":
        cfg, keymap = OscillatorConfig(), _OSCILLATOR_KEYS
    elif kind == "cdr":
        cfg, keymap = CdrConfig(), _CDR_KEYS
    else:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    if path is None:
        return cfg
    try:
        with open(path, "rb") as handle:
            data = tomli.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    if "experiment" in data and "kind" in data["experiment"]:
        stated = data["experiment"].pop("kind")
        if stated != kind:
            raise ConfigError(
                f"config {path} declares kind {stated!r} but the "
                f"{kind!r} command was invoked"
            )
    for section, table in data.items():
        if not isinstance(table, dict):
            raise ConfigError(f"config {path}: top-level key {section!r} must be a section")
        for key, value in table.items():
            target = keymap.get((section, key))
            if target is None:
                raise ConfigError(f"config {path}: unknown key [{section}] {key}")
            setattr(cfg, target, _coerce(cfg, target, value))
    _validate(cfg)
    return cfg


# --------------------------------------------------------------------------
# Runs


@dataclass
class RunResult:
    """Everything a run produced: artifact paths, sweep table, metadata."""

    experiment: str
    out_dir: Path
    files: dict[str, Path]
    table: SweepTable
    metadata: dict


def _effective_workers(cfg_workers: int) -> int:
    """Apply the ENSEMBLE_TRACK_THREADS cap to the configured worker count."""
    cap = os.environ.get("ENSEMBLE_TRACK_THREADS")
    if cap is None:
        return cfg_workers
    try:
        cap_value = int(cap)
    except ValueError as exc:
        raise ConfigError(f"ENSEMBLE_TRACK_THREADS={cap!r} is not an integer") from exc
    if cap_value < 1:
        raise ConfigError(f"ENSEMBLE_TRACK_THREADS={cap_value} must be at least 1")
    return min(cfg_workers, cap_value)


def _scalar_param(sigma: np.ndarray) -> float:
    """Scalar CSV representation: the value itself, or the l2 norm of a vector."""
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    return float(sigma[0]) if sigma.size == 1 else float(np.linalg.norm(sigma))


def _law_tag(row: SweepRow) -> str:
    return f"{row.feedback}[{row.convention}]" if row.convention else row.feedback


def _series_id(row: SweepRow) -> str:
    return f"{_law_tag(row)}|ell={row.level:g}|test={row.test_id}"


def _emitted_rows(table: SweepTable, feedbacks: Sequence[str]) -> list[SweepRow]:
    return [r for r in table.rows if r.feedback in feedbacks]


def _write_text(path: Path, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def emit_costs_csv(table: SweepTable, path: Path, experiment: str,
                   feedbacks: Sequence[str] = _FEEDBACK_NAMES) -> int:
    """Write successful rows under the pinned schema; return the row count."""
    lines = [COSTS_HEADER]
    for row in _emitted_rows(table, feedbacks):
        if row.error is not None or row.cost is None:
            continue
        lines.append(
            ",".join(
                (
                    experiment,
                    _fmt17(row.level),
                    str(row.test_id),
                    _fmt17(_scalar_param(row.test_param)),
                    row.feedback,
                    row.convention,
                    _fmt17(row.cost.tracking),
                    _fmt17(row.cost.control),
                    _fmt17(row.cost.terminal),
                    _fmt17(row.cost.total),
                )
            )
        )
    _write_text(path, lines)
    return len(lines) - 1


def _emit_gaps_csv(table: SweepTable, path: Path, experiment: str,
                   feedbacks: Sequence[str]) -> None:
    def opt(value) -> str:
        return "" if value is None else _fmt17(value)

    lines = [GAPS_HEADER]
    for row in _emitted_rows(table, feedbacks):
        if row.error is not None:
            continue
        if row.gap_vs_single is None and row.gap_ensemble_objective is None:
            continue
        lines.append(
            ",".join(
                (
                    experiment,
                    _fmt17(row.level),
                    str(row.test_id),
                    _fmt17(_scalar_param(row.test_param)),
                    row.feedback,
                    row.convention,
                    opt(row.gap_vs_single),
                    opt(row.gap_ensemble_objective),
                    opt(row.delta_a_norm),
                    opt(row.state_sup_gap),
                    opt(row.control_sup_gap),
                )
            )
        )
    _write_text(path, lines)


def _emit_errors_csv(table: SweepTable, path: Path, experiment: str,
                     feedbacks: Sequence[str]) -> int:
    """Failed rows (error marker variant of the costs schema); returns count."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(ERRORS_HEADER.split(","))
        count = 0
        for row in _emitted_rows(table, feedbacks):
            if row.error is None:
                continue
            writer.writerow(
                (
                    experiment,
                    _fmt17(row.level),
                    str(row.test_id),
                    _fmt17(_scalar_param(row.test_param)),
                    row.feedback,
                    row.convention,
                    row.error,
                )
            )
            count += 1
    return count


def _component_labels(state_dim: int, control_dim: int, experiment: str) -> tuple[list[str], list[str]]:
    if experiment == "oscillator":
        return [f"x{i}" for i in range(state_dim)], [f"u{i}" for i in range(control_dim)]
    width = len(str(state_dim - 1))
    return [f"y{i:0{width}d}" for i in range(state_dim)], [f"u{i}" for i in range(control_dim)]


def _emit_trajectories_csv(
    table: SweepTable,
    path: Path,
    experiment: str,
    feedbacks: Sequence[str],
    stride: int,
    target_values: np.ndarray,
    grid: TimeGrid,
    to_physical: Callable[[np.ndarray], np.ndarray] | None = None,
) -> None:
    """Long-format samples of every kept trajectory plus the target."""
    convert = to_physical if to_physical is not None else (lambda arr: arr)
    lines = [TRAJECTORIES_HEADER]
    times = grid.nodes()
    idx = list(range(0, times.size, stride))
    if idx[-1] != times.size - 1:
        idx.append(times.size - 1)

    def emit_block(values: np.ndarray, labels: list[str], series: str) -> None:
        for k in idx:
            t_txt = _fmt17(times[k])
            for j, label in enumerate(labels):
                lines.append(f"{t_txt},{label},{_fmt17(values[k, j])},{series}")

    tgt = convert(target_values)
    state_labels, _ = _component_labels(tgt.shape[1], 1, experiment)
    emit_block(tgt, state_labels, "target")
    for row in _emitted_rows(table, feedbacks):
        if row.trajectory is None:
            continue
        states = convert(row.trajectory.states)
        controls = row.trajectory.controls
        state_labels, control_labels = _component_labels(
            states.shape[1], controls.shape[1], experiment
        )
        emit_block(states, state_labels, _series_id(row))
        emit_block(controls, control_labels, _series_id(row))
    _write_text(path, lines)


def _json_ready(value):
    """Recursively convert numpy scalars/arrays for json.dump."""
    if isinstance(value, np.ndarray):
        return [_json_ready(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    return value


def _emit_metadata(path: Path, cfg, table: SweepTable, extra: dict) -> dict:
    per_level = {}
    for level, meta in table.level_meta.items():
        cost = meta.get("extended_cost")
        per_level[f"{level:g}"] = {
            "train_parameters": _json_ready(meta["train"].values),
            "riccati_max_asymmetry": _json_ready(meta["riccati_max_asymmetry"]),
            "riccati_min_eigenvalue_ratio": _json_ready(meta["riccati_min_eigenvalue_ratio"]),
            "extended_cost": None
            if cost is None
            else {
                "tracking": cost.tracking,
                "control": cost.control,
                "terminal": cost.terminal,
                "total": cost.total,
            },
        }
    metadata = {
        "experiment": cfg.experiment,
        "version": __version__,
        "config": _json_ready(asdict(cfg)),
        "levels": per_level,
        "row_count": sum(1 for r in table.rows if r.error is None),
        "error_count": sum(1 for r in table.rows if r.error is not None),
        **extra,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(metadata, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return metadata


def _detail_chart_series(
    rows: list[SweepRow],
    target_values: np.ndarray,
    times: np.ndarray,
    experiment: str,
    to_physical: Callable[[np.ndarray], np.ndarray] | None,
) -> list[Series]:
    """Per-test-parameter chart: states and controls for every feedback."""
    series: list[Series] = []
    if experiment == "oscillator":
        series.append(
            Series(times, target_values[:, 0], "target x0", color="#111111", dash="5,3")
        )
        for row in rows:
            tag = _law_tag(row)
            states, controls = row.trajectory.states, row.trajectory.controls
            series.append(Series(times, states[:, 0], f"{tag} x0"))
            series.append(Series(times, states[:, 1], f"{tag} x1"))
            series.append(Series(times, controls[:, 0], f"{tag} u0", dash="2,2"))
        return series
    # PDE bench: tracking-error norm plus the three controls per feedback.
    for row in rows:
        tag = _law_tag(row)
        err = np.linalg.norm(row.trajectory.states - target_values, axis=1)
        series.append(Series(times, err, f"{tag} |y-g|"))
        for j in range(row.trajectory.controls.shape[1]):
            series.append(
                Series(times, row.trajectory.controls[:, j], f"{tag} u{j}", dash="2,2")
            )
    return series


def _emit_svgs(
    table: SweepTable,
    out_dir: Path,
    experiment: str,
    feedbacks: Sequence[str],
    target_values: np.ndarray,
    grid: TimeGrid,
    to_physical: Callable[[np.ndarray], np.ndarray] | None = None,
) -> dict[str, Path]:
    """One detail chart per (level, test parameter) + per-feedback overviews."""
    files: dict[str, Path] = {}
    times = grid.nodes()
    rows = [r for r in _emitted_rows(table, feedbacks) if r.trajectory is not None]
    if not rows:
        return files
    convert = to_physical if to_physical is not None else (lambda arr: arr)
    tgt_phys = convert(target_values)
    levels = sorted({r.level for r in rows})
    for level in levels:
        level_rows = [r for r in rows if r.level == level]
        for test_id in sorted({r.test_id for r in level_rows}):
            cell = [r for r in level_rows if r.test_id == test_id]
            param = _scalar_param(cell[0].test_param)
            name = f"trajectory_ell{level:g}_test{test_id}.svg"
            chart = svgchart.line_chart(
                _detail_chart_series(
                    cell,
                    tgt_phys if experiment == "oscillator" else target_values,
                    times,
                    experiment,
                    to_physical,
                ),
                title=f"{experiment}: ell={level:g}, test parameter {param:g}",
                x_label="t",
                y_label="state / control",
            )
            path = out_dir / name
            path.write_text(chart, encoding="utf-8", newline="\n")
            files[name] = path
        # Overview: one series per test parameter per state component
        # (oscillator) or per-test tracking-error norms (PDE bench).
        for law_tag in sorted({_law_tag(r) for r in level_rows}):
            law_rows = [r for r in level_rows if _law_tag(r) == law_tag]
            series: list[Series] = []
            if experiment == "oscillator":
                for row in sorted(law_rows, key=lambda r: r.test_id):
                    states = row.trajectory.states
                    param = _scalar_param(row.test_param)
                    for comp in range(states.shape[1]):
                        series.append(
                            Series(
                                times,
                                states[:, comp],
                                f"sigma={param:g} x{comp}",
                                dash=None if comp == 0 else "4,2",
                            )
                        )
                title = f"oscillator: ell={level:g}, {law_tag}, all test parameters"
            else:
                for row in sorted(law_rows, key=lambda r: r.test_id):
                    err = np.linalg.norm(row.trajectory.states - target_values, axis=1)
                    series.append(Series(times, err, f"test {row.test_id} |y-g|"))
                title = f"cdr: ell={level:g}, {law_tag}, tracking error"
            name = f"overview_ell{level:g}_{law_tag.replace('[', '_').rstrip(']')}.svg"
            chart = svgchart.line_chart(series, title=title, x_label="t", y_label="value")
            path = out_dir / name
            path.write_text(chart, encoding="utf-8", newline="\n")
            files[name] = path
    return files


def run_oscillator(cfg: OscillatorConfig) -> RunResult:
    """Execute the oscillator sweep and write all artifacts."""
    _validate(cfg)
    grid = TimeGrid(cfg.horizon, cfg.steps)
    family = oscillator_family()
    target = oscillator_target(grid)
    y0 = oscillator_initial_state()
    conventions = cfg.conventions if "averaged" in cfg.feedbacks else ()
    table = uncertainty_sweep(
        family,
        list(cfg.levels),
        lambda ell: ensemble_grid(ell, cfg.train_count),
        lambda ell: ensemble_grid(cfg.test_scale * ell, cfg.test_count),
        target,
        y0,
        grid,
        stride=cfg.checkpoint_stride,
        conventions=conventions,
        compute_gaps=cfg.gaps,
        keep_trajectories=True,
        workers=_effective_workers(cfg.workers),
    )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, Path] = {}
    files["costs.csv"] = out_dir / "costs.csv"
    emit_costs_csv(table, files["costs.csv"], cfg.experiment, cfg.feedbacks)
    files["gaps.csv"] = out_dir / "gaps.csv"
    _emit_gaps_csv(table, files["gaps.csv"], cfg.experiment, cfg.feedbacks)
    files["errors.csv"] = out_dir / "errors.csv"
    _emit_errors_csv(table, files["errors.csv"], cfg.experiment, cfg.feedbacks)
    files["trajectories.csv"] = out_dir / "trajectories.csv"
    _emit_trajectories_csv(
        table,
        files["trajectories.csv"],
        cfg.experiment,
        cfg.feedbacks,
        cfg.trajectory_stride,
        target.values,
        grid,
    )
    if cfg.plots:
        files.update(
            _emit_svgs(table, out_dir, cfg.experiment, cfg.feedbacks, target.values, grid)
        )
    files["metadata.json"] = out_dir / "metadata.json"
    metadata = _emit_metadata(
        files["metadata.json"],
        cfg,
        table,
        {"files": sorted(files), "seed": cfg.seed},
    )
    return RunResult(cfg.experiment, out_dir, files, table, metadata)


def _emit_params_csv(path: Path, problem: CdrProblem, cfg: CdrConfig,
                     test_params: np.ndarray) -> None:
    """Raw coefficient vectors: training draws (unit scale) and test draws."""
    lines = ["kind,draw,component,value"]
    _, train_samples = problem.train_ensemble(cfg.train_seed, cfg.train_count, 1.0)
    for i, sample in enumerate(train_samples):
        for j, value in enumerate(sample.raw):
            lines.append(f"train,{i},{j},{_fmt17(value)}")
    for i in range(test_params.shape[0]):
        for j, value in enumerate(test_params[i]):
            lines.append(f"test,{i},{j},{_fmt17(value)}")
    _write_text(path, lines)


def _emit_field_samples_csv(path: Path, problem: CdrProblem, cfg: CdrConfig,
                            test_params: np.ndarray) -> None:
    """Nodal diffusivity realizations for every drawn field.

    Training fields are written once per training level (column ``ell``);
    test fields are unscaled draws, written with ``ell`` = 1.
    """
    from .pde1d import field_values

    lines = ["kind,ell,draw,s,value"]
    nodes = problem.mesh.nodes()
    for ell in cfg.levels:
        _, samples = problem.train_ensemble(cfg.train_seed, cfg.train_count, ell)
        for i, sample in enumerate(samples):
            for s, value in zip(nodes, sample.values):
                lines.append(f"train,{_fmt17(ell)},{i},{_fmt17(s)},{_fmt17(value)}")
    for i in range(test_params.shape[0]):
        values = field_values(problem.spec, problem.mesh, test_params[i])
        for s, value in zip(nodes, values):
            lines.append(f"test,1,{i},{_fmt17(s)},{_fmt17(value)}")
    _write_text(path, lines)


def run_cdr(cfg: CdrConfig) -> RunResult:
    """Execute the PDE-bench sweep and write all artifacts."""
    _validate(cfg)
    grid = TimeGrid(cfg.horizon, cfg.steps)
    problem = cdr_problem(
        grid,
        nodes=cfg.nodes,
        base=cfg.base_diffusivity,
        decay=cfg.decay,
        terms=cfg.terms,
        reaction=cfg.reaction,
        convection=cfg.convection,
        actuator_intervals=cfg.actuators,
        output_weight=cfg.output_weight,
        kappa=cfg.kappa,
        train_seed=cfg.train_seed,
        test_seed=cfg.test_seed,
    )
    test_samples = problem.test_samples(cfg.test_seed, cfg.test_count)
    test_ens = ParameterEnsemble(np.stack([s.parameter for s in test_samples]))
    conventions = cfg.conventions if "averaged" in cfg.feedbacks else ()
    table = uncertainty_sweep(
        problem.family,
        list(cfg.levels),
        lambda ell: problem.train_ensemble(cfg.train_seed, cfg.train_count, ell)[0],
        lambda ell: test_ens,
        problem.target,
        problem.y0_hat,
        grid,
        stride=cfg.checkpoint_stride,
        conventions=conventions,
        compute_gaps=cfg.gaps,
        keep_trajectories=True,
        workers=_effective_workers(cfg.workers),
    )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: dict[str, Path] = {}
    files["costs.csv"] = out_dir / "costs.csv"
    emit_costs_csv(table, files["costs.csv"], cfg.experiment, cfg.feedbacks)
    files["gaps.csv"] = out_dir / "gaps.csv"
    _emit_gaps_csv(table, files["gaps.csv"], cfg.experiment, cfg.feedbacks)
    files["errors.csv"] = out_dir / "errors.csv"
    _emit_errors_csv(table, files["errors.csv"], cfg.experiment, cfg.feedbacks)
    files["trajectories.csv"] = out_dir / "trajectories.csv"
    _emit_trajectories_csv(
        table,
        files["trajectories.csv"],
        cfg.experiment,
        cfg.feedbacks,
        cfg.trajectory_stride,
        problem.target.values,
        grid,
        to_physical=problem.to_nodal,
    )
    files["params.csv"] = out_dir / "params.csv"
    _emit_params_csv(files["params.csv"], problem, cfg, test_ens.values)
    files["field-samples.csv"] = out_dir / "field-samples.csv"
    _emit_field_samples_csv(files["field-samples.csv"], problem, cfg, test_ens.values)
    if cfg.plots:
        files.update(
            _emit_svgs(
                table,
                out_dir,
                cfg.experiment,
                cfg.feedbacks,
                problem.target.values,
                grid,
                to_physical=problem.to_nodal,
            )
        )
    files["metadata.json"] = out_dir / "metadata.json"
    metadata = _emit_metadata(
        files["metadata.json"],
        cfg,
        table,
        {
            "files": sorted(files),
            "train_seed": cfg.train_seed,
            "test_seed": cfg.test_seed,
            "test_param_norms": [
                _scalar_param(test_ens.values[i]) for i in range(test_ens.size)
            ],
        },
    )
    return RunResult(cfg.experiment, out_dir, files, table, metadata)


# --------------------------------------------------------------------------
# Command line


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ensemble-track",
        description=(
            "Synthesize the parameter-independent tracking feedback for a "
            "family of linear systems, score it against baselines, and "
            "write CSV/SVG/JSON artifacts."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind, blurb in (
        ("oscillator", "damped-oscillator family with scalar uncertainty"),
        ("cdr", "1-d convection-diffusion-reaction bench with random fields"),
    ):
        p = sub.add_parser(kind, help=blurb)
        p.add_argument("--config", metavar="PATH", help="TOML config file (defaults otherwise)")
        p.add_argument("--out", metavar="DIR", help="output directory override")
        p.add_argument("--steps", type=int, metavar="K", help="time steps override")
        p.add_argument(
            "--seed",
            type=int,
            metavar="S",
            help=(
                "seed override: for cdr sets training seed S and test seed "
                "S+1; recorded but unused for the deterministic oscillator"
            ),
        )
        p.add_argument(
            "--convention",
            choices=list(_CONVENTIONS),
            help="averaged-baseline weighting (replaces the config list)",
        )
    return parser


def _apply_overrides(cfg, args: argparse.Namespace):
    if args.out is not None:
        cfg.out_dir = args.out
    if args.steps is not None:
        if args.steps < 2:
            raise ConfigError("--steps must be at least 2")
        cfg.steps = args.steps
    if args.convention is not None:
        cfg.conventions = (args.convention,)
    if args.seed is not None:
        if isinstance(cfg, CdrConfig):
            cfg.train_seed = args.seed
            cfg.test_seed = args.seed + 1
        else:
            cfg.seed = args.seed
    _validate(cfg)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.command, args.config), args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    start = time.monotonic()
    try:
        result = run_oscillator(cfg) if args.command == "oscillator" else run_cdr(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    elapsed = time.monotonic() - start
    rows = result.metadata["row_count"]
    errors = result.metadata["error_count"]
    print(
        f"{result.experiment}: {rows} rows"
        + (f", {errors} failed rows (see errors.csv)" if errors else "")
        + f", {len(result.files)} files in {result.out_dir} [{elapsed:.1f}s]"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
