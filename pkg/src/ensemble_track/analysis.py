"""Diagnostics: invariance gaps, suboptimality gaps and uncertainty sweeps.

Two suboptimality gaps are reported for the common feedback on a test plant:
the *ensemble-objective* gap (cost of the copy-lifted closed-loop run in the
ensemble objective minus the optimal ensemble value, both from the same
simulated quadrature) and the *known-parameter* gap (cost of the common law
on the plant minus the cost of the plant's own optimal law).  Sweeps scan the
uncertainty level, record per-test-parameter cost breakdowns for every
requested feedback, and capture sup-norm state/control distances between the
stacked optimal run and the lifted common-feedback run.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .feedback import (
    AffineFeedbackLaw,
    TargetSignal,
    make_averaged_feedback,
    make_feedback,
    residual_forcing,
    solve_offset_and_gains,
)
from .model import ParameterEnsemble, ParameterFamily, TimeGrid, build_ensemble, delta_a
from .sim import (
    ControlledTrajectory,
    CostBreakdown,
    evaluate_cost,
    simulate_closed_loop,
    simulate_extended,
    solve_single_optimal,
)

__all__ = [
    "GapReport",
    "SweepRow",
    "SweepTable",
    "probe_states",
    "feedback_gap",
    "permutation_invariance_gap",
    "suboptimality_gaps",
    "uncertainty_sweep",
    "loglog_slope",
]


@dataclass(frozen=True, eq=False)
class GapReport:
    """One suboptimality comparison: ``gap = left - right``."""

    kind: str
    left: float
    right: float
    gap: float
    delta_a_norm: float
    meta: dict = field(default_factory=dict)


@dataclass(eq=False)
class SweepRow:
    """One (level, test parameter, feedback) cell of a sweep."""

    level: float
    test_id: int
    test_param: np.ndarray
    feedback: str
    convention: str
    cost: CostBreakdown | None = None
    gap_vs_single: float | None = None
    gap_ensemble_objective: float | None = None
    delta_a_norm: float = float("nan")
    state_sup_gap: float | None = None
    control_sup_gap: float | None = None
    error: str | None = None
    trajectory: ControlledTrajectory | None = None


@dataclass(eq=False)
class SweepTable:
    """All rows of an uncertainty sweep plus per-level metadata."""

    rows: list[SweepRow] = field(default_factory=list)
    level_meta: dict = field(default_factory=dict)

    def select(
        self, feedback: str | None = None, level: float | None = None
    ) -> list[SweepRow]:
        out = self.rows
        if feedback is not None:
            out = [r for r in out if r.feedback == feedback]
        if level is not None:
            out = [r for r in out if r.level == level]
        return out


def probe_states(
    dim: int,
    grid: TimeGrid,
    count: int = 100,
    seed: int = 0,
    trajectory: ControlledTrajectory | None = None,
) -> list[tuple[float, np.ndarray]]:
    """Probe set for feedback comparisons: seeded normals plus, optionally,
    the deviation states of a recorded run (at most ``count`` of them,
    evenly thinned).
    """
    rng = np.random.default_rng(seed)
    nodes = grid.nodes()
    probes = [
        (float(rng.choice(nodes)), rng.standard_normal(dim)) for _ in range(count)
    ]
    if trajectory is not None:
        step = max(1, trajectory.grid.steps // count)
        for k in range(0, trajectory.grid.steps + 1, step):
            probes.append((float(trajectory.grid.nodes()[k]), trajectory.states[k]))
    return probes


def feedback_gap(
    law_a: AffineFeedbackLaw,
    law_b: AffineFeedbackLaw,
    states: Sequence[np.ndarray],
) -> float:
    """Largest relative control difference over all grid nodes and states.

    Returns ``max ||u_a - u_b|| / (1 + ||z||)`` with the maximum over every
    node time of the shared grid and every probe state ``z``.
    """
    if law_a.grid != law_b.grid:
        raise ValueError("laws live on different grids")
    Z = np.column_stack([np.asarray(z, dtype=float) for z in states])
    scale = 1.0 + np.linalg.norm(Z, axis=0)
    dG = law_a.schedule.gains - law_b.schedule.gains
    dU = np.einsum("kmn,np->kmp", dG, Z)
    # gains are indexed by reversed time, offsets by forward time; both grids
    # coincide node-wise, so combining per index covers all node times.
    dO = law_a.schedule.offsets[::-1] - law_b.schedule.offsets[::-1]
    dU += dO[:, :, None]
    norms = np.linalg.norm(dU, axis=1) / scale[None, :]
    return float(norms.max())


def permutation_invariance_gap(
    family: ParameterFamily,
    ensemble: ParameterEnsemble,
    permutation: Sequence[int],
    target: TargetSignal,
    grid: TimeGrid,
    probes: Sequence[tuple[float, np.ndarray]],
    stride: int = 1,
) -> float:
    """Control discrepancy between the laws of an ensemble and its permutation.

    Evaluates both laws at the probe ``(t, z)`` pairs and returns the largest
    ``||u - u_perm|| / (1 + ||z||)``.
    """
    permuted = ensemble.permuted(permutation)
    laws = []
    for ens_values in (ensemble, permuted):
        ens = build_ensemble(family, ens_values)
        _, sched = solve_offset_and_gains(ens, grid, target, stride)
        laws.append(make_feedback(sched))
    worst = 0.0
    for t, z in probes:
        du = laws[0](t, z) - laws[1](t, z)
        worst = max(worst, float(np.linalg.norm(du)) / (1.0 + float(np.linalg.norm(z))))
    return worst


@dataclass(eq=False)
class _Pipeline:
    """Shared per-ensemble artefacts for gap computations."""

    ens: object
    law: AffineFeedbackLaw
    forcing: np.ndarray
    extended: ControlledTrajectory
    extended_cost: CostBreakdown


def _build_pipeline(
    family: ParameterFamily,
    ensemble: ParameterEnsemble,
    target: TargetSignal,
    y0: np.ndarray,
    grid: TimeGrid,
    stride: int,
) -> _Pipeline:
    ens = build_ensemble(family, ensemble)
    traj, sched = solve_offset_and_gains(ens, grid, target, stride)
    law = make_feedback(sched)
    forcing = residual_forcing(ens, target)
    extended = simulate_extended(ens, traj, sched, forcing, y0 - target.values[0], grid)
    extended_cost = evaluate_cost(extended, None, family.Q, family.P)
    return _Pipeline(ens, law, forcing, extended, extended_cost)


def _lifted_cost(
    run: ControlledTrajectory, target: TargetSignal, family: ParameterFamily, blocks: int
) -> CostBreakdown:
    """Ensemble objective of the copy-lifted single run."""
    deviation = run.states - target.values
    lifted = ControlledTrajectory(
        grid=run.grid,
        states=np.tile(deviation, (1, blocks)),
        controls=run.controls,
        feedback=run.feedback,
        sigma=run.sigma,
        blocks=blocks,
    )
    return evaluate_cost(lifted, None, family.Q, family.P)


def suboptimality_gaps(
    family: ParameterFamily,
    ensemble: ParameterEnsemble,
    sigma,
    target: TargetSignal,
    y0: np.ndarray,
    grid: TimeGrid,
    stride: int = 1,
    _pipeline: _Pipeline | None = None,
) -> tuple[GapReport, GapReport]:
    """Both suboptimality gaps of the common law on the plant ``sigma``.

    The first report compares the ensemble objective of the copy-lifted
    closed-loop run with the optimal ensemble value (both simulated); the
    second compares the realised cost on the test plant with the
    known-parameter optimum.
    """
    pipe = _pipeline or _build_pipeline(family, ensemble, target, y0, grid, stride)
    _, norm = delta_a(family, ensemble, sigma)
    run = simulate_closed_loop(family, sigma, pipe.law, target, y0, grid)
    cost = evaluate_cost(run, target, family.Q, family.P)
    lifted = _lifted_cost(run, target, family, ensemble.size)
    ens_report = GapReport(
        kind="ensemble-objective",
        left=lifted.total,
        right=pipe.extended_cost.total,
        gap=lifted.total - pipe.extended_cost.total,
        delta_a_norm=norm,
        meta={"sigma": np.atleast_1d(np.asarray(sigma, dtype=float))},
    )
    _, single_cost = solve_single_optimal(family, sigma, target, y0, grid, stride)
    single_report = GapReport(
        kind="known-parameter",
        left=cost.total,
        right=single_cost.total,
        gap=cost.total - single_cost.total,
        delta_a_norm=norm,
        meta={"sigma": np.atleast_1d(np.asarray(sigma, dtype=float))},
    )
    return ens_report, single_report


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log slope needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def uncertainty_sweep(
    family: ParameterFamily,
    levels: Sequence[float],
    train_spec: Callable[[float], ParameterEnsemble],
    test_spec: Callable[[float], ParameterEnsemble],
    target: TargetSignal,
    y0: np.ndarray,
    grid: TimeGrid,
    stride: int = 1,
    conventions: Sequence[str] = ("unit",),
    compute_gaps: bool = True,
    keep_trajectories: bool = False,
    workers: int = 1,
) -> SweepTable:
    """Scan uncertainty levels; cost every feedback on every test parameter.

    For each level the training ensemble feeds the common law and one
    averaged baseline per convention.  With ``compute_gaps`` the stacked
    optimal run, the per-parameter optimal costs, both suboptimality gaps and
    the sup-norm state/control distances are recorded on the common-law rows
    (the averaged rows still get their known-parameter gap).  Per-row
    failures are recorded on the row, never raised.
    """
    table = SweepTable()
    y0 = np.asarray(y0, dtype=float)
    for level in levels:
        train = train_spec(level)
        test = test_spec(level)
        ens = build_ensemble(family, train)
        traj, sched = solve_offset_and_gains(ens, grid, target, stride)
        law = make_feedback(sched)
        forcing = residual_forcing(ens, target)
        laws = [law] + [
            make_averaged_feedback(family, train, target, grid, convention=conv, stride=stride)
            for conv in conventions
        ]
        extended = extended_cost = None
        if compute_gaps:
            extended = simulate_extended(
                ens, traj, sched, forcing, y0 - target.values[0], grid
            )
            extended_cost = evaluate_cost(extended, None, family.Q, family.P)
        table.level_meta[level] = {
            "train": train,
            "riccati_max_asymmetry": traj.max_asymmetry(),
            "riccati_min_eigenvalue_ratio": traj.min_eigenvalue_ratio(),
            "extended_cost": extended_cost,
        }

        def run_cell(item: tuple[int, np.ndarray, AffineFeedbackLaw]) -> SweepRow:
            test_id, sigma, cell_law = item
            row = SweepRow(
                level=level,
                test_id=test_id,
                test_param=sigma,
                feedback=cell_law.name,
                convention=cell_law.convention or "",
            )
            try:
                _, row.delta_a_norm = delta_a(family, train, sigma)
                run = simulate_closed_loop(family, sigma, cell_law, target, y0, grid)
                row.cost = evaluate_cost(run, target, family.Q, family.P)
                if keep_trajectories:
                    row.trajectory = run
                if compute_gaps:
                    _, single_cost = solve_single_optimal(
                        family, sigma, target, y0, grid, stride
                    )
                    row.gap_vs_single = row.cost.total - single_cost.total
                    if cell_law.name == law.name:
                        lifted = _lifted_cost(run, target, family, train.size)
                        row.gap_ensemble_objective = lifted.total - extended_cost.total
                        dev = np.tile(run.states - target.values, (1, train.size))
                        row.state_sup_gap = float(
                            np.linalg.norm(dev - extended.states, axis=1).max()
                        )
                        row.control_sup_gap = float(
                            np.linalg.norm(run.controls - extended.controls, axis=1).max()
                        )
            except (ValueError, ArithmeticError, RuntimeError) as exc:
                row.error = str(exc)
            return row

        cells = [
            (test_id, sigma, cell_law)
            for test_id, sigma in enumerate(test.values)
            for cell_law in laws
        ]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(run_cell, cells))
        else:
            rows = [run_cell(cell) for cell in cells]
        table.rows.extend(rows)
    return table
