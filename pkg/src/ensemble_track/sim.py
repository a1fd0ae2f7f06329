"""Closed-loop simulation and cost evaluation.

Simulations integrate in deviation coordinates ``x = y - g`` (the closed loop
there is ``x' = A x + B u(t, x) + f`` with the residual forcing
``f = A g - g'``), which keeps the tracking fixed point and the
degenerate-ensemble comparisons exact to rounding; reported plant states add
the target back.  The extended (stacked) simulation stays in deviation
coordinates because its cost is measured against zero.  All integrals use
trapezoid weights on the grid nodes — the same quadrature as the cost cache —
so optimality orderings hold to rounding rather than to quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrate import lawson_step, step_exponentials
from .feedback import AffineFeedbackLaw, GainSchedule, TargetSignal, _interp_nodes
from .model import EnsembleSystem, ParameterFamily, TimeGrid, extend
from .riccati import DivergenceError, RiccatiTrajectory, eval_riccati

__all__ = [
    "ControlledTrajectory",
    "CostBreakdown",
    "simulate_closed_loop",
    "simulate_extended",
    "evaluate_cost",
    "optimal_cost_formula",
    "solve_single_optimal",
]


@dataclass(frozen=True, eq=False)
class ControlledTrajectory:
    """States and controls recorded at every grid node.

    ``blocks = 1`` for a single plant (states are plant states); stacked runs
    carry ``blocks = N`` and keep deviation coordinates.
    """

    grid: TimeGrid
    states: np.ndarray
    controls: np.ndarray
    feedback: str
    sigma: np.ndarray | None = None
    blocks: int = 1

    def __post_init__(self) -> None:
        expected = self.grid.steps + 1
        if self.states.shape[0] != expected or self.controls.shape[0] != expected:
            raise ValueError(
                f"states/controls must carry {expected} nodes, got "
                f"{self.states.shape[0]} and {self.controls.shape[0]}"
            )
        if self.states.shape[1] % self.blocks != 0:
            raise ValueError(
                f"state dimension {self.states.shape[1]} is not divisible by "
                f"block count {self.blocks}"
            )

    @property
    def block_dim(self) -> int:
        return self.states.shape[1] // self.blocks


@dataclass(frozen=True)
class CostBreakdown:
    """Tracking, control and terminal cost contributions; ``total`` is their sum."""

    tracking: float
    control: float
    terminal: float
    total: float

    @classmethod
    def build(cls, tracking: float, control: float, terminal: float) -> "CostBreakdown":
        return cls(tracking, control, terminal, tracking + control + terminal)


def _trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(grid.steps + 1, grid.dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def simulate_closed_loop(
    family: ParameterFamily,
    sigma,
    law: AffineFeedbackLaw,
    target: TargetSignal,
    y0: np.ndarray,
    grid: TimeGrid,
) -> ControlledTrajectory:
    """Run one plant of the family under an affine law against the target.

    Controls are evaluated on the deviation ``y - g``; recorded controls are
    the node values ``u_k = law(t_k, y_k - g_k)``.
    """
    if law.grid != grid:
        raise ValueError("feedback law was synthesised on a different grid")
    A = family.drift(sigma)
    B = family.B
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (family.n,):
        raise ValueError(f"initial state must have shape ({family.n},), got {y0.shape}")
    g = target.values
    forcing = g @ A.T - target.derivatives
    dt = grid.dt
    E2, E1 = step_exponentials(A, dt)
    K = grid.steps

    def remainder(t: float, x: np.ndarray) -> np.ndarray:
        f = _interp_nodes(forcing, t / dt)
        return B @ law(t, x) + f

    states = np.empty((K + 1, family.n))
    controls = np.empty((K + 1, family.m))
    x = y0 - g[0]
    times = grid.nodes()
    for k in range(K):
        states[k] = x + g[k]
        controls[k] = law(times[k], x)
        x = lawson_step(E2, E1, x, times[k], dt, remainder)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(
                f"closed-loop integration diverged at step {k + 1}; refine the time grid",
                step=k + 1,
            )
    states[K] = x + g[K]
    controls[K] = law(times[K], x)
    return ControlledTrajectory(
        grid=grid,
        states=states,
        controls=controls,
        feedback=law.name,
        sigma=np.atleast_1d(np.asarray(sigma, dtype=float)),
        blocks=1,
    )


def simulate_extended(
    ens: EnsembleSystem,
    traj: RiccatiTrajectory,
    sched: GainSchedule,
    forcing: np.ndarray,
    x0: np.ndarray,
    grid: TimeGrid,
) -> ControlledTrajectory:
    """Optimal closed loop of the stacked system, in deviation coordinates.

    Starts from the copy-extended ``x0`` (the per-block deviation ``y0 - g(0)``)
    and uses the checkpointed Riccati kernel, interpolated between stored
    nodes, for the state part of the control; the recorded control is
    ``u = -(B* Pi x + o)``.
    """
    if traj.grid != grid or sched.grid != grid:
        raise ValueError(
            "Riccati checkpoints or schedule were produced on a different grid; "
            "missing checkpoints for this simulation"
        )
    if traj.dim != ens.dim:
        raise ValueError(
            f"Riccati dimension {traj.dim} does not match ensemble dimension {ens.dim}"
        )
    forcing = np.asarray(forcing, dtype=float)
    K = grid.steps
    if forcing.shape != (K + 1, ens.dim):
        raise ValueError(f"forcing must have shape ({K + 1}, {ens.dim}), got {forcing.shape}")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (ens.n,):
        raise ValueError(f"x0 must be one block of shape ({ens.n},), got {x0.shape}")

    dt = grid.dt
    T = grid.horizon
    Bs = ens.stacked_input()
    exps = [step_exponentials(A, dt) for A in np.asarray(ens.blocks)]
    E2 = np.stack([e[0] for e in exps])
    E1 = np.stack([e[1] for e in exps])
    N, n = ens.size, ens.n

    pi_cache: dict[float, np.ndarray] = {}

    def pi_at(tau: float) -> np.ndarray:
        hit = pi_cache.get(tau)
        if hit is None:
            if len(pi_cache) > 4:
                pi_cache.clear()
            hit = pi_cache.setdefault(tau, eval_riccati(traj, tau))
        return hit

    def control(t: float, x: np.ndarray) -> np.ndarray:
        return -(Bs.T @ (pi_at(T - t) @ x) + sched.offset_at(t))

    def remainder(t: float, x: np.ndarray) -> np.ndarray:
        return Bs @ control(t, x) + _interp_nodes(forcing, t / dt)

    def block_flow(E: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.matmul(E, x.reshape(N, n, 1)).ravel()

    states = np.empty((K + 1, ens.dim))
    controls = np.empty((K + 1, ens.m))
    x = extend(x0, N)
    times = grid.nodes()
    h = dt
    for k in range(K):
        states[k] = x
        controls[k] = control(times[k], x)
        t = times[k]
        r1 = remainder(t, x)
        r2 = remainder(t + h / 2.0, block_flow(E2, x + (h / 2.0) * r1))
        r3 = remainder(t + h / 2.0, block_flow(E2, x) + (h / 2.0) * r2)
        r4 = remainder(t + h, block_flow(E1, x) + h * block_flow(E2, r3))
        x = block_flow(E1, x) + (h / 6.0) * (block_flow(E1, r1) + 2.0 * block_flow(E2, r2 + r3) + r4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(
                f"extended integration diverged at step {k + 1}; refine the time grid",
                step=k + 1,
            )
    states[K] = x
    controls[K] = control(times[K], x)
    return ControlledTrajectory(
        grid=grid,
        states=states,
        controls=controls,
        feedback="ensemble-optimal",
        sigma=None,
        blocks=N,
    )


def evaluate_cost(
    traj: ControlledTrajectory,
    target: TargetSignal | None,
    Q: np.ndarray,
    P: np.ndarray,
) -> CostBreakdown:
    """Trapezoid cost of a recorded run.

    Tracking and terminal deviations are measured against the target (or zero
    when ``target`` is ``None``, as for stacked runs recorded in deviation
    coordinates); stacked runs average the state terms over the blocks.
    """
    b = traj.blocks
    n = traj.block_dim
    K = traj.grid.steps
    dev = traj.states.reshape(K + 1, b, n)
    if target is not None:
        if target.dim != n:
            raise ValueError(
                f"target dimension {target.dim} does not match block dimension {n}"
            )
        dev = dev - target.values[:, None, :]
    w = _trapezoid_weights(traj.grid)
    qdev = np.einsum("qn,kbn->kbq", np.asarray(Q, dtype=float), dev)
    tracking = 0.5 / b * float(w @ (qdev**2).sum(axis=(1, 2)))
    control = 0.5 * float(w @ (traj.controls**2).sum(axis=1))
    pdev = np.einsum("zn,bn->bz", np.asarray(P, dtype=float), dev[-1])
    terminal = 0.5 / b * float((pdev**2).sum())
    return CostBreakdown.build(tracking, control, terminal)


def optimal_cost_formula(sched: GainSchedule, x0: np.ndarray) -> float:
    """Predicted optimal ensemble cost from the cached backward sweep.

    Evaluates ``(1/2) <Pi(T) E x0, E x0> + <h(0), E x0> + integral`` with the
    cached accumulator; raises if the schedule carries no cache.
    """
    if sched.pi_final is None or sched.h_initial is None or sched.cost_integral is None:
        raise ValueError("gain schedule carries no cost cache; run the backward solve")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sched.block_dim,):
        raise ValueError(f"x0 must have shape ({sched.block_dim},), got {x0.shape}")
    xe = extend(x0, sched.block_count)
    return (
        0.5 * float(xe @ (sched.pi_final @ xe))
        + float(sched.h_initial @ xe)
        + sched.cost_integral
    )


def solve_single_optimal(
    family: ParameterFamily,
    sigma,
    target: TargetSignal,
    y0: np.ndarray,
    grid: TimeGrid,
    stride: int = 1,
) -> tuple[ControlledTrajectory, CostBreakdown]:
    """Known-parameter optimum: the size-one pipeline at ``sigma``, simulated.

    Uses unit weights (``Q* Q``, ``P* P``); returns the closed-loop run and
    its trapezoid cost.
    """
    from .feedback import make_feedback, solve_offset_and_gains
    from .model import ParameterEnsemble, build_ensemble

    singleton = ParameterEnsemble(family.parameter(sigma)[None, :])
    ens = build_ensemble(family, singleton)
    _, sched = solve_offset_and_gains(ens, grid, target, stride)
    law = make_feedback(sched, name="single-optimal")
    traj = simulate_closed_loop(family, sigma, law, target, y0, grid)
    return traj, evaluate_cost(traj, target, family.Q, family.P)
