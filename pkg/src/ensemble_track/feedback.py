"""Affine tracking feedback synthesised from the ensemble Riccati flow.

The common control law has the form ``u(t, z) = -(G(T - t) z + o(t))`` where
``z`` is the deviation of the plant state from the target, ``G`` compresses
the stacked Riccati kernel through the copy operator (``G = B* Pi E``) and the
offset ``o = B* h`` comes from the affine backward equation driven by the
residual forcing ``f_i = A(sigma_i) g - g'``.  Gains are recorded at every
grid node during the single backward sweep shared with
:mod:`ensemble_track.riccati`; between nodes both ``G`` and ``o`` are linearly
interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    EnsembleSystem,
    ParameterEnsemble,
    ParameterFamily,
    TimeGrid,
    build_ensemble,
)
from .riccati import RiccatiTrajectory, _sweep

__all__ = [
    "CONVENTIONS",
    "TargetSignal",
    "GainSchedule",
    "AffineFeedbackLaw",
    "residual_forcing",
    "solve_offset_and_gains",
    "make_feedback",
    "make_averaged_feedback",
]

#: Weighting conventions for the averaged baseline: "unit" solves the
#: single-parameter problem with the plain weights Q*Q and P*P; the
#: "paper-literal" variant keeps the 1/N-scaled weights of the ensemble
#: objective (realised by scaling Q and P with 1/sqrt(N)).
CONVENTIONS = ("unit", "paper-literal")


@dataclass(frozen=True, eq=False)
class TargetSignal:
    """Target trajectory and its time derivative sampled on the grid."""

    grid: TimeGrid
    values: np.ndarray
    derivatives: np.ndarray
    provenance: str = "analytic"

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float, copy=True)
        ders = np.array(self.derivatives, dtype=float, copy=True)
        expected = self.grid.steps + 1
        if vals.ndim != 2 or vals.shape[0] != expected:
            raise ValueError(
                f"target values must be ({expected}, n), got {vals.shape}"
            )
        if ders.shape != vals.shape:
            raise ValueError(
                f"target derivatives shape {ders.shape} does not match values {vals.shape}"
            )
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(ders))):
            raise ValueError("target signal contains non-finite entries")
        if self.provenance not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        vals.setflags(write=False)
        ders.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "derivatives", ders)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_samples(cls, grid: TimeGrid, values: np.ndarray) -> "TargetSignal":
        """Build from samples alone, differentiating by central differences."""
        values = np.asarray(values, dtype=float)
        ders = np.gradient(values, grid.dt, axis=0, edge_order=2)
        return cls(grid=grid, values=values, derivatives=ders, provenance="finite-difference")


def _interp_nodes(samples: np.ndarray, pos: float) -> np.ndarray:
    """Linear interpolation in node-index coordinates, exact at nodes."""
    last = samples.shape[0] - 1
    j = int(np.floor(pos))
    j = min(max(j, 0), last)
    frac = pos - j
    if frac <= 1e-9 or j == last:
        return samples[j]
    if frac >= 1.0 - 1e-9:
        return samples[j + 1]
    return (1.0 - frac) * samples[j] + frac * samples[j + 1]


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Gains, offsets and the cached ingredients of the optimal-cost formula.

    ``gains[j]`` is ``G`` at reversed time ``j * dt`` (so the gain acting at
    forward time ``t`` is ``gains`` interpolated at ``(T - t)/dt``);
    ``offsets[k]`` is ``o`` at forward node ``t_k``, with ``offsets[-1] = 0``
    exactly.  ``pi_final``, ``h_initial`` and ``cost_integral`` cache the
    terms of the optimal-cost formula; they are ``None`` when a schedule is
    assembled without the backward solve.
    """

    grid: TimeGrid
    gains: np.ndarray
    offsets: np.ndarray
    block_count: int
    block_dim: int
    pi_final: np.ndarray | None = None
    h_initial: np.ndarray | None = None
    cost_integral: float | None = None

    def __post_init__(self) -> None:
        expected = self.grid.steps + 1
        if self.gains.shape[0] != expected or self.offsets.shape[0] != expected:
            raise ValueError(
                f"gains/offsets must carry {expected} nodes, got "
                f"{self.gains.shape[0]} and {self.offsets.shape[0]}"
            )

    @property
    def input_dim(self) -> int:
        return self.gains.shape[1]

    def gain_at(self, t: float) -> np.ndarray:
        """Gain acting at forward time ``t`` (interpolated in reversed time)."""
        T = self.grid.horizon
        slop = 1e-9 * T
        if t < -slop or t > T + slop:
            raise ValueError(f"t = {t} outside the horizon [0, {T}]")
        tau = min(max(T - t, 0.0), T)
        return _interp_nodes(self.gains, tau / self.grid.dt)

    def offset_at(self, t: float) -> np.ndarray:
        """Offset ``o(t)``, linearly interpolated between forward nodes."""
        T = self.grid.horizon
        slop = 1e-9 * T
        if t < -slop or t > T + slop:
            raise ValueError(f"t = {t} outside the horizon [0, {T}]")
        return _interp_nodes(self.offsets, min(max(t, 0.0), T) / self.grid.dt)


@dataclass(frozen=True, eq=False)
class AffineFeedbackLaw:
    """Parameter-independent affine law ``u(t, z) = -(G(T - t) z + o(t))``."""

    schedule: GainSchedule
    name: str
    convention: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.schedule.grid

    def __call__(self, t: float, z: np.ndarray) -> np.ndarray:
        """Control for deviation state ``z`` (vector, or ``(n, batch)``)."""
        G = self.schedule.gain_at(t)
        o = self.schedule.offset_at(t)
        u = G @ np.asarray(z, dtype=float)
        if u.ndim == 1:
            return -(u + o)
        return -(u + o[:, None])


def residual_forcing(ens: EnsembleSystem, target: TargetSignal) -> np.ndarray:
    """Stacked forcing ``f_i = A(sigma_i) g - g'`` at every node, shape (K+1, N n)."""
    if target.dim != ens.n:
        raise ValueError(
            f"target dimension {target.dim} does not match block dimension {ens.n}"
        )
    # blocks: (N, n, n); values: (K+1, n) -> (K+1, N, n)
    Ag = np.einsum("iab,kb->kia", np.asarray(ens.blocks), target.values)
    f = Ag - target.derivatives[:, None, :]
    return f.reshape(target.values.shape[0], ens.dim)


def solve_offset_and_gains(
    ens: EnsembleSystem,
    grid: TimeGrid,
    target: TargetSignal,
    stride: int = 1,
) -> tuple[RiccatiTrajectory, GainSchedule]:
    """One backward sweep: Riccati flow, offset flow, gains and cost cache.

    The offset equation is advanced with the stage values of the same Riccati
    integration; the running integral of ``<h, f> - ||B* h||^2 / 2`` is
    accumulated with trapezoid weights on the grid nodes.
    """
    forcing = residual_forcing(ens, target)
    traj, extras = _sweep(ens, grid, stride, forcing=forcing)
    gains, offsets_rev, h_final, cost_integral = extras
    sched = GainSchedule(
        grid=grid,
        gains=gains,
        offsets=offsets_rev[::-1].copy(),
        block_count=ens.size,
        block_dim=ens.n,
        pi_final=traj.final,
        h_initial=h_final,
        cost_integral=cost_integral,
    )
    return traj, sched


def make_feedback(
    sched: GainSchedule, name: str = "ensemble", convention: str | None = None
) -> AffineFeedbackLaw:
    """Wrap a gain schedule as a callable affine law."""
    return AffineFeedbackLaw(schedule=sched, name=name, convention=convention)


def make_averaged_feedback(
    family: ParameterFamily,
    ensemble: ParameterEnsemble,
    target: TargetSignal,
    grid: TimeGrid,
    convention: str = "unit",
    stride: int = 1,
) -> AffineFeedbackLaw:
    """Baseline law: the single-parameter design at the ensemble average.

    ``convention`` picks the weighting of that single-parameter problem (see
    :data:`CONVENTIONS`); the choice and the averaged parameter are recorded
    on the returned law.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}, expected one of {CONVENTIONS}")
    sigma_bar = ensemble.mean()
    fam = family
    if convention == "paper-literal":
        scale = 1.0 / np.sqrt(ensemble.size)
        fam = replace(family, Q=family.Q * scale, P=family.P * scale)
    singleton = ParameterEnsemble(sigma_bar[None, :])
    _, sched = solve_offset_and_gains(build_ensemble(fam, singleton), grid, target, stride)
    return AffineFeedbackLaw(
        schedule=sched,
        name="averaged",
        convention=convention,
        meta={"sigma_bar": sigma_bar, "training_size": ensemble.size},
    )
