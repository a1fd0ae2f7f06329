"""Concrete experiment setups: the damped oscillator and the 1-d PDE bench.

The oscillator family is ``A(sigma) = [[0, 1], [-1, -sigma]]`` with force
input, position-weighted output and identity terminal weight; its target is
the free motion of the ``sigma = 1`` member from ``(1, 0)``.  Training
ensembles are symmetric grids ``{(-1 + 2r/(R)) * l}``.

The PDE bench wraps :mod:`ensemble_track.pde1d` into a
:class:`~ensemble_track.model.ParameterFamily` acting on *energy* coordinates
``x_hat = sqrt(w) * x`` so that the generic Euclidean pipeline realises the
quadrature inner product exactly; nodal values are recovered by
``x = x_hat / sqrt(w)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .feedback import TargetSignal
from .model import ParameterEnsemble, ParameterFamily, TimeGrid
from .pde1d import (
    DiffusionSample,
    DiffusionSpec,
    Mesh1D,
    assemble_cdr,
    build_actuators,
    build_projection_q,
    default_modes,
    field_values,
    heat_target,
    sample_diffusion,
)

__all__ = [
    "oscillator_family",
    "oscillator_initial_state",
    "oscillator_target",
    "ensemble_grid",
    "CdrProblem",
    "cdr_problem",
]


def oscillator_family() -> ParameterFamily:
    """Damped oscillator family with parameter-dependent damping."""

    def drift(sigma: np.ndarray) -> np.ndarray:
        return np.array([[0.0, 1.0], [-1.0, -sigma[0]]])

    return ParameterFamily(
        name="oscillator",
        param_dim=1,
        a=drift,
        B=np.array([[0.0], [1.0]]),
        Q=np.array([[np.sqrt(10.0), 0.0]]),
        P=np.eye(2),
    )


def oscillator_initial_state() -> np.ndarray:
    return np.array([1.0, 0.0])


def oscillator_target(grid: TimeGrid) -> TargetSignal:
    """Free motion of the unit-damping member from ``(1, 0)``.

    Stepped with the exact flow ``expm(A dt)``; derivatives apply the
    generator, so the residual forcing of the generating member vanishes
    identically.
    """
    A = np.array([[0.0, 1.0], [-1.0, -1.0]])
    E = scipy.linalg.expm(A * grid.dt)
    values = np.empty((grid.steps + 1, 2))
    values[0] = oscillator_initial_state()
    for k in range(grid.steps):
        values[k + 1] = E @ values[k]
    return TargetSignal(grid=grid, values=values, derivatives=values @ A.T, provenance="analytic")


def ensemble_grid(level: float, count: int) -> ParameterEnsemble:
    """Symmetric scalar grid ``{(-1 + 2r/(count-1)) * level : r = 0..count-1}``."""
    if count < 2:
        raise ValueError(f"grid needs at least 2 points, got {count}")
    r = np.arange(count, dtype=float)
    return ParameterEnsemble((-1.0 + 2.0 * r / (count - 1)) * level)


@dataclass(frozen=True, eq=False)
class CdrProblem:
    """PDE bench bundle: family in energy coordinates plus conversions."""

    mesh: Mesh1D
    spec: DiffusionSpec
    family: ParameterFamily
    target: TargetSignal
    y0_hat: np.ndarray
    convection: float
    reaction: float
    train_seed: int = 0
    test_seed: int = 0

    def to_nodal(self, states: np.ndarray) -> np.ndarray:
        """Convert energy-coordinate states (last axis) back to nodal values."""
        return states / np.sqrt(self.mesh.weights())

    def train_ensemble(
        self, seed: int, draws: int, scale: float
    ) -> tuple[ParameterEnsemble, list[DiffusionSample]]:
        """Training ensemble: ``draws`` independent fields, coefficients scaled."""
        samples = [sample_diffusion(self.spec, self.mesh, seed, i, scale) for i in range(draws)]
        return ParameterEnsemble(np.stack([s.parameter for s in samples])), samples

    def test_samples(self, seed: int, draws: int) -> list[DiffusionSample]:
        """Unscaled test fields drawn from their own seed."""
        return [sample_diffusion(self.spec, self.mesh, seed, i, 1.0) for i in range(draws)]


def cdr_problem(
    grid: TimeGrid,
    nodes: int = 101,
    base: float = 0.1,
    decay: float = 1.5,
    terms: int = 100,
    reaction: float = -1.0,
    convection: float = 0.0,
    actuator_intervals: Sequence[tuple[float, float]] = ((0.1, 0.3), (0.4, 0.6), (0.7, 0.9)),
    output_weight: float = float(np.sqrt(10.0)),
    kappa: float = 0.1,
    train_seed: int = 0,
    test_seed: int = 0,
) -> CdrProblem:
    """Assemble the PDE bench in energy coordinates.

    The target is the heat flow ``g' = kappa Lap g`` from ``sin(2 pi s) - 1``;
    the output weights the projection onto the default low modes, and the
    terminal weight is the quadrature norm (identity in energy coordinates).
    """
    mesh = Mesh1D(nodes)
    spec = DiffusionSpec(base=base, decay=decay, terms=terms)
    sw = np.sqrt(mesh.weights())
    inv_sw = 1.0 / sw

    def drift(sigma: np.ndarray) -> np.ndarray:
        A = assemble_cdr(field_values(spec, mesh, sigma), convection, reaction, mesh)
        return (sw[:, None] * A) * inv_sw[None, :]

    B_hat = sw[:, None] * build_actuators(mesh, actuator_intervals)
    Q_hat = build_projection_q(mesh, default_modes(), output_weight) * inv_sw[None, :]
    family = ParameterFamily(
        name="cdr", param_dim=terms, a=drift, B=B_hat, Q=Q_hat, P=np.eye(nodes)
    )

    s = mesh.nodes()
    y0 = np.sin(2.0 * np.pi * s) - 1.0
    target_nodal = heat_target(mesh, kappa, y0, grid)
    target = TargetSignal(
        grid=grid,
        values=target_nodal.values * sw[None, :],
        derivatives=target_nodal.derivatives * sw[None, :],
        provenance="analytic",
    )
    return CdrProblem(
        mesh=mesh,
        spec=spec,
        family=family,
        target=target,
        y0_hat=y0 * sw,
        convection=convection,
        reaction=reaction,
        train_seed=train_seed,
        test_seed=test_seed,
    )
