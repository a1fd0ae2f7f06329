"""1-d convection–diffusion–reaction test bench on the unit interval.

Provides the spatial side of the PDE experiment: a uniform mesh with
trapezoid quadrature weights, lognormal diffusion fields sampled from a
cosine/sine expansion with power-law decay, a conservative finite-difference
assembly of ``y' = div(a grad y) - c y - div(b y)`` with homogeneous Neumann
boundaries, indicator actuators, a weighted low-order output projection, and
a heat-flow target trajectory.

The assembled operator acts on nodal values.  It is self-adjoint (for
``b = 0``, ``c = 0``) with respect to the trapezoid inner product
``<x, y>_w = sum_j w_j x_j y_j``, not the Euclidean one; consumers that need
Euclidean adjoints conjugate by ``diag(sqrt(w))`` (see
:func:`ensemble_track.problems.cdr_problem`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .feedback import TargetSignal
from .integrate import step_exponentials
from .model import TimeGrid

__all__ = [
    "Mesh1D",
    "DiffusionSpec",
    "DiffusionSample",
    "standard_normals",
    "sample_diffusion",
    "field_values",
    "assemble_cdr",
    "build_actuators",
    "build_projection_q",
    "projection_matrix",
    "default_modes",
    "heat_target",
]


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh with ``n`` nodes on ``[0, 1]`` and trapezoid weights."""

    n: int

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ValueError(f"mesh needs at least 3 nodes, got {self.n}")

    @property
    def ds(self) -> float:
        return 1.0 / (self.n - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights; they sum to one exactly."""
        w = np.full(self.n, self.ds)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


@dataclass(frozen=True)
class DiffusionSpec:
    """Lognormal diffusion field family ``a = base * exp(l * sum sigma_k psi_k)``.

    ``psi_k`` has amplitude ``k**-decay``; odd indices carry cosines
    ``cos(((k+1)/2) pi s)`` and even indices sines ``sin((k/2) pi s)``.
    """

    base: float = 0.1
    decay: float = 1.5
    terms: int = 100

    def __post_init__(self) -> None:
        if self.base <= 0:
            raise ValueError(f"base diffusivity must be positive, got {self.base}")
        if self.terms < 1:
            raise ValueError(f"need at least one expansion term, got {self.terms}")

    def basis(self, mesh: Mesh1D) -> np.ndarray:
        """Basis functions sampled on the mesh, shape ``(terms, n)``."""
        s = mesh.nodes()
        out = np.empty((self.terms, mesh.n))
        for k in range(1, self.terms + 1):
            amp = float(k) ** (-self.decay)
            if k % 2 == 1:
                out[k - 1] = amp * np.cos(((k + 1) // 2) * np.pi * s)
            else:
                out[k - 1] = amp * np.sin((k // 2) * np.pi * s)
        return out


@dataclass(frozen=True, eq=False)
class DiffusionSample:
    """One drawn diffusion field: raw coefficients, scale and nodal values."""

    raw: np.ndarray
    scale: float
    values: np.ndarray
    spec: DiffusionSpec

    @property
    def parameter(self) -> np.ndarray:
        """Scaled coefficient vector; this is the plant parameter."""
        return self.scale * self.raw


def standard_normals(seed: int, draw_index: int, count: int) -> np.ndarray:
    """Reproducible standard normals from a counter-based generator.

    Pair ``p`` of variates comes from ``Philox(key=[seed, draw_index],
    counter=[p, 0, 0, 0])``: two raw 64-bit words are mapped to uniforms
    ``u = (word >> 11) * 2**-53`` and combined by the Box–Muller transform
    ``sqrt(-2 log(1 - u0)) * (cos, sin)(2 pi u1)``.  The value of any variate
    therefore depends only on ``(seed, draw_index, index)``.
    """
    out = np.empty(count)
    for p in range((count + 1) // 2):
        bg = np.random.Philox(
            key=np.array([seed, draw_index], dtype=np.uint64),
            counter=np.array([p, 0, 0, 0], dtype=np.uint64),
        )
        raw = bg.random_raw(2)
        u = (raw >> np.uint64(11)) * 2.0**-53
        radius = np.sqrt(-2.0 * np.log1p(-u[0]))
        angle = 2.0 * np.pi * u[1]
        out[2 * p] = radius * np.cos(angle)
        if 2 * p + 1 < count:
            out[2 * p + 1] = radius * np.sin(angle)
    return out


def sample_diffusion(
    spec: DiffusionSpec,
    mesh: Mesh1D,
    seed: int,
    draw_index: int,
    scale: float = 1.0,
) -> DiffusionSample:
    """Draw one lognormal diffusion field (see :func:`standard_normals`)."""
    raw = standard_normals(seed, draw_index, spec.terms)
    values = spec.base * np.exp(scale * (raw @ spec.basis(mesh)))
    return DiffusionSample(raw=raw, scale=float(scale), values=values, spec=spec)


def field_values(spec: DiffusionSpec, mesh: Mesh1D, parameter: np.ndarray) -> np.ndarray:
    """Nodal field for an explicit (already scaled) coefficient vector."""
    parameter = np.asarray(parameter, dtype=float)
    if parameter.shape != (spec.terms,):
        raise ValueError(f"parameter must have shape ({spec.terms},), got {parameter.shape}")
    return spec.base * np.exp(parameter @ spec.basis(mesh))


def assemble_cdr(sample, convection: float, reaction: float, mesh: Mesh1D) -> np.ndarray:
    """Nodal generator of ``y' = div(a grad y) - c y - b dy/ds``, Neumann walls.

    ``sample`` is a :class:`DiffusionSample` or a nodal array of diffusivity
    values.  Diffusion uses conservative differencing with arithmetic-mean
    face values and half cells at the walls; convection is the central
    difference with the mirror-ghost closure (the Neumann condition makes the
    boundary convection term vanish).
    """
    a = sample.values if isinstance(sample, DiffusionSample) else np.asarray(sample, dtype=float)
    n = mesh.n
    if a.shape != (n,):
        raise ValueError(f"diffusivity must have shape ({n},), got {a.shape}")
    if not np.all(a > 0):
        raise ValueError("diffusivity must be strictly positive at every node")
    ds = mesh.ds
    face = 0.5 * (a[:-1] + a[1:])  # a at the n-1 interior faces
    A = np.zeros((n, n))
    idx = np.arange(1, n - 1)
    A[idx, idx - 1] += face[:-1] / ds**2
    A[idx, idx] -= (face[:-1] + face[1:]) / ds**2
    A[idx, idx + 1] += face[1:] / ds**2
    # Half cells at the walls: zero flux outside, conservative inside.
    A[0, 0] -= 2.0 * face[0] / ds**2
    A[0, 1] += 2.0 * face[0] / ds**2
    A[-1, -1] -= 2.0 * face[-1] / ds**2
    A[-1, -2] += 2.0 * face[-1] / ds**2
    if convection != 0.0:
        A[idx, idx + 1] -= convection / (2.0 * ds)
        A[idx, idx - 1] += convection / (2.0 * ds)
        # Mirror ghosts at the walls: the central difference vanishes there.
    if reaction != 0.0:
        A[np.arange(n), np.arange(n)] -= reaction
    return A


def build_actuators(mesh: Mesh1D, intervals: Sequence[tuple[float, float]]) -> np.ndarray:
    """Indicator input matrix: column ``i`` is one on ``intervals[i]`` (inclusive)."""
    s = mesh.nodes()
    tol = 1e-12
    B = np.zeros((mesh.n, len(intervals)))
    for i, (lo, hi) in enumerate(intervals):
        mask = (s >= lo - tol) & (s <= hi + tol)
        if not np.any(mask):
            raise ValueError(f"actuator interval {i} = [{lo}, {hi}] contains no mesh node")
        B[mask, i] = 1.0
    return B


def default_modes() -> list[Callable[[np.ndarray], np.ndarray]]:
    """Output modes: constant, ``cos(pi s)`` and ``cos(2 pi s)``."""
    return [
        lambda s: np.ones_like(s),
        lambda s: np.cos(np.pi * s),
        lambda s: np.cos(2.0 * np.pi * s),
    ]


def _mode_matrix(mesh: Mesh1D, modes: Sequence[Callable]) -> np.ndarray:
    s = mesh.nodes()
    return np.column_stack([np.asarray(mode(s), dtype=float) for mode in modes])


def build_projection_q(mesh: Mesh1D, modes: Sequence[Callable], weight: float) -> np.ndarray:
    """Coefficient form of the weighted output projection, shape ``(q', n)``.

    Returns ``Q = weight * L* M^{-1} F* W`` where ``F`` stacks the modes, ``W``
    is the diagonal of quadrature weights and ``M = F* W F = L L*`` is the
    Gram matrix; then ``||Q x||_2 = weight * ||P_F x||_w`` for the w-orthogonal
    projection ``P_F`` onto the mode span.
    """
    F = _mode_matrix(mesh, modes)
    w = mesh.weights()
    M = F.T @ (w[:, None] * F)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("mode Gram matrix is singular; modes are w-linearly dependent") from exc
    coeff = np.linalg.solve(M, F.T * w[None, :])
    return weight * (L.T @ coeff)


def projection_matrix(mesh: Mesh1D, modes: Sequence[Callable]) -> np.ndarray:
    """The w-orthogonal projection ``P_F = F M^{-1} F* W`` onto the mode span."""
    F = _mode_matrix(mesh, modes)
    w = mesh.weights()
    M = F.T @ (w[:, None] * F)
    return F @ np.linalg.solve(M, F.T * w[None, :])


def heat_target(mesh: Mesh1D, kappa: float, y0: np.ndarray, grid: TimeGrid) -> TargetSignal:
    """Target trajectory: the heat flow ``g' = kappa Lap g`` from ``y0``.

    The discrete Neumann Laplacian is the generator assembled by
    :func:`assemble_cdr` with constant diffusivity; the linear flow is
    advanced by the integrating-factor step, which is exact here, and the
    derivative samples apply the generator to the stored values.
    """
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (mesh.n,):
        raise ValueError(f"y0 must have shape ({mesh.n},), got {y0.shape}")
    A = assemble_cdr(np.full(mesh.n, kappa), 0.0, 0.0, mesh)
    _, E1 = step_exponentials(A, grid.dt)
    values = np.empty((grid.steps + 1, mesh.n))
    values[0] = y0
    for k in range(grid.steps):
        values[k + 1] = E1 @ values[k]
    return TargetSignal(
        grid=grid, values=values, derivatives=values @ A.T, provenance="analytic"
    )
