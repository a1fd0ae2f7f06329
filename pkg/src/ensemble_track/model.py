"""Problem data: time grids, linear systems, parameter families, ensembles.

Everything here is plain data plus a handful of pure constructors.  Matrices
are dense float64 arrays; ensemble block structure is kept as a stacked
``(N, n, n)`` array and only materialised into a full block-diagonal matrix
where a consumer explicitly asks for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "TimeGrid",
    "LtiSystem",
    "ParameterFamily",
    "ParameterEnsemble",
    "EnsembleSystem",
    "build_ensemble",
    "extend",
    "adjoint_extend",
    "delta_a",
    "block_diag",
]


def _as_matrix(name: str, value: np.ndarray) -> np.ndarray:
    out = np.array(value, dtype=float, copy=True)
    if out.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, horizon]`` with ``steps`` intervals.

    Node ``k`` sits at ``k * horizon / steps``; the final node is exactly
    ``horizon``.
    """

    horizon: float
    steps: int

    def __post_init__(self) -> None:
        if not (self.horizon > 0 and np.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if self.steps < 2:
            raise ValueError(f"steps must be at least 2, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def nodes(self) -> np.ndarray:
        """All ``steps + 1`` node times, endpoints exact."""
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """One linear time-invariant plant with output and terminal weights.

    ``A`` is ``n x n``, ``B`` is ``n x m``, the running output weight ``Q`` is
    ``q x n`` and the terminal weight ``P`` is ``z x n``.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    P: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "A", _as_matrix("A", self.A))
        object.__setattr__(self, "B", _as_matrix("B", self.B))
        object.__setattr__(self, "Q", _as_matrix("Q", self.Q))
        object.__setattr__(self, "P", _as_matrix("P", self.P))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got shape {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.Q.shape[1] != n:
            raise ValueError(f"Q has {self.Q.shape[1]} columns, expected {n}")
        if self.P.shape[1] != n:
            raise ValueError(f"P has {self.P.shape[1]} columns, expected {n}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class ParameterFamily:
    """Family of plants ``sigma -> (A(sigma), B, Q, P)`` with shared B, Q, P.

    ``a`` maps a parameter vector of length ``param_dim`` to the ``n x n``
    drift matrix.  Scalar parameters are accepted wherever a vector is and are
    promoted to shape ``(1,)``.
    """

    name: str
    param_dim: int
    a: Callable[[np.ndarray], np.ndarray]
    B: np.ndarray
    Q: np.ndarray
    P: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "B", _as_matrix("B", self.B))
        object.__setattr__(self, "Q", _as_matrix("Q", self.Q))
        object.__setattr__(self, "P", _as_matrix("P", self.P))

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def parameter(self, sigma) -> np.ndarray:
        """Validate and promote ``sigma`` to a ``(param_dim,)`` vector."""
        vec = np.atleast_1d(np.asarray(sigma, dtype=float))
        if vec.shape != (self.param_dim,):
            raise ValueError(
                f"parameter must have {self.param_dim} component(s), got shape {vec.shape}"
            )
        if not np.all(np.isfinite(vec)):
            raise ValueError("parameter contains non-finite entries")
        return vec

    def drift(self, sigma) -> np.ndarray:
        """Drift matrix ``A(sigma)``, validated against the family shape."""
        A = np.asarray(self.a(self.parameter(sigma)), dtype=float)
        if A.shape != (self.n, self.n):
            raise ValueError(
                f"family '{self.name}' produced drift of shape {A.shape}, expected "
                f"({self.n}, {self.n})"
            )
        if not np.all(np.isfinite(A)):
            raise ValueError(f"family '{self.name}' produced non-finite drift")
        return A

    def system(self, sigma) -> LtiSystem:
        """Single plant at parameter ``sigma`` with the shared weights."""
        return LtiSystem(A=self.drift(sigma), B=self.B, Q=self.Q, P=self.P)


@dataclass(frozen=True, eq=False)
class ParameterEnsemble:
    """Ordered collection of parameter vectors, stored as an ``(N, S)`` array."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise ValueError(f"ensemble values must be (N, S) with N >= 1, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("ensemble contains non-finite parameters")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def of(cls, sigmas: Iterable) -> "ParameterEnsemble":
        """Build from an iterable of scalars or equal-length vectors."""
        return cls(np.array([np.atleast_1d(s) for s in sigmas], dtype=float))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def param_dim(self) -> int:
        return self.values.shape[1]

    def mean(self) -> np.ndarray:
        """Component-wise average parameter."""
        return self.values.mean(axis=0)

    def permuted(self, permutation: Sequence[int]) -> "ParameterEnsemble":
        """Reordered copy; ``permutation`` must be a permutation of range(N)."""
        perm = np.asarray(permutation, dtype=int)
        if sorted(perm.tolist()) != list(range(self.size)):
            raise ValueError(f"not a permutation of range({self.size}): {permutation}")
        return ParameterEnsemble(self.values[perm])


@dataclass(frozen=True, eq=False)
class EnsembleSystem:
    """Stacked plant for an ensemble: block drift, repeated input, shared weights.

    ``blocks[i]`` is ``A(sigma_i)``; the stacked input is ``B`` repeated down
    the ``N`` blocks; running and terminal output weights act block-wise and
    carry the ensemble weight ``1/N`` in the objective.
    """

    blocks: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    family_name: str = ""

    def __post_init__(self) -> None:
        blocks = np.array(self.blocks, dtype=float, copy=True)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise ValueError(f"blocks must be (N, n, n), got {blocks.shape}")
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "B", _as_matrix("B", self.B))
        object.__setattr__(self, "Q", _as_matrix("Q", self.Q))
        object.__setattr__(self, "P", _as_matrix("P", self.P))
        if self.B.shape[0] != self.n:
            raise ValueError(f"B has {self.B.shape[0]} rows, expected {self.n}")

    @property
    def size(self) -> int:
        return self.blocks.shape[0]

    @property
    def n(self) -> int:
        return self.blocks.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def dim(self) -> int:
        """Stacked state dimension ``N * n``."""
        return self.size * self.n

    @property
    def weight(self) -> float:
        return 1.0 / self.size

    def stacked_input(self) -> np.ndarray:
        """Input matrix of the stacked system: ``B`` copied down all blocks."""
        return np.tile(self.B, (self.size, 1))

    def stacked_drift(self) -> np.ndarray:
        """Dense block-diagonal drift of the stacked system."""
        return block_diag(self.blocks)


def block_diag(blocks: np.ndarray) -> np.ndarray:
    """Dense block-diagonal matrix from stacked ``(N, n, n)`` blocks."""
    blocks = np.asarray(blocks, dtype=float)
    N, n, _ = blocks.shape
    out = np.zeros((N * n, N * n))
    for i in range(N):
        out[i * n : (i + 1) * n, i * n : (i + 1) * n] = blocks[i]
    return out


def build_ensemble(family: ParameterFamily, ensemble: ParameterEnsemble) -> EnsembleSystem:
    """Stack the family's plants over an ensemble of parameters.

    Raises ``ValueError`` naming the offending ensemble index if any drift
    evaluation fails validation.
    """
    if ensemble.param_dim != family.param_dim:
        raise ValueError(
            f"ensemble parameters have dimension {ensemble.param_dim}, family "
            f"'{family.name}' expects {family.param_dim}"
        )
    blocks = np.empty((ensemble.size, family.n, family.n))
    for i, sigma in enumerate(ensemble.values):
        try:
            blocks[i] = family.drift(sigma)
        except ValueError as exc:
            raise ValueError(f"ensemble member {i}: {exc}") from exc
    return EnsembleSystem(
        blocks=blocks, B=family.B, Q=family.Q, P=family.P, family_name=family.name
    )


def extend(z: np.ndarray, count: int) -> np.ndarray:
    """Copy a state ``count`` times into a stacked vector.

    ``extend((1, 2), 3) -> (1, 2, 1, 2, 1, 2)``.
    """
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"state must be a vector, got shape {z.shape}")
    return np.tile(z, count)


def adjoint_extend(w: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of :func:`extend`: sum the length-``n`` blocks of ``w``.

    ``adjoint_extend((1, 2, 3, 4), 2) -> (4, 6)``.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError(f"stacked state must be a vector, got shape {w.shape}")
    if n < 1 or w.shape[0] % n != 0:
        raise ValueError(f"stacked length {w.shape[0]} is not divisible by block size {n}")
    return w.reshape(-1, n).sum(axis=0)


def delta_a(
    family: ParameterFamily, ensemble: ParameterEnsemble, sigma
) -> tuple[np.ndarray, float]:
    """Block-diagonal drift mismatch ``diag(A(sigma_i) - A(sigma))`` and its norm.

    The returned norm is the spectral norm of the block-diagonal matrix, i.e.
    the largest 2-norm over the blocks.
    """
    A_test = family.drift(sigma)
    diffs = np.empty((ensemble.size, family.n, family.n))
    for i, s in enumerate(ensemble.values):
        diffs[i] = family.drift(s) - A_test
    norm = max(float(np.linalg.norm(d, ord=2)) for d in diffs)
    return block_diag(diffs), norm
