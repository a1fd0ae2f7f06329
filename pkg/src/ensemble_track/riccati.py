"""Backward Riccati flow for the stacked ensemble system.

The value function of the ensemble tracking problem is quadratic with kernel
``Pi`` solving, in reversed time ``tau = T - t``,

    dPi/dtau = Pi A + A* Pi - Pi B B* Pi + C,     Pi(0) = (1/N) P_e* P_e,

where ``A`` is the block-diagonal stacked drift, ``B`` the stacked input and
``C = (1/N) Q_e* Q_e`` the block output weight.  The flow is advanced with the
integrating-factor RK4 step (see :mod:`ensemble_track.integrate`): the stiff
Lyapunov part ``Pi -> e^{A*h} Pi e^{Ah}`` is applied exactly through per-block
half-step exponentials, and the bounded remainder ``C - (Pi B)(Pi B)*`` is
treated by the classical RK4 stages.  Every step ends with an explicit
symmetrisation ``Pi <- (Pi + Pi*)/2``.

The sweep optionally co-integrates the affine offset equation

    dH/dtau = (A* - Pi B B*) H + Pi f(T - tau),   H(0) = 0,

with the same stage values of ``Pi``, recording feedback gains, offsets and
the running-cost accumulator needed by the optimal-cost formula.  Both
:func:`solve_riccati` and the feedback synthesis share this single stepper.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import EnsembleSystem, TimeGrid, block_diag

__all__ = [
    "DivergenceError",
    "RiccatiTrajectory",
    "solve_riccati",
    "eval_riccati",
    "riccati_residual",
]


class DivergenceError(RuntimeError):
    """Raised when an integration produces non-finite values.

    Carries the offending step index in ``step``; the fix is a finer grid.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True, eq=False)
class RiccatiTrajectory:
    """Checkpointed solution of the backward Riccati flow.

    ``checkpoints[j]`` is ``Pi`` at reversed time ``checkpoint_steps[j] * dt``;
    checkpoint 0 is the terminal condition exactly, the last checkpoint sits
    at ``tau = horizon``.
    """

    grid: TimeGrid
    stride: int
    checkpoint_steps: np.ndarray
    checkpoints: np.ndarray
    block_count: int
    block_dim: int

    @property
    def dim(self) -> int:
        return self.block_count * self.block_dim

    @property
    def final(self) -> np.ndarray:
        """``Pi`` at ``tau = horizon`` (i.e. at initial forward time)."""
        return self.checkpoints[-1]

    def max_asymmetry(self) -> float:
        """Largest ``||Pi - Pi*|| / max(1, ||Pi||)`` over checkpoints (Frobenius)."""
        worst = 0.0
        for P in self.checkpoints:
            scale = max(1.0, float(np.linalg.norm(P)))
            worst = max(worst, float(np.linalg.norm(P - P.T)) / scale)
        return worst

    def min_eigenvalue_ratio(self) -> float:
        """Smallest ``lambda_min(Pi) / max(1, ||Pi||_2)`` over checkpoints.

        Nonnegative up to rounding for a positive semidefinite flow; used by
        invariant checks and run metadata.
        """
        worst = np.inf
        for P in self.checkpoints:
            eigs = np.linalg.eigvalsh(P)
            scale = max(1.0, float(eigs[-1]))
            worst = min(worst, float(eigs[0]) / scale)
        return float(worst)


class _StackedOps:
    """Precomputed block data for one ensemble sweep."""

    def __init__(self, ens: EnsembleSystem, dt: float):
        self.count = ens.size
        self.n = ens.n
        self.dim = ens.dim
        self.blocks = np.asarray(ens.blocks)
        # Half-step exponentials per block; the full step is their square.
        self.E2 = np.stack([scipy.linalg.expm(A * (dt / 2.0)) for A in self.blocks])
        self.E2T = np.ascontiguousarray(self.E2.transpose(0, 2, 1))
        self.Bs = ens.stacked_input()
        w = ens.weight
        self.Cq = w * block_diag(np.broadcast_to(ens.Q.T @ ens.Q, (self.count, self.n, self.n)))
        self.P0 = w * block_diag(np.broadcast_to(ens.P.T @ ens.P, (self.count, self.n, self.n)))

    def conj_half(self, X: np.ndarray) -> np.ndarray:
        """``E2* X E2`` block-conjugation for a stack ``X`` of shape (M, D, D)."""
        M = X.shape[0]
        N, n, D = self.count, self.n, self.dim
        left = np.matmul(self.E2T[None], X.reshape(M, N, n, D)).reshape(M, D, D)
        right = np.matmul(left.reshape(M, D, N, n).transpose(0, 2, 1, 3), self.E2[None])
        return np.ascontiguousarray(right.transpose(0, 2, 1, 3)).reshape(M, D, D)

    def conj_half_one(self, X: np.ndarray) -> np.ndarray:
        return self.conj_half(X[None])[0]

    def conj_half_vec_t(self, v: np.ndarray) -> np.ndarray:
        """``E2* v`` for a stacked vector ``v`` of length N*n."""
        return np.matmul(self.E2T, v.reshape(self.count, self.n, 1)).ravel()

    def quad_remainder(self, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Remainder ``C - (P B)(P B)*`` and the product ``P B``."""
        PB = P @ self.Bs
        return self.Cq - PB @ PB.T, PB

    def gain_from(self, PB: np.ndarray) -> np.ndarray:
        """Common gain ``B* Pi E`` (m x n) from the product ``Pi B``."""
        return PB.reshape(self.count, self.n, -1).sum(axis=0).T


def _check_finite(P: np.ndarray, step: int, what: str) -> None:
    if not np.all(np.isfinite(P)):
        raise DivergenceError(
            f"{what} integration diverged at step {step} "
            "(non-finite values); refine the time grid",
            step=step,
        )


def _sweep(
    ens: EnsembleSystem,
    grid: TimeGrid,
    stride: int,
    forcing: np.ndarray | None = None,
):
    """Advance the Riccati flow (and optionally the offset flow) over the grid.

    Returns ``(trajectory, extras)`` where ``extras`` is ``None`` without
    forcing and otherwise the tuple ``(gains, offsets_rev, h_final,
    cost_integral)``: gains and offsets at every reversed-time node, the
    offset state at ``tau = horizon`` and the trapezoid accumulator of
    ``<h, f> - ||B* h||^2 / 2`` over forward time.
    """
    K = grid.steps
    if stride < 1:
        raise ValueError(f"stride must be at least 1, got {stride}")
    if K % stride != 0:
        raise ValueError(f"stride {stride} does not divide the step count {K}")
    h = grid.dt
    ops = _StackedOps(ens, h)
    D = ops.dim

    with_offset = forcing is not None
    if with_offset:
        forcing = np.asarray(forcing, dtype=float)
        if forcing.shape != (K + 1, D):
            raise ValueError(
                f"forcing must have shape ({K + 1}, {D}), got {forcing.shape}"
            )
        f_rev = forcing[::-1]

    n_ck = K // stride + 1
    checkpoint_steps = np.arange(n_ck) * stride
    checkpoints = np.empty((n_ck, D, D))
    P = ops.P0.copy()
    checkpoints[0] = P

    m = ops.Bs.shape[1]
    gains = np.empty((K + 1, m, ops.n))
    k1, PB = ops.quad_remainder(P)
    gains[0] = ops.gain_from(PB)

    if with_offset:
        H = np.zeros(D)
        offsets_rev = np.empty((K + 1, m))
        offsets_rev[0] = 0.0  # o at forward time T is exactly zero
        phi = np.empty(K + 1)
        phi[0] = float(H @ f_rev[0]) - 0.5 * float((ops.Bs.T @ H) @ (ops.Bs.T @ H))

    for k in range(K):
        pack = ops.conj_half(np.stack([P, k1]))
        P2, t1 = pack[0], pack[1]
        k2, Y2B = ops.quad_remainder(P2 + (h / 2.0) * t1)
        Y3 = P2 + (h / 2.0) * k2
        k3, Y3B = ops.quad_remainder(Y3)
        pack = ops.conj_half(np.stack([P2, k3, t1 + 2.0 * (k2 + k3)]))
        P3, t3, s = pack[0], pack[1], pack[2]
        Y4 = P3 + h * t3
        k4, Y4B = ops.quad_remainder(Y4)

        if with_offset:
            f0, f1 = f_rev[k], f_rev[k + 1]
            fmid = 0.5 * (f0 + f1)
            Y2 = P2 + (h / 2.0) * t1
            e1 = -PB @ (ops.Bs.T @ H) + P @ f0
            t1h = ops.conj_half_vec_t(e1)
            Hhalf = ops.conj_half_vec_t(H)
            Y2H = Hhalf + (h / 2.0) * t1h
            e2 = -Y2B @ (ops.Bs.T @ Y2H) + Y2 @ fmid
            Y3H = Hhalf + (h / 2.0) * e2
            e3 = -Y3B @ (ops.Bs.T @ Y3H) + Y3 @ fmid
            Y4H = ops.conj_half_vec_t(Hhalf) + h * ops.conj_half_vec_t(e3)
            e4 = -Y4B @ (ops.Bs.T @ Y4H) + Y4 @ f1
            H = ops.conj_half_vec_t(Hhalf) + (h / 6.0) * (
                ops.conj_half_vec_t(t1h + 2.0 * (e2 + e3)) + e4
            )
            _check_finite(H, k + 1, "offset")

        P = P3 + (h / 6.0) * (s + k4)
        P = 0.5 * (P + P.T)
        _check_finite(P, k + 1, "Riccati")

        k1, PB = ops.quad_remainder(P)
        gains[k + 1] = ops.gain_from(PB)
        if with_offset:
            BtH = ops.Bs.T @ H
            offsets_rev[k + 1] = BtH
            phi[k + 1] = float(H @ f_rev[k + 1]) - 0.5 * float(BtH @ BtH)
        if (k + 1) % stride == 0:
            checkpoints[(k + 1) // stride] = P

    checkpoints.setflags(write=False)
    traj = RiccatiTrajectory(
        grid=grid,
        stride=stride,
        checkpoint_steps=checkpoint_steps,
        checkpoints=checkpoints,
        block_count=ops.count,
        block_dim=ops.n,
    )
    if not with_offset:
        return traj, None
    # phi is indexed by reversed time; forward-time trapezoid over a uniform
    # grid has the same symmetric weights, so the order does not matter.
    cost_integral = float(h * (phi.sum() - 0.5 * (phi[0] + phi[-1])))
    return traj, (gains, offsets_rev, H.copy(), cost_integral)


def solve_riccati(ens: EnsembleSystem, grid: TimeGrid, stride: int = 1) -> RiccatiTrajectory:
    """Integrate the ensemble Riccati flow, checkpointing every ``stride`` steps.

    ``stride`` must divide the grid's step count so the final reversed-time
    node is always stored.  Raises :class:`DivergenceError` with the step
    index if the iteration leaves the finite range.
    """
    traj, _ = _sweep(ens, grid, stride, forcing=None)
    return traj


def eval_riccati(traj: RiccatiTrajectory, tau: float) -> np.ndarray:
    """``Pi`` at reversed time ``tau``: exact at stored nodes, else linear.

    Interpolation happens between the two neighbouring checkpoints; the
    result is symmetrised and writable.
    """
    T = traj.grid.horizon
    slop = 1e-9 * T
    if tau < -slop or tau > T + slop:
        raise ValueError(f"tau = {tau} outside the grid range [0, {T}]")
    tau = min(max(tau, 0.0), T)
    spacing = traj.stride * traj.grid.dt
    pos = tau / spacing
    j = int(np.floor(pos))
    j = min(j, len(traj.checkpoints) - 1)
    frac = pos - j
    if frac <= 1e-9 or j == len(traj.checkpoints) - 1:
        out = traj.checkpoints[j].copy()
    elif frac >= 1.0 - 1e-9:
        out = traj.checkpoints[j + 1].copy()
    else:
        out = (1.0 - frac) * traj.checkpoints[j] + frac * traj.checkpoints[j + 1]
    return 0.5 * (out + out.T)


def riccati_residual(traj: RiccatiTrajectory, ens: EnsembleSystem, tau: float) -> float:
    """Finite-difference defect of the stored flow at an interior checkpoint.

    Compares the central difference of the two neighbouring checkpoints with
    the Riccati right-hand side at ``tau``; ``tau`` must coincide with a
    stored node that has stored neighbours on both sides.
    """
    spacing = traj.stride * traj.grid.dt
    pos = tau / spacing
    j = int(np.rint(pos))
    if not np.isclose(pos, j, rtol=0.0, atol=1e-9):
        raise ValueError(f"tau = {tau} is not a stored checkpoint")
    if j <= 0 or j >= len(traj.checkpoints) - 1:
        raise ValueError(
            f"tau = {tau} has no stored neighbours on both sides; "
            "the residual needs an interior checkpoint"
        )
    diff = (traj.checkpoints[j + 1] - traj.checkpoints[j - 1]) / (2.0 * spacing)
    P = traj.checkpoints[j]
    blocks = np.asarray(ens.blocks)
    N, n = ens.size, ens.n
    D = ens.dim
    # Pi A with block-diagonal A, assembled block-column-wise.
    PA = np.matmul(
        P.reshape(D, N, n).transpose(1, 0, 2), blocks
    ).transpose(1, 0, 2).reshape(D, D)
    Bs = ens.stacked_input()
    PB = P @ Bs
    Cq = ens.weight * block_diag(np.broadcast_to(ens.Q.T @ ens.Q, (N, n, n)))
    rhs = PA + PA.T - PB @ PB.T + Cq
    return float(np.linalg.norm(diff - rhs))
