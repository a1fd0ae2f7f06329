"""Shared builders for the test suite."""

import numpy as np

from ensemble_track.feedback import GainSchedule, TargetSignal, make_feedback
from ensemble_track.model import ParameterFamily


def scalar_family(q: float = 1.0, p: float = 0.0, b: float = 1.0) -> ParameterFamily:
    """One-dimensional family ``x' = sigma x + b u`` with scalar weights."""
    return ParameterFamily(
        name="scalar",
        param_dim=1,
        a=lambda s: np.array([[float(s[0])]]),
        B=np.array([[b]]),
        Q=np.array([[q]]),
        P=np.array([[p]]),
    )


def zero_target(grid, n: int) -> TargetSignal:
    """Identically-zero target of dimension ``n`` on ``grid``."""
    z = np.zeros((grid.steps + 1, n))
    return TargetSignal(grid=grid, values=z, derivatives=z.copy(), provenance="analytic")


def zero_law(grid, n: int, m: int = 1):
    """Affine law that always returns zero control (open loop)."""
    sched = GainSchedule(
        grid=grid,
        gains=np.zeros((grid.steps + 1, m, n)),
        offsets=np.zeros((grid.steps + 1, m)),
        block_count=1,
        block_dim=n,
    )
    return make_feedback(sched, name="zero")
