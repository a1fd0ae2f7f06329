"""Integrating-factor Runge-Kutta stepping for semilinear ODEs.

All time integration in this package uses the Lawson scheme: write the right
hand side as ``x' = A x + r(t, x)`` with a constant matrix ``A``, substitute
``x = exp(A (t - t_k)) xi`` on each step, and advance ``xi`` with one classical
4-stage Runge-Kutta step.  Rearranged so that only forward (decaying, for
dissipative ``A``) exponentials appear, the step reads::

    r1 = r(t, x)
    r2 = r(t + h/2, E2 (x + h/2 r1))
    r3 = r(t + h/2, E2 x + h/2 r2)
    r4 = r(t + h,   E1 x + h E2 r3)
    x_next = E1 x + h/6 (E1 r1 + 2 E2 (r2 + r3) + r4)

with ``E2 = expm(A h / 2)`` and ``E1 = E2 @ E2``.  For ``A = 0`` this is
exactly the classical explicit Runge-Kutta step, and for ``r = 0`` it is the
exact linear flow; the scheme has classical order 4 and is unconditionally
stable in the stiff dissipative directions of ``A``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.linalg

__all__ = ["step_exponentials", "lawson_step"]


def step_exponentials(A: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Half- and full-step matrix exponentials ``(expm(A dt/2), expm(A dt))``.

    The full-step factor is formed as the square of the half-step factor so
    the exact relation ``E1 = E2 @ E2`` that the stepper relies on holds in
    floating point as well.
    """
    E2 = scipy.linalg.expm(np.asarray(A, dtype=float) * (dt / 2.0))
    return E2, E2 @ E2


def lawson_step(
    E2: np.ndarray,
    E1: np.ndarray,
    x: np.ndarray,
    t: float,
    h: float,
    r: Callable[[float, np.ndarray], np.ndarray],
) -> np.ndarray:
    """One integrating-factor RK4 step for ``x' = A x + r(t, x)``.

    ``E2`` and ``E1`` are the half- and full-step exponentials of ``A`` from
    :func:`step_exponentials`.
    """
    r1 = r(t, x)
    r2 = r(t + h / 2.0, E2 @ (x + (h / 2.0) * r1))
    r3 = r(t + h / 2.0, E2 @ x + (h / 2.0) * r2)
    r4 = r(t + h, E1 @ x + h * (E2 @ r3))
    return E1 @ x + (h / 6.0) * (E1 @ r1 + 2.0 * (E2 @ (r2 + r3)) + r4)
