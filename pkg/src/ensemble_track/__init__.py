"""Parameter-independent affine tracking feedback for linear system families.

The package synthesises one affine time-varying feedback that tracks a target
trajectory acceptably across a whole family of linear plants with uncertain
parameters.  The gain comes from a single differential Riccati equation for a
stacked "ensemble" of training plants; an affine offset handles the tracking
part.  Simulation, cost evaluation, baselines, gap diagnostics, a 1-d PDE
test bench and a CLI sit on top.
"""

__version__ = "0.1.0"
