"""Affine law synthesis: targets, residual forcing, offsets, gains, baselines."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensemble_track.analysis import feedback_gap, probe_states
from ensemble_track.feedback import (
    CONVENTIONS,
    GainSchedule,
    TargetSignal,
    make_averaged_feedback,
    make_feedback,
    residual_forcing,
    solve_offset_and_gains,
)
from ensemble_track.model import ParameterEnsemble, TimeGrid, build_ensemble
from ensemble_track.problems import ensemble_grid, oscillator_family, oscillator_target
from ensemble_track.riccati import eval_riccati

from helpers import scalar_family, zero_target


class TestTargetSignal:
    def test_rejects_wrong_node_count(self):
        grid = TimeGrid(1.0, 10)
        with pytest.raises(ValueError, match="target values must be"):
            TargetSignal(grid, np.zeros((10, 2)), np.zeros((10, 2)))

    def test_rejects_mismatched_derivatives(self):
        grid = TimeGrid(1.0, 10)
        with pytest.raises(ValueError, match="does not match values"):
            TargetSignal(grid, np.zeros((11, 2)), np.zeros((11, 3)))

    def test_rejects_non_finite(self):
        grid = TimeGrid(1.0, 10)
        vals = np.zeros((11, 2))
        vals[3, 1] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            TargetSignal(grid, vals, np.zeros((11, 2)))

    def test_rejects_unknown_provenance(self):
        grid = TimeGrid(1.0, 10)
        with pytest.raises(ValueError, match="unknown provenance"):
            TargetSignal(grid, np.zeros((11, 1)), np.zeros((11, 1)), provenance="guessed")

    def test_arrays_are_read_only(self):
        grid = TimeGrid(1.0, 4)
        sig = TargetSignal(grid, np.zeros((5, 1)), np.zeros((5, 1)))
        with pytest.raises(ValueError):
            sig.values[0, 0] = 1.0

    def test_from_samples_differentiates_quadratics_exactly(self):
        # Central differences with second-order edges reproduce the derivative
        # of a quadratic ramp exactly.
        grid = TimeGrid(2.0, 40)
        t = grid.nodes()
        vals = np.stack([3.0 * t * t - t, 2.0 * t + 1.0], axis=1)
        sig = TargetSignal.from_samples(grid, vals)
        expected = np.stack([6.0 * t - 1.0, np.full_like(t, 2.0)], axis=1)
        assert sig.provenance == "finite-difference"
        assert np.allclose(sig.derivatives, expected, atol=1e-10)


class TestResidualForcing:
    def test_zero_target_gives_zero_forcing(self):
        grid = TimeGrid(1.0, 20)
        ens = build_ensemble(oscillator_family(), ensemble_grid(2.0, 3))
        f = residual_forcing(ens, zero_target(grid, 2))
        assert f.shape == (21, 6)
        assert np.all(f == 0.0)

    def test_generating_member_has_vanishing_forcing(self):
        grid = TimeGrid(5.0, 200)
        ens = build_ensemble(oscillator_family(), ParameterEnsemble.of([1.0]))
        f = residual_forcing(ens, oscillator_target(grid))
        assert np.abs(f).max() <= 1e-14

    def test_forcing_isolates_drift_mismatch(self):
        # For the undamped member, A(0) g - g' = (A(0) - A(1)) g = (0, g_2).
        grid = TimeGrid(5.0, 200)
        target = oscillator_target(grid)
        ens = build_ensemble(oscillator_family(), ParameterEnsemble.of([0.0]))
        f = residual_forcing(ens, target)
        assert np.abs(f[:, 0]).max() <= 1e-14
        assert np.allclose(f[:, 1], target.values[:, 1], atol=1e-12)

    def test_rejects_dimension_mismatch(self):
        grid = TimeGrid(1.0, 10)
        ens = build_ensemble(oscillator_family(), ParameterEnsemble.of([0.0]))
        with pytest.raises(ValueError, match="does not match block dimension"):
            residual_forcing(ens, zero_target(grid, 3))


def sech(x):
    return 1.0 / np.cosh(x)


class TestOffsets:
    def test_scalar_offset_matches_closed_form(self):
        # A = 0, B = Q = 1, P = 0, g(t) = 1 - t on [0, 1]: the Riccati flow is
        # tanh(tau) and the offset solves dh/dtau = -tanh h + tanh, giving
        # o(t) = 1 - sech(T - t).
        grid = TimeGrid(1.0, 2000)
        ens = build_ensemble(scalar_family(q=1.0, p=0.0), ParameterEnsemble.of([0.0]))
        t = grid.nodes()
        target = TargetSignal(grid, (1.0 - t)[:, None], np.full((grid.steps + 1, 1), -1.0))
        _, sched = solve_offset_and_gains(ens, grid, target)
        expected = 1.0 - sech(grid.horizon - t)
        assert np.abs(sched.offsets[:, 0] - expected).max() <= 1e-6

    def test_terminal_offset_is_exactly_zero(self):
        grid = TimeGrid(5.0, 50)
        ens = build_ensemble(oscillator_family(), ensemble_grid(2.0, 3))
        _, sched = solve_offset_and_gains(ens, grid, oscillator_target(grid))
        assert np.array_equal(sched.offsets[-1], np.zeros(1))

    def test_zero_forcing_keeps_offsets_zero(self):
        grid = TimeGrid(2.0, 100)
        ens = build_ensemble(oscillator_family(), ensemble_grid(1.0, 3))
        _, sched = solve_offset_and_gains(ens, grid, zero_target(grid, 2))
        assert np.all(sched.offsets == 0.0)
        assert sched.cost_integral == 0.0

    def test_zero_weights_keep_offsets_zero(self):
        # With Q = P = 0 the kernel vanishes, and the offset equation is
        # homogeneous from a zero terminal state even under nonzero forcing.
        grid = TimeGrid(2.0, 100)
        ens = build_ensemble(
            scalar_family(q=0.0, p=0.0), ParameterEnsemble.of([0.5])
        )
        t = grid.nodes()
        target = TargetSignal(grid, np.sin(t)[:, None], np.cos(t)[:, None])
        _, sched = solve_offset_and_gains(ens, grid, target)
        assert np.all(sched.offsets == 0.0)

    def test_own_target_of_generating_member_needs_no_offset(self):
        grid = TimeGrid(5.0, 300)
        ens = build_ensemble(oscillator_family(), ParameterEnsemble.of([1.0]))
        _, sched = solve_offset_and_gains(ens, grid, oscillator_target(grid))
        assert np.abs(sched.offsets).max() <= 1e-14


class TestGainSchedule:
    def test_rejects_wrong_node_count(self):
        grid = TimeGrid(1.0, 10)
        with pytest.raises(ValueError, match="must carry"):
            GainSchedule(
                grid=grid,
                gains=np.zeros((10, 1, 2)),
                offsets=np.zeros((11, 1)),
                block_count=1,
                block_dim=2,
            )

    def test_terminal_gain_is_weighted_terminal_weight(self):
        # At t = T the kernel is the terminal condition, so the common gain
        # compresses to B^T P^T P = [[0, 1]] for the oscillator problem.
        grid = TimeGrid(5.0, 50)
        ens = build_ensemble(oscillator_family(), ensemble_grid(2.0, 5))
        _, sched = solve_offset_and_gains(ens, grid, zero_target(grid, 2))
        assert np.allclose(sched.gain_at(grid.horizon), [[0.0, 1.0]], atol=1e-12)

    def test_gains_match_kernel_compression_at_nodes(self):
        grid = TimeGrid(2.0, 100)
        ens = build_ensemble(oscillator_family(), ensemble_grid(2.0, 3))
        traj, sched = solve_offset_and_gains(ens, grid, zero_target(grid, 2))
        E = np.tile(np.eye(2), (3, 1))
        Bs = ens.stacked_input()
        for j in (0, 17, 50, 100):
            manual = Bs.T @ eval_riccati(traj, j * grid.dt) @ E
            assert np.abs(sched.gains[j] - manual).max() <= 1e-10

    def test_gain_interpolation_is_exact_at_nodes(self):
        grid = TimeGrid(2.0, 100)
        ens = build_ensemble(oscillator_family(), ensemble_grid(2.0, 3))
        _, sched = solve_offset_and_gains(ens, grid, oscillator_target(grid))
        t = 37 * grid.dt
        # gain_at works in reversed time: node j of gains is tau = j dt.
        assert np.array_equal(sched.gain_at(t), sched.gains[100 - 37])
        assert np.array_equal(sched.offset_at(t), sched.offsets[37])

    @pytest.mark.parametrize("t", [-0.1, 5.1])
    def test_rejects_times_outside_horizon(self, t):
        grid = TimeGrid(5.0, 10)
        ens = build_ensemble(oscillator_family(), ParameterEnsemble.of([1.0]))
        _, sched = solve_offset_and_gains(ens, grid, zero_target(grid, 2))
        with pytest.raises(ValueError, match="outside the horizon"):
            sched.gain_at(t)
        with pytest.raises(ValueError, match="outside the horizon"):
            sched.offset_at(t)


@pytest.fixture(scope="module")
def law():
    grid = TimeGrid(5.0, 200)
    ens = build_ensemble(oscillator_family(), ensemble_grid(2.0, 3))
    _, sched = solve_offset_and_gains(ens, grid, oscillator_target(grid))
    return make_feedback(sched, name="ensemble")


class TestAffineLaw:
    def test_name_and_convention_recorded(self, law):
        assert law.name == "ensemble"
        assert law.convention is None
        assert law.grid.horizon == 5.0

    @settings(max_examples=50, deadline=None)
    @given(
        a=st.floats(-3, 3),
        b=st.floats(-3, 3),
        z1=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
        z2=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
        t=st.floats(0.0, 5.0),
    )
    def test_law_is_affine_in_the_state(self, law, a, b, z1, z2, t):
        z1 = np.array(z1)
        z2 = np.array(z2)
        lhs = law(t, a * z1 + b * z2)
        rhs = a * law(t, z1) + b * law(t, z2) + (1.0 - a - b) * law(t, np.zeros(2))
        scale = 1.0 + np.abs(lhs).max() + np.abs(rhs).max()
        assert np.abs(lhs - rhs).max() <= 1e-9 * scale

    def test_batched_call_matches_single_calls(self, law):
        rng = np.random.default_rng(7)
        Z = rng.normal(size=(2, 5))
        batch = law(1.234, Z)
        assert batch.shape == (1, 5)
        for j in range(5):
            assert np.allclose(batch[:, j], law(1.234, Z[:, j]), atol=1e-15)


class TestAveragedBaseline:
    def test_records_mean_and_training_size(self):
        grid = TimeGrid(2.0, 50)
        law = make_averaged_feedback(
            oscillator_family(), ensemble_grid(2.0, 5), oscillator_target(grid), grid
        )
        assert law.name == "averaged"
        assert law.convention == "unit"
        assert np.array_equal(law.meta["sigma_bar"], np.zeros(1))
        assert law.meta["training_size"] == 5

    def test_rejects_unknown_convention(self):
        grid = TimeGrid(1.0, 10)
        with pytest.raises(ValueError, match="unknown convention"):
            make_averaged_feedback(
                oscillator_family(),
                ensemble_grid(1.0, 3),
                zero_target(grid, 2),
                grid,
                convention="mean",
            )

    def test_conventions_coincide_for_a_single_member(self):
        grid = TimeGrid(2.0, 50)
        ens = ParameterEnsemble.of([0.7])
        target = oscillator_target(grid)
        laws = [
            make_averaged_feedback(oscillator_family(), ens, target, grid, convention=c)
            for c in CONVENTIONS
        ]
        assert np.array_equal(laws[0].schedule.gains, laws[1].schedule.gains)
        assert np.array_equal(laws[0].schedule.offsets, laws[1].schedule.offsets)

    def test_unit_convention_equals_singleton_ensemble_design(self):
        # Averaging a symmetric grid gives sigma_bar = 0, and the unit-weight
        # average design is bit-identical to the ensemble design trained on
        # the singleton {0}.
        grid = TimeGrid(2.0, 50)
        target = oscillator_target(grid)
        avg = make_averaged_feedback(
            oscillator_family(), ensemble_grid(2.0, 5), target, grid, convention="unit"
        )
        ens = build_ensemble(oscillator_family(), ParameterEnsemble.of([0.0]))
        _, sched = solve_offset_and_gains(ens, grid, target)
        assert np.array_equal(avg.schedule.gains, sched.gains)
        assert np.array_equal(avg.schedule.offsets, sched.offsets)

    def test_paper_literal_convention_differs_for_many_members(self):
        grid = TimeGrid(2.0, 50)
        target = oscillator_target(grid)
        laws = [
            make_averaged_feedback(
                oscillator_family(), ensemble_grid(2.0, 5), target, grid, convention=c
            )
            for c in CONVENTIONS
        ]
        assert not np.allclose(laws[0].schedule.gains, laws[1].schedule.gains)


class TestDegenerateEnsembleLaw:
    def test_copies_of_one_member_reproduce_the_singleton_law(self):
        grid = TimeGrid(5.0, 300)
        target = oscillator_target(grid)
        fam = oscillator_family()
        _, sched3 = solve_offset_and_gains(
            build_ensemble(fam, ParameterEnsemble.of([1.0] * 3)), grid, target
        )
        _, sched1 = solve_offset_and_gains(
            build_ensemble(fam, ParameterEnsemble.of([1.0])), grid, target
        )
        law3 = make_feedback(sched3)
        law1 = make_feedback(sched1)
        states = [z for _, z in probe_states(2, grid, count=50, seed=11)]
        assert feedback_gap(law3, law1, states) <= 1e-8
