"""Diagnostics: probes, invariance gaps, suboptimality gaps, sweeps, slopes."""

import numpy as np
import pytest

from ensemble_track.analysis import (
    feedback_gap,
    loglog_slope,
    permutation_invariance_gap,
    probe_states,
    suboptimality_gaps,
    uncertainty_sweep,
)
from ensemble_track.feedback import GainSchedule, make_feedback
from ensemble_track.model import ParameterEnsemble, TimeGrid, build_ensemble
from ensemble_track.problems import (
    ensemble_grid,
    oscillator_family,
    oscillator_initial_state,
    oscillator_target,
)
from ensemble_track.sim import simulate_closed_loop

from helpers import scalar_family, zero_law, zero_target


class TestProbeStates:
    def test_seeded_probes_are_deterministic(self):
        grid = TimeGrid(5.0, 100)
        a = probe_states(2, grid, count=20, seed=3)
        b = probe_states(2, grid, count=20, seed=3)
        assert len(a) == len(b) == 20
        for (ta, za), (tb, zb) in zip(a, b):
            assert ta == tb
            assert np.array_equal(za, zb)

    def test_probe_shape_and_times(self):
        grid = TimeGrid(5.0, 100)
        nodes = set(grid.nodes().tolist())
        for t, z in probe_states(3, grid, count=15, seed=0):
            assert z.shape == (3,)
            assert t in nodes

    def test_trajectory_states_are_appended(self):
        grid = TimeGrid(1.0, 40)
        fam = oscillator_family()
        run = simulate_closed_loop(
            fam,
            np.array([1.0]),
            zero_law(grid, 2),
            zero_target(grid, 2),
            np.array([1.0, 0.0]),
            grid,
        )
        probes = probe_states(2, grid, count=10, seed=0, trajectory=run)
        assert len(probes) > 10
        t_last, z_last = probes[-1]
        assert t_last == 1.0
        assert np.array_equal(z_last, run.states[-1])


def offset_only_law(grid, offset_value, name):
    nodes = grid.steps + 1
    offsets = np.tile(np.asarray(offset_value, dtype=float), (nodes, 1))
    sched = GainSchedule(
        grid=grid,
        gains=np.zeros((nodes, len(offset_value), 2)),
        offsets=offsets,
        block_count=1,
        block_dim=2,
    )
    return make_feedback(sched, name=name)


class TestFeedbackGap:
    def test_identical_laws_have_zero_gap(self):
        grid = TimeGrid(1.0, 10)
        law = zero_law(grid, 2)
        states = [z for _, z in probe_states(2, grid, count=10, seed=0)]
        assert feedback_gap(law, law, states) == 0.0

    def test_rejects_different_grids(self):
        a = zero_law(TimeGrid(1.0, 10), 2)
        b = zero_law(TimeGrid(1.0, 20), 2)
        with pytest.raises(ValueError, match="different grids"):
            feedback_gap(a, b, [np.zeros(2)])

    def test_constant_offset_difference_is_measured_exactly(self):
        # Two zero-gain laws whose offsets differ by a constant c give the
        # relative gap ||c|| / (1 + ||z||), maximised at the origin probe.
        grid = TimeGrid(1.0, 10)
        c = np.array([0.3, -0.4])
        a = offset_only_law(grid, c, "a")
        b = offset_only_law(grid, np.zeros(2), "b")
        states = [np.zeros(2), np.array([3.0, 4.0])]
        gap = feedback_gap(a, b, states)
        assert abs(gap - 0.5) <= 1e-15


class TestPermutationInvariance:
    def test_identity_permutation_gives_bitwise_equal_laws(self):
        grid = TimeGrid(2.0, 50)
        target = oscillator_target(grid)
        probes = probe_states(2, grid, count=20, seed=1)
        gap = permutation_invariance_gap(
            oscillator_family(), ensemble_grid(2.0, 3), [0, 1, 2], target, grid, probes
        )
        assert gap == 0.0

    def test_swapping_equal_entries_changes_nothing(self):
        grid = TimeGrid(2.0, 50)
        target = oscillator_target(grid)
        probes = probe_states(2, grid, count=20, seed=1)
        gap = permutation_invariance_gap(
            oscillator_family(), ParameterEnsemble.of([1.0, 1.0]), [1, 0], target, grid, probes
        )
        assert gap == 0.0

    def test_reversal_leaves_the_law_unchanged(self):
        # The stacked problem is symmetric under relabelling the members, so
        # the synthesised common law must not depend on their order.
        grid = TimeGrid(5.0, 300)
        target = oscillator_target(grid)
        probes = probe_states(2, grid, count=50, seed=1)
        gap = permutation_invariance_gap(
            oscillator_family(),
            ensemble_grid(2.0, 5),
            [4, 3, 2, 1, 0],
            target,
            grid,
            probes,
        )
        assert gap <= 1e-8


class TestSuboptimalityGaps:
    def test_singleton_training_closes_both_gaps(self):
        # Training on exactly the test parameter makes the common law optimal:
        # both comparisons collapse to rounding.
        grid = TimeGrid(5.0, 300)
        target = oscillator_target(grid)
        ens_report, single_report = suboptimality_gaps(
            oscillator_family(),
            ParameterEnsemble.of([1.0]),
            np.array([1.0]),
            target,
            np.array([1.5, 0.3]),
            grid,
        )
        assert ens_report.kind == "ensemble-objective"
        assert single_report.kind == "known-parameter"
        for report in (ens_report, single_report):
            scale = 1.0 + abs(report.left) + abs(report.right)
            assert abs(report.gap) <= 1e-8 * scale
            assert report.delta_a_norm == 0.0
            assert np.array_equal(report.meta["sigma"], np.array([1.0]))

    def test_copies_of_the_test_parameter_also_close_the_gaps(self):
        grid = TimeGrid(5.0, 300)
        target = oscillator_target(grid)
        reports = suboptimality_gaps(
            oscillator_family(),
            ParameterEnsemble.of([1.0, 1.0, 1.0]),
            np.array([1.0]),
            target,
            np.array([1.5, 0.3]),
            grid,
        )
        for report in reports:
            scale = 1.0 + abs(report.left) + abs(report.right)
            assert abs(report.gap) <= 1e-8 * scale

    def test_known_parameter_gap_is_positive_off_training(self):
        grid = TimeGrid(5.0, 500)
        target = oscillator_target(grid)
        ens_report, single_report = suboptimality_gaps(
            oscillator_family(),
            ensemble_grid(2.0, 5),
            np.array([4.0]),
            target,
            oscillator_initial_state(),
            grid,
        )
        assert single_report.gap > 0.0
        assert ens_report.delta_a_norm == 6.0
        assert single_report.delta_a_norm == 6.0

    def test_ensemble_objective_gap_is_sign_indefinite_for_benign_plants(self):
        # The ensemble-objective comparison penalises the lifted run with the
        # mismatch-free objective, so a test plant far more stable than the
        # training set can undercut the trained optimum: the gap is negative
        # for sigma = -10 below and positive for the unstable sigma = +2.
        # Only the known-parameter comparison is one-sided.
        grid = TimeGrid(2.0, 400)
        fam = scalar_family(q=1.0, p=0.0)
        train = ParameterEnsemble.of([-1.0, 1.0])
        target = zero_target(grid, 1)
        y0 = np.array([1.0])

        ens_stable, single_stable = suboptimality_gaps(
            fam, train, np.array([-10.0]), target, y0, grid
        )
        assert ens_stable.gap < -0.5
        scale = 1.0 + abs(single_stable.left) + abs(single_stable.right)
        assert single_stable.gap >= -1e-9 * scale

        ens_unstable, _ = suboptimality_gaps(
            fam, train, np.array([2.0]), target, y0, grid
        )
        assert ens_unstable.gap > 0.5


@pytest.fixture(scope="module")
def small_sweep():
    grid = TimeGrid(5.0, 150)
    target = oscillator_target(grid)
    return uncertainty_sweep(
        oscillator_family(),
        [1.0, 2.0],
        lambda level: ensemble_grid(level, 5),
        lambda level: ensemble_grid(2.0 * level, 6),
        target,
        oscillator_initial_state(),
        grid,
    )


class TestUncertaintySweep:
    def test_row_grid_is_complete(self, small_sweep):
        assert len(small_sweep.rows) == 2 * 6 * 2
        assert {r.feedback for r in small_sweep.rows} == {"ensemble", "averaged"}
        assert {r.convention for r in small_sweep.rows} == {"", "unit"}
        assert len(small_sweep.select(feedback="ensemble", level=1.0)) == 6
        for row in small_sweep.rows:
            assert row.error is None
            assert row.cost is not None
            assert row.cost.total >= 0.0
            assert row.trajectory is None

    def test_gaps_live_on_the_right_rows(self, small_sweep):
        for row in small_sweep.rows:
            assert row.gap_vs_single is not None
            if row.feedback == "ensemble":
                assert row.gap_ensemble_objective is not None
                assert row.state_sup_gap is not None
                assert row.control_sup_gap is not None
                assert row.state_sup_gap >= 0.0
            else:
                assert row.gap_ensemble_objective is None
                assert row.state_sup_gap is None
                assert row.control_sup_gap is None

    def test_level_metadata_is_recorded(self, small_sweep):
        assert set(small_sweep.level_meta) == {1.0, 2.0}
        for meta in small_sweep.level_meta.values():
            assert meta["riccati_max_asymmetry"] <= 1e-9
            assert meta["riccati_min_eigenvalue_ratio"] >= -1e-9
            assert meta["extended_cost"].total > 0.0
            assert meta["train"].size == 5

    def test_without_gaps_nothing_extra_is_computed(self):
        grid = TimeGrid(2.0, 50)
        target = oscillator_target(grid)
        table = uncertainty_sweep(
            oscillator_family(),
            [1.0],
            lambda level: ensemble_grid(level, 3),
            lambda level: ensemble_grid(level, 2),
            target,
            oscillator_initial_state(),
            grid,
            compute_gaps=False,
        )
        assert len(table.rows) == 2 * 2
        for row in table.rows:
            assert row.cost is not None
            assert row.gap_vs_single is None
            assert row.gap_ensemble_objective is None
            assert row.state_sup_gap is None
        assert table.level_meta[1.0]["extended_cost"] is None

    def test_keep_trajectories_attaches_runs(self):
        grid = TimeGrid(2.0, 50)
        target = oscillator_target(grid)
        table = uncertainty_sweep(
            oscillator_family(),
            [1.0],
            lambda level: ensemble_grid(level, 3),
            lambda level: ensemble_grid(level, 2),
            target,
            oscillator_initial_state(),
            grid,
            compute_gaps=False,
            keep_trajectories=True,
        )
        for row in table.rows:
            assert row.trajectory is not None
            assert row.trajectory.states.shape == (51, 2)

    def test_zero_level_collapses_ensemble_onto_averaged(self):
        # At level 0 every training member equals the mean, so the common law
        # and the averaged baseline coincide and so do their realised costs.
        grid = TimeGrid(5.0, 150)
        target = oscillator_target(grid)
        table = uncertainty_sweep(
            oscillator_family(),
            [0.0],
            lambda level: ensemble_grid(level, 5),
            lambda level: ensemble_grid(2.0, 4),
            target,
            oscillator_initial_state(),
            grid,
            compute_gaps=False,
        )
        for test_id in range(4):
            pair = {
                r.feedback: r.cost.total
                for r in table.rows
                if r.test_id == test_id
            }
            scale = 1.0 + pair["ensemble"] + pair["averaged"]
            assert abs(pair["ensemble"] - pair["averaged"]) <= 1e-8 * scale

    def test_failing_cells_record_errors_without_raising(self):
        grid = TimeGrid(5.0, 20)
        target = oscillator_target(grid)
        with np.errstate(over="ignore", invalid="ignore"):
            table = uncertainty_sweep(
                oscillator_family(),
                [1.0],
                lambda level: ensemble_grid(level, 3),
                lambda level: ParameterEnsemble.of([-4000.0]),
                target,
                oscillator_initial_state(),
                grid,
            )
        assert len(table.rows) == 2
        for row in table.rows:
            assert row.error is not None
            assert row.cost is None

    def test_thread_pool_matches_serial_execution(self):
        grid = TimeGrid(2.0, 60)
        target = oscillator_target(grid)
        args = (
            oscillator_family(),
            [1.0],
            lambda level: ensemble_grid(level, 3),
            lambda level: ensemble_grid(level, 3),
            target,
            oscillator_initial_state(),
            grid,
        )
        serial = uncertainty_sweep(*args, workers=1)
        pooled = uncertainty_sweep(*args, workers=2)
        assert len(serial.rows) == len(pooled.rows)
        for a, b in zip(serial.rows, pooled.rows):
            assert (a.level, a.test_id, a.feedback) == (b.level, b.test_id, b.feedback)
            assert a.cost.total == b.cost.total
            assert a.gap_vs_single == b.gap_vs_single
            assert a.gap_ensemble_objective == b.gap_ensemble_objective


class TestLogLogSlope:
    def test_recovers_a_power_law_exactly(self):
        x = np.array([0.1, 0.2, 0.4, 0.8])
        y = 3.0 * x**2.5
        assert abs(loglog_slope(x, y) - 2.5) <= 1e-12

    def test_rejects_non_positive_data(self):
        with pytest.raises(ValueError, match="positive data"):
            loglog_slope([0.1, 0.2], [1.0, 0.0])
        with pytest.raises(ValueError, match="positive data"):
            loglog_slope([-0.1, 0.2], [1.0, 1.0])
