"""Tests for the sampling schedule, LHS design, regressor picks and best-knob selection"""

import numpy as np
import pytest

from tuning.knobspace import KnobDimension, KnobSpace
from tuning.sampler import (
    RegressorKind,
    Sampler,
    SamplingSchedule,
    Stage,
    Strategy,
    default_init_rounds,
    lhs_design,
    lhs_samples,
    regressor_pick,
    run_phase,
    select_best,
)
from utils.errors import ExhaustedError, PhaseCompleteError
from utils.models import ConstraintSpec, Measurement, ObjectiveSpec, OptimizationSpec


def board_metrics(space, k):
    """fps grows with cores * freq * batch^0.3; power grows with cores * freq^2"""
    cores, freq, batch = space.values_of(k)
    fps = cores * freq / 100.0 * batch ** 0.3
    power = 1.0 + cores * (freq / 1000.0) ** 2
    return fps, [power]


def sample_all(sampler, metrics):
    """knobs in sampling order"""
    knobs = []
    while not sampler.done:
        k = sampler.next_sample()
        o, c = metrics(sampler.space, k)
        sampler.record(k, o, c)
        knobs.append(k)
    return knobs


def m(knob, o, c=(), round=1):
    return Measurement(knob=knob, o=o, c=list(c), round=round)


class TestSchedule:
    """Stage layout per strategy"""

    def test_default_init_rounds(self):
        assert default_init_rounds(12) == 4
        assert default_init_rounds(8) == 3
        assert default_init_rounds(10) == 3
        assert default_init_rounds(30) == 10

    def test_small_budgets_leave_room_for_searching(self):
        assert default_init_rounds(4) == 2
        assert default_init_rounds(3, Strategy.hybrid) == 1
        assert default_init_rounds(2, Strategy.random) == 1

    def test_hybrid_layout(self):
        schedule = SamplingSchedule.for_budget(12, Strategy.hybrid, 4)
        assert schedule.stages() == [Stage.lhs] * 4 + [Stage.gp] + [Stage.bo] * 6 + [Stage.gp]

    def test_hybrid_without_bo_rounds(self):
        schedule = SamplingSchedule.for_budget(5, Strategy.hybrid, 3)
        assert schedule.stages() == [Stage.lhs] * 3 + [Stage.gp, Stage.gp]

    def test_baseline_layouts(self):
        assert SamplingSchedule.for_budget(6, Strategy.bayes_opt, 2).stages() == [Stage.lhs] * 2 + [Stage.bo] * 4
        assert SamplingSchedule.for_budget(6, Strategy.gp_regressor, 2).stages() == [Stage.lhs] * 2 + [Stage.gp] * 4
        assert SamplingSchedule.for_budget(6, Strategy.linear_regressor, 2).stages()[-1] == Stage.linear
        assert SamplingSchedule.for_budget(6, Strategy.random).stages() == [Stage.random] * 6
        assert SamplingSchedule.for_budget(6, Strategy.lhs_only).stages() == [Stage.lhs] * 6

    def test_invalid_schedules(self):
        with pytest.raises(ValueError):
            SamplingSchedule(total_rounds=4, init_rounds=4)
        with pytest.raises(ValueError):
            SamplingSchedule(total_rounds=5, init_rounds=4, strategy=Strategy.hybrid)
        with pytest.raises(ValueError):
            SamplingSchedule.for_budget(12).stage(13)


class TestLHS:
    """Latin hypercube initialization"""

    def test_strata_hit_once_per_dimension(self, small_space):
        """100 seeded draws: every stratum of every dimension used exactly once before rounding"""
        for seed in range(100):
            design = lhs_design(small_space, 4, seed)
            strata = np.floor(design.points * 4).astype(int)
            for d in range(small_space.ndim):
                assert sorted(strata[:, d]) == [0, 1, 2, 3]
            assert design.settings[0] == small_space.default_setting
            assert len(set(design.settings)) == 4

    def test_square_grid_stratification(self):
        space = KnobSpace(
            dimensions=[KnobDimension(name=n, values=list(range(12))) for n in ("row", "col")],
            default=(0, 0),
        )
        strata = np.floor(lhs_design(space, 12, 5).points * 12).astype(int)
        assert sorted(strata[:, 0]) == list(range(12))
        assert sorted(strata[:, 1]) == list(range(12))

    def test_full_coverage_on_1d(self):
        space = KnobSpace(dimensions=[KnobDimension(name="k", values=list(range(6)))], default=(2,))
        settings = lhs_samples(space, 6, 1)
        assert sorted(settings) == [(i,) for i in range(6)]
        assert settings[0] == (2,)

    def test_too_many_points(self):
        space = KnobSpace(dimensions=[KnobDimension(name="k", values=[1, 2])], default=(0,))
        with pytest.raises(ExhaustedError):
            lhs_samples(space, 3, 0)

    def test_reproducible(self, small_space):
        assert lhs_samples(small_space, 5, 42) == lhs_samples(small_space, 5, 42)


class TestRegressorPick:
    """Exploitation picks from fitted regressors"""

    def test_linear_regressor_finds_linear_argmax(self):
        space = KnobSpace(
            dimensions=[KnobDimension(name="x1", values=list(range(5))), KnobDimension(name="x2", values=list(range(4)))],
            default=(0, 0),
        )
        spec = OptimizationSpec(objective=ObjectiveSpec(metric="fps"))
        history = [m(k, 2 * k[0] / 4 + k[1] / 3) for k in [(0, 0), (1, 2), (3, 1), (2, 3)]]
        assert regressor_pick(history, [], space, spec, RegressorKind.linear) == (4, 3)

    def test_all_predicted_infeasible_falls_back_to_least_violation(self, power_spec):
        space = KnobSpace(dimensions=[KnobDimension(name="k", values=list(range(10)))], default=(0,))
        # predicted power is 9 + k, above the set point of 5 everywhere
        history = [m((0,), 50.0, [9.0]), m((9,), 1.0, [18.0])]
        assert regressor_pick(history, [], space, power_spec, RegressorKind.linear) == (1,)

    def test_needs_two_measurements(self, small_space, unconstrained_spec):
        with pytest.raises(ValueError):
            regressor_pick([m((0, 0, 0), 1.0)], [], small_space, unconstrained_spec)

    def test_warm_start_counts_toward_minimum(self, small_space, unconstrained_spec):
        pick = regressor_pick([m((0, 0, 0), 1.0)], [m((2, 3, 4), 5.0)], small_space, unconstrained_spec)
        assert small_space.contains(pick)
        assert pick != (0, 0, 0)


class TestSelectBest:
    """Measured feasibility decides"""

    def test_feasibility_dominates_objective(self):
        spec = OptimizationSpec(
            objective=ObjectiveSpec(metric="fps"),
            constraints=[ConstraintSpec(metric="power", set_point=7.0)],
        )
        pick = select_best([m((0,), 10.0, [8.0]), m((1,), 6.0, [5.0])], spec)
        assert pick.knob == (1,)
        assert not pick.infeasible
        assert (pick.o_ref, pick.c_ref) == (6.0, [5.0])

    def test_plain_argmax_when_all_feasible(self, unconstrained_spec):
        assert select_best([m((0,), 1.0), m((1,), 3.0), m((2,), 2.0)], unconstrained_spec).knob == (1,)

    def test_minimization(self):
        spec = OptimizationSpec(objective=ObjectiveSpec(metric="energy", direction="minimize"))
        assert select_best([m((0,), 3.0), m((1,), 1.0), m((2,), 2.0)], spec).knob == (1,)

    def test_first_of_equal_objectives_wins(self, unconstrained_spec):
        assert select_best([m((4,), 2.0), m((1,), 2.0)], unconstrained_spec).knob == (4,)

    def test_infeasible_fallback(self, power_spec):
        pick = select_best([m((0,), 10.0, [9.0]), m((1,), 1.0, [6.0]), m((2,), 5.0, [7.0])], power_spec)
        assert pick.knob == (1,)
        assert pick.infeasible

    def test_set_point_itself_is_infeasible(self, power_spec):
        assert select_best([m((0,), 10.0, [5.0])], power_spec).infeasible

    def test_empty_history(self, power_spec):
        with pytest.raises(ValueError):
            select_best([], power_spec)


class TestSampler:
    """Whole sampling phases"""

    def test_hybrid_phase_shape(self, small_space, power_spec):
        sampler = Sampler(SamplingSchedule.for_budget(12, Strategy.hybrid, 4), small_space, power_spec, seed=7)
        knobs = sample_all(sampler, board_metrics)
        assert sampler.stages == [Stage.lhs] * 4 + [Stage.gp] + [Stage.bo] * 6 + [Stage.gp]
        assert len(set(knobs)) == 12
        assert knobs[0] == small_space.default_setting
        assert [h.round for h in sampler.history] == list(range(1, 13))

    def test_reproducible_by_seed(self, small_space, power_spec):
        runs = [
            sample_all(Sampler(SamplingSchedule.for_budget(12), small_space, power_spec, seed=7), board_metrics)
            for _ in range(2)
        ]
        assert runs[0] == runs[1]

    def test_random_strategy_reproducible(self, small_space, power_spec):
        schedule = SamplingSchedule.for_budget(10, Strategy.random)
        a = sample_all(Sampler(schedule, small_space, power_spec, seed=3), board_metrics)
        b = sample_all(Sampler(schedule, small_space, power_spec, seed=3), board_metrics)
        assert a == b
        assert len(set(a)) == 10

    def test_init_rounds_ignore_measurements(self, small_space, power_spec):
        schedule = SamplingSchedule.for_budget(8)
        a = sample_all(Sampler(schedule, small_space, power_spec, seed=1), board_metrics)
        b = sample_all(Sampler(schedule, small_space, power_spec, seed=1), lambda s, k: (1.0, [1.0]))
        assert a[:schedule.init_rounds] == b[:schedule.init_rounds]

    def test_searching_rounds_follow_measurements(self, small_space, power_spec):
        schedule = SamplingSchedule.for_budget(8)
        a = sample_all(Sampler(schedule, small_space, power_spec, seed=1), board_metrics)

        def flipped(space, k):
            fps, power = board_metrics(space, k)
            return 1000.0 / fps, power

        b = sample_all(Sampler(schedule, small_space, power_spec, seed=1), flipped)
        assert a[schedule.init_rounds:] != b[schedule.init_rounds:]

    def test_phase_complete(self, small_space, power_spec):
        sampler = Sampler(SamplingSchedule.for_budget(4), small_space, power_spec)
        sample_all(sampler, board_metrics)
        with pytest.raises(PhaseCompleteError):
            sampler.next_sample()

    def test_pending_knob_is_repeated_until_recorded(self, small_space, power_spec):
        sampler = Sampler(SamplingSchedule.for_budget(6), small_space, power_spec)
        assert sampler.next_sample() == sampler.next_sample()
        assert sampler.round == 0

    def test_record_rejects_duplicates_and_bad_arity(self, small_space, power_spec):
        sampler = Sampler(SamplingSchedule.for_budget(6), small_space, power_spec)
        k = sampler.next_sample()
        with pytest.raises(ValueError):
            sampler.record(k, 1.0, [])
        sampler.record(k, 1.0, [2.0])
        with pytest.raises(ValueError):
            sampler.record(k, 1.0, [2.0])

    def test_warm_start_does_not_use_budget(self, small_space, power_spec):
        warm = [m(k, *board_metrics(small_space, k)) for k in [(0, 0, 0), (2, 3, 4), (1, 0, 2)]]
        sampler = Sampler(SamplingSchedule.for_budget(6), small_space, power_spec, seed=2, warm_start=warm)
        knobs = sample_all(sampler, board_metrics)
        assert len(knobs) == 6
        assert len(sampler.history) == 6

    def test_warm_start_outside_space_is_dropped(self, small_space, power_spec):
        sampler = Sampler(
            SamplingSchedule.for_budget(6), small_space, power_spec, warm_start=[m((9, 9, 9), 1.0, [1.0])]
        )
        assert sampler.warm_start == []

    def test_warm_start_with_wrong_constraint_count_is_dropped(self, small_space, power_spec, caplog):
        """measurements without one value per constraint never reach the regressors"""
        warm = [m((0, 0, 0), 3.0), m((2, 3, 4), 9.0), m((1, 1, 1), *board_metrics(small_space, (1, 1, 1)))]
        with caplog.at_level("WARNING", logger="tuning.sampler"):
            sampler = Sampler(SamplingSchedule.for_budget(8), small_space, power_spec, seed=1, warm_start=warm)
        assert sampler.warm_start == warm[2:]
        assert "dropped 2 warm-start" in caplog.text
        knobs = sample_all(sampler, board_metrics)
        assert len(knobs) == 8
        assert all(len(h.c) == 1 for h in sampler.history)

    def test_tiny_space_runs_out_of_lhs_points(self, power_spec):
        space = KnobSpace(dimensions=[KnobDimension(name="k", values=[1, 2, 3])], default=(0,))
        sampler = Sampler(SamplingSchedule.for_budget(3, Strategy.lhs_only), space, power_spec)
        knobs = sample_all(sampler, lambda s, k: (float(k[0]), [1.0]))
        assert sorted(knobs) == [(0,), (1,), (2,)]


class TestRunPhase:
    """In-process sampling phase driver"""

    def test_budget_then_best_feasible(self, small_space, power_spec):
        sampler = Sampler(SamplingSchedule.for_budget(8), small_space, power_spec, seed=5)
        measured = []

        def measure(k):
            measured.append(k)
            return board_metrics(small_space, k)

        best = run_phase(sampler, measure)
        assert len(measured) == 8
        assert best == select_best(sampler.history, power_spec)
        assert best.knob in measured

    def test_stops_when_space_runs_out(self, power_spec):
        space = KnobSpace(dimensions=[KnobDimension(name="k", values=[1, 2, 3])], default=(0,))
        sampler = Sampler(SamplingSchedule.for_budget(8), space, power_spec, seed=0)
        table = {(0,): (10.0, [8.0]), (1,): (6.0, [4.0]), (2,): (7.0, [4.5])}
        best = run_phase(sampler, table.__getitem__)
        assert sampler.round == 3
        assert (best.knob, best.o_ref, best.infeasible) == ((2,), 7.0, False)
