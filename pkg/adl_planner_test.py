"""ADL planners: cost model, oracles, branch and bound, greedy, instance construction and files."""

import math

import numpy as np
import pytest

from adl_planner import (
    PRETRAINED,
    Action,
    PlannerGuardError,
    build_instance,
    expected_plan_cost,
    load_instance,
    load_plan,
    plan_bnb,
    plan_exhaustive,
    plan_greedy_facility,
    plan_ssp_dp,
    plan_table,
    save_instance,
    save_plan,
    success_probabilities,
)
from conftest import UNIFORM, make_instance, random_instance, random_instances
from coverage_sim import InsertionSimulator
from precond_model import DimensionMismatchError, PreconditionModel, predict
from task_domain import CostVector, SkillLibrary, generate_block_tasks

A, D, L = Action.ACT, Action.DELEGATE, Action.LEARN


def close(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


# ============================================================================
# COST MODEL
# ============================================================================

def test_expected_cost_hand_arithmetic():
    assert expected_plan_cost(make_instance([1.0]), [A]) == 10.0
    assert expected_plan_cost(make_instance([0.0]), [A]) == 110.0
    two = make_instance([0.0, 0.0], {(1, 0): 0.95})
    assert expected_plan_cost(two, [L, A]) == pytest.approx(215.0)
    assert expected_plan_cost(two, ["Delegate", "Delegate"]) == 200.0


def test_taught_skill_only_serves_later_tasks():
    instance = make_instance([0.0, 0.0], {(1, 0): 0.9, (0, 0): 1.0})
    p = success_probabilities(instance, [A, L])
    assert p[0] == 0.0
    assert p[1] == 0.0


def test_literal_mode_charges_failure_on_taught_task():
    mdp = make_instance([0.5], {(0, 0): 0.8})
    literal = make_instance([0.5], {(0, 0): 0.8}, mode="literal_paper")
    assert expected_plan_cost(mdp, [L]) == 200.0
    assert expected_plan_cost(literal, [L]) == pytest.approx(200.0 + 0.2 * 100.0)


def test_instance_validation():
    with pytest.raises(ValueError):
        make_instance([1.2])
    with pytest.raises(ValueError):
        make_instance([0.5, 0.5], {(1, 0): -0.1})
    with pytest.raises(ValueError):
        make_instance([0.5], mode="optimistic")
    assert make_instance([0.5], mode="literal").literal


# ============================================================================
# ORACLES
# ============================================================================

def test_exhaustive_single_demo_example():
    instance = make_instance([0.0] * 5, {(i, 0): 0.99 for i in range(1, 5)})
    for planner in (plan_exhaustive, plan_ssp_dp, plan_bnb):
        plan = planner(instance)
        assert plan.actions == [L, A, A, A, A]
        assert plan.objective == pytest.approx(244.0)
        assert plan.serving[1:] == [0, 0, 0, 0]


def test_perfect_pretrained_library_acts_everywhere():
    instance = make_instance([1.0] * 4)
    plan = plan_exhaustive(instance)
    assert plan.actions == [A] * 4
    assert plan.objective == 40.0
    assert plan.serving == [PRETRAINED] * 4


def test_expensive_demos_delegate_everything():
    n = 6
    costs = CostVector(c_rob=10.0, c_hum=100.0, c_demo=10 * 100.0 * n, c_fail=100.0)
    plan = plan_exhaustive(make_instance([0.0] * n, costs=costs))
    assert plan.actions == [D] * n
    assert plan.objective == n * 100.0


def test_ties_prefer_act_then_delegate():
    # Act costs exactly c_hum: 0 + 1.0 * 100
    costs = CostVector(c_rob=0.0, c_hum=100.0, c_demo=100.0, c_fail=100.0)
    plan = plan_exhaustive(make_instance([0.0], costs=costs))
    assert plan.actions == [A]
    assert plan_ssp_dp(make_instance([0.0], costs=costs)).actions == [A]


def test_oracles_refuse_large_instances():
    instance = make_instance([0.5] * 21)
    with pytest.raises(PlannerGuardError):
        plan_exhaustive(instance)
    with pytest.raises(PlannerGuardError):
        plan_ssp_dp(instance)
    assert plan_bnb(instance).objective > 0


def test_dp_single_task_takes_cheapest_action():
    for rho0 in (0.0, 0.5, 0.95, 1.0):
        instance = make_instance([rho0])
        best = min(10.0 + (1.0 - rho0) * 100.0, 100.0, 200.0)
        assert plan_ssp_dp(instance).objective == pytest.approx(best)


def test_dp_reuses_equal_success_vectors():
    plan = plan_ssp_dp(make_instance([0.0] * 5))
    assert plan.meta.memo_hits > 0


def test_oracle_triangle_on_random_instances():
    for instance in random_instances(200):
        exhaustive = plan_exhaustive(instance).objective
        dp = plan_ssp_dp(instance).objective
        bnb = plan_bnb(instance, 0.0).objective
        assert close(exhaustive, dp), (exhaustive, dp)
        assert close(exhaustive, bnb), (exhaustive, bnb)


def test_oracle_triangle_in_literal_mode():
    for instance in random_instances(50, seed=7, mode="literal_paper"):
        exhaustive = plan_exhaustive(instance).objective
        assert close(exhaustive, plan_ssp_dp(instance).objective)
        assert close(exhaustive, plan_bnb(instance).objective)


# ============================================================================
# STRUCTURAL PROPERTIES
# ============================================================================

def test_optimum_beats_trivial_plans():
    for instance in random_instances(40, seed=3):
        best = plan_bnb(instance).objective
        assert best <= expected_plan_cost(instance, [D] * instance.n) + 1e-9
        assert best <= expected_plan_cost(instance, [A] * instance.n) + 1e-9


def test_serving_skills_come_from_earlier_demos():
    for instance in random_instances(40, seed=5):
        plan = plan_bnb(instance)
        for i, source in enumerate(plan.serving):
            if plan.actions[i] != A:
                assert source is None
            elif source != PRETRAINED:
                assert source < i and plan.actions[source] == L


def test_library_monotonicity():
    rng = np.random.default_rng(11)
    for _ in range(30):
        instance = random_instance(rng, int(rng.integers(3, 9)))
        boosted = make_instance(instance.rho0 + (1.0 - instance.rho0) * rng.uniform(0, 1, instance.n),
                                instance.rho, costs=instance.costs)
        assert plan_exhaustive(boosted).objective <= plan_exhaustive(instance).objective + 1e-9


def test_cost_scaling_scales_the_optimum():
    rng = np.random.default_rng(13)
    for factor in (0.5, 3.0, 40.0):
        instance = random_instance(rng, 7, random_costs=True)
        assert close(plan_exhaustive(instance.scaled(factor)).objective,
                     factor * plan_exhaustive(instance).objective)


def test_literal_mode_never_cheaper_than_mdp():
    rng = np.random.default_rng(17)
    for _ in range(20):
        instance = random_instance(rng, 6)
        literal = make_instance(instance.rho0, instance.rho, costs=instance.costs, mode="literal_paper")
        assert plan_exhaustive(literal).objective >= plan_exhaustive(instance).objective - 1e-9


# ============================================================================
# BRANCH AND BOUND
# ============================================================================

def test_bnb_stops_at_root_when_no_demo_helps():
    n = 8
    plan = plan_bnb(make_instance([0.0] * n))
    assert plan.actions == [D] * n
    assert plan.meta.nodes_expanded <= n + 1
    assert plan.meta.gap == 0.0


def test_bnb_lower_bound_is_admissible():
    for instance in random_instances(60, seed=19):
        optimum = plan_exhaustive(instance).objective
        plan = plan_bnb(instance)
        assert plan.meta.lower_bound <= plan.objective + 1e-9
        assert plan.meta.lower_bound <= optimum + 1e-9 * max(1.0, optimum)


def test_bnb_gap_tolerance_bounds_the_objective():
    for instance in random_instances(40, seed=23):
        optimum = plan_exhaustive(instance).objective
        plan = plan_bnb(instance, gap_tolerance=0.1)
        assert plan.objective <= 1.1 * optimum + 1e-9
    with pytest.raises(ValueError):
        plan_bnb(make_instance([0.5]), gap_tolerance=-0.1)


# ============================================================================
# GREEDY FACILITY LOCATION
# ============================================================================

def test_greedy_opens_nothing_with_perfect_library():
    plan = plan_greedy_facility(make_instance([1.0] * 5))
    assert plan.actions == [A] * 5
    assert plan.meta.nodes_expanded == 0


def test_greedy_is_feasible_and_never_beats_the_optimum():
    for instance in random_instances(100, seed=29):
        plan = plan_greedy_facility(instance)
        assert len(plan.actions) == instance.n
        assert plan.objective >= plan_exhaustive(instance).objective - 1e-9
        assert close(plan.objective, expected_plan_cost(instance, plan.actions))


def test_greedy_ratio_on_empty_library_instances():
    rng = np.random.default_rng(31)
    ratios = []
    for _ in range(100):
        rho = np.tril(rng.uniform(0, 1, size=(10, 10)))
        instance = make_instance([0.0] * 10, rho)
        ratios.append(plan_greedy_facility(instance).objective / plan_bnb(instance).objective)
    print(f"greedy/optimal ratio: mean {np.mean(ratios):.4f}, max {np.max(ratios):.4f}")
    assert min(ratios) >= 1.0 - 1e-9


# ============================================================================
# INSTANCE CONSTRUCTION
# ============================================================================

def test_build_instance_from_model_and_library(rng):
    tasks = generate_block_tasks(5, seed=0, env_count=4)
    model = PreconditionModel.initialize(7, 8, rng)
    sim = InsertionSimulator()

    empty = build_instance(tasks, SkillLibrary(), model)
    assert np.array_equal(empty.rho0, np.zeros(5))
    for i in range(5):
        for j in range(5):
            if j <= i:
                assert empty.rho[i, j] == pytest.approx(predict(model, tasks[j], tasks[i]), rel=1e-12)
            else:
                assert math.isnan(empty.rho[i, j])

    library = SkillLibrary()
    library.add(sim.learn_skill(tasks[0]))
    one = build_instance(tasks, library, model)
    assert one.rho0[0] == pytest.approx(predict(model, tasks[0], tasks[0]), rel=1e-12)

    library.add(sim.learn_skill(tasks[3]))
    two = build_instance(tasks, library, model, mode="literal")
    assert np.all(two.rho0 >= one.rho0)
    assert two.mode == "literal_paper"
    assert two.task_ids == [0, 1, 2, 3, 4]


def test_build_instance_rejects_mismatched_model(rng):
    tasks = generate_block_tasks(3, seed=0, env_count=4)
    with pytest.raises(DimensionMismatchError):
        build_instance(tasks, SkillLibrary(), PreconditionModel.initialize(5, 4, rng))
    with pytest.raises(ValueError):
        build_instance([], SkillLibrary(), PreconditionModel.initialize(7, 4, rng))


# ============================================================================
# REPORTING AND FILES
# ============================================================================

def test_plan_table_lists_serving_skills():
    instance = make_instance([0.0, 0.0, 1.0], {(1, 0): 0.99})
    table = plan_table(instance, plan_exhaustive(instance))
    assert list(table.columns) == ["task_id", "action", "serving", "p_i", "expected_cost"]
    assert list(table["action"]) == ["Delegate", "Delegate", "Act"]
    assert list(table["serving"]) == ["", "", "pretrained"]
    assert table["expected_cost"].sum() == pytest.approx(210.0)

    taught = make_instance([0.0, 0.0, 0.0], {(1, 0): 0.99, (2, 0): 0.99})
    table = plan_table(taught, plan_exhaustive(taught))
    assert list(table["serving"]) == ["", "learned@0", "learned@0"]


def test_instance_and_plan_json_round_trips(tmp_path, rng):
    instance = random_instance(rng, 6, random_costs=True)
    plan = plan_bnb(instance)

    first, second = tmp_path / "instance_a.json", tmp_path / "instance_b.json"
    save_instance(instance, str(first))
    reloaded = load_instance(str(first))
    save_instance(reloaded, str(second))
    assert first.read_bytes() == second.read_bytes()
    assert plan_bnb(reloaded).objective == plan.objective

    first, second = tmp_path / "plan_a.json", tmp_path / "plan_b.json"
    save_plan(plan, str(first))
    save_plan(load_plan(str(first)), str(second))
    assert first.read_bytes() == second.read_bytes()
    assert load_plan(str(first)).actions == plan.actions


def test_uniform_costs_fixture_matches_defaults():
    assert UNIFORM == CostVector.defaults()
