from __future__ import annotations

from typing import Tuple

import numpy as np
import pytest

from mismm.data import Bag, Dataset, DistInstance
from mismm.dual import ClassPenalty, DualProblem, solve_dual
from mismm.heuristic import (
    HeuristicConfig,
    fit_heuristic,
    predict_bags,
    primal_objective,
)
from mismm.kernels import KernelSpec
from mismm.miqp import (
    EnumerationLimitExceeded,
    MiqpProblem,
    PrimalModel,
    branch_and_bound,
    embedded_dataset,
    enumerate_selectors,
    fit_miqp,
    solve_escalating_L,
)


def random_problem(seed: int) -> Tuple[np.ndarray, Tuple[Bag, ...]]:
    """At most 3 positive bags of at most 3 instances and 6 negative instances"""
    rng = np.random.default_rng(seed)
    bags = []
    n = 0
    for b in range(int(rng.integers(1, 4))):
        k = int(rng.integers(1, 4))
        bags.append(Bag(f"p{b}", tuple(range(n, n + k)), 1))
        n += k
    n_neg = int(rng.integers(1, 7))
    split = int(rng.integers(1, n_neg + 1))
    for b, (lo, hi) in enumerate([(0, split), (split, n_neg)]):
        if hi > lo:
            bags.append(Bag(f"n{b}", tuple(range(n + lo, n + hi)), -1))
    n += n_neg
    Z = rng.normal(size=(n, 3))
    Z[: n - n_neg] += 0.5
    return Z, tuple(bags)


def test_branch_and_bound_matches_the_enumeration_oracle() -> None:
    for seed in range(10):
        Z, bags = random_problem(seed)
        penalty = ClassPenalty(1.0, 0.7)
        sol = branch_and_bound(MiqpProblem(Z, bags, penalty))
        oracle = enumerate_selectors(Z, bags, penalty)
        assert sol.status == "optimal"
        assert sol.gap == 0.0
        assert sol.objective == pytest.approx(oracle.objective, abs=1e-6)


def test_solution_satisfies_the_max_form_constraints() -> None:
    for seed in range(10):
        Z, bags = random_problem(100 + seed)
        sol = branch_and_bound(MiqpProblem(Z, bags, ClassPenalty.uniform(1.0)))
        scores = Z @ sol.w + sol.b
        for k, bag in enumerate(bags):
            top = np.max(scores[list(bag.instance_indices)])
            if bag.label == 1:
                assert top >= 1.0 - sol.xi[k] - 1e-6
            else:
                assert top <= -1.0 + sol.xi[k] + 1e-6
        assert np.all(sol.xi >= -1e-9)


def test_each_positive_bag_keeps_exactly_one_active_instance() -> None:
    Z, bags = random_problem(7)
    sol = branch_and_bound(MiqpProblem(Z, bags, ClassPenalty.uniform(1.0)))
    for bag in bags:
        if bag.label == 1:
            assert sum(sol.zeta[i] == 0 for i in bag.instance_indices) == 1


def test_doubling_L_does_not_move_the_optimum() -> None:
    for seed in range(5):
        Z, bags = random_problem(200 + seed)
        sol = branch_and_bound(MiqpProblem(Z, bags, ClassPenalty.uniform(1.0)))
        assert sol.l_check_shift is not None
        assert sol.l_check_shift <= 1e-6
        doubled = branch_and_bound(
            MiqpProblem(Z, bags, ClassPenalty.uniform(1.0), L=200.0)
        )
        assert doubled.objective == pytest.approx(sol.objective, abs=1e-6)


def test_node_limit_returns_the_incumbent_with_a_valid_bound() -> None:
    Z, bags = random_problem(3)
    sol = branch_and_bound(
        MiqpProblem(Z, bags, ClassPenalty.uniform(1.0), node_limit=1)
    )
    assert sol.status in ("optimal", "node_limit")
    assert sol.lower_bound <= sol.objective + 1e-9
    assert sol.gap >= 0.0
    assert sol.nodes == 1


def test_too_many_selectors_cannot_be_enumerated() -> None:
    bags = [Bag(f"p{b}", tuple(range(7 * b, 7 * b + 7)), 1) for b in range(5)]
    bags.append(Bag("n", (35,), -1))
    with pytest.raises(EnumerationLimitExceeded):
        enumerate_selectors(np.zeros((36, 2)), bags, 1.0)


def test_heuristic_never_beats_the_exact_optimum(make_dataset) -> None:
    for seed in range(4):
        ds = make_dataset(n_pos=2, n_neg=2, n_inst=2, shift=1.0, seed=seed)
        Z = np.random.default_rng(seed).normal(size=(ds.n_instances, 3))
        embedded = embedded_dataset(ds, Z)
        exact = enumerate_selectors(Z, ds.bags, 1.0)
        cfg = HeuristicConfig(C=1.0, kernel=KernelSpec.linear(), seed=seed)
        assert fit_heuristic(embedded, cfg).objective >= exact.objective - 1e-8


def test_fitted_primal_model_classifies_separable_bags(separable: Dataset) -> None:
    model = fit_miqp(separable, KernelSpec.gaussian(2.0), 10.0, m2=40, seed=0)
    labels, _ = predict_bags(model, separable)
    assert list(labels) == list(separable.bag_labels)
    assert model.solution["status"] == "optimal"
    assert model.nmap.m2 == 40


def test_primal_model_survives_serialization(separable: Dataset) -> None:
    model = fit_miqp(separable, KernelSpec.gaussian(2.0), 1.0, m1=10, m2=20, seed=1)
    again = PrimalModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(
        model.decision_function(separable.instances),
        again.decision_function(separable.instances),
    )
    assert again.half_norm_sq() == model.half_norm_sq()


def test_L_is_doubled_until_it_no_longer_binds() -> None:
    # the best selector scores its other instance at -2, which needs L >= 3
    Z = np.array([[1.0], [-5.0], [-1.0]])
    bags = (Bag("p", (0, 1), 1), Bag("n", (2,), -1))
    problem = MiqpProblem(Z, bags, ClassPenalty.uniform(10.0), L=2.0)
    assert branch_and_bound(problem).l_check_shift > 1e-6
    sol = solve_escalating_L(problem)
    oracle = enumerate_selectors(Z, bags, 10.0)
    assert sol.L == 4.0
    assert sol.l_check_shift <= 1e-6
    assert sol.objective == pytest.approx(oracle.objective, abs=1e-6)
    assert sol.objective == pytest.approx(0.125, abs=1e-6)


def test_L_is_kept_when_it_does_not_bind() -> None:
    Z, bags = random_problem(4)
    sol = solve_escalating_L(MiqpProblem(Z, bags, ClassPenalty.uniform(1.0)))
    assert sol.L == 100.0


def test_time_limited_fit_returns_a_feasible_incumbent(make_dataset) -> None:
    ds = make_dataset(n_pos=8, n_neg=8, n_inst=3, shift=0.5, seed=2)
    model = fit_miqp(ds, KernelSpec.gaussian(1.5), 1.0, time_limit=0.01, seed=0)
    sol = model.solution
    assert sol["status"] in ("time_limit", "optimal")
    assert sol["gap"] >= 0.0
    assert sol["lower_bound"] <= sol["objective"] + 1e-9
    if sol["status"] == "optimal":
        assert sol["gap"] == 0.0
    # the incumbent's hinge losses are at most its slacks
    assert primal_objective(model, ds, 1.0) <= sol["objective"] + 1e-6


def test_singleton_positive_bags_reduce_to_the_convex_dual() -> None:
    for seed in range(5):
        rng = np.random.default_rng(300 + seed)
        Z = rng.normal(size=(7, 3))
        Z[:3] += 0.5
        bags = (
            Bag("p0", (0,), 1),
            Bag("p1", (1,), 1),
            Bag("p2", (2,), 1),
            Bag("n0", (3, 4), -1),
            Bag("n1", (5, 6), -1),
        )
        penalty = ClassPenalty(1.0, 0.7)
        sol = branch_and_bound(MiqpProblem(Z, bags, penalty))
        ds = embedded_dataset(
            Dataset(
                tuple(DistInstance(f"i{i}", Z[i]) for i in range(7)),
                bags,
                ("a", "b", "c"),
            ),
            Z,
        )
        dual = solve_dual(DualProblem.from_selector(ds, Z @ Z.T, (0, 1, 2), penalty))
        assert sol.objective == pytest.approx(dual.objective, abs=1e-5)
