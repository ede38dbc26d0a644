from __future__ import annotations

import numpy as np
import pytest

from mismm.data import DistInstance
from mismm.dual import ClassPenalty
from mismm.heuristic import HeuristicConfig, fit_heuristic
from mismm.kernels import KernelSpec, gram, smm_kernel
from mismm.miqp import (
    MiqpProblem,
    branch_and_bound,
    embedded_dataset,
    enumerate_selectors,
)
from mismm.nystrom import embed_instances, fit_nystrom, stratified_subsample


def test_full_rank_embeddings_reproduce_the_kernel_on_random_data() -> None:
    rng = np.random.default_rng(1000)
    for _ in range(50):
        d = int(rng.integers(1, 6))
        instances = [
            DistInstance(f"i{k}", rng.normal(size=(int(rng.integers(1, 16)), d)))
            for k in range(int(rng.integers(2, 11)))
        ]
        spec = KernelSpec.gaussian(float(rng.uniform(0.5, 3.0)))
        anchors = np.vstack([P.samples for P in instances])
        nmap = fit_nystrom(anchors, spec, anchors.shape[0])
        Z = embed_instances(instances, nmap)
        K = gram(instances, spec).values
        assert np.max(np.abs(Z @ Z.T - K)) <= 1e-6


def test_gram_matrices_are_positive_semidefinite() -> None:
    rng = np.random.default_rng(2000)
    for _ in range(50):
        d = int(rng.integers(1, 6))
        instances = [
            DistInstance(f"i{k}", rng.normal(size=(int(rng.integers(1, 10)), d)))
            for k in range(int(rng.integers(2, 20)))
        ]
        K = gram(instances, KernelSpec.gaussian(float(rng.uniform(0.2, 4.0)))).values
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.trace(K)


def test_gram_entries_equal_independent_kernel_evaluations() -> None:
    rng = np.random.default_rng(3000)
    spec = KernelSpec.gaussian(1.5)
    instances = [DistInstance(f"i{k}", rng.normal(size=(4, 3))) for k in range(5)]
    K = gram(instances, spec).values
    for i, Pi in enumerate(instances):
        for j, Pj in enumerate(instances):
            assert K[i, j] == pytest.approx(smm_kernel(Pi, Pj, spec), abs=1e-12)


def test_big_L_solutions_satisfy_the_max_form_and_ignore_L(
    random_tiny_dataset,
) -> None:
    for seed in range(50):
        ds = random_tiny_dataset(seed)
        rng = np.random.default_rng(seed)
        spec = KernelSpec.gaussian(1.0)
        m2 = min(12, ds.n_samples)
        nmap = fit_nystrom(stratified_subsample(ds, m2, rng), spec, min(8, m2))
        Z = embed_instances(ds.instances, nmap)
        sol = branch_and_bound(MiqpProblem(Z, ds.bags, ClassPenalty.uniform(1.0)))
        scores = Z @ sol.w + sol.b
        for k, bag in enumerate(ds.bags):
            top = np.max(scores[list(bag.instance_indices)])
            assert bag.label * top >= 1.0 - sol.xi[k] - 1e-6
        doubled = branch_and_bound(
            MiqpProblem(Z, ds.bags, ClassPenalty.uniform(1.0), L=200.0)
        )
        assert doubled.objective == pytest.approx(sol.objective, abs=1e-6)


def test_branch_and_bound_finds_the_exact_optimum_the_heuristic_bounds(
    random_tiny_dataset,
) -> None:
    for seed in range(30):
        ds = random_tiny_dataset(100 + seed)
        rng = np.random.default_rng(seed)
        m2 = min(12, ds.n_samples)
        anchors = stratified_subsample(ds, m2, rng)
        nmap = fit_nystrom(anchors, KernelSpec.gaussian(1.0), min(8, m2))
        Z = embed_instances(ds.instances, nmap)
        penalty = ClassPenalty(2.0, 0.5)
        exact = enumerate_selectors(Z, ds.bags, penalty)
        sol = branch_and_bound(MiqpProblem(Z, ds.bags, penalty))
        assert sol.status == "optimal"
        assert abs(sol.objective - exact.objective) <= 1e-6
        cfg = HeuristicConfig(C=penalty, kernel=KernelSpec.linear(), seed=seed)
        heuristic = fit_heuristic(embedded_dataset(ds, Z), cfg)
        assert heuristic.objective >= exact.objective - 1e-8
