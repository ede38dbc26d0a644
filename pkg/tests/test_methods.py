from __future__ import annotations

import numpy as np
import pytest

from mismm.baselines import SummaryModel, standardize_summaries
from mismm.data import Bag, Dataset, DistInstance
from mismm.dual import DualModel
from mismm.errors import InputError
from mismm.evaluate import CvPlan, bag_auroc, sigma_grid
from mismm.kernels import KernelSpec, gram
from mismm.methods import (
    FitOptions,
    MethodSpec,
    fit_method,
    kernel_inputs,
    training_penalty,
    tune_method,
)
from mismm.miqp import PrimalModel


@pytest.mark.parametrize(
    "text", ["mismm-heuristic", "mismm-miqp", "si-smm", "mi-svm:univ1,cor"]
)
def test_method_identifiers_print_back_unchanged(text: str) -> None:
    assert str(MethodSpec.parse(text)) == text


@pytest.mark.parametrize(
    "text", ["smm", "mi-svm", "mi-svm:univ3", "si-smm:univ1", "MISMM-HEURISTIC"]
)
def test_bad_method_identifiers_are_input_errors(text: str) -> None:
    with pytest.raises(InputError):
        MethodSpec.parse(text)


def test_only_the_mixed_integer_method_uses_the_miqp() -> None:
    assert MethodSpec.parse("mismm-miqp").uses_miqp
    assert not MethodSpec.parse("mismm-heuristic").uses_miqp


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_restarts": 0},
        {"max_selector_updates": 0},
        {"L": 0.0},
        {"miqp_time_limit": -1.0},
        {"m1": 0},
    ],
)
def test_invalid_fit_options_are_rejected(kwargs) -> None:
    with pytest.raises(InputError):
        FitOptions(**kwargs)


def test_unweighted_penalty_is_uniform(make_dataset) -> None:
    penalty = FitOptions(class_weighted=False).penalty(2.0, make_dataset(n_neg=7))
    assert penalty.pos == penalty.neg == 2.0


def test_heuristic_dispatch_returns_a_dual_model(separable: Dataset) -> None:
    model = fit_method(MethodSpec.parse("mismm-heuristic"), separable, 1.0, 2.0)
    assert isinstance(model, DualModel)
    assert bag_auroc(model, separable) >= 0.9


def test_si_smm_is_trained_on_the_instances(separable: Dataset) -> None:
    model = fit_method(MethodSpec.parse("si-smm"), separable, 1.0, 2.0)
    assert isinstance(model, DualModel)
    assert len(model.support) <= separable.n_instances


def test_mi_svm_is_trained_on_summaries(separable: Dataset) -> None:
    model = fit_method(MethodSpec.parse("mi-svm:univ1"), separable, 1.0, 2.0)
    assert isinstance(model, SummaryModel)
    scores = model.decision_function(separable.instances)
    assert scores.shape == (separable.n_instances,)
    assert np.all(np.isfinite(scores))


def test_miqp_dispatch_returns_a_primal_model(make_dataset) -> None:
    ds = make_dataset(n_pos=2, n_neg=2, n_inst=2, n_samples=3)
    options = FitOptions(seed=0, m1=4, m2=4, miqp_time_limit=30.0)
    model = fit_method(MethodSpec.parse("mismm-miqp"), ds, 1.0, 2.0, options)
    assert isinstance(model, PrimalModel)
    assert np.all(np.isfinite(model.decision_function(ds.instances)))


def test_tuning_picks_a_point_of_the_grid(separable: Dataset) -> None:
    plan = CvPlan(C_grid=(1.0, 10.0), sigma_grid=(2.0,), inner_k=3, seed=0)
    result = tune_method(MethodSpec.parse("mismm-heuristic"), separable, plan)
    assert (result.C, result.sigma) in {(1.0, 2.0), (10.0, 2.0)}
    assert set(result.scores) == {(1.0, 2.0), (10.0, 2.0)}


def test_instance_level_baseline_weights_classes_by_instance_counts() -> None:
    rng = np.random.default_rng(5)
    sizes = [(3, 1), (3, 1), (1, -1), (1, -1)]
    instances, bags = [], []
    for b, (size, label) in enumerate(sizes):
        start = len(instances)
        for j in range(size):
            instances.append(DistInstance(f"b{b}.i{j}", rng.normal(size=(4, 2))))
        bags.append(Bag(f"b{b}", tuple(range(start, len(instances))), label))
    ds = Dataset(tuple(instances), tuple(bags), ("f1", "f2"))
    options = FitOptions()

    bag_level = training_penalty(MethodSpec.parse("mismm-heuristic"), ds, 1.0, options)
    assert bag_level.pos == pytest.approx(1.0)
    assert bag_level.neg == pytest.approx(1.0)
    instance_level = training_penalty(MethodSpec.parse("si-smm"), ds, 1.0, options)
    assert instance_level.pos == pytest.approx(8.0 / 12.0)
    assert instance_level.neg == pytest.approx(2.0)


def test_summary_kernel_compares_standardized_summaries(make_dataset) -> None:
    ds = make_dataset(n_pos=4, n_neg=4, n_inst=3, n_samples=8, dim=3)
    method = MethodSpec.parse("mi-svm:univ1,univ2,cor")
    inputs = kernel_inputs(method, ds)
    expected, _ = standardize_summaries(ds, method.summaries)
    assert len(inputs) == ds.n_instances
    for got, want in zip(inputs, expected.instances):
        np.testing.assert_array_equal(got.samples, want.samples)
    assert kernel_inputs(MethodSpec.parse("si-smm"), ds) == ds.instances


def test_summary_kernel_width_keeps_the_gram_matrix_informative(
    make_dataset,
) -> None:
    ds = make_dataset(n_pos=4, n_neg=4, n_inst=3, n_samples=8, dim=3)
    method = MethodSpec.parse("mi-svm:univ1,univ2,cor")
    inputs = kernel_inputs(method, ds)
    sigma = sigma_grid(inputs, (1.0,))[0]
    K = gram(inputs, KernelSpec.gaussian(sigma)).values
    off_diagonal = K[~np.eye(len(inputs), dtype=bool)]
    assert off_diagonal.max() > 0.5


def test_tuning_takes_the_median_heuristic_over_the_kernel_inputs(
    separable: Dataset,
) -> None:
    method = MethodSpec.parse("mi-svm:univ1")
    plan = CvPlan(C_grid=(1.0,), inner_k=3, seed=0)
    result = tune_method(method, separable, plan)
    expected = sigma_grid(kernel_inputs(method, separable), plan.sigma_multiples)
    tried = set(result.scores) | set(result.diagnostics)
    assert {s for _, s in tried} == set(expected)
    assert result.sigma in expected


def test_restart_selection_must_be_known() -> None:
    with pytest.raises(InputError):
        FitOptions(select_by="best")
