"""Method identifiers and the fit dispatcher shared by the CLI and the benchmark

| identifier             | model                                          |
|------------------------|------------------------------------------------|
| `mismm-heuristic`      | bag classifier on distributions, alternating   |
| `mismm-miqp`           | bag classifier on distributions, mixed-integer |
| `si-smm`               | instance-level SMM on inherited bag labels     |
| `mi-svm:<summaries>`   | bag classifier on summary-statistic vectors    |
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

from typing_extensions import Self

from mismm.baselines import (
    SummarySpec,
    fit_mi_svm,
    fit_si_smm,
    standardize_summaries,
)
from mismm.data import Dataset, DistInstance
from mismm.dual import ClassPenalty
from mismm.errors import InputError
from mismm.evaluate import CvPlan, GridSearchResult, grid_search_fit, weighted_C
from mismm.heuristic import (
    SELECTION_CRITERIA,
    HeuristicConfig,
    Scorer,
    fit_heuristic,
)
from mismm.kernels import KernelSpec
from mismm.miqp import fit_miqp

logger = logging.getLogger(__name__)

METHODS = ("mismm-heuristic", "mismm-miqp", "si-smm", "mi-svm")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    summaries: Optional[SummarySpec] = None

    @classmethod
    def parse(cls, text: str) -> Self:
        """Parse a method identifier such as `mi-svm:univ1,cor`"""
        name, _, variant = text.strip().partition(":")
        if name not in METHODS:
            raise InputError(
                f"unknown method {text!r}; expected one of "
                "mismm-heuristic, mismm-miqp, si-smm, mi-svm:<summaries>"
            )
        if name == "mi-svm":
            if not variant:
                raise InputError("mi-svm needs summaries, e.g. mi-svm:univ1")
            return cls(name, SummarySpec.parse(variant))
        if variant:
            raise InputError(f"method {name} takes no variant")
        return cls(name)

    def __str__(self) -> str:
        return self.name if self.summaries is None else f"{self.name}:{self.summaries}"

    @property
    def uses_miqp(self) -> bool:
        return self.name == "mismm-miqp"


@dataclass(frozen=True)
class FitOptions:
    """Settings shared by every method; each method reads the ones it needs

    - `class_weighted`: weight C by class counts (`weighted_C`) instead of using
      the base C for both classes
    - `max_selector_updates`, `n_restarts`, `select_by`: the alternating heuristic
    - `m1`, `m2`, `L`, `miqp_time_limit`, `node_limit`: the mixed-integer solver
    - `seed`: seeds initial selectors and anchor subsamples
    """

    class_weighted: bool = True
    max_selector_updates: int = 50
    n_restarts: int = 1
    select_by: str = "objective"
    m1: Optional[int] = None
    m2: Optional[int] = None
    L: float = 100.0
    miqp_time_limit: Optional[float] = 60.0
    node_limit: Optional[int] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.max_selector_updates < 1 or self.n_restarts < 1:
            raise InputError("max_selector_updates and n_restarts must be >= 1")
        if not self.L > 0:
            raise InputError(f"L must be > 0, got {self.L}")
        if self.select_by not in SELECTION_CRITERIA:
            raise InputError(f"unknown restart selection {self.select_by!r}")
        if self.miqp_time_limit is not None and not self.miqp_time_limit > 0:
            raise InputError("the MIQP time limit must be > 0")
        for name in ("m1", "m2", "node_limit"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise InputError(f"{name} must be >= 1, got {value}")

    def penalty(self, C: float, ds: Dataset) -> ClassPenalty:
        if self.class_weighted:
            return weighted_C(C, ds)
        if not C > 0:
            raise InputError(f"C must be > 0, got {C}")
        return ClassPenalty.uniform(C)


def training_penalty(
    method: MethodSpec, ds: Dataset, C: float, options: FitOptions
) -> ClassPenalty:
    """The per-class penalty `method` trains with on `ds`

    `weighted_C` counts positive bags; `si-smm` classifies instances, so its
    weights are computed on `ds.singletons()`.
    """
    return options.penalty(C, ds.singletons() if method.name == "si-smm" else ds)


def fit_method(
    method: MethodSpec,
    ds: Dataset,
    C: float,
    sigma: float,
    options: FitOptions = FitOptions(),
    threads: Optional[int] = None,
) -> Scorer:
    """Train `method` on `ds` with base penalty `C` and a gaussian kernel of
    width `sigma`

    Class weights follow `training_penalty`.
    """
    kernel = KernelSpec.gaussian(sigma)
    penalty = training_penalty(method, ds, C, options)
    logger.debug("fitting %s with C=%g, sigma=%g", method, C, sigma)
    if method.name == "mismm-heuristic":
        cfg = HeuristicConfig(
            C=penalty,
            kernel=kernel,
            max_selector_updates=options.max_selector_updates,
            n_restarts=options.n_restarts,
            seed=options.seed,
            select_by=options.select_by,
        )
        return fit_heuristic(ds, cfg, threads=threads)
    if method.name == "mismm-miqp":
        return fit_miqp(
            ds,
            kernel,
            penalty,
            m1=options.m1,
            m2=options.m2,
            L=options.L,
            time_limit=options.miqp_time_limit,
            seed=options.seed,
            node_limit=options.node_limit,
            threads=threads,
        )
    if method.name == "si-smm":
        return fit_si_smm(ds, kernel, penalty, threads=threads)
    assert method.summaries is not None
    return fit_mi_svm(
        ds,
        method.summaries,
        kernel,
        penalty,
        max_selector_updates=options.max_selector_updates,
        n_restarts=options.n_restarts,
        seed=options.seed,
        select_by=options.select_by,
        threads=threads,
    )


def kernel_inputs(
    method: MethodSpec, ds: Dataset, threads: Optional[int] = None
) -> Sequence[DistInstance]:
    """The instances `method`'s kernel compares when trained on `ds`

    `mi-svm` compares standardized summary vectors; every other method compares
    the instances themselves. The median-heuristic σ comes from these.
    """
    if method.summaries is None:
        return ds.instances
    return standardize_summaries(ds, method.summaries, threads)[0].instances


def tune_method(
    method: MethodSpec,
    ds: Dataset,
    plan: CvPlan,
    options: FitOptions = FitOptions(),
    threads: Optional[int] = None,
) -> GridSearchResult:
    """`grid_search_fit` over `plan`'s grid with `fit_method`

    The median-heuristic σ grid is taken over `kernel_inputs`.
    """
    return grid_search_fit(
        ds,
        lambda train, C, sigma: fit_method(method, train, C, sigma, options, 1),
        plan,
        threads,
        kernel_inputs=lambda train: kernel_inputs(method, train, threads),
    )
