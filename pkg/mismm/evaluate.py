"""Bag-level evaluation: AUROC, class weighting, folds and grid search"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import StratifiedKFold

from mismm.data import Dataset, DistInstance
from mismm.dual import ClassPenalty
from mismm.errors import InputError, MismmException, SolverError
from mismm.heuristic import Scorer, predict_bags
from mismm.parallel import thread_map

logger = logging.getLogger(__name__)

DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_SIGMA_MULTIPLES = (0.25, 1.0, 4.0)


class EvaluationError(InputError):
    """Raised when a metric or split is undefined for the given labels"""


class GridSearchError(SolverError):
    """Raised when every grid point fails"""

    def __init__(self, msg: str, diagnostics: Dict[Tuple[float, float], str]):
        detail = "; ".join(
            f"C={c:g}, sigma={s:g}: {e}" for (c, s), e in diagnostics.items()
        )
        super().__init__(f"{msg}: {detail}")
        self.diagnostics = diagnostics


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """The probability that a random positive outscores a random negative

    Ties count one half.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise EvaluationError("scores and labels differ in length")
    if not (np.any(labels == 1) and np.any(labels == -1)):
        raise EvaluationError("AUROC needs both positive and negative labels")
    return float(roc_auc_score(labels == 1, scores))


def bag_auroc(model: Scorer, ds: Dataset, threads: Optional[int] = None) -> float:
    """AUROC of the max-instance bag scores against the bag labels"""
    _, scores = predict_bags(model, ds, threads=threads)
    return auroc(scores, ds.bag_labels)


def weighted_C(base_C: float, ds: Dataset) -> ClassPenalty:
    """Class weights inversely proportional to the positive-bag and
    negative-instance counts

    ```
    C+ = C (n+ + n-) / (2 n+)    n+ = number of positive bags
    C- = C (n+ + n-) / (2 n-)    n- = number of negative-bag instances
    ```
    """
    if not base_C > 0:
        raise EvaluationError(f"C must be > 0, got {base_C}")
    n_pos = len(ds.positive_bags)
    n_neg = len(ds.instance_indices_of(ds.negative_bags))
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("class weighting needs both classes")
    total = n_pos + n_neg
    return ClassPenalty(base_C * total / (2 * n_pos), base_C * total / (2 * n_neg))


def bag_folds(
    ds: Dataset, k: int, seed: Optional[int]
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Stratified `(train, test)` splits of the bag indices

    Folds partition bags, never instances; `k` is capped at the size of the
    larger class.
    """
    labels = ds.bag_labels
    largest = max(int(np.sum(labels == 1)), int(np.sum(labels == -1)))
    if k > largest:
        logger.info("reducing %d folds to %d for %d bags", k, largest, ds.n_bags)
        k = largest
    if k < 2:
        raise EvaluationError("cross-validation needs at least 2 bags of a class")
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    with warnings.catch_warnings():
        # too few members of a class for k folds is tolerated
        warnings.simplefilter("ignore", UserWarning)
        return list(splitter.split(np.zeros((ds.n_bags, 1)), labels))


def sigma_grid(
    instances: Sequence[DistInstance],
    multiples: Sequence[float] = DEFAULT_SIGMA_MULTIPLES,
) -> List[float]:
    """Kernel widths from the median heuristic

    `σ² = multiple · median` of the squared distances between instance means,
    with the median taken as 1 when undefined or zero.
    """
    means = np.vstack([inst.samples.mean(axis=0) for inst in instances])
    distances = pdist(means, "sqeuclidean")
    median = float(np.median(distances)) if distances.size else 0.0
    if not median > 0:
        median = 1.0
    return [float(np.sqrt(m * median)) for m in multiples]


@dataclass(frozen=True)
class CvPlan:
    """Cross-validation and tuning settings

    - `k`, `replications`: the outer replicated k-fold (CV mode)
    - `seed`: seeds every split
    - `C_grid`: candidate base penalties
    - `sigma_grid`: candidate kernel widths, or `None` for the median heuristic
      with `sigma_multiples`
    - `inner_k`: folds of the tuning cross-validation
    """

    k: int = 10
    replications: int = 10
    seed: Optional[int] = None
    C_grid: Tuple[float, ...] = DEFAULT_C_GRID
    sigma_grid: Optional[Tuple[float, ...]] = None
    sigma_multiples: Tuple[float, ...] = DEFAULT_SIGMA_MULTIPLES
    inner_k: int = 5

    def __post_init__(self) -> None:
        if self.k < 2 or self.inner_k < 2:
            raise InputError("fold counts must be >= 2")
        if self.replications < 1:
            raise InputError("replications must be >= 1")
        if not self.C_grid or any(not c > 0 for c in self.C_grid):
            raise InputError("the C grid must be nonempty and positive")
        if self.sigma_grid is not None and (
            not self.sigma_grid or any(not s > 0 for s in self.sigma_grid)
        ):
            raise InputError("the sigma grid must be nonempty and positive")
        object.__setattr__(self, "C_grid", tuple(float(c) for c in self.C_grid))
        if self.sigma_grid is not None:
            object.__setattr__(
                self, "sigma_grid", tuple(float(s) for s in self.sigma_grid)
            )

    def grid(
        self, ds: Dataset, instances: Optional[Sequence[DistInstance]] = None
    ) -> List[Tuple[float, float]]:
        """The deduplicated `(C, σ)` points, in grid order

        The median heuristic runs on `instances`, the inputs the kernel is
        evaluated on, which default to the instances of `ds`.
        """
        sigmas = self.sigma_grid or sigma_grid(
            ds.instances if instances is None else instances, self.sigma_multiples
        )
        return list(dict.fromkeys(itertools.product(self.C_grid, sigmas)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.k,
            "replications": self.replications,
            "seed": self.seed,
            "C_grid": list(self.C_grid),
            "sigma_grid": None if self.sigma_grid is None else list(self.sigma_grid),
            "sigma_multiples": list(self.sigma_multiples),
            "inner_k": self.inner_k,
        }


FitFn = Callable[[Dataset, float, float], Scorer]
"""Fits a model from training data, a base `C` and a kernel width `σ`."""

KernelInputsFn = Callable[[Dataset], Sequence[DistInstance]]
"""Maps training data to the instances the kernel of a fitted model compares."""


@dataclass(frozen=True, eq=False)
class GridSearchResult:
    model: Scorer
    C: float
    sigma: float
    scores: Dict[Tuple[float, float], float] = field(default_factory=dict)
    """Mean inner AUROC of every grid point that produced one."""
    diagnostics: Dict[Tuple[float, float], str] = field(default_factory=dict)
    """The failure of every grid point that did not."""


def grid_search_fit(
    ds: Dataset,
    fit: FitFn,
    plan: CvPlan,
    threads: Optional[int] = None,
    kernel_inputs: Optional[KernelInputsFn] = None,
) -> GridSearchResult:
    """Choose `(C, σ)` by inner bag-level cross-validation and refit on `ds`

    The winner has the highest mean inner AUROC; ties go to the smallest `C`, then
    the smallest `σ`. Folds whose test part holds a single class, or whose
    training part lacks one, do not count. A single grid point is fitted
    directly. Raises `GridSearchError` when every point fails.

    `kernel_inputs` supplies the instances the median-heuristic σ grid is
    computed from, for methods whose kernel does not act on the raw instances.
    """
    inputs = None
    if kernel_inputs is not None and plan.sigma_grid is None:
        inputs = kernel_inputs(ds)
    points = plan.grid(ds, inputs)
    if len(points) == 1:
        C, sigma = points[0]
        return GridSearchResult(fit(ds, C, sigma), C, sigma)

    folds = [
        (train, test)
        for train, test in bag_folds(ds, plan.inner_k, plan.seed)
        if len(set(ds.bag_labels[test])) == 2 and len(set(ds.bag_labels[train])) == 2
    ]

    def evaluate(task: Tuple[Tuple[float, float], Tuple[np.ndarray, np.ndarray]]):
        (C, sigma), (train, test) = task
        try:
            model = fit(ds.subset(train), C, sigma)
            return bag_auroc(model, ds.subset(test), threads=1), None
        except MismmException as e:
            return None, f"{type(e).__name__}: {e}"

    tasks = list(itertools.product(points, folds))
    outcomes = thread_map(evaluate, tasks, threads)

    scores: Dict[Tuple[float, float], float] = {}
    diagnostics: Dict[Tuple[float, float], str] = {}
    for point in points:
        results = [o for (p, _), o in zip(tasks, outcomes) if p == point]
        values = [v for v, _ in results if v is not None]
        errors = [e for _, e in results if e is not None]
        if values:
            scores[point] = float(np.mean(values))
        else:
            diagnostics[point] = errors[0] if errors else "no usable fold"
    if not scores:
        raise GridSearchError("every grid point failed", diagnostics)

    C, sigma = max(scores, key=lambda p: (scores[p], -p[0], -p[1]))
    logger.info(
        "grid search chose C=%g, sigma=%g (inner AUROC %.4f)",
        C,
        sigma,
        scores[(C, sigma)],
    )
    return GridSearchResult(fit(ds, C, sigma), C, sigma, scores, diagnostics)
