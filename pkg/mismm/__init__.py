"""
## Multiple-instance support measure machines

mismm classifies *bags* of *distributional instances*: each instance is a set of
sample vectors, each bag carries a label, and a bag is positive iff at least one
of its instances is. Instances are compared through the kernel mean embedding of
their empirical distributions.

Two solvers train the non-convex bag classifier:

- `mismm.heuristic.fit_heuristic`, an alternating heuristic over convex dual
  subproblems, and
- `mismm.miqp.fit_miqp`, an exact branch-and-bound over a Nyström embedding.

`mismm.baselines` provides an instance-level SMM and summary-statistic bag
classifiers, `mismm.simgen` simulates labelled data, and `mismm.evaluate` /
`mismm.benchmark` tune and compare methods by bag-level AUROC. The command line
lives in `mismm.cli`.
"""

from mismm.baselines import SummaryModel, SummarySpec, fit_mi_svm, fit_si_smm
from mismm.data import Bag, Dataset, DistInstance, load_dataset, save_dataset
from mismm.dual import ClassPenalty, DualModel
from mismm.errors import InputError, MethodFailure, MismmException, SolverError
from mismm.evaluate import CvPlan, auroc, grid_search_fit, weighted_C
from mismm.heuristic import HeuristicConfig, fit_heuristic, predict_bag, predict_bags
from mismm.kernels import KernelSpec, gram, smm_kernel
from mismm.methods import FitOptions, MethodSpec, fit_method
from mismm.miqp import PrimalModel, enumerate_selectors, fit_miqp

__all__ = [
    "Bag",
    "ClassPenalty",
    "CvPlan",
    "Dataset",
    "DistInstance",
    "DualModel",
    "FitOptions",
    "HeuristicConfig",
    "InputError",
    "KernelSpec",
    "MethodFailure",
    "MethodSpec",
    "MismmException",
    "PrimalModel",
    "SolverError",
    "SummaryModel",
    "SummarySpec",
    "auroc",
    "enumerate_selectors",
    "fit_heuristic",
    "fit_method",
    "fit_mi_svm",
    "fit_miqp",
    "fit_si_smm",
    "gram",
    "grid_search_fit",
    "load_dataset",
    "predict_bag",
    "predict_bags",
    "save_dataset",
    "smm_kernel",
    "weighted_C",
]
