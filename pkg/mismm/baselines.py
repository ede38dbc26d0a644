"""Baseline classifiers built on the same solvers

- SI-SMM ignores the bag structure: every instance inherits its bag's label and
  one convex SMM is trained on the singletons.
- MI-SVM replaces each distributional instance by a vector of summary statistics
  and runs a bag classifier on those vectors. A vector is a distribution with a
  single sample, on which the SMM kernel is the plain vector kernel.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from typing_extensions import Self

from mismm.data import (
    Dataset,
    DistInstance,
    ScaleParams,
    apply_scaler,
    fit_scaler,
    save_dataset,
)
from mismm.dual import DualModel, Penalty
from mismm.errors import InputError
from mismm.heuristic import HeuristicConfig, Scorer, fit_heuristic
from mismm.kernels import KernelSpec
from mismm.miqp import PrimalModel, fit_miqp
from mismm.parallel import thread_map

logger = logging.getLogger(__name__)

VARIANTS = ("univ1", "univ1,univ2", "univ1,cor", "univ1,univ2,cor")
InnerModel = Union[DualModel, PrimalModel]
"""The trained classifier a `SummaryModel` applies to standardized summaries."""

QUANTILE_CONVENTION = "linear interpolation of order statistics (type 7)"
KURTOSIS_CONVENTION = "non-excess fourth standardized moment"


class SummaryError(InputError):
    """Raised when an instance has too few samples for the requested statistics"""


@dataclass(frozen=True)
class SummarySpec:
    """Which summary statistics make up an instance's feature vector

    - `univ1` (always): per-feature mean and sample standard deviation
    - `univ2`: per-feature skewness, kurtosis, 25th and 75th percentiles
    - `cor`: Pearson correlation of every feature pair
    """

    univ2: bool = False
    cor: bool = False

    @property
    def include_univ1(self) -> bool:
        return True

    @classmethod
    def parse(cls, text: str) -> Self:
        """Parse `univ1[,univ2][,cor]`"""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        unknown = set(parts) - {"univ1", "univ2", "cor"}
        if unknown or "univ1" not in parts or len(set(parts)) != len(parts):
            raise InputError(
                f"invalid summary spec {text!r}; expected one of {', '.join(VARIANTS)}"
            )
        return cls(univ2="univ2" in parts, cor="cor" in parts)

    def __str__(self) -> str:
        parts = ["univ1"] + ["univ2"] * self.univ2 + ["cor"] * self.cor
        return ",".join(parts)

    def dimension(self, d: int) -> int:
        """`2d + 4d·[univ2] + C(d, 2)·[cor]`"""
        return 2 * d + 4 * d * self.univ2 + (d * (d - 1) // 2) * self.cor

    def feature_names(self, names: Sequence[str]) -> List[str]:
        out = [f"mean_{n}" for n in names] + [f"sd_{n}" for n in names]
        if self.univ2:
            for stat in ("skew", "kurt", "q25", "q75"):
                out += [f"{stat}_{n}" for n in names]
        if self.cor:
            i, j = np.triu_indices(len(names), 1)
            out += [f"cor_{names[a]}_{names[b]}" for a, b in zip(i, j)]
        return out


def summarize(Pi: DistInstance, spec: SummarySpec) -> np.ndarray:
    """The summary vector of one instance, statistic blocks in order

    Statistics of a constant column that are undefined (skewness, kurtosis,
    correlation) are set to 0 with a warning.
    """
    X = Pi.samples
    r = X.shape[0]
    if r < 2:
        raise SummaryError(f"instance {Pi.instance_id!r} needs >= 2 samples, has {r}")
    if spec.univ2 and r < 3:
        raise SummaryError(
            f"instance {Pi.instance_id!r} needs >= 3 samples for univ2, has {r}"
        )
    constant = np.ptp(X, axis=0) == 0
    blocks = [X.mean(axis=0), X.std(axis=0, ddof=1)]

    if spec.univ2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            skew = stats.skew(X, axis=0, bias=True)
            kurt = stats.kurtosis(X, axis=0, fisher=False, bias=True)
        if constant.any():
            logger.warning(
                "instance %r: constant feature, skewness and kurtosis set to 0",
                Pi.instance_id,
            )
        blocks += [
            np.where(constant, 0.0, skew),
            np.where(constant, 0.0, kurt),
            np.quantile(X, 0.25, axis=0),
            np.quantile(X, 0.75, axis=0),
        ]

    if spec.cor and X.shape[1] > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            R = np.corrcoef(X, rowvar=False)
        i, j = np.triu_indices(X.shape[1], 1)
        cor = R[i, j]
        undefined = constant[i] | constant[j]
        if undefined.any():
            logger.warning(
                "instance %r: correlation with a constant feature set to 0",
                Pi.instance_id,
            )
        blocks.append(np.where(undefined, 0.0, np.clip(cor, -1.0, 1.0)))

    return np.concatenate(blocks)


def summarize_dataset(
    ds: Dataset, spec: SummarySpec, threads: Optional[int] = None
) -> Dataset:
    """Replace every instance by its summary vector, as a one-sample instance"""
    vectors = thread_map(lambda P: summarize(P, spec), ds.instances, threads)
    return ds.with_instances(
        [DistInstance(P.instance_id, v) for P, v in zip(ds.instances, vectors)],
        spec.feature_names(ds.feature_names),
    )


def standardize_summaries(
    ds: Dataset, spec: SummarySpec, threads: Optional[int] = None
) -> Tuple[Dataset, ScaleParams]:
    """Summaries of `ds` standardized with their own statistics

    Zero-variance summary features are dropped. These vectors are what the
    MI-SVM kernel compares.
    """
    summaries = summarize_dataset(ds, spec, threads)
    scaler = fit_scaler(summaries, drop_constant=True)
    return apply_scaler(summaries, scaler), scaler


def export_summaries(
    ds: Dataset, spec: SummarySpec, path: Union[str, Path]
) -> Dataset:
    """Write the summary vectors in the data CSV format, one row per instance"""
    summaries = summarize_dataset(ds, spec)
    save_dataset(summaries, path)
    return summaries


def fit_si_smm(
    ds: Dataset,
    kernel: KernelSpec,
    C: Penalty,
    threads: Optional[int] = None,
) -> DualModel:
    """Train one SMM on the instances, each labelled with its bag's label"""
    ds.require_both_classes()
    cfg = HeuristicConfig(C=C, kernel=kernel, max_selector_updates=1)
    return fit_heuristic(ds.singletons(), cfg, threads=threads)


@dataclass(frozen=True, eq=False)
class SummaryModel:
    """A bag classifier on standardized summary vectors"""

    spec: SummarySpec
    scaler: ScaleParams
    inner: InnerModel

    @property
    def n_features(self) -> int:
        return len(self.scaler.kept)

    @property
    def kernel(self) -> KernelSpec:
        return self.inner.kernel

    def transform(
        self, instances: Sequence[DistInstance], threads: Optional[int] = None
    ) -> List[DistInstance]:
        s = self.scaler
        keep = np.array([n not in s.dropped for n in s.feature_names])
        vectors = thread_map(lambda P: summarize(P, self.spec), instances, threads)
        return [
            DistInstance(P.instance_id, (v[keep] - s.mean) / s.scale)
            for P, v in zip(instances, vectors)
        ]

    def decision_function(
        self, instances: Sequence[DistInstance], threads: Optional[int] = None
    ) -> np.ndarray:
        return self.inner.decision_function(self.transform(instances, threads), threads)

    def half_norm_sq(self) -> float:
        return self.inner.half_norm_sq()

    def to_dict(self) -> dict:
        return {
            "type": "summary",
            "spec": str(self.spec),
            "n_features": self.n_features,
            "conventions": {
                "quantile": QUANTILE_CONVENTION,
                "kurtosis": KURTOSIS_CONVENTION,
            },
            "scaler": self.scaler.to_dict(),
            "inner": self.inner.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, inner: Scorer) -> Self:
        if not isinstance(inner, (DualModel, PrimalModel)):
            raise InputError(
                "a summary model wraps a dual or primal model, "
                f"not {type(inner).__name__}"
            )
        return cls(
            spec=SummarySpec.parse(d["spec"]),
            scaler=ScaleParams.from_dict(d["scaler"]),
            inner=inner,
        )


def fit_mi_svm(
    ds: Dataset,
    spec: SummarySpec,
    kernel: KernelSpec,
    C: Penalty,
    algo: str = "heuristic",
    max_selector_updates: int = 50,
    n_restarts: int = 1,
    seed: Optional[int] = None,
    select_by: str = "objective",
    miqp_options: Optional[Dict[str, Any]] = None,
    threads: Optional[int] = None,
) -> SummaryModel:
    """Train a bag classifier on summary vectors

    Summaries are standardized with statistics of `ds` (zero-variance summary
    features are dropped), then the heuristic or the mixed-integer solver runs
    unchanged on the one-sample instances.

    Args:

    - `algo`: `heuristic` or `miqp`
    - `select_by`: restart selection of the heuristic, see `HeuristicConfig`
    - `miqp_options`: keyword arguments for `fit_miqp` (`m1`, `m2`, `L`,
      `time_limit`, `node_limit`)
    """
    ds.require_both_classes()
    scaled, scaler = standardize_summaries(ds, spec, threads)
    if algo == "heuristic":
        cfg = HeuristicConfig(
            C=C,
            kernel=kernel,
            max_selector_updates=max_selector_updates,
            n_restarts=n_restarts,
            seed=seed,
            select_by=select_by,
        )
        inner: InnerModel = fit_heuristic(scaled, cfg, threads=threads)
    elif algo == "miqp":
        inner = fit_miqp(
            scaled, kernel, C, seed=seed, threads=threads, **(miqp_options or {})
        )
    else:
        raise InputError(f"unknown algorithm {algo!r}")
    logger.info("%s summaries: %d features", spec, scaled.dim)
    return SummaryModel(spec=spec, scaler=scaler, inner=inner)
