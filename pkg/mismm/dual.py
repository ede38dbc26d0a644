"""The fixed-selector dual problem and dual-form classifiers

With a selector `s` choosing one instance per positive bag, the effective set `E`
holds every negative-bag instance plus the selected instances, and the classifier
is found from the dual

```
maximize    Σ α_i - ½ Σ_i Σ_j α_i α_j y_i y_j K(P_i, P_j)
subject to  Σ α_i y_i = 0
            α_i ≥ 0
            Σ_{i ∈ I} α_i ≤ C_I      for each group I
```

Each negative bag is one group, sharing a single slack; each selected positive
instance is a group of its own.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from typing_extensions import Self

from mismm.data import Dataset, DistInstance
from mismm.errors import InputError
from mismm.kernels import KernelSpec, cross_gram
from mismm.qp import solve_qp

logger = logging.getLogger(__name__)

BIAS_MARGIN = 1e-8
"""Relative strictness margin for the interior conditions of bias recovery."""


@dataclass(frozen=True)
class ClassPenalty:
    """The misclassification penalty `C`, optionally weighted per class

    `pos` bounds the selected positive instances and `neg` bounds the group sums
    of negative bags.
    """

    pos: float
    neg: float

    def __post_init__(self) -> None:
        if not (self.pos > 0 and self.neg > 0):
            raise InputError(f"C must be > 0, got {self.pos}, {self.neg}")
        object.__setattr__(self, "pos", float(self.pos))
        object.__setattr__(self, "neg", float(self.neg))

    @classmethod
    def uniform(cls, C: float) -> Self:
        return cls(C, C)

    def for_label(self, label: int) -> float:
        return self.pos if label == 1 else self.neg

    def to_dict(self) -> dict:
        return {"pos": self.pos, "neg": self.neg}


Penalty = Union[float, ClassPenalty]
"""A plain `C` applies to both classes."""


def as_penalty(C: Penalty) -> ClassPenalty:
    return C if isinstance(C, ClassPenalty) else ClassPenalty.uniform(C)


@dataclass(frozen=True, eq=False)
class DualProblem:
    """One fixed-selector dual

    Args:

    - `kernel`: the `|E| × |E|` Gram submatrix on the effective set
    - `labels`: `Y_B(i)` for each effective instance
    - `groups`: the group id of each effective instance, dense from 0
    - `group_bounds`: the bound on the `α` sum of each group
    - `effective`: indices of the effective instances in the data set, if known
    """

    kernel: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    group_bounds: np.ndarray
    effective: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        n = len(self.labels)
        if self.kernel.shape != (n, n) or len(self.groups) != n:
            raise InputError("dual problem arrays have inconsistent sizes")
        if np.any(np.asarray(self.group_bounds) <= 0):
            raise InputError("group bounds must be > 0")

    @property
    def size(self) -> int:
        return len(self.labels)

    @classmethod
    def from_selector(
        cls,
        ds: Dataset,
        K: np.ndarray,
        selector: Sequence[int],
        C: Penalty,
    ) -> Self:
        """Build the dual for a selector over the full Gram matrix `K` of `ds`

        Args:

        - `selector`: the chosen instance index of each positive bag, in the order
          of `ds.positive_bags`
        """
        penalty = as_penalty(C)
        positive = ds.positive_bags
        if len(selector) != len(positive):
            raise InputError("the selector needs one instance per positive bag")
        effective, groups, bounds = [], [], []
        for b, i in zip(positive, selector):
            if i not in ds.bags[b].instance_indices:
                raise InputError(f"instance {i} is not in bag {ds.bags[b].bag_id!r}")
            effective.append(i)
            groups.append(len(bounds))
            bounds.append(penalty.pos)
        for b in ds.negative_bags:
            for i in ds.bags[b].instance_indices:
                effective.append(i)
                groups.append(len(bounds))
            bounds.append(penalty.neg)
        E = np.array(effective, dtype=int)
        return cls(
            kernel=np.asarray(K)[np.ix_(E, E)],
            labels=ds.instance_labels[E].astype(float),
            groups=np.array(groups, dtype=int),
            group_bounds=np.array(bounds, dtype=float),
            effective=E,
        )


@dataclass(frozen=True, eq=False)
class DualSolution:
    alphas: np.ndarray
    bias: float
    objective: float
    """The dual objective `Σα - ½ αᵀQα`."""
    kkt_residual: float
    bias_fallback: bool = False
    """Whether `bias` came from the midpoint rule."""
    iterations: int = 0


def _group_matrix(p: DualProblem) -> np.ndarray:
    S = np.zeros((len(p.group_bounds), p.size))
    S[p.groups, np.arange(p.size)] = 1.0
    return S


def solve_dual(p: DualProblem, tol: float = 1e-6) -> DualSolution:
    """Solve the dual and recover the bias

    Raises `QpError` when the KKT residual cannot be brought below `tol`.
    """
    y = p.labels
    Q = np.outer(y, y) * p.kernel
    n = p.size
    G = np.vstack([-np.eye(n), _group_matrix(p)])
    h = np.concatenate([np.zeros(n), p.group_bounds])
    result = solve_qp(Q, -np.ones(n), G, h, y[None, :], np.zeros(1), tol=tol)
    alphas = np.maximum(result.x, 0.0)
    bias, fallback = compute_bias(alphas, p)
    return DualSolution(
        alphas=alphas,
        bias=bias,
        objective=-result.objective,
        kkt_residual=result.kkt_residual,
        bias_fallback=fallback,
        iterations=result.iterations,
    )


def compute_bias(alphas: np.ndarray, p: DualProblem) -> Tuple[float, bool]:
    """Average the bias over the instances whose margin constraint is tight

    An instance is eligible when the `α` sum of its group is strictly inside
    `(0, C_I)` and its own `α` is strictly positive, with strictness margin
    `1e-8 · C_I`. Without eligible instances the bias is the midpoint between the
    highest negative and the lowest positive bias-free score; the second element
    of the result flags this fallback.
    """
    y = p.labels
    f = p.kernel @ (alphas * y)
    sums = np.bincount(p.groups, weights=alphas, minlength=len(p.group_bounds))
    bound = p.group_bounds[p.groups]
    margin = BIAS_MARGIN * bound
    group_sum = sums[p.groups]
    eligible = (group_sum > margin) & (group_sum < bound - margin) & (alphas > margin)
    if np.any(eligible):
        return float(np.mean(y[eligible] - f[eligible])), False

    pos, neg = f[y > 0], f[y < 0]
    if pos.size and neg.size:
        bias = -(neg.max() + pos.min()) / 2.0
    elif pos.size:
        bias = 1.0 - pos.min()
    else:
        bias = -1.0 - neg.max()
    logger.warning("no instance strictly inside its bound; using midpoint bias")
    return float(bias), True


def _float(value) -> float:
    return float("nan") if value is None else float(value)


@dataclass(frozen=True, eq=False)
class DualModel:
    """A classifier in dual form

    `h(P) = Σ_j α_j y_j K(P, P_j) + b` over the support instances `P_j`.
    """

    support: Tuple[DistInstance, ...]
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    kernel: KernelSpec
    objective: float = float("nan")
    """The training objective of the non-convex primal at this model."""
    dual_objective: float = float("nan")
    selectors: Tuple[Tuple[int, ...], ...] = field(default=())
    """The selector of each round of the heuristic, first to last."""
    converged: bool = True
    bias_fallback: bool = False
    support_index: Tuple[int, ...] = field(default=())
    """Indices of the support instances in the training data."""

    def __post_init__(self) -> None:
        if not (len(self.support) == len(self.alphas) == len(self.labels)):
            raise InputError("support instances, alphas and labels must align")

    @property
    def coefficients(self) -> np.ndarray:
        return np.asarray(self.alphas) * np.asarray(self.labels)

    def half_norm_sq(self, support_gram: Optional[np.ndarray] = None) -> float:
        """`½‖w‖²`, from the Gram matrix of the support instances"""
        if not self.support:
            return 0.0
        if support_gram is None:
            support_gram = cross_gram(self.support, self.support, self.kernel)
        c = self.coefficients
        return float(0.5 * c @ support_gram @ c)

    def decision_from_kernel(self, K: np.ndarray) -> np.ndarray:
        """Scores from the kernel values `K[i, j] = K(P_i, support_j)`"""
        return np.asarray(K) @ self.coefficients + self.bias

    def decision_function(
        self, instances: Sequence[DistInstance], threads: Optional[int] = None
    ) -> np.ndarray:
        if not self.support:
            return np.full(len(instances), self.bias)
        return self.decision_from_kernel(
            cross_gram(instances, self.support, self.kernel, threads)
        )

    def to_dict(self) -> dict:
        return {
            "type": "dual",
            "kernel": self.kernel.to_dict(),
            "support": [
                {"instance_id": p.instance_id, "samples": p.samples.tolist()}
                for p in self.support
            ],
            "alphas": np.asarray(self.alphas).tolist(),
            "labels": np.asarray(self.labels).tolist(),
            "bias": self.bias,
            "objective": self.objective,
            "dual_objective": self.dual_objective,
            "selectors": [list(s) for s in self.selectors],
            "converged": self.converged,
            "bias_fallback": self.bias_fallback,
            "support_index": list(self.support_index),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Self:
        return cls(
            support=tuple(
                DistInstance(s["instance_id"], np.asarray(s["samples"], dtype=float))
                for s in d["support"]
            ),
            alphas=np.asarray(d["alphas"], dtype=float),
            labels=np.asarray(d["labels"], dtype=float),
            bias=float(d["bias"]),
            kernel=KernelSpec.from_dict(d["kernel"]),
            objective=_float(d.get("objective")),
            dual_objective=_float(d.get("dual_objective")),
            selectors=tuple(tuple(s) for s in d.get("selectors", ())),
            converged=bool(d.get("converged", True)),
            bias_fallback=bool(d.get("bias_fallback", False)),
            support_index=tuple(d.get("support_index", ())),
        )


def score_instance(model: DualModel, P: DistInstance) -> float:
    """`h(P)` for a single instance"""
    return float(model.decision_function([P])[0])
