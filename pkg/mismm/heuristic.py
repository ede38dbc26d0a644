"""Alternating heuristic for the non-convex bag classifier

Starting from a random selector, the heuristic alternates between solving the
convex fixed-selector dual and re-selecting, in every positive bag, the instance
the current classifier scores highest. It stops at a fixed point, when a selector
repeats, or after `max_selector_updates` selector changes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np
from sklearn.metrics import roc_auc_score

from mismm.data import Dataset, DistInstance
from mismm.dual import DualModel, DualProblem, Penalty, as_penalty, solve_dual
from mismm.errors import InputError
from mismm.kernels import GramMatrix, KernelSpec, gram
from mismm.parallel import thread_map

logger = logging.getLogger(__name__)

_SUPPORT_TOL = 1e-12

SELECTION_CRITERIA = ("objective", "holdout")


class Scorer(Protocol):
    """Anything that scores instances and knows its own `½‖w‖²`"""

    def decision_function(
        self, instances: Sequence[DistInstance], threads: Optional[int] = None
    ) -> np.ndarray:
        ...

    def half_norm_sq(self) -> float:
        ...


@dataclass(frozen=True)
class HeuristicConfig:
    """Settings of `fit_heuristic`

    - `C`: the penalty, a float or a per-class `ClassPenalty`
    - `kernel`: the embedding kernel
    - `max_selector_updates`: the cap on selector changes per restart
    - `n_restarts`: independent random initial selectors
    - `seed`: seeds the initial selectors and the hold-out split
    - `select_by`: how the winning restart is chosen. `objective` keeps the
      restart with the lowest training objective; `holdout` trains every restart
      without a stratified `holdout_fraction` of the bags and keeps the one with
      the highest bag AUROC on them
    """

    C: Penalty
    kernel: KernelSpec
    max_selector_updates: int = 50
    n_restarts: int = 1
    seed: Optional[int] = None
    select_by: str = "objective"
    holdout_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.max_selector_updates < 1:
            raise InputError("max_selector_updates must be >= 1")
        if self.n_restarts < 1:
            raise InputError("n_restarts must be >= 1")
        if self.select_by not in SELECTION_CRITERIA:
            raise InputError(
                f"unknown restart selection {self.select_by!r}; "
                "expected objective or holdout"
            )
        if not 0 < self.holdout_fraction < 1:
            raise InputError(
                f"holdout_fraction must lie in (0, 1), got {self.holdout_fraction}"
            )
        as_penalty(self.C)


def bag_objective(
    half_norm_sq: float, scores: np.ndarray, ds: Dataset, C: Penalty
) -> float:
    """`½‖w‖² + Σ_I C_I max(0, 1 - Y_I max_{i ∈ I} h(P_i))`"""
    penalty = as_penalty(C)
    total = half_norm_sq
    for bag in ds.bags:
        top = np.max(scores[list(bag.instance_indices)])
        total += penalty.for_label(bag.label) * max(0.0, 1.0 - bag.label * top)
    return float(total)


def primal_objective(
    model: Scorer, ds: Dataset, C: Penalty, threads: Optional[int] = None
) -> float:
    """The training objective of the non-convex primal at `model`

    `½‖w‖²` plus the penalized hinge loss of every bag, where a bag's margin is
    that of its highest scoring instance.
    """
    scores = model.decision_function(ds.instances, threads)
    return bag_objective(model.half_norm_sq(), scores, ds, C)


def predict_bag(
    model: Scorer, bag: Sequence[DistInstance], threshold: float = 0.0
) -> Tuple[int, float]:
    """Label a bag by its highest scoring instance

    Returns `(label, score)` where `score` is the maximum instance score and
    `label` is `+1` iff `score > threshold`.
    """
    if len(bag) == 0:
        raise InputError("cannot predict an empty bag")
    score = float(np.max(model.decision_function(bag)))
    return (1 if score > threshold else -1), score


def predict_bags(
    model: Scorer, ds: Dataset, threshold: float = 0.0, threads: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """`predict_bag` for every bag of `ds`, scoring all instances in one pass"""
    scores = model.decision_function(ds.instances, threads)
    bag_scores = np.array(
        [np.max(scores[list(bag.instance_indices)]) for bag in ds.bags]
    )
    return np.where(bag_scores > threshold, 1, -1), bag_scores


def select_instances(
    scores: np.ndarray, ds: Dataset, positive: Sequence[int]
) -> Tuple[int, ...]:
    """The highest scoring instance of each positive bag, ties to the lowest index"""
    chosen = []
    for b in positive:
        members = sorted(ds.bags[b].instance_indices)
        chosen.append(members[int(np.argmax(scores[members]))])
    return tuple(chosen)


@dataclass(frozen=True, eq=False)
class _Run:
    model: DualModel
    n_solves: int


def _run(
    ds: Dataset,
    K: np.ndarray,
    cfg: HeuristicConfig,
    rng: np.random.Generator,
) -> _Run:
    positive = ds.positive_bags
    selector = tuple(
        int(rng.choice(sorted(ds.bags[b].instance_indices))) for b in positive
    )
    history: List[Tuple[int, ...]] = [selector]
    seen = {selector}
    updates = 0
    converged = False
    while True:
        problem = DualProblem.from_selector(ds, K, selector, cfg.C)
        sol = solve_dual(problem)
        E = problem.effective
        assert E is not None
        scores = K[:, E] @ (sol.alphas * problem.labels) + sol.bias
        new_selector = select_instances(scores, ds, positive)
        if new_selector == selector:
            converged = True
            break
        if updates >= cfg.max_selector_updates:
            logger.warning(
                "selector still changing after %d updates; stopping",
                cfg.max_selector_updates,
            )
            break
        if new_selector in seen:
            logger.warning("selector cycle detected after %d updates", updates)
            break
        selector = new_selector
        history.append(selector)
        seen.add(selector)
        updates += 1

    Q = np.outer(problem.labels, problem.labels) * problem.kernel
    half_norm_sq = float(0.5 * sol.alphas @ Q @ sol.alphas)
    objective = bag_objective(half_norm_sq, scores, ds, cfg.C)
    logger.debug(
        "heuristic run: %d solves, objective %.6g, converged %s",
        len(history),
        objective,
        converged,
    )

    support = sol.alphas > _SUPPORT_TOL * problem.group_bounds.max()
    index = E[support]
    model = DualModel(
        support=tuple(ds.instances[i] for i in index),
        alphas=sol.alphas[support],
        labels=problem.labels[support],
        bias=sol.bias,
        kernel=cfg.kernel,
        objective=objective,
        dual_objective=sol.objective,
        selectors=tuple(history),
        converged=converged,
        bias_fallback=sol.bias_fallback,
        support_index=tuple(int(i) for i in index),
    )
    return _Run(model, len(history))


def holdout_split(
    ds: Dataset, fraction: float, rng: np.random.Generator
) -> Optional[Tuple[List[int], List[int]]]:
    """Split the bags into `(fit, holdout)` index lists, class by class

    Each class gives `round(fraction · count)` bags to the hold-out part, at least
    one and leaving at least one. `None` when a class has fewer than two bags.
    """
    labels = ds.bag_labels
    fit: List[int] = []
    holdout: List[int] = []
    for y in (-1, 1):
        members = np.flatnonzero(labels == y)
        if members.size < 2:
            return None
        n_hold = min(max(1, int(round(fraction * members.size))), members.size - 1)
        shuffled = rng.permutation(members)
        holdout.extend(int(b) for b in shuffled[:n_hold])
        fit.extend(int(b) for b in shuffled[n_hold:])
    return sorted(fit), sorted(holdout)


def _holdout_auroc(
    model: DualModel, K: np.ndarray, ds: Dataset, rows: Sequence[int]
) -> float:
    scores = K[:, list(model.support_index)] @ (model.alphas * model.labels)
    bag_scores = [np.max(scores[list(ds.bags[b].instance_indices)]) for b in rows]
    return float(roc_auc_score(ds.bag_labels[list(rows)] > 0, bag_scores))


def _reindexed(model: DualModel, instances: Sequence[int]) -> DualModel:
    return replace(
        model,
        support_index=tuple(instances[i] for i in model.support_index),
        selectors=tuple(tuple(instances[i] for i in s) for s in model.selectors),
    )


def fit_heuristic(
    ds: Dataset,
    cfg: HeuristicConfig,
    gram_matrix: Optional[GramMatrix] = None,
    threads: Optional[int] = None,
) -> DualModel:
    """Train a dual-form classifier with the alternating heuristic

    Args:

    - `ds`: training data with at least one bag of each class
    - `cfg`: penalty, kernel and loop settings
    - `gram_matrix`: the precomputed Gram matrix of `ds.instances` under
      `cfg.kernel`, computed here when omitted
    - `threads`: caps the parallel Gram computation and restarts

    With `select_by="holdout"` and several restarts the returned model is trained
    on the fit part of the split only; its `support_index` and `selectors` still
    index `ds.instances`. A single restart, or a class with fewer than two bags,
    falls back to the training objective on all of `ds`.
    """
    ds.require_both_classes()
    if gram_matrix is None:
        gram_matrix = gram(ds.instances, cfg.kernel, threads)
    elif gram_matrix.spec != cfg.kernel or gram_matrix.n != ds.n_instances:
        raise InputError("the Gram matrix does not match the data or kernel")
    K = np.asarray(gram_matrix.values)

    *seeds, split_seed = np.random.SeedSequence(cfg.seed).spawn(cfg.n_restarts + 1)
    split = None
    if cfg.select_by == "holdout" and cfg.n_restarts > 1:
        split = holdout_split(
            ds, cfg.holdout_fraction, np.random.Generator(np.random.PCG64(split_seed))
        )
        if split is None:
            logger.warning("too few bags for a hold-out split; selecting by objective")

    if split is None:
        runs = thread_map(
            lambda s: _run(ds, K, cfg, np.random.Generator(np.random.PCG64(s))),
            seeds,
            threads,
        )
        best = min(runs, key=lambda r: r.model.objective)
        if cfg.n_restarts > 1:
            logger.info(
                "best of %d restarts: objective %.6g",
                cfg.n_restarts,
                best.model.objective,
            )
        return best.model

    fit_bags, holdout_bags = split
    fit_ds = ds.subset(fit_bags)
    fit_instances = ds.instance_indices_of(fit_bags)
    K_fit = K[np.ix_(fit_instances, fit_instances)]
    runs = thread_map(
        lambda s: _run(fit_ds, K_fit, cfg, np.random.Generator(np.random.PCG64(s))),
        seeds,
        threads,
    )
    models = [_reindexed(r.model, fit_instances) for r in runs]
    aurocs = [_holdout_auroc(m, K, ds, holdout_bags) for m in models]
    best_index = max(
        range(len(models)), key=lambda i: (aurocs[i], -models[i].objective)
    )
    logger.info(
        "best of %d restarts: hold-out AUROC %.4f on %d bags",
        cfg.n_restarts,
        aurocs[best_index],
        len(holdout_bags),
    )
    return models[best_index]
