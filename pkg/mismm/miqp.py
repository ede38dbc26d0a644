"""Direct solution of the non-convex bag classifier as a mixed-integer QP

Instances are embedded into `R^m1` with a Nyström feature map, after which the
max-over-instances constraint of each positive bag is rewritten with binary
indicators `ζ` and a big constant `L`:

```
minimize    ½‖w‖² + Σ_I C_I ξ_I
subject to  ⟨w, z_i⟩ + b ≤ -1 + ξ_I               i in a negative bag I
            ⟨w, z_i⟩ + b ≥ 1 - ξ_I - L ζ_{I,i}     i in a positive bag I
            Σ_{i ∈ I} ζ_{I,i} ≤ |I| - 1            every positive bag I
            ξ ≥ 0,  ζ ∈ {0, 1}
```

`branch_and_bound` solves it exactly (up to a time or node limit) with a
best-bound search that plunges depth first after each branching.
`enumerate_selectors` solves every fixed-selector convex problem instead and
serves as an exact oracle on tiny problems.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from typing_extensions import Self

from mismm.data import Bag, Dataset, DistInstance
from mismm.dual import ClassPenalty, Penalty, as_penalty
from mismm.errors import InputError
from mismm.kernels import KernelSpec
from mismm.nystrom import NystromMap, embed_instances, fit_nystrom, stratified_subsample
from mismm.qp import solve_qp

logger = logging.getLogger(__name__)

INTEGRALITY_TOL = 1e-6
PRUNE_TOL = 1e-9
L_CHECK_MAX_BINARIES = 200
L_CHECK_TOL = 1e-6
MAX_L_DOUBLINGS = 4
ENUMERATION_LIMIT = 10**4

_DEFAULT_L = 100.0
_DEFAULT_TIME_LIMIT = 60.0
_DEFAULT_MAX_ANCHORS = 240

Fixings = Dict[int, int]
"""Fixed indicator values, keyed by instance index."""


class EnumerationLimitExceeded(InputError):
    """Raised when there are too many selectors to enumerate"""


@dataclass(frozen=True, eq=False)
class MiqpProblem:
    """An instance of the big-L mixed-integer QP

    Args:

    - `embeddings`: the `n × m1` matrix of instance embeddings `z_i`
    - `bags`: the bag structure, indexing rows of `embeddings`
    - `penalty`: `C`, optionally per class
    - `L`: the big constant, `> 0`
    - `time_limit`: seconds, or `None` for no limit
    - `node_limit`: number of nodes, or `None` for no limit
    """

    embeddings: np.ndarray
    bags: Tuple[Bag, ...]
    penalty: ClassPenalty
    L: float = _DEFAULT_L
    time_limit: Optional[float] = None
    node_limit: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.L > 0:
            raise InputError(f"L must be > 0, got {self.L}")
        if not any(b.label == 1 for b in self.bags):
            raise InputError("the problem needs at least one positive bag")
        if not any(b.label == -1 for b in self.bags):
            raise InputError("the problem needs at least one negative bag")

    @property
    def positive(self) -> List[int]:
        return [b for b, bag in enumerate(self.bags) if bag.label == 1]

    @property
    def n_binaries(self) -> int:
        return sum(len(self.bags[b].instance_indices) for b in self.positive)


@dataclass(frozen=True, eq=False)
class MiqpSolution:
    w: np.ndarray
    b: float
    zeta: Dict[int, int]
    """The indicator of each positive-bag instance, keyed by instance index."""
    xi: np.ndarray
    objective: float
    lower_bound: float
    gap: float
    status: str
    """One of `optimal`, `time_limit` or `node_limit`."""
    nodes: int = 0
    wall_time: float = 0.0
    L: float = _DEFAULT_L
    l_check_shift: Optional[float] = None
    """The objective change when the incumbent is re-solved with `2L`."""

    @property
    def selector(self) -> Tuple[int, ...]:
        return tuple(i for i, v in sorted(self.zeta.items()) if v == 0)

    def metadata(self) -> dict:
        return {
            "objective": self.objective,
            "lower_bound": self.lower_bound,
            "gap": self.gap,
            "status": self.status,
            "nodes": self.nodes,
            "wall_time": self.wall_time,
            "L": self.L,
            "l_check_shift": self.l_check_shift,
        }


###############
# QP BUILDING #
###############


@dataclass(frozen=True)
class _Layout:
    m: int
    n_bags: int
    free: Tuple[int, ...]

    @property
    def n(self) -> int:
        return self.m + 1 + self.n_bags + len(self.free)

    @property
    def xi(self) -> slice:
        return slice(self.m + 1, self.m + 1 + self.n_bags)

    @property
    def zeta(self) -> slice:
        return slice(self.m + 1 + self.n_bags, self.n)


def _build(
    p: MiqpProblem, fixings: Fixings, L: float, keep_fixed_rows: bool = True
):
    """The convex QP of a node: free indicators relaxed to `[0, 1]`

    With `keep_fixed_rows` false, the constraints of instances fixed to 1 are
    omitted, which gives the fixed-selector problem without `L`.
    """
    Z = p.embeddings
    m = Z.shape[1]
    free = tuple(
        i for b in p.positive for i in p.bags[b].instance_indices if i not in fixings
    )
    layout = _Layout(m, len(p.bags), free)
    column = {i: layout.zeta.start + k for k, i in enumerate(free)}
    rows: List[np.ndarray] = []
    rhs: List[float] = []

    def row() -> np.ndarray:
        r = np.zeros(layout.n)
        rows.append(r)
        return r

    for b, bag in enumerate(p.bags):
        for i in bag.instance_indices:
            if bag.label == -1:
                r = row()
                r[:m], r[m], r[m + 1 + b] = Z[i], 1.0, -1.0
                rhs.append(-1.0)
                continue
            fixed = fixings.get(i)
            if fixed == 1 and not keep_fixed_rows:
                continue
            r = row()
            r[:m], r[m], r[m + 1 + b] = -Z[i], -1.0, -1.0
            if fixed is None:
                r[column[i]] = -L
            rhs.append(-1.0 + (L if fixed == 1 else 0.0))
        if bag.label == 1:
            in_bag = [column[i] for i in bag.instance_indices if i in column]
            if in_bag:
                r = row()
                r[in_bag] = 1.0
                n_one = sum(fixings.get(i) == 1 for i in bag.instance_indices)
                rhs.append(len(bag.instance_indices) - 1.0 - n_one)

    G = np.vstack(rows + [np.zeros((0, layout.n))])
    h = np.array(rhs)
    bounds = np.zeros((layout.n_bags + 2 * len(free), layout.n))
    bounds[np.arange(layout.n_bags), np.arange(layout.xi.start, layout.xi.stop)] = -1.0
    k = np.arange(len(free))
    bounds[layout.n_bags + k, layout.zeta.start + k] = -1.0
    bounds[layout.n_bags + len(free) + k, layout.zeta.start + k] = 1.0
    G = np.vstack([G, bounds])
    h = np.concatenate([h, np.zeros(layout.n_bags + len(free)), np.ones(len(free))])

    P = np.zeros((layout.n, layout.n))
    P[np.arange(m), np.arange(m)] = 1.0
    q = np.zeros(layout.n)
    q[layout.xi] = [p.penalty.for_label(bag.label) for bag in p.bags]
    return P, q, G, h, layout


@dataclass(frozen=True, eq=False)
class _Relaxation:
    objective: float
    w: np.ndarray
    b: float
    xi: np.ndarray
    scores: np.ndarray


def _solve(
    p: MiqpProblem, fixings: Fixings, L: float, keep_fixed_rows: bool = True
) -> _Relaxation:
    P, q, G, h, layout = _build(p, fixings, L, keep_fixed_rows)
    result = solve_qp(P, q, G, h)
    x = result.x
    w, b = x[: layout.m], float(x[layout.m])
    return _Relaxation(
        objective=result.objective,
        w=w,
        b=b,
        xi=x[layout.xi],
        scores=p.embeddings @ w + b,
    )


@dataclass(frozen=True, eq=False)
class _Candidate:
    objective: float
    w: np.ndarray
    b: float
    xi: np.ndarray
    selector: Dict[int, int]
    """The chosen instance of each positive bag, keyed by bag index."""


def _exact_xi(
    p: MiqpProblem, scores: np.ndarray, selector: Dict[int, int], L: Optional[float]
) -> np.ndarray:
    """The smallest slacks feasible for fixed `(w, b)` and selector"""
    xi = np.zeros(len(p.bags))
    for b, bag in enumerate(p.bags):
        members = list(bag.instance_indices)
        if bag.label == -1:
            xi[b] = max(0.0, 1.0 + np.max(scores[members]))
            continue
        need = 1.0 - scores[selector[b]]
        if L is not None:
            others = [i for i in members if i != selector[b]]
            if others:
                need = max(need, 1.0 - L - np.min(scores[others]))
        xi[b] = max(0.0, need)
    return xi


def _solve_fixed(
    p: MiqpProblem, selector: Dict[int, int], L: Optional[float]
) -> _Candidate:
    """Solve the convex problem with every indicator fixed by `selector`

    With `L = None` the unselected instances are unconstrained.
    """
    fixings = {
        i: 0 if i == selector[b] else 1
        for b in p.positive
        for i in p.bags[b].instance_indices
    }
    keep = L is not None
    relax = _solve(p, fixings, L if keep else p.L, keep_fixed_rows=keep)
    xi = _exact_xi(p, relax.scores, selector, L)
    C = np.array([p.penalty.for_label(bag.label) for bag in p.bags])
    objective = float(0.5 * relax.w @ relax.w + C @ xi)
    return _Candidate(objective, relax.w, relax.b, xi, dict(selector))


def _propagate(p: MiqpProblem, fixings: Fixings) -> Optional[Fixings]:
    """Apply the cardinality constraints; `None` when the node is infeasible"""
    fixings = dict(fixings)
    for b in p.positive:
        members = p.bags[b].instance_indices
        n_one = sum(fixings.get(i) == 1 for i in members)
        free = [i for i in members if i not in fixings]
        if n_one >= len(members):
            return None
        if n_one == len(members) - 1 and len(free) == 1:
            fixings[free[0]] = 0
    return fixings


def _needs(p: MiqpProblem, relax: _Relaxation, L: float) -> np.ndarray:
    """The smallest indicator value each positive-bag instance needs"""
    need = np.zeros(len(relax.scores))
    for b in p.positive:
        for i in p.bags[b].instance_indices:
            need[i] = max(0.0, (1.0 - relax.xi[b] - relax.scores[i]) / L)
    return need


def _integral_selector(
    p: MiqpProblem, fixings: Fixings, need: np.ndarray
) -> Optional[Dict[int, int]]:
    selector = {}
    for b in p.positive:
        members = sorted(p.bags[b].instance_indices)
        zero = [i for i in members if fixings.get(i) == 0]
        if zero:
            selector[b] = zero[0]
            continue
        free = [i for i in members if i not in fixings]
        best = min(free, key=lambda i: need[i])
        if need[best] > INTEGRALITY_TOL:
            return None
        selector[b] = best
    return selector


def _branch_variable(
    p: MiqpProblem, fixings: Fixings, need: np.ndarray
) -> Optional[int]:
    """The free indicator whose minimal value is most fractional

    Bags that already hold an instance fixed to 0 are settled and not branched on.
    """
    best, best_distance = None, np.inf
    for b in p.positive:
        members = sorted(p.bags[b].instance_indices)
        if any(fixings.get(i) == 0 for i in members):
            continue
        for i in members:
            if i in fixings:
                continue
            distance = abs(min(need[i], 1.0) - 0.5)
            if distance < best_distance:
                best, best_distance = i, distance
    return best


def _rounded_selector(
    p: MiqpProblem, fixings: Fixings, scores: np.ndarray
) -> Dict[int, int]:
    """Per positive bag, the highest scoring instance not fixed to 1"""
    selector = {}
    for b in p.positive:
        members = sorted(p.bags[b].instance_indices)
        zero = [i for i in members if fixings.get(i) == 0]
        allowed = zero or [i for i in members if fixings.get(i) != 1]
        selector[b] = allowed[int(np.argmax(scores[allowed]))]
    return selector


####################
# BRANCH AND BOUND #
####################


@dataclass(order=True)
class _Node:
    bound: float
    order: int
    fixings: Fixings = field(compare=False)
    depth: int = field(default=0, compare=False)


def branch_and_bound(p: MiqpProblem, l_check: bool = True) -> MiqpSolution:
    """Solve the big-L problem by best-bound branch and bound

    Every node solves the convex relaxation with free indicators in `[0, 1]`. A
    node is closed when its bound reaches the incumbent, or when each positive bag
    has an instance whose constraint holds without `L`; otherwise the most
    fractional indicator is fixed to 0 and to 1 in two children, the search
    plunges into the more promising child and queues the other. Incumbents always
    come from solving the fixed-indicator convex problem, the first one from
    rounding the root relaxation.

    The search stops with status `time_limit` or `node_limit` when a limit is hit
    after the root, returning the incumbent and the best open bound.

    Args:

    - `p`: the problem
    - `l_check`: with at most 200 indicators, re-solve the incumbent's convex
      problem with `2L` and record (and warn about) the objective change
    """
    start = time.perf_counter()
    counter = itertools.count()
    root = _propagate(p, {})
    assert root is not None
    heap: List[_Node] = []
    node: Optional[_Node] = _Node(-np.inf, next(counter), root)
    incumbent: Optional[_Candidate] = None
    nodes = 0
    status = "optimal"

    def prunable(bound: float) -> bool:
        if incumbent is None:
            return False
        scale = max(1.0, abs(incumbent.objective))
        return bound >= incumbent.objective - PRUNE_TOL * scale

    def offer(candidate: _Candidate) -> None:
        nonlocal incumbent
        if incumbent is None or candidate.objective < incumbent.objective:
            logger.debug("node %d: incumbent %.9g", nodes, candidate.objective)
            incumbent = candidate

    while True:
        if node is None:
            if not heap:
                break
            node = heapq.heappop(heap)
            if prunable(node.bound):
                node = None
                continue
        if nodes > 0:
            elapsed = time.perf_counter() - start
            if p.time_limit is not None and elapsed >= p.time_limit:
                status = "time_limit"
            elif p.node_limit is not None and nodes >= p.node_limit:
                status = "node_limit"
            if status != "optimal":
                heapq.heappush(heap, node)
                break

        nodes += 1
        relax = _solve(p, node.fixings, p.L)
        if nodes == 1:
            rounded = _rounded_selector(p, node.fixings, relax.scores)
            offer(_solve_fixed(p, rounded, p.L))
        if prunable(relax.objective):
            node = None
            continue

        need = _needs(p, relax, p.L)
        selector = _integral_selector(p, node.fixings, need)
        if selector is not None:
            candidate = _solve_fixed(p, selector, p.L)
            offer(candidate)
            slack = PRUNE_TOL * max(1.0, abs(relax.objective))
            if candidate.objective <= relax.objective + slack:
                node = None
                continue

        var = _branch_variable(p, node.fixings, need)
        if var is None:
            node = None
            continue
        children = []
        for value in (0, 1) if need[var] < 0.5 else (1, 0):
            fixings = _propagate(p, {**node.fixings, var: value})
            if fixings is not None:
                children.append(
                    _Node(relax.objective, next(counter), fixings, node.depth + 1)
                )
        node = children[0] if children else None
        for child in children[1:]:
            heapq.heappush(heap, child)

    assert incumbent is not None
    if status == "optimal":
        lower_bound = incumbent.objective
    else:
        lower_bound = min(incumbent.objective, min(n.bound for n in heap))
    gap = max(0.0, incumbent.objective - lower_bound)
    gap /= max(1.0, abs(incumbent.objective))
    zeta = {
        i: 0 if i == incumbent.selector[b] else 1
        for b in p.positive
        for i in p.bags[b].instance_indices
    }

    shift = None
    if l_check and p.n_binaries <= L_CHECK_MAX_BINARIES:
        doubled = _solve_fixed(p, incumbent.selector, 2.0 * p.L)
        shift = abs(doubled.objective - incumbent.objective)
        if shift > L_CHECK_TOL:
            logger.warning(
                "objective moved by %.3g when L was doubled to %g; L may be too small",
                shift,
                2.0 * p.L,
            )

    wall_time = time.perf_counter() - start
    logger.info(
        "branch and bound: %s after %d nodes in %.2fs, objective %.6g, gap %.3g",
        status,
        nodes,
        wall_time,
        incumbent.objective,
        gap,
    )
    return MiqpSolution(
        w=incumbent.w,
        b=incumbent.b,
        zeta=zeta,
        xi=incumbent.xi,
        objective=incumbent.objective,
        lower_bound=lower_bound,
        gap=gap,
        status=status,
        nodes=nodes,
        wall_time=wall_time,
        L=p.L,
        l_check_shift=shift,
    )


@dataclass(frozen=True, eq=False)
class EnumerationResult:
    objective: float
    selector: Tuple[int, ...]
    """The chosen instance of each positive bag, in bag order."""
    w: np.ndarray
    b: float
    n_selectors: int


def enumerate_selectors(
    embeddings: np.ndarray, bags: Sequence[Bag], C: Penalty
) -> EnumerationResult:
    """The exact optimum by solving the convex problem of every selector

    Raises `EnumerationLimitExceeded` when there are more than 10⁴ selectors.
    """
    p = MiqpProblem(np.asarray(embeddings, dtype=float), tuple(bags), as_penalty(C))
    positive = p.positive
    choices = [sorted(p.bags[b].instance_indices) for b in positive]
    n_selectors = int(np.prod([len(c) for c in choices]))
    if n_selectors > ENUMERATION_LIMIT:
        raise EnumerationLimitExceeded(
            f"{n_selectors} selectors exceed the enumeration limit {ENUMERATION_LIMIT}"
        )
    best: Optional[_Candidate] = None
    for chosen in itertools.product(*choices):
        candidate = _solve_fixed(p, dict(zip(positive, chosen)), None)
        if best is None or candidate.objective < best.objective:
            best = candidate
    assert best is not None
    return EnumerationResult(
        objective=best.objective,
        selector=tuple(best.selector[b] for b in positive),
        w=best.w,
        b=best.b,
        n_selectors=n_selectors,
    )


def solve_escalating_L(
    p: MiqpProblem, max_doublings: int = MAX_L_DOUBLINGS
) -> MiqpSolution:
    """`branch_and_bound`, rerun with `L` doubled while `L` binds

    The default `L` suits Gaussian-kernel embeddings, whose norms are at most 1.
    Other kernels or wide score ranges can need more: whenever the `2L` re-solve
    of the incumbent moves its objective, the search is repeated with `L`
    doubled, at most `max_doublings` times. Searches stopped by a limit, and
    problems too large for the check, run once with the given `L`.
    """
    sol = branch_and_bound(p)
    for _ in range(max_doublings):
        if sol.status != "optimal" or sol.l_check_shift is None:
            break
        if sol.l_check_shift <= L_CHECK_TOL:
            break
        p = replace(p, L=2.0 * p.L)
        logger.warning("re-solving with L=%g", p.L)
        sol = branch_and_bound(p)
    return sol


#################
# PRIMAL MODELS #
#################


@dataclass(frozen=True, eq=False)
class PrimalModel:
    """A classifier in primal form: `h(P) = ⟨w, z(P)⟩ + b` with `z` the embedding"""

    w: np.ndarray
    b: float
    nmap: NystromMap
    solution: dict = field(default_factory=dict)
    """Solver metadata: objective, bound, gap, status, nodes, wall time, L."""

    @property
    def kernel(self) -> KernelSpec:
        return self.nmap.spec

    def half_norm_sq(self) -> float:
        return float(0.5 * self.w @ self.w)

    def score_embedded(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z) @ self.w + self.b

    def decision_function(
        self, instances: Sequence[DistInstance], threads: Optional[int] = None
    ) -> np.ndarray:
        return self.score_embedded(embed_instances(instances, self.nmap, threads))

    def to_dict(self) -> dict:
        return {
            "type": "primal",
            "w": self.w.tolist(),
            "b": self.b,
            "nystrom": self.nmap.to_dict(),
            "solution": self.solution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Self:
        return cls(
            w=np.asarray(d["w"], dtype=float),
            b=float(d["b"]),
            nmap=NystromMap.from_dict(d["nystrom"]),
            solution=dict(d.get("solution", {})),
        )


def default_sizes(
    ds: Dataset, m1: Optional[int] = None, m2: Optional[int] = None
) -> Tuple[int, int]:
    """`m2 = min(total samples, 240)` and `m1 = m2` unless given"""
    if m2 is None:
        m2 = min(ds.n_samples, _DEFAULT_MAX_ANCHORS)
    if m1 is None:
        m1 = m2
    return m1, m2


def fit_miqp(
    ds: Dataset,
    kernel: KernelSpec,
    C: Penalty,
    m1: Optional[int] = None,
    m2: Optional[int] = None,
    L: float = _DEFAULT_L,
    time_limit: Optional[float] = _DEFAULT_TIME_LIMIT,
    seed: Optional[int] = None,
    node_limit: Optional[int] = None,
    threads: Optional[int] = None,
) -> PrimalModel:
    """Train a primal-form classifier through the mixed-integer formulation

    The pipeline draws `m2` stratified anchors, fits a rank-`m1` Nyström map,
    embeds every instance and runs `solve_escalating_L`. When a limit stops
    the search, the incumbent is returned with its status and gap. The
    metadata records the `L` finally used.
    """
    ds.require_both_classes()
    m1, m2 = default_sizes(ds, m1, m2)
    rng = np.random.Generator(np.random.PCG64(seed))
    anchors = stratified_subsample(ds, m2, rng)
    nmap = fit_nystrom(anchors, kernel, min(m1, m2))
    Z = embed_instances(ds.instances, nmap, threads)
    problem = MiqpProblem(
        embeddings=Z,
        bags=ds.bags,
        penalty=as_penalty(C),
        L=L,
        time_limit=time_limit,
        node_limit=node_limit,
    )
    sol = solve_escalating_L(problem)
    return PrimalModel(w=sol.w, b=sol.b, nmap=nmap, solution=sol.metadata())


def embedded_dataset(ds: Dataset, Z: np.ndarray) -> Dataset:
    """The data set with each instance replaced by its embedding as a single sample

    Under the linear kernel, its SMM Gram matrix is `Z Zᵀ`.
    """
    Z = np.asarray(Z, dtype=float)
    names = [f"z{k + 1}" for k in range(Z.shape[1])]
    return ds.with_instances(
        [DistInstance(inst.instance_id, Z[i]) for i, inst in enumerate(ds.instances)],
        names,
    )
