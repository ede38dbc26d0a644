"""Nyström approximation of the embedding kernel's feature map

Given anchors `x̂_1..x̂_m2` with kernel matrix `K̂ = V D Vᵀ`, the approximate
feature map is

```
φ̃(x) = D^(-1/2) Vᵀ (k(x, x̂_1), ..., k(x, x̂_m2))ᵀ
```

restricted to the `m1` leading eigenpairs. Instance embeddings `z_i` are the
mean of `φ̃` over the instance's samples, so `⟨z_i, z_j⟩` approximates the SMM
kernel `K(P_i, P_j)`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigh
from typing_extensions import Self

from mismm.data import Dataset, DistInstance
from mismm.errors import InputError, SolverError
from mismm.kernels import KernelError, KernelSpec, embedding_matrix
from mismm.parallel import thread_map

logger = logging.getLogger(__name__)

EIGEN_REL_TOL = 1e-10
"""Eigenvalues at or below this fraction of the largest are dropped."""


class NystromError(SolverError):
    """Raised when no eigenvalue of the anchor kernel matrix survives truncation"""


@dataclass(frozen=True, eq=False)
class NystromMap:
    """Anchors and the `m1 × m2` projection `D^(-1/2) Vᵀ`

    `m1` is the effective rank after truncation; `requested_m1` is what the caller
    asked for.
    """

    anchors: np.ndarray
    projection: np.ndarray
    spec: KernelSpec
    m1: int
    m2: int
    requested_m1: int

    def feature_map(self, X: np.ndarray) -> np.ndarray:
        """`φ̃` for every row of `X`, as an `r × m1` matrix"""
        return embedding_matrix(X, self.anchors, self.spec) @ self.projection.T

    def to_dict(self) -> dict:
        return {
            "anchors": self.anchors.tolist(),
            "projection": self.projection.tolist(),
            "spec": self.spec.to_dict(),
            "m1": self.m1,
            "m2": self.m2,
            "requested_m1": self.requested_m1,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Self:
        return cls(
            anchors=np.asarray(d["anchors"], dtype=float),
            projection=np.asarray(d["projection"], dtype=float),
            spec=KernelSpec.from_dict(d["spec"]),
            m1=int(d["m1"]),
            m2=int(d["m2"]),
            requested_m1=int(d["requested_m1"]),
        )


def _round_robin(capacity: Sequence[int], total: int) -> np.ndarray:
    counts = np.zeros(len(capacity), dtype=int)
    remaining = total
    while remaining > 0:
        for b, cap in enumerate(capacity):
            if remaining == 0:
                break
            if counts[b] < cap:
                counts[b] += 1
                remaining -= 1
    return counts


def stratified_subsample(ds: Dataset, m2: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `m2` anchor samples, spread as evenly as possible over the bags

    Anchors are allocated one per bag in turn, skipping bags whose samples are
    exhausted, and drawn uniformly without replacement within each bag. Anchors
    are returned bag by bag, in draw order.
    """
    if m2 < 1:
        raise InputError(f"m2 must be >= 1, got {m2}")
    pools = [
        np.vstack([inst.samples for inst in ds.bag_instances(b)])
        for b in range(ds.n_bags)
    ]
    total = sum(p.shape[0] for p in pools)
    if m2 > total:
        raise InputError(f"m2 = {m2} exceeds the {total} available samples")
    counts = _round_robin([p.shape[0] for p in pools], m2)
    picks = [
        pool[rng.choice(pool.shape[0], size=count, replace=False)]
        for pool, count in zip(pools, counts)
        if count > 0
    ]
    return np.vstack(picks)


def fit_nystrom(
    anchors: np.ndarray,
    spec: KernelSpec,
    m1: int,
    rel_tol: float = EIGEN_REL_TOL,
) -> NystromMap:
    """Build the feature map from the leading eigenpairs of the anchor kernel

    Args:

    - `anchors`: the `m2 × d` anchor samples
    - `spec`: the embedding kernel
    - `m1`: the requested rank, `1 <= m1 <= m2`
    - `rel_tol`: eigenvalues `<= rel_tol · λ_1` are dropped and `m1` reduced
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    m2 = anchors.shape[0]
    if m2 < 1:
        raise InputError("fit_nystrom needs at least one anchor")
    if not 1 <= m1 <= m2:
        raise InputError(f"need 1 <= m1 <= m2, got m1 = {m1}, m2 = {m2}")

    K = embedding_matrix(anchors, anchors, spec)
    K = 0.5 * (K + K.T)
    eigenvalues, eigenvectors = eigh(K)
    order = np.argsort(eigenvalues)[::-1][:m1]
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]

    if not eigenvalues[0] > 0:
        raise NystromError("the anchor kernel matrix has no positive eigenvalue")
    keep = eigenvalues > rel_tol * eigenvalues[0]
    eigenvalues, eigenvectors = eigenvalues[keep], eigenvectors[:, keep]
    if eigenvalues.size < m1:
        logger.info(
            "nystrom rank reduced from %d to %d by eigenvalue truncation",
            m1,
            eigenvalues.size,
        )

    # Largest-magnitude component of each eigenvector is positive
    pivots = np.argmax(np.abs(eigenvectors), axis=0)
    signs = np.sign(eigenvectors[pivots, np.arange(eigenvectors.shape[1])])
    eigenvectors = eigenvectors * signs

    projection = eigenvectors.T / np.sqrt(eigenvalues)[:, None]
    return NystromMap(
        anchors=anchors,
        projection=projection,
        spec=spec,
        m1=int(eigenvalues.size),
        m2=m2,
        requested_m1=m1,
    )


def embed_instance(Pi: DistInstance, nmap: NystromMap) -> np.ndarray:
    """`z_i`: the mean of `φ̃` over the instance's samples"""
    if Pi.dim != nmap.anchors.shape[1]:
        raise KernelError(
            f"instance dimension {Pi.dim} does not match anchors "
            f"of dimension {nmap.anchors.shape[1]}"
        )
    return nmap.feature_map(Pi.samples).mean(axis=0)


def embed_instances(
    instances: Sequence[DistInstance],
    nmap: NystromMap,
    threads: Optional[int] = None,
) -> np.ndarray:
    """The `n × m1` matrix whose rows are `embed_instance` of each instance"""
    if not instances:
        return np.zeros((0, nmap.m1))
    return np.vstack(thread_map(lambda P: embed_instance(P, nmap), instances, threads))
