"""Embedding kernels on sample vectors and the empirical SMM kernel on instances

The SMM kernel between two empirical distributions is the mean of the embedding
kernel over every cross pair of their samples:

```
K(P_i, P_j) = 1/(r_i r_j) Σ_l Σ_m k(x_il, x_jm)
```

Diagonal entries keep the self pairs (the biased mean-map estimate).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from typing_extensions import Self

from mismm.data import DistInstance
from mismm.errors import InputError
from mismm.parallel import thread_map

KINDS = ("gaussian", "linear")


class KernelError(InputError):
    """Raised on an invalid kernel specification or mismatched dimensions"""


@dataclass(frozen=True)
class KernelSpec:
    """The embedding kernel `k`

    - `gaussian`: `k(x, z) = exp(-‖x - z‖² / 2σ²)`
    - `linear`: `k(x, z) = ⟨x, z⟩`
    """

    kind: str = "gaussian"
    sigma: Optional[float] = 1.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.sigma is None or not float(self.sigma) > 0:
                raise KernelError(f"gaussian kernel needs sigma > 0, got {self.sigma}")
            object.__setattr__(self, "sigma", float(self.sigma))
        else:
            object.__setattr__(self, "sigma", None)

    @classmethod
    def gaussian(cls, sigma: float) -> Self:
        return cls("gaussian", sigma)

    @classmethod
    def linear(cls) -> Self:
        return cls("linear", None)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: dict) -> Self:
        return cls(d["kind"], d.get("sigma"))


def embedding_matrix(X: np.ndarray, Z: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """The matrix `[k(x_l, z_m)]` for rows `x_l` of `X` and `z_m` of `Z`"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise KernelError(f"dimension mismatch: {X.shape[1]} vs {Z.shape[1]}")
    if spec.kind == "linear":
        return X @ Z.T
    assert spec.sigma is not None
    return np.exp(-cdist(X, Z, "sqeuclidean") / (2.0 * spec.sigma**2))


def embed_kernel(x: np.ndarray, z: np.ndarray, spec: KernelSpec) -> float:
    """`k(x, z)` for two sample vectors"""
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise KernelError(f"dimension mismatch: {x.size} vs {z.size}")
    return float(embedding_matrix(x[None, :], z[None, :], spec)[0, 0])


def smm_kernel(Pi: DistInstance, Pj: DistInstance, spec: KernelSpec) -> float:
    """The empirical SMM kernel: the mean of `k` over all sample pairs"""
    return float(embedding_matrix(Pi.samples, Pj.samples, spec).mean())


def _block_means(
    X: np.ndarray,
    stacked: np.ndarray,
    offsets: np.ndarray,
    sizes: np.ndarray,
    spec: KernelSpec,
) -> np.ndarray:
    """Mean of `k` between the rows of `X` and each block of `stacked`"""
    sums = embedding_matrix(X, stacked, spec).sum(axis=0)
    return np.add.reduceat(sums, offsets) / (X.shape[0] * sizes)


def _stack(instances: Sequence[DistInstance]):
    sizes = np.array([inst.n_samples for inst in instances])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return np.vstack([inst.samples for inst in instances]), offsets, sizes


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Precomputed SMM kernel values `K(P_i, P_j)` and the kernel that produced them"""

    values: np.ndarray
    spec: KernelSpec

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def subset(self, indices: Sequence[int]) -> Self:
        """The principal submatrix on `indices`"""
        idx = np.asarray(indices, dtype=int)
        return type(self)(self.values[np.ix_(idx, idx)], self.spec)


def gram(
    instances: Sequence[DistInstance],
    spec: KernelSpec,
    threads: Optional[int] = None,
) -> GramMatrix:
    """The symmetric SMM Gram matrix of `instances`

    Each unordered pair is computed once, row `i` against instances `i..n-1`, and
    the upper triangle is mirrored, so the result is exactly symmetric. Rows are
    computed in parallel; each entry is accumulated in a fixed order regardless of
    the schedule.
    """
    if not instances:
        raise KernelError("gram needs at least one instance")
    if len({inst.dim for inst in instances}) != 1:
        raise KernelError("instances have differing dimensions")
    n = len(instances)
    stacked, offsets, sizes = _stack(instances)

    def row(i: int) -> np.ndarray:
        start = offsets[i]
        return _block_means(
            instances[i].samples, stacked[start:], offsets[i:] - start, sizes[i:], spec
        )

    K = np.zeros((n, n))
    for i, values in enumerate(thread_map(row, range(n), threads)):
        K[i, i:] = values
    upper = np.triu(K)
    K = upper + np.triu(upper, 1).T
    return GramMatrix(K, spec)


def cross_gram(
    rows: Sequence[DistInstance],
    cols: Sequence[DistInstance],
    spec: KernelSpec,
    threads: Optional[int] = None,
) -> np.ndarray:
    """The rectangular matrix `[K(P_i, Q_j)]` used to score new instances"""
    if not rows or not cols:
        return np.zeros((len(rows), len(cols)))
    stacked, offsets, sizes = _stack(cols)

    def row(i: int) -> np.ndarray:
        return _block_means(rows[i].samples, stacked, offsets, sizes, spec)

    return np.vstack(thread_map(row, range(len(rows)), threads))


def dump_gram(
    gm: GramMatrix, path: Union[str, Path], ids: Optional[Sequence[str]] = None
) -> None:
    """Write the Gram matrix as a labelled CSV table, for debugging"""
    labels = list(ids) if ids is not None else [str(i) for i in range(gm.n)]
    frame = pd.DataFrame(gm.values, index=labels, columns=labels)
    frame.index.name = "instance_id"
    frame.to_csv(path, float_format="%.17g")
