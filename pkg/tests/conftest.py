"""Shared fixtures for the unit tests

See https://pytest.org/en/latest/reference/fixtures.html#conftest-py-sharing-fixtures-across-multiple-files # noqa: E501
"""
from __future__ import annotations

from typing import Callable, List

import numpy as np
import pytest

from mismm.data import Bag, Dataset, DistInstance

MakeDataset = Callable[..., Dataset]


def _make_dataset(
    n_pos: int = 4,
    n_neg: int = 4,
    n_inst: int = 2,
    n_samples: int = 6,
    dim: int = 2,
    shift: float = 3.0,
    seed: int = 0,
) -> Dataset:
    """Bags of gaussian instances; each positive bag's first instance is shifted"""
    rng = np.random.default_rng(seed)
    instances: List[DistInstance] = []
    bags: List[Bag] = []
    for b in range(n_pos + n_neg):
        label = 1 if b < n_pos else -1
        start = len(instances)
        for j in range(n_inst):
            X = rng.standard_normal((n_samples, dim))
            if label == 1 and j == 0:
                X += shift
            instances.append(DistInstance(f"b{b}.i{j}", X))
        bags.append(Bag(f"b{b}", tuple(range(start, len(instances))), label))
    names = tuple(f"f{c + 1}" for c in range(dim))
    return Dataset(tuple(instances), tuple(bags), names)


# A factory rather than a fixed data set, so that tests can ask for the sizes
# they need
@pytest.fixture
def make_dataset() -> MakeDataset:
    return _make_dataset


@pytest.fixture(scope="session")
def separable() -> Dataset:
    return _make_dataset(n_pos=5, n_neg=5, n_inst=2, n_samples=8, shift=4.0, seed=3)


@pytest.fixture
def tiny() -> Dataset:
    """Two bags of one-sample instances, written out by hand"""
    instances = (
        DistInstance("p.1", np.array([[2.0, 0.0]])),
        DistInstance("p.2", np.array([[0.0, 0.5]])),
        DistInstance("n.1", np.array([[-2.0, 0.0]])),
    )
    bags = (Bag("p", (0, 1), 1), Bag("n", (2,), -1))
    return Dataset(instances, bags, ("f1", "f2"))
