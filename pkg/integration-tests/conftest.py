"""Shared fixtures for the integration tests

These tests repeat the solver checks of the unit tests on many random problems
and run the statistical checks at desk scale. They take minutes, not seconds.

See https://pytest.org/en/latest/reference/fixtures.html#conftest-py-sharing-fixtures-across-multiple-files # noqa: E501
"""
from __future__ import annotations

from typing import Callable, List

import numpy as np
import pytest

from mismm.data import Bag, Dataset, DistInstance

RandomDataset = Callable[[int], Dataset]


def _random_tiny_dataset(seed: int) -> Dataset:
    """At most 3 positive bags of at most 3 instances, at most 6 negative
    instances, each instance a handful of 2-dimensional samples"""
    rng = np.random.default_rng(seed)
    instances: List[DistInstance] = []
    bags: List[Bag] = []

    def add_bag(name: str, size: int, label: int) -> None:
        start = len(instances)
        for j in range(size):
            X = rng.normal(size=(int(rng.integers(2, 6)), 2))
            if label == 1 and j == 0:
                X += 1.5
            instances.append(DistInstance(f"{name}.{j}", X))
        bags.append(Bag(name, tuple(range(start, len(instances))), label))

    for b in range(int(rng.integers(1, 4))):
        add_bag(f"p{b}", int(rng.integers(1, 4)), 1)
    n_neg = int(rng.integers(1, 7))
    for b in range(n_neg):
        add_bag(f"n{b}", 1, -1)
    return Dataset(tuple(instances), tuple(bags), ("f1", "f2"))


# The same seeds always give the same problems, so a failure names its seed
@pytest.fixture(scope="session")
def random_tiny_dataset() -> RandomDataset:
    return _random_tiny_dataset
