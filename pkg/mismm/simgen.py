"""Simulated bags of distributional instances with known instance labels

Each instance gets a latent label `y = +1` with probability `p_pos`, its samples
are standard normal except for a block of coordinates that depends on the
scenario and on `y`, and a bag is positive iff one of its instances is.

| scenario         | y = +1                          | y = -1                        |
|------------------|---------------------------------|-------------------------------|
| `t_vs_normal`    | coords 1-5 ~ MVT(3, 0, I/3)     | standard normal               |
| `cov_diff`       | coords 1,2 correlated -0.5      | coords 2,3 correlated +0.5    |
| `mean_diff`      | coords 1-5 with mean 0.2        | standard normal               |
| `large_cov_diff` | coords 1-5 ~ MVN(0, Σ)          | coords 6-10 ~ MVN(0, Σ)       |

with `Σ` having unit diagonal and 0.5 everywhere else.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from mismm.data import Bag, Dataset, DistInstance, save_dataset
from mismm.errors import InputError

logger = logging.getLogger(__name__)

RNG_NAME = "PCG64"
SCENARIOS = ("t_vs_normal", "cov_diff", "mean_diff", "large_cov_diff")

_MIN_DIM = {"t_vs_normal": 5, "cov_diff": 3, "mean_diff": 5, "large_cov_diff": 10}


class SimulationError(InputError):
    """Raised on an invalid scenario configuration or distribution parameter"""


def make_rng(seed: Optional[int]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seeds(seed: Optional[int], n: int) -> List[int]:
    """`n` independent seeds derived from `seed`"""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _check_covariance(cov: np.ndarray) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise SimulationError("covariance must be a symmetric matrix")
    if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.trace(cov)):
        raise SimulationError("covariance must be positive semidefinite")
    return cov


def sample_mvn(
    mean: np.ndarray, cov: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """`n` draws from `MVN(mean, cov)` via the symmetric square root of `cov`"""
    cov = _check_covariance(cov)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (cov.shape[0],))
    return rng.multivariate_normal(mean, cov, size=n, method="eigh")


def sample_mvt(
    nu: int,
    delta: np.ndarray,
    sigma: np.ndarray,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """`n` draws from the multivariate t with `nu` degrees of freedom

    `delta + MVN(0, sigma) / sqrt(χ²_nu / nu)`, whose covariance is
    `nu / (nu - 2) · sigma`.
    """
    if nu < 3:
        raise SimulationError(f"degrees of freedom must be >= 3, got {nu}")
    sigma = _check_covariance(sigma)
    k = sigma.shape[0]
    z = sample_mvn(np.zeros(k), sigma, n, rng)
    w = rng.chisquare(nu, n) / nu
    delta = np.broadcast_to(np.asarray(delta, dtype=float), (k,))
    return delta + z / np.sqrt(w)[:, None]


def _block_cov(k: int, rho: float) -> np.ndarray:
    return np.full((k, k), rho) + (1.0 - rho) * np.eye(k)


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulated data set

    - `scenario`: one of `SCENARIOS`
    - `n_bags`, `instances_per_bag`, `samples_per_instance`: the sizes
    - `p_pos`: probability that an instance is positive
    - `seed`: seeds the PCG64 generator
    - `d`: the number of coordinates
    """

    scenario: str
    n_bags: int
    instances_per_bag: int
    samples_per_instance: int
    p_pos: float = 0.15
    seed: Optional[int] = None
    d: int = 10

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise SimulationError(
                f"unknown scenario {self.scenario!r}; expected one of "
                f"{', '.join(SCENARIOS)}"
            )
        if min(self.n_bags, self.instances_per_bag, self.samples_per_instance) < 1:
            raise SimulationError("sizes must be >= 1")
        if not 0.0 <= self.p_pos <= 1.0:
            raise SimulationError(f"p_pos must be in [0, 1], got {self.p_pos}")
        if self.d < _MIN_DIM[self.scenario]:
            raise SimulationError(
                f"{self.scenario} needs d >= {_MIN_DIM[self.scenario]}, got {self.d}"
            )


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A data set with the latent instance labels it was generated from"""

    dataset: Dataset
    instance_labels: np.ndarray
    config: ScenarioConfig

    def satisfies_bag_rule(self) -> bool:
        """Every bag label is the maximum of its instance labels"""
        return all(
            bag.label == int(np.max(self.instance_labels[list(bag.instance_indices)]))
            for bag in self.dataset.bags
        )


def _draw_instance(
    scenario: str, y: int, r: int, d: int, rng: np.random.Generator
) -> np.ndarray:
    X = rng.standard_normal((r, d))
    if scenario == "t_vs_normal":
        if y == 1:
            X[:, :5] = sample_mvt(3, np.zeros(5), np.eye(5) / 3.0, r, rng)
    elif scenario == "cov_diff":
        if y == 1:
            X[:, 0:2] = sample_mvn(np.zeros(2), _block_cov(2, -0.5), r, rng)
        else:
            X[:, 1:3] = sample_mvn(np.zeros(2), _block_cov(2, 0.5), r, rng)
    elif scenario == "mean_diff":
        if y == 1:
            X[:, :5] += 0.2
    elif scenario == "large_cov_diff":
        block = sample_mvn(np.zeros(5), _block_cov(5, 0.5), r, rng)
        if y == 1:
            X[:, 0:5] = block
        else:
            X[:, 5:10] = block
    return X


def generate(cfg: ScenarioConfig) -> LabeledDataset:
    """Draw a data set; the same config and seed give the same data bit for bit"""
    rng = make_rng(cfg.seed)
    instances: List[DistInstance] = []
    bags: List[Bag] = []
    labels: List[int] = []
    for k in range(cfg.n_bags):
        start = len(instances)
        for j in range(cfg.instances_per_bag):
            y = 1 if rng.random() < cfg.p_pos else -1
            X = _draw_instance(cfg.scenario, y, cfg.samples_per_instance, cfg.d, rng)
            instances.append(DistInstance(f"b{k}.i{j}", X))
            labels.append(y)
        label = max(labels[start:])
        bags.append(Bag(f"b{k}", tuple(range(start, len(instances))), label))
    names = tuple(f"f{c + 1}" for c in range(cfg.d))
    ds = Dataset(tuple(instances), tuple(bags), names)
    logger.debug(
        "generated %s: %d of %d bags positive",
        cfg.scenario,
        len(ds.positive_bags),
        ds.n_bags,
    )
    return LabeledDataset(ds, np.array(labels, dtype=int), cfg)


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.json")


def save_labeled(ld: LabeledDataset, path: Union[str, Path]) -> Path:
    """Write the data CSV and a `<stem>.labels.json` sidecar of latent labels

    Returns the sidecar path.
    """
    save_dataset(ld.dataset, path)
    sidecar = sidecar_path(path)
    payload = {
        "rng": RNG_NAME,
        "seed": ld.config.seed,
        "scenario": ld.config.scenario,
        "config": asdict(ld.config),
        "labels": {
            inst.instance_id: int(y)
            for inst, y in zip(ld.dataset.instances, ld.instance_labels)
        },
    }
    sidecar.write_text(json.dumps(payload, indent=2) + "\n")
    return sidecar
