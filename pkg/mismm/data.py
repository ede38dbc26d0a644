"""Weakly supervised data sets of distributional instances

A data set is a list of `DistInstance`s, each an empirical distribution given by
its sample rows, partitioned into labelled `Bag`s. Only bag labels are observed.

Data sets are read from (and written to) a long CSV format with one row per
sample:

```
bag_id,bag_label,instance_id,f1,f2,...
A,1,A.1,0.3,1.2
A,1,A.1,0.1,0.9
B,-1,B.1,2.0,0.0
```
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from typing_extensions import Self

from mismm.errors import InputError

logger = logging.getLogger(__name__)

BAG_COLUMN = "bag_id"
LABEL_COLUMN = "bag_label"
INSTANCE_COLUMN = "instance_id"
ID_COLUMNS = (BAG_COLUMN, LABEL_COLUMN, INSTANCE_COLUMN)

_LABELS = {"1": 1, "+1": 1, "-1": -1}


class DataError(InputError):
    """Raised when a data file or data structure violates its contract"""


class ConstantFeatureError(DataError):
    """Raised when a feature has zero variance and cannot be scaled"""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DistInstance:
    """An empirical distribution: the `r × d` sample matrix of one instance"""

    instance_id: str
    samples: np.ndarray

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1 or samples.shape[1] < 1:
            raise DataError(
                f"instance {self.instance_id!r} must have at least one sample "
                f"of dimension >= 1, got shape {samples.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise DataError(f"instance {self.instance_id!r} has non-finite values")
        object.__setattr__(self, "samples", _frozen(samples))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class Bag:
    """A labelled group of instances, referenced by index into the data set"""

    bag_id: str
    instance_indices: Tuple[int, ...]
    label: int

    def __post_init__(self) -> None:
        if self.label not in (-1, 1):
            raise DataError(f"bag {self.bag_id!r} label must be -1 or +1")
        if len(self.instance_indices) < 1:
            raise DataError(f"bag {self.bag_id!r} has no instances")
        object.__setattr__(
            self, "instance_indices", tuple(int(i) for i in self.instance_indices)
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """Instances, the bags partitioning them and the names of the `d` features

    Construction checks the partition property: every instance index belongs to
    exactly one bag.
    """

    instances: Tuple[DistInstance, ...]
    bags: Tuple[Bag, ...]
    feature_names: Tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "bags", tuple(self.bags))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if not self.instances:
            raise DataError("a data set needs at least one instance")
        dims = {inst.dim for inst in self.instances}
        if len(dims) != 1:
            raise DataError(f"instances have differing dimensions {sorted(dims)}")
        if dims != {len(self.feature_names)}:
            raise DataError(
                f"{len(self.feature_names)} feature names for "
                f"dimension {dims.pop()} samples"
            )
        seen = np.zeros(len(self.instances), dtype=int)
        for bag in self.bags:
            for i in bag.instance_indices:
                if not 0 <= i < len(self.instances):
                    raise DataError(f"bag {bag.bag_id!r} references instance {i}")
                seen[i] += 1
        if np.any(seen != 1):
            raise DataError("bags must partition the instances")

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def n_bags(self) -> int:
        return len(self.bags)

    @property
    def dim(self) -> int:
        return len(self.feature_names)

    @property
    def n_samples(self) -> int:
        return sum(inst.n_samples for inst in self.instances)

    @cached_property
    def bag_of(self) -> np.ndarray:
        """`B(i)`: the index of the bag holding each instance"""
        out = np.empty(self.n_instances, dtype=int)
        for b, bag in enumerate(self.bags):
            out[list(bag.instance_indices)] = b
        return out

    @cached_property
    def bag_labels(self) -> np.ndarray:
        return np.array([bag.label for bag in self.bags], dtype=int)

    @cached_property
    def instance_labels(self) -> np.ndarray:
        """`Y_{B(i)}`: the label of the bag holding each instance"""
        return self.bag_labels[self.bag_of]

    @property
    def positive_bags(self) -> List[int]:
        return [b for b, bag in enumerate(self.bags) if bag.label == 1]

    @property
    def negative_bags(self) -> List[int]:
        return [b for b, bag in enumerate(self.bags) if bag.label == -1]

    def bag_instances(self, b: int) -> List[DistInstance]:
        return [self.instances[i] for i in self.bags[b].instance_indices]

    def stacked_samples(self) -> np.ndarray:
        """All samples of all instances as one `N × d` matrix"""
        return np.vstack([inst.samples for inst in self.instances])

    def require_both_classes(self) -> None:
        if not self.positive_bags or not self.negative_bags:
            raise DataError("training needs at least one positive and one negative bag")

    def subset(self, bag_indices: Iterable[int]) -> Self:
        """A data set holding only the given bags, with instances re-indexed"""
        instances: List[DistInstance] = []
        bags: List[Bag] = []
        for b in bag_indices:
            bag = self.bags[b]
            start = len(instances)
            instances.extend(self.instances[i] for i in bag.instance_indices)
            bags.append(
                Bag(bag.bag_id, tuple(range(start, len(instances))), bag.label)
            )
        return type(self)(tuple(instances), tuple(bags), self.feature_names)

    def instance_indices_of(self, bag_indices: Iterable[int]) -> List[int]:
        return [i for b in bag_indices for i in self.bags[b].instance_indices]

    def singletons(self) -> Self:
        """Every instance becomes its own bag carrying its parent bag's label"""
        bags = tuple(
            Bag(inst.instance_id, (i,), int(self.instance_labels[i]))
            for i, inst in enumerate(self.instances)
        )
        return type(self)(self.instances, bags, self.feature_names)

    def with_instances(
        self,
        instances: Sequence[DistInstance],
        feature_names: Optional[Sequence[str]] = None,
    ) -> Self:
        """The same bag structure over replacement instances"""
        if len(instances) != self.n_instances:
            raise DataError("replacement instances must match the instance count")
        names = self.feature_names if feature_names is None else feature_names
        return type(self)(tuple(instances), self.bags, tuple(names))

    def map_samples(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        feature_names: Optional[Sequence[str]] = None,
    ) -> Self:
        """Apply `fn` to every instance's sample matrix"""
        return self.with_instances(
            [DistInstance(i.instance_id, fn(i.samples)) for i in self.instances],
            feature_names,
        )


#######
# CSV #
#######


def _parse_label(raw: str, bag_id: str) -> int:
    try:
        return _LABELS[str(raw).strip()]
    except KeyError:
        raise DataError(f"bag {bag_id!r} has invalid label {raw!r}") from None


def load_dataset(path: Union[str, Path], format: str = "csv") -> Dataset:
    """Read a data set from the long CSV format

    Rows are grouped by `(bag_id, instance_id)`; bags and instances are ordered by
    first appearance. Columns other than the three identifier columns are features.

    Args:

    - `path`: the CSV file
    - `format`: only `"csv"` is supported
    """
    if format != "csv":
        raise DataError(f"unsupported data format {format!r}")
    path = Path(path)
    try:
        frame = pd.read_csv(
            path, dtype={c: str for c in ID_COLUMNS}, keep_default_na=False
        )
    except FileNotFoundError:
        raise DataError(f"no such data file: {path}") from None
    except pd.errors.EmptyDataError:
        raise DataError(f"no samples in {path}") from None

    missing = [c for c in ID_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"missing column(s) {', '.join(missing)} in {path}")
    feature_names = [c for c in frame.columns if c not in ID_COLUMNS]
    if not feature_names:
        raise DataError(f"no feature columns in {path}")
    if frame.empty:
        raise DataError(f"no samples in {path}")

    try:
        values = frame[feature_names].apply(pd.to_numeric).to_numpy(dtype=float)
    except (ValueError, TypeError) as e:
        raise DataError(f"non-numeric feature value in {path}: {e}") from None
    if not np.all(np.isfinite(values)):
        raise DataError(f"non-finite feature value in {path}")

    bag_labels: Dict[str, int] = {}
    instance_rows: Dict[Tuple[str, str], List[int]] = {}
    bag_members: Dict[str, List[Tuple[str, str]]] = {}
    for row, (bag_id, raw_label, instance_id) in enumerate(
        frame[list(ID_COLUMNS)].itertuples(index=False, name=None)
    ):
        label = _parse_label(raw_label, bag_id)
        if bag_labels.setdefault(bag_id, label) != label:
            raise DataError(f"inconsistent bag label for bag {bag_id!r}")
        key = (bag_id, instance_id)
        if key not in instance_rows:
            instance_rows[key] = []
            bag_members.setdefault(bag_id, []).append(key)
        instance_rows[key].append(row)

    instances: List[DistInstance] = []
    bags: List[Bag] = []
    for bag_id, members in bag_members.items():
        start = len(instances)
        for key in members:
            instances.append(DistInstance(key[1], values[instance_rows[key]]))
        indices = tuple(range(start, len(instances)))
        bags.append(Bag(bag_id, indices, bag_labels[bag_id]))
    logger.info(
        "loaded %d bags, %d instances, %d samples from %s",
        len(bags),
        len(instances),
        len(frame),
        path,
    )
    return Dataset(tuple(instances), tuple(bags), tuple(feature_names))


def dataset_frame(ds: Dataset) -> pd.DataFrame:
    """The long one-row-per-sample table of a data set"""
    blocks = []
    for bag in ds.bags:
        for i in bag.instance_indices:
            inst = ds.instances[i]
            block = pd.DataFrame(inst.samples, columns=list(ds.feature_names))
            block.insert(0, INSTANCE_COLUMN, inst.instance_id)
            block.insert(0, LABEL_COLUMN, str(bag.label))
            block.insert(0, BAG_COLUMN, bag.bag_id)
            blocks.append(block)
    return pd.concat(blocks, ignore_index=True)


def save_dataset(ds: Dataset, path: Union[str, Path]) -> None:
    """Write a data set in the format read by `load_dataset`"""
    dataset_frame(ds).to_csv(path, index=False, float_format="%.17g")


#################
# PREPROCESSING #
#################


@dataclass(frozen=True, eq=False)
class ScaleParams:
    """Per-feature centring and scaling fitted on training data"""

    mean: np.ndarray
    scale: np.ndarray
    feature_names: Tuple[str, ...]
    dropped: Tuple[str, ...] = field(default=())

    @property
    def kept(self) -> Tuple[str, ...]:
        return tuple(n for n in self.feature_names if n not in self.dropped)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "feature_names": list(self.feature_names),
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Self:
        return cls(
            mean=np.asarray(d["mean"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            feature_names=tuple(d["feature_names"]),
            dropped=tuple(d.get("dropped", ())),
        )


def fit_scaler(ds: Dataset, drop_constant: bool = False) -> ScaleParams:
    """Pooled per-feature mean and sample standard deviation over all samples

    Args:

    - `ds`: the training data
    - `drop_constant`: drop zero-variance features with a warning instead of
      raising `ConstantFeatureError`
    """
    pooled = ds.stacked_samples()
    if pooled.shape[0] < 2:
        raise DataError("scaling needs at least 2 samples")
    mean = pooled.mean(axis=0)
    sd = pooled.std(axis=0, ddof=1)
    constant = [n for n, s in zip(ds.feature_names, sd) if not s > 0]
    if constant and not drop_constant:
        raise ConstantFeatureError(f"zero-variance feature(s): {', '.join(constant)}")
    if constant:
        logger.warning("dropping zero-variance feature(s): %s", ", ".join(constant))
    keep = sd > 0
    return ScaleParams(
        mean=_frozen(mean[keep]),
        scale=_frozen(sd[keep]),
        feature_names=ds.feature_names,
        dropped=tuple(constant),
    )


def apply_scaler(ds: Dataset, params: ScaleParams) -> Dataset:
    """Centre and scale with previously fitted parameters, dropping the same columns"""
    if tuple(ds.feature_names) != tuple(params.feature_names):
        raise DataError("scaler was fitted on different features")
    keep = np.array([n not in params.dropped for n in ds.feature_names])
    return ds.map_samples(
        lambda x: (x[:, keep] - params.mean) / params.scale, params.kept
    )


def log_transform(ds: Dataset, columns: Sequence[str]) -> Dataset:
    """Replace the named feature columns by their natural logarithm"""
    unknown = [c for c in columns if c not in ds.feature_names]
    if unknown:
        raise DataError(f"unknown column(s) for log transform: {', '.join(unknown)}")
    idx = [ds.feature_names.index(c) for c in columns]
    if not idx:
        return ds
    if np.any(ds.stacked_samples()[:, idx] <= 0):
        raise DataError("log transform needs strictly positive values")

    def transform(x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=float)
        out[:, idx] = np.log(out[:, idx])
        return out

    return ds.map_samples(transform)
