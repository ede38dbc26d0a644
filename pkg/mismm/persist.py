"""Model files

A model file is a JSON document holding the trained model together with the
preprocessing applied to its training data, so that prediction can reapply it:

```
{
  "format": "mismm-model",
  "version": 1,
  "method": "mismm-heuristic",
  "hyperparameters": {"C": 1.0, "sigma": 0.5},
  "log_columns": ["f1"],
  "scaler": {...} | null,
  "model": {"type": "dual" | "primal" | "summary", ...}
}
```
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from typing_extensions import Self

from mismm.baselines import SummaryModel
from mismm.data import Dataset, ScaleParams, apply_scaler, log_transform
from mismm.dual import DualModel
from mismm.errors import InputError
from mismm.heuristic import Scorer
from mismm.miqp import PrimalModel

logger = logging.getLogger(__name__)

FORMAT = "mismm-model"
VERSION = 1


class ModelFileError(InputError):
    """Raised on an unreadable or malformed model file"""


def model_from_dict(d: Dict[str, Any]) -> Scorer:
    """Rebuild a model from its `to_dict()` form"""
    kind = d.get("type")
    if kind == "dual":
        return DualModel.from_dict(d)
    if kind == "primal":
        return PrimalModel.from_dict(d)
    if kind == "summary":
        return SummaryModel.from_dict(d, inner=model_from_dict(d["inner"]))
    raise ModelFileError(f"unknown model type {kind!r}")


def _finite_or_none(value: Any) -> Any:
    """JSON has no NaN; non-finite floats are stored as null"""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite_or_none(v) for v in value]
    return value


@dataclass(frozen=True, eq=False)
class ModelFile:
    method: str
    model: Scorer
    C: float
    sigma: float
    log_columns: Tuple[str, ...] = field(default=())
    scaler: Optional[ScaleParams] = None

    def preprocess(self, ds: Dataset) -> Dataset:
        """Apply the training-time log transform and scaling to `ds`"""
        if self.log_columns:
            ds = log_transform(ds, self.log_columns)
        if self.scaler is not None:
            ds = apply_scaler(ds, self.scaler)
        return ds

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": FORMAT,
            "version": VERSION,
            "method": self.method,
            "hyperparameters": {"C": self.C, "sigma": self.sigma},
            "log_columns": list(self.log_columns),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "model": self.model.to_dict(),  # type: ignore[attr-defined]
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> Self:
        if d.get("format") != FORMAT:
            raise ModelFileError("not a mismm model file")
        if d.get("version") != VERSION:
            raise ModelFileError(f"unsupported model file version {d.get('version')}")
        try:
            scaler = d.get("scaler")
            return cls(
                method=d["method"],
                model=model_from_dict(d["model"]),
                C=float(d["hyperparameters"]["C"]),
                sigma=float(d["hyperparameters"]["sigma"]),
                log_columns=tuple(d.get("log_columns", ())),
                scaler=None if scaler is None else ScaleParams.from_dict(scaler),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFileError(f"malformed model file: {e!r}") from e


def save_model(mf: ModelFile, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(_finite_or_none(mf.to_dict()), indent=1) + "\n")


def load_model(path: Union[str, Path]) -> ModelFile:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ModelFileError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ModelFileError(f"{path} is not valid JSON: {e}") from e
    logger.debug("loaded %s model from %s", doc.get("method"), path)
    return ModelFile.from_dict(doc)
