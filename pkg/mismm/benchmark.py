"""Benchmark orchestration and reports

Two modes:

- `simulation`: for every scenario, size and replicate, a fresh training set and
  an independent test set of `test_bags` bags are drawn; every method is tuned on
  the training set and scored on the test set.
- `cv`: a fixed data set is split by a replicated stratified k-fold; the test-fold
  bag scores of a replicate are pooled into one AUROC.

Every finished cell is appended to the report CSV and flushed at once, so an
interrupted run leaves the completed rows behind.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from typing_extensions import Self

from mismm.data import Dataset, apply_scaler, fit_scaler, load_dataset, log_transform
from mismm.errors import FitResult, InputError, MethodFailure
from mismm.evaluate import (
    DEFAULT_C_GRID,
    DEFAULT_SIGMA_MULTIPLES,
    CvPlan,
    GridSearchResult,
    auroc,
    bag_auroc,
    bag_folds,
)
from mismm.heuristic import predict_bags
from mismm.methods import FitOptions, MethodSpec, tune_method
from mismm.simgen import SCENARIOS, ScenarioConfig, generate

logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "scenario",
    "n_bags",
    "n_inst",
    "n_samp",
    "method",
    "replicate",
    "auroc",
    "wall_time_s",
    "chosen_C",
    "chosen_sigma",
    "gap",
    "error",
)
CELL_KEYS = ("scenario", "n_bags", "n_inst", "n_samp")

_DEFAULT_TEST_BAGS = 500
_CONFIG_KEYS = {
    "mode",
    "methods",
    "replications",
    "seed",
    "scenarios",
    "sizes",
    "test_bags",
    "p_pos",
    "d",
    "data",
    "log_transform",
    "drop_constant",
    "standardize",
    "k",
    "inner_k",
    "C_grid",
    "sigma_grid",
    "sigma_multiples",
    "fit",
}
_FIT_KEYS = {f.name for f in dataclasses.fields(FitOptions)} - {"seed"}


#################
# CONFIGURATION #
#################


@dataclass(frozen=True)
class BenchmarkConfig:
    """A benchmark run, decoded from a JSON document

    - `mode`: `simulation` or `cv`
    - `methods`: method identifiers, see `mismm.methods`
    - `replications`, `seed`: replicates per cell and the master seed
    - `scenarios`, `sizes`, `test_bags`, `p_pos`, `d`: simulation mode; `sizes`
      lists `[bags, instances per bag, samples per instance]` triples
    - `data`, `log_transform`, `drop_constant`: cv mode input
    - `standardize`: scale features with training-fold statistics
    - `plan`: folds and tuning grid (`k`, `inner_k`, `C_grid`, `sigma_grid`,
      `sigma_multiples` in the JSON)
    - `fit`: `FitOptions` fields other than the seed
    """

    methods: Tuple[MethodSpec, ...]
    mode: str = "simulation"
    replications: int = 10
    seed: Optional[int] = None
    scenarios: Tuple[str, ...] = ()
    sizes: Tuple[Tuple[int, int, int], ...] = ()
    test_bags: int = _DEFAULT_TEST_BAGS
    p_pos: float = 0.15
    d: int = 10
    data: Optional[Path] = None
    log_transform: Tuple[str, ...] = ()
    drop_constant: bool = False
    standardize: bool = True
    plan: CvPlan = field(default_factory=CvPlan)
    fit: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self) -> None:
        if not self.methods:
            raise InputError("a benchmark needs at least one method")
        if self.replications < 1:
            raise InputError("replications must be >= 1")
        if self.mode == "simulation":
            if not self.scenarios or not self.sizes:
                raise InputError("simulation mode needs scenarios and sizes")
            unknown = [s for s in self.scenarios if s not in SCENARIOS]
            if unknown:
                raise InputError(f"unknown scenario(s): {', '.join(unknown)}")
            if any(len(s) != 3 or min(s) < 1 for s in self.sizes):
                raise InputError("sizes must be [bags, instances, samples] >= 1")
            if self.test_bags < 2:
                raise InputError("test_bags must be >= 2")
            for scenario in self.scenarios:
                ScenarioConfig(scenario, 1, 1, 1, self.p_pos, None, self.d)
        elif self.mode == "cv":
            if self.data is None:
                raise InputError("cv mode needs a data file")
        else:
            raise InputError(f"unknown mode {self.mode!r}; expected simulation or cv")

    @classmethod
    def from_dict(cls, d: Dict[str, Any], base_dir: Optional[Path] = None) -> Self:
        """Decode a configuration; relative data paths resolve against `base_dir`"""
        if not isinstance(d, dict):
            raise InputError("a benchmark configuration must be a JSON object")
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            keys = ", ".join(sorted(unknown))
            raise InputError(f"unknown configuration key(s): {keys}")
        fit = d.get("fit", {})
        unknown = set(fit) - _FIT_KEYS
        if unknown:
            raise InputError(f"unknown fit option(s): {', '.join(sorted(unknown))}")
        try:
            sigma_grid = d.get("sigma_grid")
            plan = CvPlan(
                k=int(d.get("k", 10)),
                replications=int(d.get("replications", 10)),
                seed=d.get("seed"),
                C_grid=tuple(d.get("C_grid", DEFAULT_C_GRID)),
                sigma_grid=None if sigma_grid is None else tuple(sigma_grid),
                sigma_multiples=tuple(
                    d.get("sigma_multiples", DEFAULT_SIGMA_MULTIPLES)
                ),
                inner_k=int(d.get("inner_k", 5)),
            )
            data = d.get("data")
            if data is not None:
                data = Path(data)
                if base_dir is not None and not data.is_absolute():
                    data = base_dir / data
            return cls(
                methods=tuple(MethodSpec.parse(m) for m in d.get("methods", ())),
                mode=d.get("mode", "simulation"),
                replications=plan.replications,
                seed=plan.seed,
                scenarios=tuple(d.get("scenarios", ())),
                sizes=tuple(tuple(int(v) for v in s) for s in d.get("sizes", ())),
                test_bags=int(d.get("test_bags", _DEFAULT_TEST_BAGS)),
                p_pos=float(d.get("p_pos", 0.15)),
                d=int(d.get("d", 10)),
                data=data,
                log_transform=tuple(d.get("log_transform", ())),
                drop_constant=bool(d.get("drop_constant", False)),
                standardize=bool(d.get("standardize", True)),
                plan=plan,
                fit=FitOptions(**fit),
            )
        except (TypeError, ValueError) as e:
            raise InputError(f"invalid benchmark configuration: {e}") from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> Self:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as e:
            raise InputError(f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise InputError(f"{path} is not valid JSON: {e}") from e
        return cls.from_dict(doc, base_dir=path.parent)

    @property
    def nondeterministic_methods(self) -> List[str]:
        """Methods whose results depend on timing"""
        if self.fit.miqp_time_limit is None:
            return []
        return [str(m) for m in self.methods if m.uses_miqp]

    def n_rows(self) -> int:
        cells = 1
        if self.mode == "simulation":
            cells = len(self.scenarios) * len(self.sizes)
        return cells * len(self.methods) * self.replications


################
# CELL RESULTS #
################


@dataclass(frozen=True)
class CellScore:
    auroc: float
    C: float
    sigma: float
    gap: Optional[float]


def _gap(result: GridSearchResult) -> Optional[float]:
    model = result.model
    solution = getattr(model, "solution", None)
    if solution is None:
        solution = getattr(getattr(model, "inner", None), "solution", None)
    if not solution:
        return None
    return float(solution.get("gap", float("nan")))


def _cell_seed(seed: Optional[int], *key: int) -> int:
    """A seed for one cell, independent of which other cells run"""
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _preprocess(
    cfg: BenchmarkConfig, train: Dataset, test: Dataset
) -> Tuple[Dataset, Dataset]:
    if not cfg.standardize:
        return train, test
    params = fit_scaler(train, drop_constant=cfg.drop_constant)
    return apply_scaler(train, params), apply_scaler(test, params)


def _row(
    cell: Dict[str, Any],
    method: MethodSpec,
    replicate: int,
    wall_time: float,
    result: FitResult[CellScore],
) -> Dict[str, Any]:
    row = dict(cell, method=str(method), replicate=replicate, wall_time_s=wall_time)
    if isinstance(result, MethodFailure):
        return dict(
            row,
            auroc=np.nan,
            chosen_C=np.nan,
            chosen_sigma=np.nan,
            gap=np.nan,
            error=result.detail,
        )
    return dict(
        row,
        auroc=result.auroc,
        chosen_C=result.C,
        chosen_sigma=result.sigma,
        gap=np.nan if result.gap is None else result.gap,
        error="",
    )


def _guard(method: MethodSpec, fn) -> FitResult[CellScore]:
    try:
        return fn()
    except Exception as e:
        logger.warning("%s failed: %s: %s", method, type(e).__name__, e)
        return MethodFailure(method=str(method), detail=f"{type(e).__name__}: {e}")


def _simulation_rows(
    cfg: BenchmarkConfig, threads: Optional[int]
) -> Iterator[Dict[str, Any]]:
    for s_idx, scenario in enumerate(cfg.scenarios):
        for z_idx, (n_bags, n_inst, n_samp) in enumerate(cfg.sizes):
            cell = dict(scenario=scenario, n_bags=n_bags, n_inst=n_inst, n_samp=n_samp)
            for rep in range(cfg.replications):
                seed = _cell_seed(cfg.seed, s_idx, z_idx, rep)
                train_seed, test_seed, fit_seed = (
                    _cell_seed(seed, k) for k in range(3)
                )
                train = generate(
                    ScenarioConfig(
                        scenario, n_bags, n_inst, n_samp, cfg.p_pos, train_seed, cfg.d
                    )
                ).dataset
                test = generate(
                    ScenarioConfig(
                        scenario,
                        cfg.test_bags,
                        n_inst,
                        n_samp,
                        cfg.p_pos,
                        test_seed,
                        cfg.d,
                    )
                ).dataset
                for method in cfg.methods:
                    start = time.perf_counter()
                    result = _guard(
                        method,
                        lambda: _score_split(
                            cfg, method, train, test, fit_seed, threads
                        ),
                    )
                    yield _row(cell, method, rep, time.perf_counter() - start, result)


def _score_split(
    cfg: BenchmarkConfig,
    method: MethodSpec,
    train: Dataset,
    test: Dataset,
    seed: int,
    threads: Optional[int],
) -> CellScore:
    train, test = _preprocess(cfg, train, test)
    plan = dataclasses.replace(cfg.plan, seed=seed)
    options = dataclasses.replace(cfg.fit, seed=seed)
    tuned = tune_method(method, train, plan, options, threads)
    return CellScore(
        bag_auroc(tuned.model, test, threads), tuned.C, tuned.sigma, _gap(tuned)
    )


def _pooled_cv(
    cfg: BenchmarkConfig,
    method: MethodSpec,
    ds: Dataset,
    seed: int,
    threads: Optional[int],
) -> CellScore:
    scores = np.full(ds.n_bags, np.nan)
    chosen: Counter = Counter()
    gaps: List[float] = []
    for f_idx, (train_idx, test_idx) in enumerate(bag_folds(ds, cfg.plan.k, seed)):
        train, test = _preprocess(cfg, ds.subset(train_idx), ds.subset(test_idx))
        fold_seed = _cell_seed(seed, f_idx)
        plan = dataclasses.replace(cfg.plan, seed=fold_seed)
        options = dataclasses.replace(cfg.fit, seed=fold_seed)
        tuned = tune_method(method, train, plan, options, threads)
        _, scores[test_idx] = predict_bags(tuned.model, test, threads=threads)
        chosen[(tuned.C, tuned.sigma)] += 1
        gap = _gap(tuned)
        if gap is not None:
            gaps.append(gap)
    C, sigma = chosen.most_common(1)[0][0]
    return CellScore(
        auroc(scores, ds.bag_labels), C, sigma, max(gaps) if gaps else None
    )


def load_cv_dataset(cfg: BenchmarkConfig) -> Dataset:
    assert cfg.data is not None
    ds = load_dataset(cfg.data)
    if cfg.log_transform:
        ds = log_transform(ds, cfg.log_transform)
    ds.require_both_classes()
    return ds


def _cv_rows(cfg: BenchmarkConfig, threads: Optional[int]) -> Iterator[Dict[str, Any]]:
    ds = load_cv_dataset(cfg)
    assert cfg.data is not None
    cell = dict(
        scenario=cfg.data.stem,
        n_bags=ds.n_bags,
        n_inst=max(len(b.instance_indices) for b in ds.bags),
        n_samp=max(inst.n_samples for inst in ds.instances),
    )
    for rep in range(cfg.replications):
        seed = _cell_seed(cfg.seed, rep)
        for method in cfg.methods:
            start = time.perf_counter()
            result = _guard(method, lambda: _pooled_cv(cfg, method, ds, seed, threads))
            yield _row(cell, method, rep, time.perf_counter() - start, result)


##########
# REPORT #
##########


@dataclass(frozen=True, eq=False)
class BenchmarkReport:
    rows: pd.DataFrame
    """One row per cell, in `REPORT_COLUMNS` order."""
    summary: pd.DataFrame
    """Mean and SD of AUROC and the average rank per data cell and method."""


def _append(handle: IO[str], row: Dict[str, Any], header: bool) -> None:
    frame = pd.DataFrame([row], columns=list(REPORT_COLUMNS))
    frame.to_csv(handle, header=header, index=False, float_format="%.10g")
    handle.flush()


def run_benchmark(
    cfg: BenchmarkConfig,
    out: Union[str, Path],
    threads: Optional[int] = None,
) -> BenchmarkReport:
    """Run every cell of `cfg`, writing rows to the CSV `out` as they finish

    Method failures become rows with an empty AUROC and an `error` message.
    """
    out = Path(out)
    rows: List[Dict[str, Any]] = []
    generator = (
        _simulation_rows(cfg, threads)
        if cfg.mode == "simulation"
        else _cv_rows(cfg, threads)
    )
    logger.info("benchmark: %d rows to compute", cfg.n_rows())
    with out.open("w", newline="") as handle:
        for row in generator:
            _append(handle, row, header=not rows)
            rows.append(row)
            logger.info(
                "%s %s rep %d: auroc %s",
                row["scenario"],
                row["method"],
                row["replicate"],
                row["auroc"],
            )
        if not rows:
            handle.write(",".join(REPORT_COLUMNS) + "\n")
    frame = pd.DataFrame(rows, columns=list(REPORT_COLUMNS))
    return BenchmarkReport(frame, summarize_report(frame, cfg.nondeterministic_methods))


def summarize_report(
    rows: pd.DataFrame, nondeterministic: Optional[List[str]] = None
) -> pd.DataFrame:
    """Mean and SD of AUROC and average rank per data cell and method

    Within each data cell and replicate, methods are ranked by AUROC, 1 being the
    best; ties share the average rank and failed methods rank last.
    """
    keys = list(CELL_KEYS)
    ranked = rows.copy()
    ranked["rank"] = ranked.groupby(keys + ["replicate"])["auroc"].rank(
        ascending=False, method="average", na_option="bottom"
    )
    grouped = ranked.groupby(keys + ["method"], sort=False)
    summary = grouped.agg(
        auroc_mean=("auroc", "mean"),
        auroc_sd=("auroc", "std"),
        mean_rank=("rank", "mean"),
        n_ok=("auroc", "count"),
        n_failed=("error", lambda e: int((e.fillna("").astype(str) != "").sum())),
    ).reset_index()
    summary["nondeterministic"] = summary["method"].isin(nondeterministic or [])
    return summary


def format_summary(
    report: BenchmarkReport, cfg: Optional[BenchmarkConfig] = None
) -> str:
    """The summary as a fixed-width table, headed by the tuning grid"""
    lines = []
    if cfg is not None:
        sigmas = (
            f"sigma grid {list(cfg.plan.sigma_grid)}"
            if cfg.plan.sigma_grid is not None
            else f"sigma^2 = {list(cfg.plan.sigma_multiples)} x median heuristic"
        )
        lines.append(f"C grid {list(cfg.plan.C_grid)}; {sigmas}")
    lines.append(
        report.summary.to_string(index=False, float_format=lambda v: f"{v:.4f}")
    )
    if report.summary["nondeterministic"].any():
        lines.append("nondeterministic: time-limited MIQP results depend on timing")
    return "\n".join(lines)
