from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from mismm.benchmark import (
    REPORT_COLUMNS,
    BenchmarkConfig,
    format_summary,
    run_benchmark,
    summarize_report,
)
from mismm.data import save_dataset
from mismm.errors import InputError

SIMULATION = {
    "mode": "simulation",
    "methods": ["mismm-heuristic", "si-smm"],
    "replications": 2,
    "seed": 11,
    "scenarios": ["mean_diff"],
    "sizes": [[8, 2, 5]],
    "test_bags": 12,
    "p_pos": 0.5,
    "d": 5,
    "C_grid": [1.0],
    "sigma_grid": [2.0],
}


def rows(*cells) -> pd.DataFrame:
    """Report rows of one data cell from (method, replicate, auroc) triples"""
    records = [
        dict(
            scenario="s",
            n_bags=10,
            n_inst=2,
            n_samp=5,
            method=m,
            replicate=r,
            auroc=a,
            error="" if a == a else "SolverError: boom",
        )
        for m, r, a in cells
    ]
    return pd.DataFrame(records)


def test_unknown_configuration_keys_are_rejected() -> None:
    with pytest.raises(InputError, match="unknown configuration key"):
        BenchmarkConfig.from_dict(dict(SIMULATION, repetitions=3))


def test_unknown_fit_options_are_rejected() -> None:
    with pytest.raises(InputError, match="unknown fit option"):
        BenchmarkConfig.from_dict(dict(SIMULATION, fit={"restarts": 3}))


@pytest.mark.parametrize(
    "override",
    [
        {"scenarios": ["no_such_scenario"]},
        {"methods": []},
        {"mode": "bootstrap"},
        {"sizes": [[8, 0, 5]]},
        {"d": 3},
        {"p_pos": 1.5},
        {"replications": 0},
    ],
)
def test_invalid_configurations_are_input_errors(override) -> None:
    with pytest.raises(InputError):
        BenchmarkConfig.from_dict(dict(SIMULATION, **override))


def test_cv_data_path_resolves_against_the_configuration_file(tmp_path: Path) -> None:
    path = tmp_path / "bench.json"
    path.write_text('{"mode": "cv", "methods": ["si-smm"], "data": "d.csv"}')
    assert BenchmarkConfig.load(path).data == tmp_path / "d.csv"


def test_row_count_is_cells_times_methods_times_replications() -> None:
    cfg = BenchmarkConfig.from_dict(
        dict(SIMULATION, scenarios=["mean_diff", "cov_diff"], sizes=[[8, 2, 5]] * 3)
    )
    assert cfg.n_rows() == 2 * 3 * 2 * 2


def test_only_time_limited_miqp_is_nondeterministic() -> None:
    cfg = BenchmarkConfig.from_dict(
        dict(SIMULATION, methods=["mismm-miqp", "mismm-heuristic"])
    )
    assert cfg.nondeterministic_methods == ["mismm-miqp"]
    cfg = BenchmarkConfig.from_dict(
        dict(SIMULATION, methods=["mismm-miqp"], fit={"miqp_time_limit": None})
    )
    assert cfg.nondeterministic_methods == []


def test_ranks_put_the_best_auroc_first() -> None:
    summary = summarize_report(rows(("a", 0, 0.9), ("b", 0, 0.7), ("c", 0, 0.8)))
    ranks = dict(zip(summary["method"], summary["mean_rank"]))
    assert ranks == {"a": 1.0, "b": 3.0, "c": 2.0}


def test_tied_methods_share_the_average_rank() -> None:
    summary = summarize_report(rows(("a", 0, 0.8), ("b", 0, 0.8), ("c", 0, 0.5)))
    ranks = dict(zip(summary["method"], summary["mean_rank"]))
    assert ranks == {"a": 1.5, "b": 1.5, "c": 3.0}


def test_failed_methods_rank_last_and_are_counted() -> None:
    summary = summarize_report(
        rows(("a", 0, 0.6), ("b", 0, np.nan), ("a", 1, 0.8), ("b", 1, 0.9))
    )
    b = summary.set_index("method").loc["b"]
    assert b["mean_rank"] == pytest.approx(1.5)
    assert b["n_ok"] == 1
    assert b["n_failed"] == 1
    a = summary.set_index("method").loc["a"]
    assert a["auroc_mean"] == pytest.approx(0.7)
    assert a["auroc_sd"] == pytest.approx(np.std([0.6, 0.8], ddof=1))


def test_simulation_run_writes_every_row(tmp_path: Path) -> None:
    cfg = BenchmarkConfig.from_dict(SIMULATION)
    out = tmp_path / "report.csv"
    report = run_benchmark(cfg, out)
    written = pd.read_csv(out, keep_default_na=False, na_values=[""])
    assert list(written.columns) == list(REPORT_COLUMNS)
    assert len(written) == cfg.n_rows() == 4
    for _, row in written.iterrows():
        assert np.isfinite(row["auroc"]) or row["error"]
    assert len(report.summary) == 2
    assert "C grid [1.0]" in format_summary(report, cfg)


def test_simulation_runs_repeat_with_the_same_seed(tmp_path: Path) -> None:
    cfg = BenchmarkConfig.from_dict(dict(SIMULATION, methods=["mismm-heuristic"]))
    first = run_benchmark(cfg, tmp_path / "a.csv").rows
    second = run_benchmark(cfg, tmp_path / "b.csv").rows
    np.testing.assert_array_equal(first["auroc"], second["auroc"])


def test_cv_run_pools_the_test_folds(tmp_path: Path, make_dataset) -> None:
    save_dataset(make_dataset(n_pos=5, n_neg=5, shift=4.0), tmp_path / "bags.csv")
    cfg = BenchmarkConfig.from_dict(
        {
            "mode": "cv",
            "methods": ["mismm-heuristic"],
            "data": str(tmp_path / "bags.csv"),
            "replications": 2,
            "k": 5,
            "seed": 0,
            "C_grid": [1.0],
            "sigma_grid": [2.0],
        }
    )
    report = run_benchmark(cfg, tmp_path / "cv.csv")
    assert len(report.rows) == 2
    first = report.rows.iloc[0]
    assert (first["scenario"], first["n_bags"], first["n_inst"], first["n_samp"]) == (
        "bags",
        10,
        2,
        6,
    )
    assert report.rows["error"].tolist() == ["", ""]
    assert (report.rows["auroc"] >= 0.7).all()


def test_a_failing_method_becomes_a_row(tmp_path: Path, make_dataset) -> None:
    ds = make_dataset(n_pos=3, n_neg=3)
    ds = ds.map_samples(lambda X: np.c_[X, np.ones(len(X))], ("f1", "f2", "c"))
    save_dataset(ds, tmp_path / "c.csv")
    cfg = BenchmarkConfig.from_dict(
        {
            "mode": "cv",
            "methods": ["si-smm"],
            "data": str(tmp_path / "c.csv"),
            "replications": 1,
            "k": 3,
            "C_grid": [1.0],
            "sigma_grid": [1.0],
        }
    )
    report = run_benchmark(cfg, tmp_path / "fail.csv")
    assert len(report.rows) == 1
    assert np.isnan(report.rows["auroc"].iloc[0])
    assert "ConstantFeatureError" in report.rows["error"].iloc[0]
    assert report.summary["n_failed"].tolist() == [1]
