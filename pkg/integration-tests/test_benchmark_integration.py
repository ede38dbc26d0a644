from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from mismm.benchmark import REPORT_COLUMNS, BenchmarkConfig, run_benchmark
from mismm.evaluate import auroc
from mismm.simgen import ScenarioConfig, generate, save_labeled


def pair_count(scores: np.ndarray, labels: np.ndarray) -> float:
    pos, neg = scores[labels == 1], scores[labels == -1]
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (greater + 0.5 * ties) / (len(pos) * len(neg))


def test_auroc_matches_pair_counting_on_random_vectors() -> None:
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(2, 201))
        labels = rng.choice([-1, 1], size=n)
        labels[:2] = [1, -1]
        scores = np.round(rng.normal(size=n), 1)
        assert auroc(scores, labels) == pytest.approx(
            pair_count(scores, labels), abs=1e-12
        )


def test_positive_bag_fraction_follows_the_instance_rate() -> None:
    cfg = ScenarioConfig("mean_diff", 2000, 3, 2, p_pos=0.15, seed=9)
    ds = generate(cfg).dataset
    fraction = len(ds.positive_bags) / ds.n_bags
    assert fraction == pytest.approx(1 - 0.85**3, abs=0.03)


def study(tmp_path: Path, scenario: str, methods) -> pd.DataFrame:
    cfg = BenchmarkConfig.from_dict(
        {
            "methods": methods,
            "replications": 10,
            "seed": 2024,
            "scenarios": [scenario],
            "sizes": [[50, 3, 50]],
            "test_bags": 500,
        }
    )
    return run_benchmark(cfg, tmp_path / f"{scenario}.csv").rows


def test_mean_difference_is_learned_by_both_smm_methods(tmp_path: Path) -> None:
    rows = study(tmp_path, "mean_diff", ["si-smm", "mismm-heuristic"])
    means = rows.groupby("method")["auroc"].mean()
    assert means["si-smm"] >= 0.6
    assert means["mismm-heuristic"] >= 0.6


def test_summary_baseline_beats_chance_on_the_mean_difference(
    tmp_path: Path,
) -> None:
    rows = study(tmp_path, "mean_diff", ["mi-svm:univ1"])
    assert rows["auroc"].mean() >= 0.6


def test_large_covariance_difference_is_learned_from_bags(tmp_path: Path) -> None:
    rows = study(tmp_path, "large_cov_diff", ["mismm-heuristic"])
    assert rows["auroc"].mean() >= 0.6
    assert (rows["auroc"] > 0.5).sum() >= 9


def test_replicated_cross_validation_completes(tmp_path: Path) -> None:
    data = tmp_path / "sim.csv"
    cfg = ScenarioConfig("mean_diff", 20, 2, 10, p_pos=0.3, seed=5, d=5)
    save_labeled(generate(cfg), data)
    bench = BenchmarkConfig.from_dict(
        {
            "mode": "cv",
            "methods": ["mismm-heuristic"],
            "data": str(data),
            "replications": 10,
            "k": 10,
            "seed": 1,
            "C_grid": [1.0, 10.0],
        }
    )
    out = tmp_path / "cv.csv"
    report = run_benchmark(bench, out)
    written = pd.read_csv(out, keep_default_na=False, na_values=[""])
    assert list(written.columns) == list(REPORT_COLUMNS)
    assert len(written) == 10
    assert (written["scenario"] == "sim").all()
    assert report.summary["n_ok"].sum() + report.summary["n_failed"].sum() == 10
