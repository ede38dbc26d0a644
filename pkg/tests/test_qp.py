from __future__ import annotations

import numpy as np
import pytest

from mismm.qp import QpError, solve_qp


def test_box_constrained_qp_reaches_the_vertex_solution() -> None:
    res = solve_qp(np.eye(2), -np.array([1.0, 2.0]), np.eye(2), np.array([0.5, 5.0]))
    np.testing.assert_allclose(res.x, [0.5, 2.0], atol=1e-9)
    assert res.objective == pytest.approx(-2.375, abs=1e-9)
    assert res.kkt_residual <= 1e-6


def test_equality_constrained_qp_splits_evenly() -> None:
    res = solve_qp(
        np.eye(2),
        np.zeros(2),
        -np.eye(2),
        np.zeros(2),
        np.ones((1, 2)),
        np.ones(1),
    )
    np.testing.assert_allclose(res.x, [0.5, 0.5], atol=1e-9)
    assert res.eq_multipliers.shape == (1,)
    assert res.ineq_multipliers.shape == (2,)


def test_active_inequality_gets_a_positive_multiplier() -> None:
    res = solve_qp(np.eye(1), -np.array([2.0]), np.eye(1), np.array([1.0]))
    assert res.x[0] == pytest.approx(1.0, abs=1e-9)
    assert res.ineq_multipliers[0] == pytest.approx(1.0, abs=1e-6)


def test_random_convex_qps_satisfy_the_kkt_tolerance() -> None:
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(2, 8))
        B = rng.normal(size=(n, n))
        res = solve_qp(
            B @ B.T,
            rng.normal(size=n),
            np.vstack([np.eye(n), -np.eye(n)]),
            np.ones(2 * n),
        )
        assert res.kkt_residual <= 1e-6
        assert np.all(np.abs(res.x) <= 1.0 + 1e-9)


def test_infeasible_qp_raises() -> None:
    with pytest.raises(QpError):
        solve_qp(
            np.eye(1),
            np.zeros(1),
            np.array([[1.0], [-1.0]]),
            np.array([-1.0, -1.0]),
        )
