"""Convex quadratic programs

Every convex sub-problem in mismm (the fixed-selector dual, the branch-and-bound
relaxations and the enumeration oracle) is solved by `solve_qp`:

```
minimize    ½ xᵀPx + qᵀx
subject to  Gx ≤ h
            Ax = b
```

The interior-point solver of cvxopt produces a point close to the optimum; an
active-set polish then re-solves the KKT system on the constraints identified as
active, which recovers the vertex solution to machine precision whenever the
active set is identified correctly. The polished point is only accepted when it
is feasible, dual feasible and no worse than the interior-point solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from cvxopt import matrix, solvers

from mismm.errors import SolverError

logger = logging.getLogger(__name__)

_DEFAULT_TOL = 1e-6
_DEFAULT_MAX_ITERATIONS = 100
_IPM_TOL = 1e-9
_POLISH_TOL = 1e-9


class QpError(SolverError):
    """Raised when a QP cannot be solved to the requested KKT tolerance"""


@dataclass(frozen=True, eq=False)
class QpResult:
    """A solution of a convex QP together with its optimality certificate"""

    x: np.ndarray
    objective: float
    eq_multipliers: np.ndarray
    """`y`, one per row of `A`"""
    ineq_multipliers: np.ndarray
    """`z ≥ 0`, one per row of `G`"""
    kkt_residual: float
    """Largest violation of stationarity, feasibility and complementarity,
    relative to the scale of the problem data."""
    iterations: int
    polished: bool
    status: str
    """The interior-point solver's termination status."""


def _cvx(a: np.ndarray) -> matrix:
    return matrix(np.ascontiguousarray(a, dtype=float))


def _objective(P: np.ndarray, q: np.ndarray, x: np.ndarray) -> float:
    return float(0.5 * x @ P @ x + q @ x)


def _scale(q: np.ndarray, h: np.ndarray, b: np.ndarray) -> float:
    parts = [1.0] + [float(np.max(np.abs(v))) for v in (q, h, b) if v.size]
    return max(parts)


def kkt_residual(
    P: np.ndarray,
    q: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
) -> float:
    """The scaled KKT residual of the primal-dual point `(x, y, z)`"""
    stationarity = P @ x + q + A.T @ y + G.T @ z
    slack = h - G @ x
    parts = [
        np.max(np.abs(stationarity), initial=0.0),
        np.max(-slack, initial=0.0),
        np.max(np.abs(A @ x - b), initial=0.0),
        np.max(-z, initial=0.0),
        np.max(np.abs(z * slack), initial=0.0),
    ]
    return float(max(parts) / _scale(q, h, b))


def _polish(
    P: np.ndarray,
    q: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
):
    """Re-solve the equality-constrained KKT system on the active constraints

    Returns `(x, y, z)` or `None` when the polished point is rejected.
    """
    n = x.size
    slack = h - G @ x
    active = z > slack
    M = np.vstack([A, G[active]])
    k = M.shape[0]
    kkt = np.block([[P, M.T], [M, np.zeros((k, k))]])
    rhs = np.concatenate([-q, b, h[active]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    xp, multipliers = sol[:n], sol[n:]
    yp, zp_active = multipliers[: A.shape[0]], multipliers[A.shape[0] :]

    scale = _scale(q, h, b)
    tol = _POLISH_TOL * scale
    if np.max(np.abs(kkt @ sol - rhs), initial=0.0) > tol:
        return None
    if np.max(G @ xp - h, initial=0.0) > tol:
        return None
    if np.max(np.abs(A @ xp - b), initial=0.0) > tol:
        return None
    if np.min(zp_active, initial=0.0) < -tol:
        return None
    if _objective(P, q, xp) > _objective(P, q, x) + tol:
        return None
    zp = np.zeros(G.shape[0])
    zp[active] = np.maximum(zp_active, 0.0)
    return xp, yp, zp


def solve_qp(
    P: np.ndarray,
    q: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    A: Optional[np.ndarray] = None,
    b: Optional[np.ndarray] = None,
    *,
    tol: float = _DEFAULT_TOL,
    polish: bool = True,
    max_iterations: int = _DEFAULT_MAX_ITERATIONS,
) -> QpResult:
    """Solve a convex QP to a KKT residual of at most `tol`

    Args:

    - `P`, `q`: the quadratic objective; `P` must be symmetric positive semidefinite
    - `G`, `h`: inequality constraints `Gx ≤ h`
    - `A`, `b`: optional equality constraints `Ax = b`
    - `tol`: the accepted scaled KKT residual (see `kkt_residual`)
    - `polish`: whether to refine the interior-point solution on its active set
    - `max_iterations`: the interior-point iteration cap

    Raises `QpError` when the solver fails or the residual exceeds `tol`.
    """
    P = np.asarray(P, dtype=float)
    P = 0.5 * (P + P.T)
    q = np.asarray(q, dtype=float).ravel()
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    n = q.size
    if A is None:
        A, b = np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float)).reshape(-1, n)
    b = np.asarray(b, dtype=float).ravel()

    options = {
        "show_progress": False,
        "maxiters": max_iterations,
        "abstol": _IPM_TOL,
        "reltol": _IPM_TOL,
        "feastol": _IPM_TOL,
    }
    args = [_cvx(P), _cvx(q), _cvx(G), _cvx(h)]
    if A.shape[0]:
        args += [_cvx(A), _cvx(b)]
    try:
        sol = solvers.qp(*args, kktsolver="ldl", options=options)
    except (ArithmeticError, ValueError) as e:
        raise QpError(f"QP solver failed: {e}") from e
    if sol["x"] is None:
        raise QpError(f"QP solver returned no point (status {sol['status']})")

    x = np.array(sol["x"]).ravel()
    z = np.array(sol["z"]).ravel() if G.shape[0] else np.zeros(0)
    y = np.array(sol["y"]).ravel() if A.shape[0] else np.zeros(0)
    polished = False
    if polish:
        refined = _polish(P, q, G, h, A, b, x, z)
        if refined is not None:
            x, y, z = refined
            polished = True
        else:
            logger.debug("active-set polish rejected; keeping interior point")

    residual = kkt_residual(P, q, G, h, A, b, x, y, z)
    if residual > tol:
        raise QpError(
            f"QP KKT residual {residual:.3g} exceeds tolerance {tol:.3g} "
            f"(status {sol['status']}, {sol['iterations']} iterations)"
        )
    return QpResult(
        x=x,
        objective=_objective(P, q, x),
        eq_multipliers=y,
        ineq_multipliers=z,
        kkt_residual=residual,
        iterations=int(sol["iterations"]),
        polished=polished,
        status=str(sol["status"]),
    )
