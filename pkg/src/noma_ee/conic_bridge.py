"""Single seam between the pipeline and the conic optimizer.

Backed by clarabel (interior point, native exponential and PSD-triangle
cones).  Results come back status-coded, never thrown; OPTIMAL is only
reported after re-checking cone membership of the returned point against
the requested tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .conic_program import EXP_CONE, LINEAR, PSD_CONE, ConicSubproblem

OPTIMAL = "OPTIMAL"
INFEASIBLE = "INFEASIBLE"
UNBOUNDED = "UNBOUNDED"
NUMERICAL_LIMIT = "NUMERICAL_LIMIT"

_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": NUMERICAL_LIMIT,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
    "MaxIterations": NUMERICAL_LIMIT,
    "MaxTime": NUMERICAL_LIMIT,
    "NumericalError": NUMERICAL_LIMIT,
    "InsufficientProgress": NUMERICAL_LIMIT,
}


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None
    objective: float | None          # value of the maximize objective
    iterations: int
    residuals: dict = field(default_factory=dict)
    infeasibility_certified: bool | None = None

    def var(self, names: list[str], name: str) -> float:
        return float(self.x[names.index(name)])


def _cones_for(problem: ConicSubproblem):
    cones = []
    for blk in problem.blocks:
        if blk.kind == LINEAR:
            if blk.size:
                cones.append(clarabel.NonnegativeConeT(blk.size))
        elif blk.kind == PSD_CONE:
            if blk.dim == 1:
                cones.append(clarabel.NonnegativeConeT(1))
            else:
                cones.append(clarabel.PSDTriangleConeT(blk.dim))
        elif blk.kind == EXP_CONE:
            cones.append(clarabel.ExponentialConeT())
        else:  # pragma: no cover
            raise ValueError(f"unknown cone kind {blk.kind}")
    return cones


def _check_farkas(problem: ConicSubproblem, z: np.ndarray) -> bool | None:
    """For LP-only problems, verify the infeasibility certificate b'z < 0, A'z ~ 0, z >= 0."""
    if any(blk.kind != LINEAR for blk in problem.blocks):
        return None
    if z is None or not len(z):
        return None
    z = np.asarray(z)
    scale = max(1.0, float(np.linalg.norm(z)))
    if np.min(z) < -1e-7 * scale:
        return False
    Atz = problem.A.T @ z
    return bool(problem.b @ z < 0 and np.linalg.norm(Atz) <= 1e-6 * scale * max(1.0, abs(problem.b @ z)))


def solve(problem: ConicSubproblem, tol: float = 1e-7, max_iter: int = 200,
          verbose: bool = False) -> SolveResult:
    """Solve the conic subproblem to the requested accuracy.

    The ConicSubproblem is a maximization; clarabel minimizes, so the
    objective is negated on the way in and the reported objective is the
    maximize value including the constant term.
    """
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    # chordal decomposition misbehaves on the embedded Hermitian blocks
    settings.chordal_decomposition_enable = False
    # drive the backend slightly tighter than the membership recheck level
    inner = max(tol * 0.1, 1e-9)
    settings.tol_gap_abs = inner
    settings.tol_gap_rel = inner
    settings.tol_feas = inner

    P = sp.csc_matrix((problem.num_vars, problem.num_vars))
    solver = clarabel.DefaultSolver(P, -problem.c, problem.A, problem.b,
                                    _cones_for(problem), settings)
    sol = solver.solve()
    status = _STATUS_MAP.get(str(sol.status), NUMERICAL_LIMIT)

    x = np.asarray(sol.x) if sol.x is not None else None
    result = SolveResult(status=status, x=x,
                         objective=None, iterations=int(sol.iterations),
                         residuals={"primal": float(sol.r_prim), "dual": float(sol.r_dual)})
    if status == INFEASIBLE:
        result.infeasibility_certified = _check_farkas(problem, np.asarray(sol.z))
        result.x = None
        return result
    if x is None:
        return result

    result.objective = problem.objective_value(x)
    viol = problem.max_violation(x)
    result.residuals.update({k.lower(): v for k, v in viol.items()})
    if status == OPTIMAL and max(viol.values()) > tol:
        result.status = NUMERICAL_LIMIT
    return result
