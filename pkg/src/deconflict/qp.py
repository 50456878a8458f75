"""Small dense convex QPs with a diagonal Hessian.

``min 0.5 x'diag(h)x + c'x  s.t.  A x <= b,  lb <= x <= ub``

Solved by DAQP (a dual active-set method); zero-curvature directions get a 1e-10
Tikhonov floor so the Hessian is positive definite. Every optimum is checked against
the KKT conditions, and infeasibility is only reported together with a row-multiplier
certificate ``y >= 0`` for which ``min over the box of (y'A) x`` exceeds ``y'b``.
HiGHS is the fallback when DAQP stalls or its answer does not verify.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import daqp
import highspy
import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import NumericalFailure

log = logging.getLogger(__name__)

TIKHONOV = 1e-10
FEAS_TOL = 1e-8
STAT_TOL = 1e-6
_INF = 1e30


@dataclass
class QPSubproblem:
    h: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    @property
    def n(self) -> int:
        return len(self.c)

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.h * x) + self.c @ x)


@dataclass
class QPResult:
    status: str  # "Optimal" | "Infeasible" | "Unbounded"
    x: np.ndarray | None = None
    obj: float = math.inf
    lam: np.ndarray | None = None       # row multipliers (>= 0)
    lam_bounds: np.ndarray | None = None  # > 0 at an active upper bound, < 0 at a lower one
    certificate: np.ndarray | None = None
    iterations: int = 0
    backend: str = "daqp"


def kkt_residuals(p: QPSubproblem, x, lam, lam_bounds) -> tuple[float, float]:
    """Primal infeasibility and stationarity residual (infinity norms)."""
    viol = 0.0
    if len(p.b):
        viol = max(viol, float(np.max(p.A @ x - p.b)))
    viol = max(viol, float(np.max(p.lb - x)), float(np.max(x - p.ub)))
    grad = p.h * x + p.c + lam_bounds
    if len(p.b):
        grad = grad + p.A.T @ lam
    return max(viol, 0.0), float(np.max(np.abs(grad))) if p.n else 0.0


def certificate_margin(p: QPSubproblem, y: np.ndarray) -> float:
    """``min_{lb<=x<=ub} (y'A)x - y'b``; positive means ``y`` proves infeasibility."""
    g = y @ p.A if len(p.b) else np.zeros(p.n)
    g = np.where(np.abs(g) < 1e-12, 0.0, g)
    lo = 0.0
    for gk, l, u in zip(g, p.lb, p.ub):
        if gk > 0:
            if not math.isfinite(l):
                return -math.inf
            lo += gk * l
        elif gk < 0:
            if not math.isfinite(u):
                return -math.inf
            lo += gk * u
    return lo - float(y @ p.b)


def _box_infeasible(p: QPSubproblem) -> bool:
    return bool(np.any(p.lb > p.ub + FEAS_TOL))


def qp_solve(p: QPSubproblem, warm: np.ndarray | None = None) -> QPResult:
    if _box_infeasible(p):
        # empty variable box: any row combination certifies, report the zero vector
        return QPResult("Infeasible", certificate=np.zeros(len(p.b)), backend="box")
    for prox in (0.0, 1e-6):
        res = _solve_daqp(p, warm, prox)
        if res is not None:
            return res
    res = _solve_highs(p)
    if res is not None:
        return res
    raise NumericalFailure(f"QP with {p.n} variables and {len(p.b)} rows failed in both backends "
                           f"(max |A| = {np.abs(p.A).max() if p.A.size else 0:.3g}, "
                           f"min h = {p.h.min() if p.n else 0:.3g})")


def _solve_daqp(p: QPSubproblem, warm, prox: float = 0.0) -> QPResult | None:
    """DAQP attempt; ``prox > 0`` switches on its proximal-point iterations for flat directions."""
    n, m = p.n, len(p.b)
    H = np.diag(np.where(p.h > 0, p.h, TIKHONOV))
    upper = np.concatenate([np.minimum(p.ub, _INF), p.b])
    lower = np.concatenate([np.maximum(p.lb, -_INF), np.full(m, -_INF)])
    sense = np.zeros(n + m, dtype=np.int32)
    kwargs = {"primal_tol": 1e-10, "iter_limit": 20000, "eps_prox": prox}
    try:
        if warm is not None and len(warm) == n + m:
            x, _, flag, info = daqp.solve(H, p.c.astype(float), p.A.reshape(m, n), upper, lower, sense,
                                          dual_start=np.asarray(warm, float), **kwargs)
        else:
            x, _, flag, info = daqp.solve(H, p.c.astype(float), p.A.reshape(m, n), upper, lower, sense,
                                          **kwargs)
    except Exception as exc:  # pragma: no cover - defensive
        log.debug("daqp raised %s", exc)
        return None
    if flag in (1, 2):
        x = np.asarray(x, float)
        lam_all = np.asarray(info["lam"], float)
        lam_b, lam = lam_all[:n], np.maximum(lam_all[n:], 0.0)
        viol, stat = kkt_residuals(p, x, lam, lam_b)
        if viol <= FEAS_TOL and stat <= STAT_TOL:
            return QPResult("Optimal", x, p.objective(x), lam, lam_b,
                            iterations=int(info.get("iterations", 0)))
        log.debug("daqp answer rejected: viol=%.2e stat=%.2e", viol, stat)
        return None
    if flag == -1:
        return certify_infeasible(p)
    log.debug("daqp exit flag %s", flag)
    return None


def _solve_highs(p: QPSubproblem) -> QPResult | None:
    n, m = p.n, len(p.b)
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("primal_feasibility_tolerance", 1e-10)
    h.setOptionValue("dual_feasibility_tolerance", 1e-10)
    inf = highspy.kHighsInf
    lp = highspy.HighsLp()
    lp.num_col_, lp.num_row_ = n, m
    lp.col_cost_ = p.c.astype(float)
    lp.col_lower_ = np.where(np.isfinite(p.lb), p.lb, -inf)
    lp.col_upper_ = np.where(np.isfinite(p.ub), p.ub, inf)
    lp.row_lower_ = np.full(m, -inf)
    lp.row_upper_ = p.b.astype(float)
    As = sparse.csc_matrix(p.A.reshape(m, n))
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = As.indptr
    lp.a_matrix_.index_ = As.indices
    lp.a_matrix_.value_ = As.data
    h.passModel(lp)
    if np.any(p.h > 0):
        # HiGHS wants a strictly positive diagonal, so it gets the same Tikhonov floor
        hs = highspy.HighsHessian()
        hs.dim_ = n
        hs.format_ = highspy.HessianFormat.kTriangular
        hs.start_ = np.arange(n + 1, dtype=np.int32)
        hs.index_ = np.arange(n, dtype=np.int32)
        hs.value_ = np.where(p.h > 0, p.h, TIKHONOV)
        h.passHessian(hs)
    h.run()
    st = h.getModelStatus()
    if st == highspy.HighsModelStatus.kOptimal:
        sol = h.getSolution()
        x = np.array(sol.col_value, float)
        lam = np.maximum(-np.array(sol.row_dual, float), 0.0) if m else np.zeros(0)
        lam_b = -np.array(sol.col_dual, float)
        viol, stat = kkt_residuals(p, x, lam, lam_b)
        if viol <= 10 * FEAS_TOL and stat <= STAT_TOL:
            return QPResult("Optimal", x, p.objective(x), lam, lam_b, backend="highs")
        log.debug("highs answer rejected: viol=%.2e stat=%.2e", viol, stat)
        return None
    if st == highspy.HighsModelStatus.kInfeasible:
        return certify_infeasible(p)
    if st == highspy.HighsModelStatus.kUnbounded:
        return QPResult("Unbounded", backend="highs")
    return None


def certify_infeasible(p: QPSubproblem) -> QPResult | None:
    """Phase-one LP ``min sum(s) s.t. Ax - s <= b``; its duals give the certificate."""
    n, m = p.n, len(p.b)
    if m == 0:
        return None
    A1 = np.hstack([p.A, -np.eye(m)])
    cost = np.concatenate([np.zeros(n), np.ones(m)])
    bounds = [(l if math.isfinite(l) else None, u if math.isfinite(u) else None)
              for l, u in zip(p.lb, p.ub)] + [(0, None)] * m
    res = linprog(cost, A_ub=A1, b_ub=p.b, bounds=bounds, method="highs")
    if res.status != 0 or res.fun <= FEAS_TOL:
        return None
    y = np.maximum(-np.asarray(res.ineqlin.marginals, float), 0.0)
    if certificate_margin(p, y) > 0:
        return QPResult("Infeasible", certificate=y, backend="phase1")
    log.debug("phase-one certificate failed verification (fun=%.3e)", res.fun)
    return None
