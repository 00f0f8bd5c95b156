"""LP solving and independent certification of LP solutions.

General problems go to HiGHS (primal/dual simplex, or interior point with
crossover).  Long-horizon instances, where simplex stalls on the millions
of staged rows, can use Lagrangian cutting planes over the quote
multipliers instead (see ``decomposition``).  A small dense tableau simplex
is kept in-process as a reference method for cross-checks on toy problems.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import WellFormednessError
from .lp import EQ, GE, SparseLP

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    PRIMAL_SIMPLEX = "primal_simplex"
    DUAL_SIMPLEX = "dual_simplex"
    IPM = "ipm"
    DENSE_TABLEAU = "dense_tableau"
    CUTTING_PLANE = "cutting_plane"


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    ITER_LIMIT = "iter_limit"
    NUMERICAL_TROUBLE = "numerical_trouble"


@dataclass(frozen=True)
class SolverConfig:
    method: Method = Method.DUAL_SIMPLEX
    feas_tol: float = 1e-9
    opt_tol: float = 1e-9
    max_iter: int = 50_000_000
    scaling: bool = True
    time_limit: float = math.inf
    log: Callable[[str], None] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.feas_tol <= 0 or self.opt_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter <= 0:
            raise ValueError("max_iter must be positive")

    @classmethod
    def from_dict(cls, doc: dict | None) -> SolverConfig:
        doc = dict(doc or {})
        return cls(**{k: v for k, v in doc.items() if k in cls.__dataclass_fields__})


@dataclass
class LPSolution:
    status: Status
    objective: float
    primal: np.ndarray
    dual_rows: np.ndarray
    reduced_costs: np.ndarray
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def solve(lp: SparseLP, cfg: SolverConfig | None = None) -> LPSolution:
    """Solve ``lp``; failures are reported through ``status``, not raised."""
    cfg = cfg or SolverConfig()
    lp.check()
    if cfg.method is Method.DENSE_TABLEAU:
        return _solve_dense(lp, cfg)
    if cfg.method is Method.CUTTING_PLANE:
        return _solve_cutting_plane(lp, cfg)
    return _solve_highs(lp, cfg)


# ----------------------------------------------------------------------------
# HiGHS backend


def _solve_highs(lp: SparseLP, cfg: SolverConfig, presolve: bool = True) -> LPSolution:
    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", cfg.log is not None)
    h.setOptionValue("log_to_console", False)
    h.setOptionValue("threads", 1)
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("presolve", "on" if presolve else "off")
    h.setOptionValue("primal_feasibility_tolerance", cfg.feas_tol)
    h.setOptionValue("dual_feasibility_tolerance", cfg.opt_tol)
    h.setOptionValue("simplex_iteration_limit", min(cfg.max_iter, 2**31 - 1))
    if math.isfinite(cfg.time_limit):
        h.setOptionValue("time_limit", float(cfg.time_limit))
    if not cfg.scaling:
        h.setOptionValue("simplex_scale_strategy", 0)
    if cfg.method is Method.IPM:
        h.setOptionValue("solver", "ipm")
        h.setOptionValue("run_crossover", "on")
        h.setOptionValue("ipm_optimality_tolerance", cfg.opt_tol)
    else:
        h.setOptionValue("solver", "simplex")
        h.setOptionValue("simplex_strategy", 4 if cfg.method is Method.PRIMAL_SIMPLEX else 1)
    if cfg.log is not None:
        sink = cfg.log
        h.cbLogging.subscribe(lambda e: sink(e.message.rstrip()))

    a = lp.matrix("csc")
    model = highspy.HighsLp()
    model.num_col_ = lp.num_vars
    model.num_row_ = lp.num_rows
    model.col_cost_ = lp.objective
    model.col_lower_ = lp.lower
    model.col_upper_ = lp.upper
    model.row_lower_ = lp.rhs
    model.row_upper_ = np.where(lp.senses == EQ, lp.rhs, np.inf)
    model.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    model.a_matrix_.start_ = a.indptr
    model.a_matrix_.index_ = a.indices
    model.a_matrix_.value_ = a.data
    h.passModel(model)
    h.run()

    ms = h.getModelStatus()
    MS = highspy.HighsModelStatus
    if ms == MS.kUnboundedOrInfeasible and presolve:
        return _solve_highs(lp, cfg, presolve=False)
    status = {
        MS.kOptimal: Status.OPTIMAL,
        MS.kInfeasible: Status.PRIMAL_INFEASIBLE,
        MS.kUnbounded: Status.DUAL_INFEASIBLE,
        MS.kIterationLimit: Status.ITER_LIMIT,
        MS.kTimeLimit: Status.ITER_LIMIT,
    }.get(ms, Status.NUMERICAL_TROUBLE)
    info = h.getInfo()
    iters = int(info.simplex_iteration_count) + int(info.ipm_iteration_count)
    if status is not Status.OPTIMAL:
        nan_x, nan_y = np.full(lp.num_vars, np.nan), np.full(lp.num_rows, np.nan)
        return LPSolution(status, math.nan, nan_x, nan_y, nan_x.copy(), iters)
    sol = h.getSolution()
    x = np.asarray(sol.col_value, dtype=float)
    y = np.asarray(sol.row_dual, dtype=float)
    dcost = np.asarray(sol.col_dual, dtype=float)
    return LPSolution(status, float(lp.objective @ x), x, y, dcost, iters)


# ----------------------------------------------------------------------------
# Lagrangian cutting planes (large structured instances)


def _solve_cutting_plane(lp: SparseLP, cfg: SolverConfig) -> LPSolution:
    from .decomposition import solve_by_cutting_planes

    if lp.source is None:
        raise WellFormednessError("the cutting-plane method needs an LP from build_dual_lp")
    spec, mesh = lp.source
    x, y, res = solve_by_cutting_planes(
        lp,
        spec,
        mesh,
        gap_tol=cfg.opt_tol,
        max_iter=min(cfg.max_iter, 100_000),
        time_limit=cfg.time_limit,
    )
    status = Status.OPTIMAL if res.converged else Status.ITER_LIMIT
    dcost = lp.objective - lp.matrix("csr").T @ y
    return LPSolution(status, float(lp.objective @ x), x, y, dcost, res.iterations)


# ----------------------------------------------------------------------------
# dense tableau reference method


def _solve_dense(lp: SparseLP, cfg: SolverConfig) -> LPSolution:
    if np.any(np.isfinite(lp.upper)):
        raise WellFormednessError("dense tableau method supports lower bounds only")
    A = lp.matrix("csr").toarray()
    nr, nv = A.shape
    free = np.isneginf(lp.lower)
    shift = np.where(free, 0.0, lp.lower)

    # x = shift + zp - zm (zm only for free columns), rows get a surplus if '>'
    free_idx = np.flatnonzero(free)
    ge_idx = np.flatnonzero(lp.senses == GE)
    std = np.hstack([A, -A[:, free_idx], np.zeros((nr, ge_idx.size))])
    std[ge_idx, nv + free_idx.size + np.arange(ge_idx.size)] = -1.0
    b = lp.rhs - A @ shift
    cost = np.concatenate([lp.objective, -lp.objective[free_idx], np.zeros(ge_idx.size)])

    # equilibrate rows to unit max magnitude; columns stay unscaled so the
    # feasibility tolerance holds in the caller's units
    rs = np.abs(std).max(axis=1)
    rs = np.where(rs > 0, 1.0 / np.where(rs > 0, rs, 1.0), 1.0)
    S = std * rs[:, None]
    cs = np.ones(S.shape[1])

    status, z, basis, rows_kept, iters = dense_simplex(
        S, b * rs, cost * cs, cfg.max_iter, cfg.feas_tol
    )
    if status is not Status.OPTIMAL:
        nan_x, nan_y = np.full(nv, np.nan), np.full(nr, np.nan)
        return LPSolution(status, math.nan, nan_x, nan_y, nan_x.copy(), iters)
    z = z * cs
    x = shift + z[:nv]
    x[free_idx] -= z[nv : nv + free_idx.size]
    y = np.zeros(nr)
    B = S[np.ix_(rows_kept, basis)]
    y[rows_kept] = np.linalg.solve(B.T, (cost * cs)[basis]) * rs[rows_kept]
    dcost = lp.objective - A.T @ y
    return LPSolution(status, float(lp.objective @ x), x, y, dcost, iters)


def dense_simplex(A, b, c, max_iter=100_000, tol=1e-9, stall_limit=1000):
    """Two-phase revised simplex for ``min c.z`` s.t. ``A z = b``, ``z >= 0``.

    The basis is refactorized from scratch every iteration, so rounding
    does not accumulate.  Dantzig pricing, switching to Bland's rule after
    ``stall_limit`` iterations without objective progress.  Returns
    ``(status, z, basis, rows_kept, iterations)``; redundant rows found in
    phase one are dropped from ``rows_kept``.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.asarray(c, dtype=float)
    nr, nc = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    bscale = max(1.0, float(np.abs(b).max(initial=0.0)))

    # phase one: artificials are columns nc..nc+nr-1
    A1 = np.hstack([A, np.eye(nr)])
    c1 = np.concatenate([np.zeros(nc), np.ones(nr)])
    basis = np.arange(nc, nc + nr)
    status, basis, iters = _revised_loop(A1, b, c1, basis, max_iter, tol, stall_limit, 0)
    if status is not Status.OPTIMAL:
        return status, None, None, None, iters
    try:
        xB = _basic_solution(A1[:, basis], b)
    except np.linalg.LinAlgError:
        return Status.NUMERICAL_TROUBLE, None, None, None, iters
    art = basis >= nc
    if xB[art].sum() > tol * bscale * max(1, nr):
        return Status.PRIMAL_INFEASIBLE, None, None, None, iters

    # drive remaining artificials out of the basis, dropping redundant rows
    keep = np.ones(nr, dtype=bool)
    for r in np.flatnonzero(art):
        B = A1[:, basis]
        row = np.linalg.solve(B.T, np.eye(nr)[r]) @ A
        row[basis[basis < nc]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > 1e-7:
            basis[r] = j
        else:
            keep[r] = False
    rows = np.flatnonzero(keep)
    A2, b2, basis = A[rows], b[rows], basis[rows]
    if np.any(basis >= nc):
        return Status.NUMERICAL_TROUBLE, None, None, None, iters
    status, basis, iters = _revised_loop(A2, b2, c, basis, max_iter, tol, stall_limit, iters)
    if status is not Status.OPTIMAL:
        return status, None, None, None, iters
    xB = _basic_solution(A2[:, basis], b2)
    if xB.min(initial=0.0) < -FEAS_SLACK * bscale:
        return Status.NUMERICAL_TROUBLE, None, None, None, iters
    z = np.zeros(nc)
    z[basis] = np.maximum(xB, 0.0)
    return Status.OPTIMAL, z, basis, rows, iters


#: largest negative basic value accepted at the end, relative to |b|
FEAS_SLACK = 1e-7

def _basic_solution(B, b):
    return np.linalg.solve(B, b)


def _revised_loop(A, b, c, basis, max_iter, tol, stall_limit, iters):
    basis = np.array(basis)
    nr = len(basis)
    cscale = max(1.0, float(np.abs(c).max(initial=0.0)))
    last_obj, stall = math.inf, 0
    while True:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            try:
                lu = scipy.linalg.lu_factor(A[:, basis])
            except (scipy.linalg.LinAlgWarning, np.linalg.LinAlgError):
                return Status.NUMERICAL_TROUBLE, basis, iters
        xB = scipy.linalg.lu_solve(lu, b)
        yv = scipy.linalg.lu_solve(lu, c[basis], trans=1)
        red = c - A.T @ yv
        red[basis] = 0.0
        obj = float(c[basis] @ xB)
        if obj < last_obj - tol * cscale:
            last_obj, stall = obj, 0
        else:
            stall += 1
        if stall >= stall_limit:
            cand = np.flatnonzero(red < -tol * cscale)
            j = int(cand[0]) if cand.size else -1
        else:
            j = int(np.argmin(red))
            j = j if red[j] < -tol * cscale else -1
        if j < 0:
            return Status.OPTIMAL, basis, iters
        if iters >= max_iter:
            return Status.ITER_LIMIT, basis, iters
        u = scipy.linalg.lu_solve(lu, A[:, j])
        rows = np.flatnonzero(u > tol)
        if not rows.size:
            return Status.DUAL_INFEASIBLE, basis, iters
        ratios = np.maximum(xB[rows], 0.0) / u[rows]
        best = float(ratios.min())
        ok = rows[ratios <= best + 1e-12 * max(1.0, best)]
        if stall >= stall_limit:
            r = int(min(ok, key=lambda i: basis[i]))
        else:
            # among tied rows the largest pivot keeps the basis well conditioned
            r = int(ok[np.argmax(u[ok])])
        basis[r] = j
        iters += 1


# ----------------------------------------------------------------------------
# certification


@dataclass
class CertificateReport:
    primal_residual: float
    dual_sign_violation: float
    reduced_cost_violation: float
    complementarity: float
    primal_objective: float
    dual_objective: float
    gap: float
    tol: float
    passed: dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "primal_residual": self.primal_residual,
            "dual_sign_violation": self.dual_sign_violation,
            "reduced_cost_violation": self.reduced_cost_violation,
            "complementarity": self.complementarity,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "gap": self.gap,
            "tol": self.tol,
            "passed": dict(self.passed),
        }


def certify(lp: SparseLP, sol: LPSolution, tol: float = 1e-8) -> CertificateReport:
    """Recompute residuals, dual signs and the duality gap from the triplets.

    Row residuals are measured relative to ``1 + |b_i|``; complementarity and
    the gap relative to ``max(1, |c.x|)``.  Reduced costs are recomputed as
    ``c - A^T y`` rather than taken from the solver.
    """
    x, y = sol.primal, sol.dual_rows
    a = lp.matrix("csr")
    act = a @ x
    r = act - lp.rhs
    eq = lp.senses == EQ
    ge = ~eq
    row_scale = 1.0 + np.abs(lp.rhs)
    viol = np.where(eq, np.abs(r), np.maximum(-r, 0.0)) / row_scale
    has_lo = np.isfinite(lp.lower)
    has_hi = np.isfinite(lp.upper)
    bound_viol = np.concatenate(
        [
            np.maximum(lp.lower[has_lo] - x[has_lo], 0.0) / (1.0 + np.abs(lp.lower[has_lo])),
            np.maximum(x[has_hi] - lp.upper[has_hi], 0.0) / (1.0 + np.abs(lp.upper[has_hi])),
        ]
    )
    primal_res = float(max(viol.max(initial=0.0), bound_viol.max(initial=0.0)))

    dual_sign = float(np.maximum(-y[ge], 0.0).max(initial=0.0))
    dcost = lp.objective - a.T @ y
    cscale = 1.0 + np.abs(lp.objective)
    free = ~has_lo & ~has_hi
    lo_only = has_lo & ~has_hi
    rc_viol = np.concatenate(
        [
            np.abs(dcost[free]) / cscale[free],
            np.maximum(-dcost[lo_only], 0.0) / cscale[lo_only],
            np.maximum(dcost[~has_lo & has_hi], 0.0) / cscale[~has_lo & has_hi],
        ]
    )
    rc_violation = float(rc_viol.max(initial=0.0))

    pobj = float(lp.objective @ x)
    scale = max(1.0, abs(pobj))
    # bound terms enter the dual objective at whichever bound is active
    at_lo = has_lo & (~has_hi | (dcost >= 0))
    at_hi = has_hi & ~at_lo
    dobj = float(
        lp.rhs @ y + lp.lower[at_lo] @ dcost[at_lo] + lp.upper[at_hi] @ dcost[at_hi]
    )
    comp = np.concatenate(
        [
            np.abs(y[ge] * r[ge]),
            np.abs(dcost[at_lo] * (x[at_lo] - lp.lower[at_lo])),
            np.abs(dcost[at_hi] * (x[at_hi] - lp.upper[at_hi])),
        ]
    )
    complementarity = float(comp.max(initial=0.0)) / scale
    gap = abs(pobj - dobj) / scale
    rep = CertificateReport(
        primal_residual=primal_res,
        dual_sign_violation=dual_sign,
        reduced_cost_violation=rc_violation,
        complementarity=complementarity,
        primal_objective=pobj,
        dual_objective=dobj,
        gap=gap,
        tol=tol,
    )
    rep.passed = {
        "primal_feasibility": primal_res <= tol,
        "dual_signs": dual_sign <= tol,
        "dual_feasibility": rc_violation <= tol,
        "complementarity": complementarity <= tol,
        "gap": gap <= tol,
    }
    return rep
