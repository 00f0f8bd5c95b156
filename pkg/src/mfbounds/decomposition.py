"""Cutting-plane solution of the grid LP through its Lagrangian in lambda.

For fixed multipliers the LP collapses to a backward sweep of concave
envelopes, ``V(lam) = sup_Q E_Q[sum f_k + lam . g_k]`` over grid martingale
measures, and the envelope sweep also yields the maximising measure ``Q``.
``V`` is convex and piecewise linear, so Kelley's method over the small
lambda vector converges finitely.  On exit both a primal point of the full LP
(lambda, phi, h) and a full dual vector (the master's mixture of measures,
with concavity multipliers recovered from call transforms) are assembled, so
the ordinary certificate applies unchanged.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .envelope import ColumnEnvelope, call_transform, column_envelope, spread
from .errors import WellFormednessError
from .lp import CONCAVITY, HDEF, RECURSION, TERMINAL, SparseLP, shifted_cells, start_weights
from .payoffs import constraint_vector

log = logging.getLogger(__name__)


@dataclass
class GridArrays:
    """Signed objectives and constraint functions sampled on the cells."""

    y: np.ndarray
    n: int
    d: int
    f: np.ndarray  # (n, M)
    g: list  # g[k-1] has shape (p_k, M)
    gamma: np.ndarray  # (M,)

    @property
    def m(self) -> int:
        return self.y.size

    @property
    def slabs(self) -> int:
        return self.m**self.d

    @property
    def p(self) -> int:
        return sum(gk.shape[0] for gk in self.g)

    @classmethod
    def from_spec(cls, spec, mesh) -> GridArrays:
        grid = mesh.grid(spec.d)
        M = grid[0].size
        f = np.stack(
            [np.asarray(obj(grid), dtype=float) * np.ones(M) for obj in spec.signed_objectives()]
        )
        g = [constraint_vector(b, grid) for b in spec.constraints]
        return cls(mesh.points.copy(), spec.n, spec.d, f, g, start_weights(spec, mesh))

    def split(self, lam: np.ndarray) -> list[np.ndarray]:
        cuts = np.cumsum([0] + [gk.shape[0] for gk in self.g])
        return [lam[cuts[k] : cuts[k + 1]] for k in range(self.n)]

    def h(self, lam: np.ndarray) -> np.ndarray:
        out = self.f.copy()
        for k, lk in enumerate(self.split(lam)):
            if lk.size:
                out[k] += lk @ self.g[k]
        return out


@dataclass
class EnvelopeSweep:
    value: float
    phi: np.ndarray  # (n, M)
    h: np.ndarray  # (n, M)
    envelopes: list  # ColumnEnvelope per stage


def sweep(arr: GridArrays, lam: np.ndarray) -> EnvelopeSweep:
    """Backward envelope recursion for fixed multipliers."""
    n, m, S = arr.n, arr.m, arr.slabs
    shift = shifted_cells(m, arr.d)
    h = arr.h(lam)
    phi = np.empty_like(h)
    envs: list[ColumnEnvelope] = [None] * n  # type: ignore[list-item]
    nxt = None
    for k in range(n - 1, -1, -1):
        psi = h[k] if nxt is None else h[k] + nxt[shift]
        env = column_envelope(arr.y, psi.reshape((S, m)).T)
        envs[k] = env
        phi[k] = env.values.T.ravel()
        nxt = phi[k]
    return EnvelopeSweep(float(arr.gamma @ phi[0]), phi, h, envs)


def _next_inflow(arr: GridArrays, mu: np.ndarray) -> np.ndarray:
    """Mass entering stage k+1 from the window law ``mu`` of stage k."""
    m, S = arr.m, arr.slabs
    if arr.d == 0:
        return mu.reshape(m, 1)
    slab_mass = mu.reshape((S, m), order="F").sum(axis=1)
    inflow = np.zeros((m, S))
    inflow[np.arange(S) % m, np.arange(S)] = slab_mass
    return inflow


def forward_laws(arr: GridArrays, envs: list) -> np.ndarray:
    """Window laws ``mu^k`` (shape ``(n, M)``) of the measure attaining a sweep."""
    m, S = arr.m, arr.slabs
    mu = np.empty((arr.n, m * S))
    inflow = arr.gamma.reshape((S, m)).T
    for k in range(arr.n):
        law = spread(envs[k], inflow)
        mu[k] = law.T.ravel()
        inflow = _next_inflow(arr, mu[k])
    return mu


def concavity_multipliers(arr: GridArrays, mu: np.ndarray) -> np.ndarray:
    """Nonnegative duals of the concavity rows matching the window laws ``mu``.

    Per slab, the gap between the entering point masses and the window law is
    a combination of elementary three-point spreads; its weights are read off
    the call transform of the gap.
    """
    m, S, y = arr.m, arr.slabs, arr.y
    dy = np.diff(y)
    denom = (dy[:-1] * dy[1:])[:, None]
    out = np.empty((arr.n, (m - 2) * S))
    inflow = arr.gamma.reshape((S, m)).T
    for k in range(arr.n):
        law = mu[k].reshape((S, m)).T
        gap = inflow - law
        nu = -call_transform(y, gap)[1:-1] / denom
        out[k] = nu.T.ravel()
        inflow = _next_inflow(arr, mu[k])
    return out


@dataclass
class CuttingPlaneResult:
    lam: np.ndarray
    upper: float
    lower: float
    weights: np.ndarray
    cut_points: np.ndarray
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def kelley(
    arr: GridArrays,
    gap_tol: float = 1e-9,
    max_iter: int = 5000,
    lam_cap: float = 1e3,
    time_limit: float = math.inf,
    smoothing: float = 0.5,
) -> CuttingPlaneResult:
    """Minimise ``V(lam)`` over ``lam >= 0`` by Kelley's cutting planes.

    Each evaluation contributes the cut ``t >= E_Q[f] + lam . E_Q[g]``.  The
    master LP lives in the box ``0 <= lam <= lam_cap``; the cap is raised
    if the converged multipliers touch it.  Query points are pulled towards
    the best point found so far (``smoothing`` in ``[0, 1)``), falling back
    to the plain master point whenever a smoothed cut fails to cut it off.
    """
    p = arr.p
    query = np.zeros(p)
    A_cuts, b_cuts, points = [], [], []
    best, best_lam = math.inf, query
    lower = -math.inf
    master_lam = None
    weights = np.ones(1)
    t0 = time.monotonic()
    hist = []
    it = 0
    for it in range(1, max_iter + 1):
        sw = sweep(arr, query)
        mu = forward_laws(arr, sw.envelopes)
        ef = float(np.sum(arr.f * mu))
        eg = np.concatenate([gk @ mu[k] for k, gk in enumerate(arr.g)]) if p else np.zeros(0)
        if sw.value < best:
            best, best_lam = sw.value, query
        A_cuts.append(eg)
        b_cuts.append(ef)
        points.append(query)
        if p == 0:
            return CuttingPlaneResult(query, best, ef, np.ones(1), np.array(points), it, True, hist)
        # a smoothed cut that leaves the old master point feasible is a mispricing
        mispriced = master_lam is not None and ef + eg @ master_lam <= lower + 1e-12 * max(
            1.0, abs(lower)
        )

        # master: min t  s.t.  t - eg_j . lam >= ef_j,  0 <= lam <= cap
        G = np.array(A_cuts)
        c = np.concatenate([[1.0], np.zeros(p)])
        A_ub = np.hstack([-np.ones((len(b_cuts), 1)), G])
        bounds = [(None, None)] + [(0.0, lam_cap)] * p
        res = linprog(c, A_ub=A_ub, b_ub=-np.array(b_cuts), bounds=bounds, method="highs")
        if res.status != 0:
            raise WellFormednessError(f"cutting-plane master failed: {res.message}")
        lower = float(res.fun)
        weights = -np.asarray(res.ineqlin.marginals)
        master_lam = np.clip(res.x[1:], 0.0, None)
        gap = best - lower
        hist.append((it, best, lower))
        log.debug("cut %d: upper %.12g lower %.12g", it, best, lower)
        if gap <= gap_tol * max(1.0, abs(best)):
            if np.any(best_lam >= lam_cap * (1 - 1e-9)):
                lam_cap *= 10.0
                continue
            return CuttingPlaneResult(best_lam, best, lower, weights, np.array(points), it, True, hist)
        if time.monotonic() - t0 > time_limit:
            break
        if mispriced or smoothing <= 0:
            query = master_lam
        else:
            query = smoothing * best_lam + (1.0 - smoothing) * master_lam
    return CuttingPlaneResult(best_lam, best, lower, weights, np.array(points), it, False, hist)


def solve_by_cutting_planes(lp: SparseLP, spec, mesh, gap_tol=1e-9, max_iter=5000, time_limit=math.inf):
    """Solve ``lp`` (built from ``spec`` on ``mesh``) and return ``(x, y, result)``.

    ``x`` and ``y`` are full primal and row-dual vectors of ``lp``.
    """
    arr = GridArrays.from_spec(spec, mesh)
    res = kelley(arr, gap_tol=gap_tol, max_iter=max_iter, time_limit=time_limit)
    dirn = lp.directory
    M = dirn.cells

    sw = sweep(arr, res.lam)
    x = np.zeros(lp.num_vars)
    x[: dirn.p] = res.lam
    for k in range(1, arr.n + 1):
        x[dirn.phi_offset(k) : dirn.phi_offset(k) + M] = sw.phi[k - 1]
        x[dirn.h_offset(k) : dirn.h_offset(k) + M] = sw.h[k - 1]

    # mixture of the measures behind the active cuts
    mu = np.zeros((arr.n, M))
    active = np.flatnonzero(res.weights > 1e-14)
    for j in active:
        mu += res.weights[j] * forward_laws(arr, sweep(arr, res.cut_points[j]).envelopes)
    mu /= max(res.weights[active].sum(), 1e-300)
    nu = concavity_multipliers(arr, mu)

    y = np.zeros(lp.num_rows)
    for k in range(1, arr.n + 1):
        g = lp.group(HDEF, k)
        y[g.start : g.stop] = mu[k - 1]
        kind = TERMINAL if k == arr.n else RECURSION
        g = lp.group(kind, k)
        y[g.start : g.stop] = mu[k - 1]
        g = lp.group(CONCAVITY, k)
        y[g.start : g.stop] = nu[k - 1]
    return x, y, res
