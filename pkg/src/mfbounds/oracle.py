"""Independent checks of the grid LP.

* ``iterated_envelope_value``: backward sweep of concave envelopes, the
  lambda-free value of the problem, computed slab by slab with a plain
  monotone-chain hull.
* ``primal_brute_force_lp``: the measure-side LP over all lattice paths.
* ``check_measure``: martingale, quote and normalization diagnostics for a
  weighted set of paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Mesh, history_length, interpolation_weights
from .errors import Infeasible, LengthMismatch, MeshMismatch, TooManyPaths
from .lp import EQ, GE, SparseLP
from .payoffs import constraint_vector

DEFAULT_MAX_PATHS = 1_000_000


# ----------------------------------------------------------------------------
# envelopes


def concave_envelope_on_grid(values: Sequence[float], grid: Sequence[float]) -> np.ndarray:
    """Smallest concave majorant of ``values`` sampled at the ``grid`` nodes."""
    v = np.asarray(values, dtype=float)
    y = np.asarray(grid, dtype=float)
    if v.shape != y.shape or v.ndim != 1:
        raise LengthMismatch(f"{v.size} values on {y.size} grid nodes")
    if y.size and np.any(np.diff(y) <= 0):
        raise LengthMismatch("grid must be strictly increasing")
    hull: list[int] = []
    for i in range(y.size):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b when it is on or under the chord a -> i
            if (v[b] - v[a]) * (y[i] - y[a]) <= (v[i] - v[a]) * (y[b] - y[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(y, y[hull], v[hull])


@dataclass(frozen=True)
class GridFunction:
    """Values on the ``m**(d+1)`` multi-indices of one mesh (``i_0`` fastest)."""

    mesh: Mesh
    values: np.ndarray
    d: int

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        if vals.size != self.mesh.m ** (self.d + 1):
            raise LengthMismatch(f"{vals.size} values for m={self.mesh.m}, d={self.d}")
        if not np.all(np.isfinite(vals)):
            raise LengthMismatch("grid function values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def tensor(self) -> np.ndarray:
        """View indexed as ``[i_0, i_1, ..., i_d]``."""
        return self.values.reshape((self.mesh.m,) * (self.d + 1), order="F")

    @classmethod
    def from_tensor(cls, mesh: Mesh, t: np.ndarray) -> GridFunction:
        return cls(mesh, np.asarray(t).reshape(-1, order="F"), np.ndim(t) - 1)


def _diagonal_shift(t: np.ndarray) -> np.ndarray:
    """``q[i_0, ..., i_d] = t[i_0, i_0, i_1, ..., i_{d-1}]``."""
    if t.ndim == 1:
        return t
    idx = np.indices(t.shape)
    return t[(idx[0],) + tuple(idx[:-1])]


def iterated_envelope_value(h_functions, mesh: Mesh, history) -> tuple[float, list[GridFunction]]:
    """Value at the start point of the envelope recursion, and every ``phi_k``.

    ``history`` is an ``InitialHistory`` or the tuple ``(x_0, x_{-1}, ...)``.
    """
    hs = list(h_functions)
    if not hs:
        raise LengthMismatch("need at least one h function")
    d = hs[0].d
    for h in hs:
        if h.mesh != mesh:
            raise MeshMismatch("h functions live on a different mesh")
        if h.d != d:
            raise LengthMismatch("h functions disagree on d")
    values = tuple(getattr(history, "values", history))
    y = mesh.points
    phis: list[GridFunction] = [None] * len(hs)  # type: ignore[list-item]
    nxt = None
    for k in range(len(hs) - 1, -1, -1):
        psi = hs[k].tensor().copy()
        if nxt is not None:
            psi += _diagonal_shift(nxt)
        flat = psi.reshape(mesh.m, -1, order="F")
        env = np.empty_like(flat)
        for s in range(flat.shape[1]):
            env[:, s] = concave_envelope_on_grid(flat[:, s], y)
        nxt = env.reshape(psi.shape, order="F")
        phis[k] = GridFunction.from_tensor(mesh, nxt)
    start = (values[0],) + values[:d]
    w = interpolation_weights(mesh, start)
    value = math.fsum(wt * phis[0].tensor()[idx] for idx, wt in w.entries.items())
    return value, phis


def lagrangian_functions(spec, mesh: Mesh, lam=None) -> list[GridFunction]:
    """``h_k = f_k + lam_k . g_k`` on the cells, objectives signed by side."""
    d = spec.d
    grid = mesh.grid(d)
    M = mesh.m ** (d + 1)
    lam = np.zeros(spec.p) if lam is None else np.asarray(lam, dtype=float)
    out, off = [], 0
    for f, block in zip(spec.signed_objectives(), spec.constraints):
        vals = np.asarray(f(grid), dtype=float) * np.ones(M)
        if block.p:
            vals = vals + lam[off : off + block.p] @ constraint_vector(block, grid)
        off += block.p
        out.append(GridFunction(mesh, vals, d))
    return out


# ----------------------------------------------------------------------------
# discrete measures


@dataclass
class DiscreteMeasure:
    """Weighted price paths ``X_1..X_n`` after a fixed history.

    ``history`` is ``(x_0, x_{-1}, ...)``, most recent first, as in
    ``InitialHistory``; ``paths`` has one row per path.
    """

    history: tuple
    paths: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.history = tuple(float(v) for v in self.history)
        self.paths = np.atleast_2d(np.asarray(self.paths, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.paths.shape[0] != self.weights.size:
            raise LengthMismatch(f"{self.paths.shape[0]} paths but {self.weights.size} weights")

    @property
    def n(self) -> int:
        return self.paths.shape[1]

    def __len__(self):
        return self.weights.size

    def full_paths(self) -> np.ndarray:
        """Chronological coordinates ``x_{1-h}, ..., x_0, X_1, ..., X_n``."""
        past = np.broadcast_to(self.history[::-1], (len(self), len(self.history)))
        return np.hstack([past, self.paths])

    def expectation(self, values: np.ndarray) -> float:
        return float(self.weights @ values)

    def to_json(self) -> list[dict]:
        return [
            {"path": [float(v) for v in row], "weight": float(w)}
            for row, w in zip(self.full_paths(), self.weights)
        ]

    @classmethod
    def from_json(cls, doc: list[dict], n: int) -> DiscreteMeasure:
        if not doc:
            raise LengthMismatch("empty measure")
        full = np.array([item["path"] for item in doc], dtype=float)
        h = full.shape[1] - n
        if h < 1 or np.any(full[:, :h] != full[0, :h]):
            raise LengthMismatch("paths must share one history of length >= 1")
        hist = tuple(full[0, :h][::-1])
        return cls(hist, full[:, h:], [item["weight"] for item in doc])

    @classmethod
    def dirac(cls, history, n: int) -> DiscreteMeasure:
        """The constant path at ``x_0``."""
        hist = tuple(getattr(history, "values", history))
        return cls(hist, np.full((1, n), hist[0]), [1.0])


def _windows(full: np.ndarray, h: int, k: int, d: int) -> list[np.ndarray]:
    """``[X_k, X_{k-1}, ..., X_{k-d}]`` as columns of the chronological paths."""
    return [full[:, h - 1 + k - j] for j in range(d + 1)]


@dataclass
class FeasibilityReport:
    martingale_residual: float
    slacks: list  # E[g_k] per k, one entry per component
    normalization_error: float
    min_weight: float
    history_error: float
    objective: float  # E[sum f_k]
    signed_objective: float  # the same, negated on the lower side

    @property
    def min_slack(self) -> float:
        flat = [float(s) for block in self.slacks for s in block]
        return min(flat) if flat else math.inf

    def feasible(self, tol: float = 1e-9, martingale_tol: float | None = None) -> bool:
        mtol = tol if martingale_tol is None else martingale_tol
        return (
            self.martingale_residual <= mtol
            and self.min_slack >= -tol
            and self.normalization_error <= tol
            and self.min_weight >= -tol
            and self.history_error <= tol
        )

    def to_dict(self) -> dict:
        return {
            "martingale_residual": self.martingale_residual,
            "min_slack": None if math.isinf(self.min_slack) else self.min_slack,
            "slacks": [[float(s) for s in block] for block in self.slacks],
            "normalization_error": self.normalization_error,
            "min_weight": self.min_weight,
            "history_error": self.history_error,
            "objective": self.objective,
            "signed_objective": self.signed_objective,
        }


def check_measure(measure: DiscreteMeasure, spec, tol: float = 1e-9) -> FeasibilityReport:
    """Diagnostics of ``measure`` against the martingale and quote constraints.

    The martingale residual is the largest ``|E[X_k | X_1..X_{k-1}] - X_{k-1}|``
    over prefixes carrying mass above ``tol``.
    """
    n, d = spec.n, spec.d
    if measure.n != n:
        raise LengthMismatch(f"measure has {measure.n} dates, spec has n={n}")
    h = history_length(d)
    want = spec.history.values
    if len(measure.history) < h:
        history_error = math.inf
    else:
        history_error = max(abs(a - b) for a, b in zip(measure.history[:h], want))

    w = measure.weights
    full = measure.full_paths()
    hm = len(measure.history)
    resid = 0.0
    for k in range(1, n + 1):
        if k == 1:
            group = np.zeros(len(w), dtype=np.intp)
        else:
            _, group = np.unique(measure.paths[:, : k - 1], axis=0, return_inverse=True)
            group = group.ravel()
        mass = np.bincount(group, weights=w)
        cur = np.bincount(group, weights=w * measure.paths[:, k - 1])
        prev = full[:, hm - 2 + k]
        prev_g = np.zeros(mass.size)
        prev_g[group] = prev
        live = mass > tol
        if live.any():
            resid = max(resid, float(np.max(np.abs(cur[live] / mass[live] - prev_g[live]))))

    slacks, total = [], 0.0
    for k in range(1, n + 1):
        ys = _windows(full, hm, k, d)
        slacks.append(constraint_vector(spec.constraints[k - 1], ys) @ w)
        total += float(np.asarray(spec.objectives[k - 1](ys), dtype=float) * np.ones(len(w)) @ w)
    sign = spec.side.sign
    return FeasibilityReport(
        martingale_residual=resid,
        slacks=slacks,
        normalization_error=abs(math.fsum(w) - 1.0),
        min_weight=float(w.min(initial=0.0)) if w.size else 0.0,
        history_error=history_error,
        objective=total,
        signed_objective=sign * total,
    )


# ----------------------------------------------------------------------------
# brute-force measure LP


def lattice_paths(mesh: Mesh, n: int) -> np.ndarray:
    """Node indices of all ``m**n`` paths, the first date varying slowest."""
    m = mesh.m
    return np.indices((m,) * n).reshape(n, -1).T


def primal_brute_force_lp(spec, mesh: Mesh, max_paths: int = DEFAULT_MAX_PATHS, config=None):
    """Optimise over weights on every lattice path; returns ``(value, measure)``.

    The value is ``sup E[sum f_k]`` with the objectives signed by side, i.e.
    it is on the same scale as the dual LP objective.  Uses the in-process
    dense tableau unless ``config`` picks another method.
    """
    from .solver import Method, SolverConfig, Status, solve

    n, d = spec.n, spec.d
    m = mesh.m
    if m**n > max_paths:
        raise TooManyPaths(f"{m}**{n} paths exceed the cap of {max_paths}")
    idx = lattice_paths(mesh, n)
    N = idx.shape[0]
    measure = DiscreteMeasure(spec.history.values, mesh.points[idx], np.zeros(N))
    full = measure.full_paths()
    hm = len(measure.history)

    obj = np.zeros(N)
    for k, f in enumerate(spec.signed_objectives(), start=1):
        obj += np.asarray(f(_windows(full, hm, k, d)), dtype=float) * np.ones(N)

    rows, cols, vals, rhs, senses = [], [], [], [], []
    r = 0
    rows.append(np.zeros(N, dtype=np.int64))
    cols.append(np.arange(N))
    vals.append(np.ones(N))
    rhs.append([1.0])
    senses.append([EQ])
    r += 1
    for k in range(1, n + 1):
        prefix = idx[:, : k - 1] @ (m ** np.arange(k - 1)) if k > 1 else np.zeros(N, dtype=np.int64)
        groups, inv = np.unique(prefix, return_inverse=True)
        step = full[:, hm - 1 + k] - full[:, hm - 2 + k]
        nz = step != 0
        rows.append(r + inv.ravel()[nz])
        cols.append(np.flatnonzero(nz))
        vals.append(step[nz])
        rhs.append(np.zeros(groups.size))
        senses.append([EQ] * groups.size)
        r += groups.size
    for k in range(1, n + 1):
        g = constraint_vector(spec.constraints[k - 1], _windows(full, hm, k, d))
        for ell in range(g.shape[0]):
            nz = g[ell] != 0
            rows.append(np.full(nz.sum(), r))
            cols.append(np.flatnonzero(nz))
            vals.append(g[ell][nz])
            rhs.append([0.0])
            senses.append([GE])
            r += 1

    lp = SparseLP(
        objective=-obj,
        rows=np.concatenate(rows).astype(np.int64),
        cols=np.concatenate(cols).astype(np.int64),
        coeffs=np.concatenate(vals).astype(float),
        senses=np.concatenate([np.asarray(s) for s in senses]),
        rhs=np.concatenate([np.asarray(b, dtype=float) for b in rhs]),
        lower=np.zeros(N),
        upper=np.full(N, np.inf),
    )
    cfg = config or SolverConfig(method=Method.DENSE_TABLEAU)
    sol = solve(lp, cfg)
    if sol.status is Status.PRIMAL_INFEASIBLE:
        raise Infeasible("no grid-supported martingale measure meets the quotes")
    if not sol.optimal:
        raise Infeasible(f"brute-force LP ended with status {sol.status.value}")
    weights = np.clip(sol.primal, 0.0, None)
    keep = weights > 1e-12
    measure = DiscreteMeasure(spec.history.values, measure.paths[keep], weights[keep])
    return -sol.objective, measure


# ----------------------------------------------------------------------------
# random measures for property tests


def random_grid_martingale(
    mesh: Mesh, history, n: int, rng: np.random.Generator, stay: float = 0.2, max_paths: int = 4096
):
    """A random martingale tree on the mesh nodes.

    Each step either stays put or splits onto two random nodes bracketing
    the current value; once the tree holds ``max_paths // 2`` paths every
    path stays put.  Starting off-node is allowed; later values are nodes.
    """
    hist = tuple(getattr(history, "values", history))
    y = mesh.points
    paths = np.full((1, 0), 0.0)
    cur = np.array([hist[0]])
    weights = np.array([1.0])
    for _ in range(n):
        new_rows, new_w, new_cur = [], [], []
        for row, w, x in zip(paths, weights, cur):
            below = np.flatnonzero(y < x - mesh.tol)
            above = np.flatnonzero(y > x + mesh.tol)
            frozen = len(paths) > max_paths // 2
            if frozen or rng.random() < stay or not below.size or not above.size:
                moves = [(x, 1.0)]
            else:
                a, b = y[rng.choice(below)], y[rng.choice(above)]
                moves = [(a, (b - x) / (b - a)), (b, (x - a) / (b - a))]
            for z, q in moves:
                new_rows.append(np.append(row, z))
                new_w.append(w * q)
                new_cur.append(z)
        paths, weights, cur = np.array(new_rows), np.array(new_w), np.array(new_cur)
    return DiscreteMeasure(hist, paths, weights)
