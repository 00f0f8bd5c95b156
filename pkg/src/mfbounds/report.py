"""Bounds, static hedges and worst-case dynamics read off LP solutions.

Hedge convention: ``net_position`` is the number of calls held long in the
hedge, so a positive entry means "buy".  For the upper bound the hedge
super-replicates the claim; for the lower bound the table is negated and
describes the sub-replicating portfolio.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .core import Mesh, Side
from .errors import OffGridHistory, StatusNotOptimal, TooManyPaths
from .lp import RECURSION, TERMINAL, SparseLP
from .oracle import DiscreteMeasure, check_measure
from .payoffs import NegLogContract, VarianceLeg, Zero, constraint_vector

DEFAULT_MAX_PATHS = 1_000_000
PRUNE = 1e-12

VARIANCE_KINDS = (NegLogContract, VarianceLeg)


# ----------------------------------------------------------------------------
# hedges


@dataclass(frozen=True)
class HedgeRow:
    expiry_index: int
    strike: float
    net_position: float
    lambda_bid: float
    lambda_ask: float


@dataclass
class HedgeTable:
    rows: list[HedgeRow] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def net(self, expiry_index: int, strike: float) -> float:
        for r in self.rows:
            if r.expiry_index == expiry_index and r.strike == strike:
                return r.net_position
        raise KeyError((expiry_index, strike))

    def expiries(self) -> list[int]:
        return sorted({r.expiry_index for r in self.rows})

    def strikes(self) -> list[float]:
        return sorted({r.strike for r in self.rows})

    def multipliers(self) -> np.ndarray:
        """The lambda vector in LP order (bid then ask per quote)."""
        return np.array([v for r in self.rows for v in (r.lambda_bid, r.lambda_ask)], dtype=float)

    def to_dict(self) -> list[dict]:
        return [
            {
                "expiry_index": r.expiry_index,
                "strike": r.strike,
                "net_position": r.net_position,
                "lambda_bid": r.lambda_bid,
                "lambda_ask": r.lambda_ask,
            }
            for r in self.rows
        ]

    @classmethod
    def from_dict(cls, doc: list[dict]) -> HedgeTable:
        return cls(
            [
                HedgeRow(
                    int(r["expiry_index"]),
                    float(r["strike"]),
                    float(r["net_position"]),
                    float(r["lambda_bid"]),
                    float(r["lambda_ask"]),
                )
                for r in doc
            ]
        )


def _require_optimal(sol) -> None:
    if not sol.optimal:
        raise StatusNotOptimal(f"solution status is {sol.status.value}")


def extract_hedges(sol, lp: SparseLP, spec) -> HedgeTable:
    """One row per quote; ``net = lambda_ask - lambda_bid``, negated on the lower side.

    The ask component weights ``ask - C`` in the Lagrangian, i.e. a call
    bought at the ask, and the bid component a call sold at the bid.
    """
    _require_optimal(sol)
    dirn = lp.directory
    sign = spec.side.sign
    rows = []
    for k, block in enumerate(spec.constraints, start=1):
        base = dirn.lambda_offset(k)
        for ell, q in enumerate(block.quotes):
            lb = float(max(sol.primal[base + 2 * ell], 0.0))
            la = float(max(sol.primal[base + 2 * ell + 1], 0.0))
            rows.append(HedgeRow(k, q.strike, sign * (la - lb), lb, la))
    return HedgeTable(rows)


# ----------------------------------------------------------------------------
# worst-case measure


def window_laws(sol, lp: SparseLP) -> np.ndarray:
    """Duals of the terminal/recursion rows, shape ``(n, m**(d+1))``, total mass 1."""
    dirn = lp.directory
    mu = np.empty((dirn.n, dirn.cells))
    for k in range(1, dirn.n + 1):
        g = lp.group(TERMINAL if k == dirn.n else RECURSION, k)
        mu[k - 1] = np.clip(sol.dual_rows[g.start : g.stop], 0.0, None)
    total = mu[0].sum()
    if total <= 0:
        raise StatusNotOptimal("recursion duals carry no mass")
    return mu / total


def _start_state(spec, mesh: Mesh) -> int:
    d = max(spec.d, 1)
    idx = [mesh.index_of(x) for x in spec.history.values[:d]]
    if any(i is None for i in idx):
        raise OffGridHistory("worst-case extraction needs x_0, ..., x_{1-d} on mesh nodes")
    return int(sum(i * mesh.m**j for j, i in enumerate(idx)))


def _coupling(y: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Martingale coupling ``pi[i, j]`` of two grid laws in convex order.

    Mean conditions carry penalised slacks, so tiny violations of convex
    order from the solver's tolerance still yield a coupling.
    """
    m = y.size
    rows_i = np.flatnonzero(src > PRUNE)
    cols_j = np.flatnonzero(dst > PRUNE)
    a, b = rows_i.size, cols_j.size
    nv = a * b
    # variables: pi (a*b), then slack pairs (2a)
    ii, jj = np.meshgrid(np.arange(a), np.arange(b), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    A = np.zeros((a + b + a, nv + 2 * a))
    A[ii, np.arange(nv)] = 1.0
    A[a + jj, np.arange(nv)] = 1.0
    A[a + b + ii, np.arange(nv)] = y[cols_j][jj] - y[rows_i][ii]
    A[a + b + np.arange(a), nv + np.arange(a)] = 1.0
    A[a + b + np.arange(a), nv + a + np.arange(a)] = -1.0
    rhs = np.concatenate([src[rows_i], dst[cols_j], np.zeros(a)])
    rhs[a : a + b] *= src[rows_i].sum() / dst[cols_j].sum()
    c = np.concatenate([np.zeros(nv), np.ones(2 * a)])
    res = linprog(c, A_eq=A, b_eq=rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        raise StatusNotOptimal(f"martingale coupling failed: {res.message}")
    pi = np.zeros((m, m))
    pi[rows_i[ii], cols_j[jj]] = res.x[:nv]
    return pi


def transition_kernels(mu: np.ndarray, spec, mesh: Mesh) -> np.ndarray:
    """``K[k-1][i_0, s]``: probability of node ``i_0`` at date k given state ``s``.

    The state is the window ``(X_{k-1}, ..., X_{k-max(d,1)})``.  States the
    duals leave empty keep the price where it is.
    """
    n, d, m = spec.n, spec.d, mesh.m
    y = mesh.points
    S = m ** max(d, 1)
    K = np.zeros((n, m, S))
    stay = np.zeros((m, S))
    stay[np.arange(S) % m, np.arange(S)] = 1.0
    if d >= 1:
        for k in range(n):
            law = mu[k].reshape((S, m)).T
            mass = law.sum(axis=0)
            live = mass > PRUNE
            K[k] = stay
            K[k][:, live] = law[:, live] / mass[live]
        return K
    prev = np.zeros(m)
    prev[_start_state(spec, mesh)] = 1.0
    for k in range(n):
        pi = _coupling(y, prev, mu[k])
        mass = pi.sum(axis=1)
        live = mass > PRUNE
        K[k] = stay
        K[k][:, live] = (pi[live] / mass[live, None]).T
        prev = mu[k]
    return K


def expand_paths(K: np.ndarray, spec, mesh: Mesh, max_paths: int = DEFAULT_MAX_PATHS):
    """Enumerate the paths of the window chain from the known history."""
    n, m = spec.n, mesh.m
    h = max(spec.d, 1)
    tail = m ** (h - 1)
    state = np.array([_start_state(spec, mesh)])
    paths = np.zeros((1, 0), dtype=np.intp)
    weights = np.ones(1)
    for k in range(n):
        # prune on conditional probabilities so each kept prefix keeps its mean
        cond = K[k][:, state].T  # (N, m)
        src, node = np.nonzero(cond > PRUNE)
        if src.size > max_paths:
            raise TooManyPaths(f"worst-case measure needs more than {max_paths} paths")
        weights = weights[src] * cond[src, node]
        paths = np.hstack([paths[src], node[:, None]])
        state = node + m * (state[src] % tail)
    weights = weights / weights.sum()
    return DiscreteMeasure(spec.history.values, mesh.points[paths], weights)


def extract_worst_case_measure(sol, lp: SparseLP, mesh: Mesh, spec, max_paths=DEFAULT_MAX_PATHS):
    """A grid martingale measure attaining the bound, assembled from LP duals."""
    _require_optimal(sol)
    mu = window_laws(sol, lp)
    K = transition_kernels(mu, spec, mesh)
    return expand_paths(K, spec, mesh, max_paths)


def window_law_check(mu: np.ndarray, spec, mesh: Mesh) -> dict:
    """Martingale and flow residuals of the window laws themselves (any size)."""
    n, d, m = spec.n, spec.d, mesh.m
    y = mesh.points
    out = {"martingale_residual": 0.0, "flow_residual": 0.0}
    if d == 0:
        return out
    S = m**d
    for k in range(n):
        law = mu[k].reshape((S, m)).T
        mass = law.sum(axis=0)
        live = mass > 1e-9
        mean = (y @ law)[live] / mass[live]
        r = np.max(np.abs(mean - y[np.arange(S) % m][live]), initial=0.0)
        out["martingale_residual"] = max(out["martingale_residual"], float(r))
        if k:
            prev = mu[k - 1].reshape((S, m), order="F").sum(axis=1)
            out["flow_residual"] = max(out["flow_residual"], float(np.abs(prev - mass).max()))
    return out


# ----------------------------------------------------------------------------
# reports


def annualized_vol(spec, value: float) -> float | None:
    """``sqrt(value / T_n)`` for variance-type claims, else None."""
    kinds = [f for f in spec.objectives if not isinstance(f, Zero)]
    if not kinds or not all(isinstance(f, VARIANCE_KINDS) for f in kinds):
        return None
    if value < 0:
        return None
    return math.sqrt(value / spec.time_grid.expiry(spec.n))


@dataclass
class BoundReport:
    side: Side
    bound: float
    lp_objective: float
    hedges: HedgeTable
    worst_case: DiscreteMeasure | None = None
    diagnostics: dict = field(default_factory=dict)
    annualized_vol: float | None = None

    def to_dict(self) -> dict:
        return {
            "side": self.side.value,
            "bound": self.bound,
            "lp_objective": self.lp_objective,
            "annualized_vol": self.annualized_vol,
            "hedges": self.hedges.to_dict(),
            "worst_case": None if self.worst_case is None else self.worst_case.to_json(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, doc: dict, n: int | None = None) -> BoundReport:
        wc = doc.get("worst_case")
        measure = None
        if wc:
            horizon = n if n is not None else doc["diagnostics"]["n"]
            measure = DiscreteMeasure.from_json(wc, horizon)
        return cls(
            side=Side(doc["side"]),
            bound=float(doc["bound"]),
            lp_objective=float(doc["lp_objective"]),
            hedges=HedgeTable.from_dict(doc.get("hedges", [])),
            worst_case=measure,
            diagnostics=dict(doc.get("diagnostics", {})),
            annualized_vol=doc.get("annualized_vol"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> BoundReport:
        return cls.from_dict(json.loads(text))


def build_report(sol, lp: SparseLP, spec, mesh: Mesh, certificate=None, max_paths=DEFAULT_MAX_PATHS):
    """Bound, hedges, worst-case measure and diagnostics for one solved side."""
    _require_optimal(sol)
    bound = spec.side.sign * sol.objective
    hedges = extract_hedges(sol, lp, spec)
    diag: dict = {"n": spec.n, "d": spec.d, "m": mesh.m, "mesh_hash": mesh.hash}
    diag["iterations"] = sol.iterations
    if certificate is not None:
        diag["certificate"] = certificate.to_dict()
    mu = window_laws(sol, lp)
    diag["window_laws"] = window_law_check(mu, spec, mesh)
    measure = None
    try:
        K = transition_kernels(mu, spec, mesh)
        measure = expand_paths(K, spec, mesh, max_paths)
    except (TooManyPaths, OffGridHistory) as exc:
        diag["worst_case_skipped"] = str(exc)
    if measure is not None:
        fr = check_measure(measure, spec)
        diag["worst_case_check"] = fr.to_dict()
        diag["worst_case_paths"] = len(measure)
    return BoundReport(spec.side, bound, sol.objective, hedges, measure, diag, annualized_vol(spec, bound))


def lagrangian_value(hedges: HedgeTable, spec, measure: DiscreteMeasure) -> float:
    """``E_Q[sum_k f_k + lambda_k . g_k]`` with the objectives signed by side.

    For every martingale measure Q this is at most the LP objective; the gap
    is the certified super-hedge margin.
    """
    lam = hedges.multipliers()
    full = measure.full_paths()
    hm = len(measure.history)
    w = measure.weights
    total, off = 0.0, 0
    for k, (f, block) in enumerate(zip(spec.signed_objectives(), spec.constraints), start=1):
        ys = [full[:, hm - 1 + k - j] for j in range(spec.d + 1)]
        total += float(w @ (np.asarray(f(ys), dtype=float) * np.ones(w.size)))
        if block.p:
            total += float(lam[off : off + block.p] @ (constraint_vector(block, ys) @ w))
        off += block.p
    return total


# ----------------------------------------------------------------------------
# output


def hedge_csv(table: HedgeTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["expiry_index", "strike", "net_position"])
    for r in table.rows:
        w.writerow([r.expiry_index, repr(r.strike), repr(r.net_position)])
    return buf.getvalue()


def text_table(report: BoundReport, times=None, digits: int = 4) -> str:
    """Strikes as columns and one row of net positions per quoted expiry."""
    label = "Super-replication" if report.side is Side.UPPER else "Sub-replication"
    lines = [f"{label} value: {report.bound:.{digits}f}"]
    if report.annualized_vol is not None:
        lines.append(f"Annualized volatility: {100 * report.annualized_vol:.2f}%")
    table = report.hedges
    if len(table):
        strikes = table.strikes()
        width = max(10, digits + 6)
        names = {}
        for k in table.expiries():
            names[k] = f"lambda_{k}" + (f" T={times[k - 1]:.4g}" if times is not None else "")
        pad = max(len(v) for v in names.values()) + 2
        head = "Strike".ljust(pad) + "".join(f"${s:g}".rjust(width) for s in strikes)
        lines += ["", head]
        for k in table.expiries():
            cells = []
            for s in strikes:
                try:
                    cells.append(f"{table.net(k, s):.{digits}f}".rjust(width))
                except KeyError:
                    cells.append("".rjust(width))
            lines.append(names[k].ljust(pad) + "".join(cells))
    return "\n".join(lines) + "\n"


def emit_report(report: BoundReport, fmt: str, path, times=None) -> None:
    """Write ``report`` as ``json``, ``csv`` (hedge table) or ``table`` text."""
    if fmt == "json":
        text = report.to_json() + "\n"
    elif fmt == "csv":
        text = hedge_csv(report.hedges)
    elif fmt == "table":
        text = text_table(report, times)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    Path(path).write_text(text, encoding="utf-8")
