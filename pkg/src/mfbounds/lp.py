"""Sparse LP assembly for the grid super-replication problem.

Variables are laid out as ``[lambda_1 .. lambda_n | phi^1 .. phi^n | h^1 .. h^n]``
with each ``phi^k``/``h^k`` block holding ``m**(d+1)`` cells (``i_0`` fastest).
Rows come in four groups, in order: h-definition equalities, terminal rows,
recursion rows (k = 1..n-1) and concavity rows along ``i_0``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .core import (
    Mesh,
    ProblemSpec,
    ValidatedSpec,
    interpolation_weights,
    multi_indices,
    validate_spec,
)
from .errors import HistoryOutsideHull, OverflowGuard, PointOutsideHull, WellFormednessError
from .payoffs import constraint_vector

DEFAULT_MAX_CELLS = 5_000_000

GE, EQ = ">", "="

HDEF, TERMINAL, RECURSION, CONCAVITY = "hdef", "terminal", "recursion", "concavity"


@dataclass(frozen=True)
class VariableDirectory:
    n: int
    d: int
    m: int
    p_k: tuple[int, ...]

    @property
    def cells(self) -> int:
        return self.m ** (self.d + 1)

    @property
    def p(self) -> int:
        return sum(self.p_k)

    @property
    def num_vars(self) -> int:
        return self.p + 2 * self.n * self.cells

    def lambda_offset(self, k: int) -> int:
        return sum(self.p_k[: k - 1])

    def phi_offset(self, k: int) -> int:
        return self.p + (k - 1) * self.cells

    def h_offset(self, k: int) -> int:
        return self.p + (self.n + k - 1) * self.cells

    def multi_index(self, cell: int) -> tuple[int, ...]:
        return tuple((cell // self.m**j) % self.m for j in range(self.d + 1))

    def locate(self, col: int) -> tuple[str, int, object]:
        """Map a column back to ``(block, k, component or multi-index)``."""
        if not 0 <= col < self.num_vars:
            raise IndexError(col)
        if col < self.p:
            k = bisect.bisect_right(np.cumsum(self.p_k).tolist(), col) + 1
            return "lambda", k, col - self.lambda_offset(k)
        rel = col - self.p
        block, cell = divmod(rel, self.cells)
        if block < self.n:
            return "phi", block + 1, self.multi_index(cell)
        return "h", block - self.n + 1, self.multi_index(cell)


@dataclass(frozen=True)
class RowGroup:
    kind: str
    k: int
    start: int
    cells: np.ndarray  # flat multi-index of each row in the group

    @property
    def stop(self) -> int:
        return self.start + self.cells.size


@dataclass(frozen=True, eq=False)
class SparseLP:
    """``min c.x`` s.t. rows (``>=`` or ``=``) and ``lower <= x <= upper``."""

    objective: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    coeffs: np.ndarray
    senses: np.ndarray
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    directory: VariableDirectory | None = None
    row_groups: tuple[RowGroup, ...] = ()
    source: tuple | None = field(default=None, repr=False, compare=False)  # (spec, mesh)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def num_rows(self) -> int:
        return self.rhs.size

    @property
    def nnz(self) -> int:
        return self.coeffs.size

    def matrix(self, fmt: str = "csr") -> sp.spmatrix:
        if fmt not in self._cache:
            a = sp.coo_matrix(
                (self.coeffs, (self.rows, self.cols)), shape=(self.num_rows, self.num_vars)
            )
            self._cache[fmt] = a.asformat(fmt)
        return self._cache[fmt]

    def check(self) -> None:
        """Raise WellFormednessError on inconsistent shapes or indices."""
        nr, nv = self.num_rows, self.num_vars
        if not (self.rows.size == self.cols.size == self.coeffs.size):
            raise WellFormednessError("triplet arrays differ in length")
        if self.senses.size != nr or self.lower.size != nv or self.upper.size != nv:
            raise WellFormednessError("row/column metadata has the wrong length")
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= nr):
            raise WellFormednessError("row index out of range")
        if self.cols.size and (self.cols.min() < 0 or self.cols.max() >= nv):
            raise WellFormednessError("column index out of range")
        if not np.all(np.isfinite(self.rhs)) or not np.all(np.isfinite(self.coeffs)):
            raise WellFormednessError("non-finite rhs or coefficient")
        if not np.all(np.isfinite(self.objective)):
            raise WellFormednessError("non-finite objective")
        if not set(np.unique(self.senses)) <= {GE, EQ}:
            raise WellFormednessError("row senses must be '>' or '='")
        if np.any(self.lower > self.upper):
            raise WellFormednessError("lower bound above upper bound")

    def row_tag(self, r: int) -> tuple[str, int, tuple[int, ...]]:
        starts = [g.start for g in self.row_groups]
        g = self.row_groups[bisect.bisect_right(starts, r) - 1]
        return g.kind, g.k, self.directory.multi_index(int(g.cells[r - g.start]))

    def group(self, kind: str, k: int) -> RowGroup:
        for g in self.row_groups:
            if g.kind == kind and g.k == k:
                return g
        raise KeyError((kind, k))

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """``A x - b`` per row."""
        return self.matrix() @ x - self.rhs


def shifted_cells(m: int, d: int) -> np.ndarray:
    """Flat index of ``(i_0, i_0, i_1, ..., i_{d-1})`` for every cell ``(i_0..i_d)``."""
    idx = multi_indices(m, d)
    if d == 0:
        return np.arange(m)
    return idx[0] + sum(idx[j - 1] * m**j for j in range(1, d + 1))


def _ensure_validated(spec, mesh: Mesh) -> ValidatedSpec:
    if isinstance(spec, ValidatedSpec) and spec.mesh_hash == mesh.hash:
        return spec
    return validate_spec(spec.spec if isinstance(spec, ValidatedSpec) else spec, mesh)


def start_weights(spec: ProblemSpec, mesh: Mesh) -> np.ndarray:
    """Dense interpolation weights of ``(x_0, x_0, ..., x_{1-d})``."""
    try:
        w = interpolation_weights(mesh, spec.history.start_point(spec.d))
    except PointOutsideHull as exc:
        raise HistoryOutsideHull(str(exc)) from None
    return w.dense(mesh.m)


def _check_size(d: int, m: int, max_cells: int) -> None:
    if m ** (d + 1) > max_cells:
        raise OverflowGuard(f"m**(d+1) = {m ** (d + 1)} exceeds the cap of {max_cells} cells")


def build_dual_lp(spec, mesh: Mesh, max_cells: int = DEFAULT_MAX_CELLS) -> SparseLP:
    """Assemble the sparse LP whose optimum is the grid bound for ``spec``."""
    vspec = _ensure_validated(spec, mesh)
    spec = vspec.spec
    n, d, m = spec.n, spec.d, mesh.m
    _check_size(d, m, max_cells)
    gamma = start_weights(spec, mesh)

    dirn = VariableDirectory(n, d, m, tuple(spec.p_k))
    M = dirn.cells
    cells = np.arange(M)
    grid = mesh.grid(d)
    objectives = spec.signed_objectives()

    R, C, V, rhs, senses, groups = [], [], [], [], [], []
    r = 0

    def emit(rows, cols, vals):
        R.append(rows)
        C.append(np.broadcast_to(cols, rows.shape))
        V.append(np.broadcast_to(np.asarray(vals, dtype=float), rows.shape))

    for k in range(1, n + 1):
        rows = r + cells
        emit(rows, dirn.h_offset(k) + cells, 1.0)
        g = constraint_vector(spec.constraints[k - 1], grid)
        base = dirn.lambda_offset(k)
        for ell in range(g.shape[0]):
            nz = g[ell] != 0.0
            emit(rows[nz], np.full(nz.sum(), base + ell), -g[ell][nz])
        rhs.append(np.asarray(objectives[k - 1](grid), dtype=float) * np.ones(M))
        senses.append(np.full(M, EQ))
        groups.append(RowGroup(HDEF, k, r, cells))
        r += M

    rows = r + cells
    emit(rows, dirn.phi_offset(n) + cells, 1.0)
    emit(rows, dirn.h_offset(n) + cells, -1.0)
    rhs.append(np.zeros(M))
    senses.append(np.full(M, GE))
    groups.append(RowGroup(TERMINAL, n, r, cells))
    r += M

    shift = shifted_cells(m, d)
    for k in range(1, n):
        rows = r + cells
        emit(rows, dirn.phi_offset(k) + cells, 1.0)
        emit(rows, dirn.h_offset(k) + cells, -1.0)
        emit(rows, dirn.phi_offset(k + 1) + shift, -1.0)
        rhs.append(np.zeros(M))
        senses.append(np.full(M, GE))
        groups.append(RowGroup(RECURSION, k, r, cells))
        r += M

    i0 = cells % m
    interior = cells[(i0 >= 1) & (i0 <= m - 2)]
    j = interior % m
    y = mesh.points
    c_plus, c_mid, c_minus = y[j - 1] - y[j], y[j + 1] - y[j - 1], y[j] - y[j + 1]
    for k in range(1, n + 1):
        rows = r + np.arange(interior.size)
        off = dirn.phi_offset(k)
        emit(rows, off + interior + 1, c_plus)
        emit(rows, off + interior, c_mid)
        emit(rows, off + interior - 1, c_minus)
        rhs.append(np.zeros(interior.size))
        senses.append(np.full(interior.size, GE))
        groups.append(RowGroup(CONCAVITY, k, r, interior))
        r += interior.size

    objective = np.zeros(dirn.num_vars)
    objective[dirn.phi_offset(1) : dirn.phi_offset(1) + M] = gamma
    lower = np.full(dirn.num_vars, -np.inf)
    lower[: dirn.p] = 0.0

    lp = SparseLP(
        objective=objective,
        rows=np.concatenate(R).astype(np.int64),
        cols=np.concatenate(C).astype(np.int64),
        coeffs=np.concatenate(V).astype(float),
        senses=np.concatenate(senses),
        rhs=np.concatenate(rhs),
        lower=lower,
        upper=np.full(dirn.num_vars, np.inf),
        directory=dirn,
        row_groups=tuple(groups),
        source=(spec, mesh),
    )
    return lp


def lp_dimensions(spec, mesh: Mesh, max_cells: int = DEFAULT_MAX_CELLS) -> tuple[int, int, int]:
    """``(num_vars, num_rows, nnz)`` of ``build_dual_lp`` without building it."""
    vspec = _ensure_validated(spec, mesh)
    spec = vspec.spec
    n, d, m = spec.n, spec.d, mesh.m
    _check_size(d, m, max_cells)
    start_weights(spec, mesh)
    M = m ** (d + 1)
    slab = m**d
    num_vars = spec.p + 2 * n * M
    concavity = (m - 2) * slab
    num_rows = n * M + M + (n - 1) * M + n * concavity
    g_nnz = sum(
        int(np.count_nonzero(constraint_vector(b, [mesh.points]))) * slab for b in spec.constraints
    )
    nnz = n * M + g_nnz + 2 * M + 3 * (n - 1) * M + 3 * n * concavity
    return num_vars, num_rows, nnz


def affine_candidate(spec, mesh: Mesh) -> np.ndarray:
    """Feasible point built from the affine witnesses (lambda = 0).

    Objectives without a witness use the constant ``max f`` over the grid.
    """
    vspec = _ensure_validated(spec, mesh)
    spec = vspec.spec
    n, d, m = spec.n, spec.d, mesh.m
    dirn = VariableDirectory(n, d, m, tuple(spec.p_k))
    grid = mesh.grid(d)
    shift = shifted_cells(m, d)
    x = np.zeros(dirn.num_vars)
    M = dirn.cells
    objectives = spec.signed_objectives()
    nxt = None
    for k in range(n, 0, -1):
        f = np.asarray(objectives[k - 1](grid), dtype=float) * np.ones(M)
        w = vspec.witnesses[k - 1]
        if w is None:
            bound = np.full(M, f.max())
        else:
            intercept, slopes = w
            bound = intercept + sum(b * y for b, y in zip(slopes, grid))
        phi = bound if nxt is None else bound + nxt[shift]
        x[dirn.h_offset(k) : dirn.h_offset(k) + M] = f
        x[dirn.phi_offset(k) : dirn.phi_offset(k) + M] = phi
        nxt = phi
    return x


# ----------------------------------------------------------------------------
# MPS and triplet export


def _col_name(j: int) -> str:
    return f"C{j:07d}"


def _row_name(i: int) -> str:
    return f"R{i:07d}"


def _num(x: float) -> str:
    return repr(float(x))


def export_lp(lp: SparseLP, path) -> None:
    """Write the LP as MPS (fixed section layout, full-precision numbers)."""
    lp.check()
    a = lp.matrix("csc")
    out = ["NAME          MFBOUNDS", "ROWS", " N  OBJ"]
    out += [f" {'E' if s == EQ else 'G'}  {_row_name(i)}" for i, s in enumerate(lp.senses)]
    out.append("COLUMNS")
    for j in range(lp.num_vars):
        name = _col_name(j)
        if lp.objective[j] != 0.0:
            out.append(f"    {name:<8}  {'OBJ':<8}  {_num(lp.objective[j])}")
        lo, hi = a.indptr[j], a.indptr[j + 1]
        for i, v in zip(a.indices[lo:hi], a.data[lo:hi]):
            out.append(f"    {name:<8}  {_row_name(i):<8}  {_num(v)}")
    out.append("RHS")
    for i, b in enumerate(lp.rhs):
        if b != 0.0:
            out.append(f"    {'RHS':<8}  {_row_name(i):<8}  {_num(b)}")
    out.append("BOUNDS")
    for j in range(lp.num_vars):
        lo, hi = lp.lower[j], lp.upper[j]
        name = _col_name(j)
        if np.isneginf(lo) and np.isposinf(hi):
            out.append(f" FR BND       {name}")
            continue
        if np.isneginf(lo):
            out.append(f" MI BND       {name}")
        elif lo != 0.0:
            out.append(f" LO BND       {name:<8}  {_num(lo)}")
        if not np.isposinf(hi):
            out.append(f" UP BND       {name:<8}  {_num(hi)}")
    out.append("ENDATA")
    Path(path).write_text("\n".join(out) + "\n")


def read_mps(path) -> SparseLP:
    """Parse an MPS file produced by :func:`export_lp`."""
    section = None
    row_index, senses = {}, []
    col_index = {}
    R, C, V, obj = [], [], [], {}
    rhs = {}
    bounds = []
    obj_name = None
    for raw in Path(path).read_text().splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        if not raw[0].isspace():
            section = raw.split()[0]
            continue
        tok = raw.split()
        if section == "ROWS":
            kind, name = tok
            if kind == "N":
                obj_name = name
            else:
                row_index[name] = len(senses)
                senses.append({"E": EQ, "G": GE}[kind])
        elif section == "COLUMNS":
            j = col_index.setdefault(tok[0], len(col_index))
            for rname, val in zip(tok[1::2], tok[2::2]):
                if rname == obj_name:
                    obj[j] = float(val)
                else:
                    R.append(row_index[rname])
                    C.append(j)
                    V.append(float(val))
        elif section == "RHS":
            for rname, val in zip(tok[1::2], tok[2::2]):
                rhs[row_index[rname]] = float(val)
        elif section == "BOUNDS":
            bounds.append(tok)
    nv, nr = len(col_index), len(senses)
    objective = np.zeros(nv)
    for j, v in obj.items():
        objective[j] = v
    b = np.zeros(nr)
    for i, v in rhs.items():
        b[i] = v
    lower, upper = np.zeros(nv), np.full(nv, np.inf)
    for tok in bounds:
        kind, j = tok[0], col_index[tok[2]]
        if kind == "FR":
            lower[j] = -np.inf
        elif kind == "MI":
            lower[j] = -np.inf
        elif kind == "LO":
            lower[j] = float(tok[3])
        elif kind == "UP":
            upper[j] = float(tok[3])
    return SparseLP(
        objective=objective,
        rows=np.asarray(R, dtype=np.int64),
        cols=np.asarray(C, dtype=np.int64),
        coeffs=np.asarray(V, dtype=float),
        senses=np.asarray(senses),
        rhs=b,
        lower=lower,
        upper=upper,
    )


def write_triplets_csv(lp: SparseLP, path) -> None:
    order = np.lexsort((lp.cols, lp.rows))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row,col,coeff\n")
        for i in order:
            fh.write(f"{lp.rows[i]},{lp.cols[i]},{_num(lp.coeffs[i])}\n")


def sorted_triplets(lp: SparseLP) -> np.ndarray:
    """Triplets as an ``(nnz, 3)`` array sorted by (row, col)."""
    order = np.lexsort((lp.cols, lp.rows))
    return np.column_stack([lp.rows[order], lp.cols[order], lp.coeffs[order]])

