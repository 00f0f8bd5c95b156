"""Problem instances, meshes and multilinear interpolation.

Grid functions over ``m**(d+1)`` multi-indices ``(i_0, ..., i_d)`` are stored
flat with ``i_0`` varying fastest, i.e. ``flat = sum(i_j * m**j)``.  Indices are
0-based throughout.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Any, Sequence

import numpy as np

from .errors import (
    BoundaryIndex,
    BoundsError,
    DegenerateRange,
    EmptyTimes,
    HistoryOutsideDomain,
    MeshOutsideDomain,
    MismatchedLengths,
    PointOutsideHull,
    UnboundedPayoffOnUnboundedMesh,
)

#: absolute tolerance, relative to the mesh scale, used in validation
VALIDATION_TOL = 1e-9


class Side(str, enum.Enum):
    UPPER = "upper"
    LOWER = "lower"

    @property
    def sign(self) -> float:
        return 1.0 if self is Side.UPPER else -1.0


def history_length(d: int) -> int:
    """Number of known values ``x_0, ..., x_{1-d}`` (one when ``d == 0``)."""
    return max(d, 1)


@dataclass(frozen=True)
class TimeGrid:
    """Monitoring times ``T_{1-d} < ... < T_0 = 0 < T_1 < ... < T_n``.

    ``times`` holds ``max(d, 1)`` known times (the last of which is 0)
    followed by the ``n`` future monitoring dates.
    """

    times: tuple[float, ...]
    n: int
    d: int

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if not times:
            raise EmptyTimes("time grid has no times")
        if self.n < 1 or self.d < 0:
            raise MismatchedLengths(f"need n >= 1 and d >= 0, got n={self.n}, d={self.d}")
        h = history_length(self.d)
        if len(times) != self.n + h:
            raise MismatchedLengths(
                f"expected {self.n + h} times for n={self.n}, d={self.d}, got {len(times)}"
            )
        if any(b <= a for a, b in zip(times, times[1:])):
            raise MismatchedLengths("times must be strictly increasing")
        if times[h - 1] != 0.0:
            raise MismatchedLengths("the last known time T_0 must be 0")

    @classmethod
    def from_future(cls, future: Sequence[float], d: int, past: Sequence[float] = ()):
        """Build from the future dates; ``past`` lists ``T_{1-d}..T_{-1}``."""
        if len(past) != history_length(d) - 1:
            raise MismatchedLengths(f"need {history_length(d) - 1} past times for d={d}")
        return cls(tuple(past) + (0.0,) + tuple(future), len(future), d)

    def expiry(self, k: int) -> float:
        """Time ``T_k`` for ``k`` in ``1..n``."""
        if not 1 <= k <= self.n:
            raise MismatchedLengths(f"expiry index {k} outside 1..{self.n}")
        return self.times[history_length(self.d) - 1 + k]

    @property
    def future(self) -> tuple[float, ...]:
        return self.times[history_length(self.d):]


@dataclass(frozen=True)
class StateDomain:
    """Convex state set C as an interval with open/closed ends."""

    lower: float = -math.inf
    upper: float = math.inf
    open_lower: bool = False
    open_upper: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise DegenerateRange(f"empty domain [{self.lower}, {self.upper}]")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lower) and math.isfinite(self.upper)

    def contains(self, x: float, tol: float = 0.0) -> bool:
        ok_lo = x > self.lower if self.open_lower else x >= self.lower - tol
        ok_hi = x < self.upper if self.open_upper else x <= self.upper + tol
        return ok_lo and ok_hi


@dataclass(frozen=True)
class InitialHistory:
    """Known values ``(x_0, x_{-1}, ..., x_{1-d})``, most recent first."""

    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise MismatchedLengths("history needs at least x_0")

    @property
    def x0(self) -> float:
        return self.values[0]

    def start_point(self, d: int) -> tuple[float, ...]:
        """The point ``(x_0, x_0, ..., x_{1-d})`` at which phi_1 is evaluated."""
        return (self.values[0],) + self.values[:d]


class Mesh:
    """Strictly increasing grid ``y_0 < ... < y_{m-1}`` (immutable)."""

    __slots__ = ("_points", "_hash")

    def __init__(self, points: Sequence[float]):
        pts = np.array(points, dtype=float).ravel()
        if pts.size < 3:
            raise DegenerateRange(f"mesh needs at least 3 points, got {pts.size}")
        if not np.all(np.isfinite(pts)):
            raise DegenerateRange("mesh points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise DegenerateRange("mesh points must be strictly increasing")
        pts.flags.writeable = False
        self._points = pts
        self._hash = hashlib.sha256(pts.astype("<f8").tobytes()).hexdigest()

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def m(self) -> int:
        return self._points.size

    @property
    def hash(self) -> str:
        """Content hash used to pin grid-aligned data to this mesh."""
        return self._hash

    @property
    def lo(self) -> float:
        return float(self._points[0])

    @property
    def hi(self) -> float:
        return float(self._points[-1])

    @property
    def tol(self) -> float:
        return VALIDATION_TOL * max(1.0, abs(self.lo), abs(self.hi))

    def __len__(self):
        return self.m

    def __getitem__(self, i):
        return self._points[i]

    def __eq__(self, other):
        return isinstance(other, Mesh) and other._hash == self._hash

    def __hash__(self):
        return hash(self._hash)

    def __repr__(self):
        return f"Mesh(m={self.m}, lo={self.lo:g}, hi={self.hi:g})"

    def index_of(self, x: float) -> int | None:
        """Index of the node equal to ``x`` (within tolerance), else None."""
        j = int(np.searchsorted(self._points, x))
        for i in (j - 1, j):
            if 0 <= i < self.m and abs(self._points[i] - x) <= self.tol:
                return i
        return None

    def contains(self, x: float) -> bool:
        return self.lo - self.tol <= x <= self.hi + self.tol

    def grid(self, d: int) -> list[np.ndarray]:
        """Node values ``[y_{i_0}, ..., y_{i_d}]`` over all multi-indices, flat."""
        return [self._points[a] for a in multi_indices(self.m, d)]

    def to_list(self) -> list[float]:
        return self._points.tolist()

    @classmethod
    def from_list(cls, values) -> Mesh:
        return cls(values)


def multi_indices(m: int, d: int) -> list[np.ndarray]:
    """Per-axis index arrays ``[i_0, ..., i_d]`` over the flat ordering."""
    flat = np.arange(m ** (d + 1))
    return [(flat // m**j) % m for j in range(d + 1)]


def flat_index(idx: Sequence[int], m: int) -> int:
    return int(sum(int(i) * m**j for j, i in enumerate(idx)))


def build_paper_mesh(
    center: float,
    dense_lo: float,
    dense_hi: float,
    dense_step: float,
    coarse_step: float,
    tail_lo: float,
    cap: float,
) -> Mesh:
    """Coarse wings around a dense centre block, plus one far cap node.

    The wings are laid out from the dense block outwards in ``coarse_step``
    strides: the lower wing stops above ``tail_lo`` (which is then added
    itself), the upper wing takes the same number of strides as the lower
    one.  ``build_paper_mesh(100, 70, 130, 1, 10, 0, 10000)`` gives
    ``{0, 10, ..., 60, 70, 71, ..., 130, 140, ..., 200, 10000}``.
    """
    if dense_step <= 0 or coarse_step <= 0:
        raise DegenerateRange("steps must be positive")
    if not (tail_lo <= dense_lo <= dense_hi <= cap) or not dense_lo <= center <= dense_hi:
        raise DegenerateRange("need tail_lo <= dense_lo <= center <= dense_hi <= cap")
    eps = VALIDATION_TOL * max(1.0, abs(cap), abs(tail_lo))
    pts = {float(tail_lo), float(dense_lo), float(dense_hi), float(cap)}

    n_lower = math.ceil((dense_lo - tail_lo) / coarse_step - eps)
    for j in range(1, n_lower):
        pts.add(dense_lo - j * coarse_step)

    n_dense = math.floor((dense_hi - dense_lo) / dense_step + eps)
    for j in range(1, n_dense + 1):
        x = dense_lo + j * dense_step
        if x < dense_hi - eps:
            pts.add(x)

    for j in range(1, n_lower + 1):
        x = dense_hi + j * coarse_step
        if x < cap:
            pts.add(x)

    mesh = Mesh(sorted(pts))
    return mesh


def scaled_paper_mesh(params: dict, scale: float = 1.0) -> Mesh:
    """``build_paper_mesh`` with both steps divided by ``scale``."""
    if scale <= 0:
        raise DegenerateRange("mesh scale must be positive")
    p = dict(params)
    p["dense_step"] = p["dense_step"] / scale
    p["coarse_step"] = p["coarse_step"] / scale
    return build_paper_mesh(**p)


@dataclass(frozen=True)
class InterpolationWeights:
    """Sparse multilinear interpolation weights over multi-indices."""

    entries: dict[tuple[int, ...], float]

    def total(self) -> float:
        return math.fsum(self.entries.values())

    def dense(self, m: int) -> np.ndarray:
        d1 = len(next(iter(self.entries)))
        out = np.zeros(m**d1)
        for idx, w in self.entries.items():
            out[flat_index(idx, m)] += w
        return out

    def reconstruct(self, mesh: Mesh) -> tuple[float, ...]:
        d1 = len(next(iter(self.entries)))
        return tuple(
            math.fsum(w * mesh[idx[j]] for idx, w in self.entries.items()) for j in range(d1)
        )


def _axis_weights(mesh: Mesh, x: float) -> list[tuple[int, float]]:
    if not mesh.contains(x):
        raise PointOutsideHull(f"{x} outside mesh hull [{mesh.lo}, {mesh.hi}]")
    node = mesh.index_of(x)
    if node is not None:
        return [(node, 1.0)]
    pts = mesh.points
    j = int(np.searchsorted(pts, x)) - 1
    a, b = pts[j], pts[j + 1]
    wb = (x - a) / (b - a)
    return [(j, 1.0 - wb), (j + 1, wb)]


def interpolation_weights(mesh: Mesh, point: Sequence[float]) -> InterpolationWeights:
    """Tensor-product linear interpolation weights of ``point`` on the mesh."""
    axes = [_axis_weights(mesh, float(x)) for x in point]
    entries = {}
    for combo in product(*axes):
        idx = tuple(i for i, _ in combo)
        entries[idx] = math.prod(w for _, w in combo)
    return InterpolationWeights(entries)


def second_diff_row(mesh: Mesh, i0: int) -> tuple[float, float, float]:
    """Coefficients on ``(phi[i0+1], phi[i0], phi[i0-1])`` of the concavity row.

    ``i0`` is 0-based and must be interior (``1 <= i0 <= m-2``).
    """
    if not 1 <= i0 <= mesh.m - 2:
        raise BoundaryIndex(f"index {i0} is not interior to a mesh of {mesh.m} points")
    y = mesh.points
    return (
        float(y[i0 - 1] - y[i0]),
        float(y[i0 + 1] - y[i0 - 1]),
        float(y[i0] - y[i0 + 1]),
    )


@dataclass(frozen=True)
class ProblemSpec:
    time_grid: TimeGrid
    domain: StateDomain
    history: InitialHistory
    objectives: tuple  # one payoff per k = 1..n
    constraints: tuple  # one ConstraintBlock per k = 1..n
    side: Side = Side.UPPER

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "side", Side(self.side))

    @property
    def n(self) -> int:
        return self.time_grid.n

    @property
    def d(self) -> int:
        return self.time_grid.d

    @property
    def p_k(self) -> list[int]:
        return [block.p for block in self.constraints]

    @property
    def p(self) -> int:
        return sum(self.p_k)

    def with_side(self, side) -> ProblemSpec:
        return replace(self, side=Side(side))

    def with_constraints(self, blocks) -> ProblemSpec:
        return replace(self, constraints=tuple(blocks))

    def without_constraints(self) -> ProblemSpec:
        from .payoffs import ConstraintBlock

        return replace(self, constraints=tuple(ConstraintBlock() for _ in range(self.n)))

    def signed_objectives(self) -> tuple:
        """Objectives as maximised: negated on the lower side."""
        if self.side is Side.UPPER:
            return self.objectives
        return tuple(f.negated() for f in self.objectives)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "d": self.d,
            "times": list(self.time_grid.times),
            "domain": {
                "lower": _num_out(self.domain.lower),
                "upper": _num_out(self.domain.upper),
                "open_lower": self.domain.open_lower,
                "open_upper": self.domain.open_upper,
            },
            "history": list(self.history.values),
            "objectives": [f.to_dict() for f in self.objectives],
            "constraints": [b.to_dict() for b in self.constraints],
            "side": self.side.value,
        }

    @classmethod
    def from_dict(cls, doc: dict, mesh: Mesh | None = None) -> ProblemSpec:
        from .payoffs import ConstraintBlock, payoff_from_dict

        try:
            n, d = int(doc["n"]), int(doc["d"])
            grid = TimeGrid(tuple(doc.get("times") or ()), n, d)
            dom = doc.get("domain", {})
            domain = StateDomain(
                _num_in(dom.get("lower"), -math.inf),
                _num_in(dom.get("upper"), math.inf),
                bool(dom.get("open_lower", False)),
                bool(dom.get("open_upper", False)),
            )
            history = InitialHistory(tuple(doc["history"]))
            objectives = tuple(payoff_from_dict(f, mesh=mesh) for f in doc["objectives"])
            blocks = doc.get("constraints")
            if blocks is None:
                constraints = tuple(ConstraintBlock() for _ in range(n))
            else:
                constraints = tuple(ConstraintBlock.from_dict(b) for b in blocks)
        except KeyError as exc:
            raise MismatchedLengths(f"spec document missing key {exc}") from None
        return cls(grid, domain, history, objectives, constraints, Side(doc.get("side", "upper")))


def _num_out(x: float):
    return None if math.isinf(x) else x


def _num_in(x, default: float) -> float:
    return default if x is None else float(x)


@dataclass(frozen=True)
class ValidatedSpec:
    """A checked spec plus per-objective affine upper-bound witnesses.

    ``witnesses[k-1]`` is ``(intercept, slopes)`` with
    ``f_k(y) <= intercept + slopes . y`` on ``effective_domain``, or None when
    the payoff kind carries none (allowed only on a bounded domain).
    """

    spec: ProblemSpec
    witnesses: tuple
    effective_domain: tuple[float, float]
    mesh_hash: str | None = field(default=None)

    def __getattr__(self, name):
        # delegate read-only attributes (n, d, p, history, ...) to the spec
        return getattr(self.spec, name)


def validate_spec(spec: ProblemSpec, mesh: Mesh | None = None) -> ValidatedSpec:
    """Check lengths, domain membership and affine bounds of a spec.

    With a mesh, unbounded ends of C are truncated at the mesh extremes and
    every mesh point must lie in C.
    """
    if isinstance(spec, ValidatedSpec):
        spec = spec.spec
    n, d = spec.n, spec.d
    if not spec.time_grid.times:
        raise EmptyTimes("time grid has no times")
    if len(spec.objectives) != n:
        raise MismatchedLengths(f"{len(spec.objectives)} objectives for n={n}")
    if len(spec.constraints) != n:
        raise MismatchedLengths(f"{len(spec.constraints)} constraint blocks for n={n}")
    if len(spec.history.values) != history_length(d):
        raise MismatchedLengths(
            f"history has {len(spec.history.values)} values, expected {history_length(d)}"
        )
    for k, f in enumerate(spec.objectives, start=1):
        if f.arity > d + 1:
            raise MismatchedLengths(f"objective {k} needs {f.arity} coordinates, d+1={d + 1}")
    for k, block in enumerate(spec.constraints, start=1):
        for q in block.quotes:
            if q.expiry_index != k:
                raise MismatchedLengths(f"quote {q} filed under expiry {k}")

    dom = spec.domain
    for x in spec.history.values:
        if not dom.contains(x):
            raise HistoryOutsideDomain(f"history value {x} outside C")

    lo, hi = dom.lower, dom.upper
    if mesh is not None:
        for y in (mesh.lo, mesh.hi):
            if not dom.contains(y):
                raise MeshOutsideDomain(f"mesh point {y} outside C")
        lo, hi = max(lo, mesh.lo), min(hi, mesh.hi)
        for block in spec.constraints:
            for q in block.quotes:
                if not mesh.contains(q.strike):
                    raise MeshOutsideDomain(f"strike {q.strike} beyond the mesh hull")

    witnesses = []
    for f in spec.signed_objectives():
        w = f.affine_witness(lo, hi, d)
        if w is None and not (math.isfinite(lo) and math.isfinite(hi)):
            raise UnboundedPayoffOnUnboundedMesh(
                f"{f!r} has no affine upper bound on [{lo}, {hi}]"
            )
        witnesses.append(w)
    return ValidatedSpec(spec, tuple(witnesses), (lo, hi), mesh.hash if mesh else None)
