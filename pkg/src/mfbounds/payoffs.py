"""Payoff descriptors for objectives and call-quote constraint blocks.

Payoffs are evaluated on coordinate lists ``ys = [y_k, y_{k-1}, ..., y_{k-d}]``
whose entries may be scalars or equally shaped arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import ClassVar, Sequence

import numpy as np

from .core import Mesh, flat_index
from .errors import CrossedQuote, DomainError, MismatchedLengths, TableMeshMismatch

GAMMA_LEG_BOUND = 4.0 * math.exp(-2.0)

_KINDS: dict[str, type[Payoff]] = {}


@dataclass(frozen=True, kw_only=True)
class Payoff:
    """Base payoff; ``sign_flip`` negates the value (lower-bound builds)."""

    sign_flip: bool = False

    kind: ClassVar[str] = ""
    arity: ClassVar[int] = 1

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.kind:
            _KINDS[cls.kind] = cls

    def __call__(self, ys: Sequence) -> np.ndarray | float:
        if len(ys) < self.arity:
            raise MismatchedLengths(f"{self.kind} needs {self.arity} coordinates")
        v = self._raw(ys)
        return -v if self.sign_flip else v

    def _raw(self, ys):
        raise NotImplementedError

    def negated(self) -> Payoff:
        return replace(self, sign_flip=not self.sign_flip)

    def affine_witness(self, lo: float, hi: float, d: int):
        """``(intercept, slopes)`` bounding the signed payoff above on [lo, hi]^(d+1)."""
        w = self._witness_flipped(lo, hi) if self.sign_flip else self._witness(lo, hi)
        if w is None:
            return None
        intercept, slopes = w
        slopes = tuple(slopes) + (0.0,) * (d + 1 - len(slopes))
        return float(intercept), tuple(float(s) for s in slopes)

    def _witness(self, lo, hi):
        return None

    def _witness_flipped(self, lo, hi):
        return None

    def to_dict(self) -> dict:
        doc = {"kind": self.kind}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "sign_flip" and not v:
                continue
            doc[f.name] = list(v) if isinstance(v, tuple) else v
        return doc


def payoff_from_dict(doc: dict, mesh: Mesh | None = None) -> Payoff:
    doc = dict(doc)
    kind = doc.pop("kind", None)
    if kind not in _KINDS:
        raise MismatchedLengths(f"unknown payoff kind {kind!r}")
    cls = _KINDS[kind]
    if cls is Table:
        return Table.from_dict(doc, mesh)
    for key, v in list(doc.items()):
        if isinstance(v, list):
            doc[key] = tuple(v)
    return cls(**doc)


def eval_payoff(desc: Payoff, y: Sequence[float]) -> float:
    return float(desc([float(v) for v in y]))


def _positive(*arrays):
    for a in arrays:
        if np.any(np.asarray(a) <= 0):
            raise DomainError("log-based payoff evaluated at a non-positive state")


@dataclass(frozen=True, kw_only=True)
class Zero(Payoff):
    kind: ClassVar[str] = "zero"

    def _raw(self, ys):
        return np.zeros_like(np.asarray(ys[0], dtype=float))

    def _witness(self, lo, hi):
        return 0.0, ()

    _witness_flipped = _witness


@dataclass(frozen=True, kw_only=True)
class Call(Payoff):
    strike: float
    kind: ClassVar[str] = "call"

    def _raw(self, ys):
        return np.maximum(np.asarray(ys[0], dtype=float) - self.strike, 0.0)

    def _witness(self, lo, hi):
        if not math.isfinite(lo):
            return None
        # (y - K)^+ <= (lo - K)^+ + (y - lo) for y >= lo
        return max(lo - self.strike, 0.0) - lo, (1.0,)

    def _witness_flipped(self, lo, hi):
        return 0.0, ()


@dataclass(frozen=True, kw_only=True)
class Put(Payoff):
    strike: float
    kind: ClassVar[str] = "put"

    def _raw(self, ys):
        return np.maximum(self.strike - np.asarray(ys[0], dtype=float), 0.0)

    def _witness(self, lo, hi):
        if not math.isfinite(lo):
            return None
        return max(self.strike - lo, 0.0), ()

    def _witness_flipped(self, lo, hi):
        return 0.0, ()


@dataclass(frozen=True, kw_only=True)
class ForwardStartCall(Payoff):
    """``(y_k - y_{k-1})^+``."""

    kind: ClassVar[str] = "forward_start_call"
    arity: ClassVar[int] = 2

    def _raw(self, ys):
        return np.maximum(np.asarray(ys[0], dtype=float) - ys[1], 0.0)

    def _witness(self, lo, hi):
        if not math.isfinite(lo):
            return None
        # (y - z)^+ <= y - lo whenever y, z >= lo
        return -lo, (1.0, 0.0)

    def _witness_flipped(self, lo, hi):
        return 0.0, ()


@dataclass(frozen=True, kw_only=True)
class NegLogContract(Payoff):
    """``-scale * log(y_k / reference)``."""

    scale: float = 2.0
    reference: float = 100.0
    kind: ClassVar[str] = "neg_log_contract"

    def _raw(self, ys):
        y = np.asarray(ys[0], dtype=float)
        _positive(y)
        return -self.scale * np.log(y / self.reference)

    def _witness(self, lo, hi):
        if self.scale < 0:
            return self._tangent(-self.scale)
        if lo > 0 and math.isfinite(lo):
            return -self.scale * math.log(lo / self.reference), ()
        return None

    def _witness_flipped(self, lo, hi):
        if self.scale >= 0:
            return self._tangent(self.scale)
        return NegLogContract(scale=-self.scale, reference=self.reference)._witness(lo, hi)

    def _tangent(self, s):
        # s * log(y / ref) <= s * (y / ref - 1)
        return -s, (s / self.reference,)


@dataclass(frozen=True, kw_only=True)
class GammaLeg(Payoff):
    """``min(y_k, y_{k-1}) * log(y_k / y_{k-1})**2``."""

    kind: ClassVar[str] = "gamma_leg"
    arity: ClassVar[int] = 2

    def _raw(self, ys):
        y, z = np.asarray(ys[0], dtype=float), np.asarray(ys[1], dtype=float)
        _positive(y, z)
        return np.minimum(y, z) * np.log(y / z) ** 2

    def _witness(self, lo, hi):
        return 0.0, (GAMMA_LEG_BOUND, GAMMA_LEG_BOUND)

    def _witness_flipped(self, lo, hi):
        return 0.0, ()


@dataclass(frozen=True, kw_only=True)
class VarianceLeg(Payoff):
    """``log(y_k / y_{k-1})**2``."""

    kind: ClassVar[str] = "variance_leg"
    arity: ClassVar[int] = 2

    def _raw(self, ys):
        y, z = np.asarray(ys[0], dtype=float), np.asarray(ys[1], dtype=float)
        _positive(y, z)
        return np.log(y / z) ** 2

    def _witness_flipped(self, lo, hi):
        return 0.0, ()


@dataclass(frozen=True, kw_only=True)
class Affine(Payoff):
    intercept: float = 0.0
    slopes: tuple[float, ...] = ()
    kind: ClassVar[str] = "affine"

    @property
    def arity(self) -> int:  # type: ignore[override]
        return max(len(self.slopes), 1)

    def _raw(self, ys):
        out = np.full_like(np.asarray(ys[0], dtype=float), self.intercept)
        for b, y in zip(self.slopes, ys):
            out = out + b * np.asarray(y, dtype=float)
        return out

    def _witness(self, lo, hi):
        return self.intercept, self.slopes

    def _witness_flipped(self, lo, hi):
        return -self.intercept, tuple(-b for b in self.slopes)


@dataclass(frozen=True, kw_only=True, eq=False)
class Table(Payoff):
    """Payoff sampled on every multi-index of a specific mesh."""

    mesh: Mesh
    values: np.ndarray
    kind: ClassVar[str] = "table"

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).ravel()
        m = self.mesh.m
        d1 = round(math.log(vals.size, m)) if vals.size > 1 else 1
        if m**d1 != vals.size:
            raise TableMeshMismatch(f"{vals.size} values is not a power of m={m}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_d1", d1)

    @property
    def arity(self) -> int:  # type: ignore[override]
        return self._d1

    def _raw(self, ys):
        idx = []
        pts = self.mesh.points
        for y in ys[: self._d1]:
            y = np.asarray(y, dtype=float)
            j = np.clip(np.searchsorted(pts, y), 0, pts.size - 1)
            j = np.where(np.abs(pts[j] - y) <= self.mesh.tol, j, np.clip(j - 1, 0, None))
            if np.any(np.abs(pts[j] - y) > self.mesh.tol):
                raise TableMeshMismatch("table payoff evaluated off its mesh")
            idx.append(j)
        flat = sum(i * self.mesh.m**j for j, i in enumerate(idx))
        return self.values[flat]

    def at(self, idx: Sequence[int]) -> float:
        return float(self.values[flat_index(idx, self.mesh.m)])

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "mesh_hash": self.mesh.hash, "values": self.values.tolist()}
        if self.sign_flip:
            doc["sign_flip"] = True
        return doc

    @classmethod
    def from_dict(cls, doc: dict, mesh: Mesh | None) -> Table:
        if mesh is None or doc.get("mesh_hash") != mesh.hash:
            raise TableMeshMismatch("table payoff references a different mesh")
        return cls(mesh=mesh, values=np.asarray(doc["values"]), sign_flip=doc.get("sign_flip", False))


@dataclass(frozen=True)
class Quote:
    """Bid/ask for a call struck at ``strike`` expiring at ``T_{expiry_index}``."""

    expiry_index: int
    strike: float
    bid: float
    ask: float

    def __post_init__(self):
        if not math.isfinite(self.strike) or self.strike <= 0:
            raise DomainError(f"strike must be positive and finite, got {self.strike}")
        if self.bid < 0:
            raise DomainError(f"negative bid {self.bid}")
        if self.bid > self.ask:
            raise CrossedQuote(f"bid {self.bid} above ask {self.ask} at strike {self.strike}")

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class ConstraintBlock:
    """Quotes for one expiry; contributes ``p_k = 2 * len(quotes)`` components."""

    quotes: tuple[Quote, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "quotes", tuple(self.quotes))

    @property
    def p(self) -> int:
        return 2 * len(self.quotes)

    def to_dict(self) -> list:
        return [[q.expiry_index, q.strike, q.bid, q.ask] for q in self.quotes]

    @classmethod
    def from_dict(cls, doc) -> ConstraintBlock:
        return cls(tuple(Quote(int(k), float(s), float(b), float(a)) for k, s, b, a in doc))


def constraint_vector(block: ConstraintBlock, ys: Sequence) -> np.ndarray:
    """Stack ``[(y_k - K)^+ - bid, ask - (y_k - K)^+]`` per quote along axis 0."""
    y = np.asarray(ys[0], dtype=float)
    out = np.empty((block.p,) + y.shape)
    for ell, q in enumerate(block.quotes):
        intrinsic = np.maximum(y - q.strike, 0.0)
        out[2 * ell] = intrinsic - q.bid
        out[2 * ell + 1] = q.ask - intrinsic
    return out
