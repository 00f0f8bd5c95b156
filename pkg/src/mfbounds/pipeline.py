"""End-to-end runs: config loading, bound computation and oracle verification."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .core import Mesh, ProblemSpec, Side, build_paper_mesh, scaled_paper_mesh, validate_spec
from .errors import BoundsError, Infeasible, TooManyPaths
from .lp import build_dual_lp
from .market import QuoteSet, load_quotes_csv, synthesize_quotes
from .oracle import (
    DEFAULT_MAX_PATHS,
    check_measure,
    iterated_envelope_value,
    lagrangian_functions,
    primal_brute_force_lp,
    random_grid_martingale,
)
from .report import BoundReport, build_report, lagrangian_value
from .solver import SolverConfig, Status, certify, solve

BUNDLED = ("forward_start", "variance_swap", "gamma_swap")


class ConfigError(BoundsError):
    pass


# ----------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    name: str
    spec: ProblemSpec
    mesh_doc: dict
    quotes_doc: dict
    solver: SolverConfig
    output: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    base_dir: Path = Path(".")

    def mesh(self, scale: float = 1.0) -> Mesh:
        doc = dict(self.mesh_doc)
        if "points" in doc:
            if scale != 1.0:
                raise ConfigError("--mesh-scale applies only to parametrised meshes")
            return Mesh(doc["points"])
        doc.pop("kind", None)
        try:
            if scale == 1.0:
                return build_paper_mesh(**doc)
            return scaled_paper_mesh(doc, scale)
        except TypeError as exc:
            raise ConfigError(f"bad mesh parameters: {exc}") from None

    def quotes(self) -> QuoteSet:
        return load_quotes(self.quotes_doc, self.spec, self.base_dir)

    def full_spec(self) -> ProblemSpec:
        return self.spec.with_constraints(self.quotes().blocks(self.spec.n))


def _expand_objectives(doc: dict) -> dict:
    doc = dict(doc)
    obj = doc.get("objectives")
    if isinstance(obj, dict):
        n = int(doc["n"])
        default = obj.get("default", {"kind": "zero"})
        at = {int(k): v for k, v in obj.get("at", {}).items()}
        doc["objectives"] = [at.get(k, default) for k in range(1, n + 1)]
    if "future_times" in doc and "times" not in doc:
        past = list(doc.get("past_times", []))
        doc["times"] = past + [0.0] + list(doc.pop("future_times"))
    return doc


def _strike_list(doc) -> list[float]:
    if isinstance(doc, dict):
        start, stop, step = float(doc["start"]), float(doc["stop"]), float(doc["step"])
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(count)]
    return [float(s) for s in doc]


def synth_expiries(doc: dict, spec: ProblemSpec | None) -> list[tuple[int, float]]:
    out = []
    for e in doc.get("expiries", []):
        if isinstance(e, (list, tuple)):
            out.append((int(e[0]), float(e[1])))
        else:
            if spec is None:
                raise ConfigError("expiry indices need a spec to look up times")
            out.append((int(e), spec.time_grid.expiry(int(e))))
    return out


def load_quotes(doc: dict, spec: ProblemSpec | None, base_dir: Path) -> QuoteSet:
    sources = [k for k in ("synth", "csv") if k in doc]
    if len(sources) != 1:
        raise ConfigError("quotes need exactly one of 'synth' or 'csv'")
    if "csv" in doc:
        return load_quotes_csv(base_dir / doc["csv"])
    s = doc["synth"]
    try:
        return synthesize_quotes(
            float(s["spot"]),
            float(s["vol"]),
            synth_expiries(s, spec),
            _strike_list(s.get("strikes", [])),
            float(s.get("half_spread", 0.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"synth quotes missing {exc}") from None


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("mfbounds") / "configs" / f"{name}.json"))


def load_config(ref: str) -> RunConfig:
    """Load a JSON run config from a path or a bundled name."""
    path = Path(ref)
    if not path.exists() and ref in BUNDLED:
        path = bundled_path(ref)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config {ref!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {ref!r} is not valid JSON: {exc}") from None
    return config_from_dict(doc, name=path.stem, base_dir=path.parent)


def config_from_dict(doc: dict, name: str = "run", base_dir: Path = Path(".")) -> RunConfig:
    for key in ("spec", "mesh", "quotes"):
        if key not in doc:
            raise ConfigError(f"config lacks the '{key}' section")
    spec_doc = doc["spec"]
    if isinstance(spec_doc, str):
        spec_doc = json.loads((base_dir / spec_doc).read_text(encoding="utf-8"))
    try:
        spec = ProblemSpec.from_dict(_expand_objectives(spec_doc))
        solver = SolverConfig.from_dict(doc.get("solver"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, BoundsError):
            raise
        raise ConfigError(f"bad spec or solver section: {exc}") from None
    return RunConfig(
        name=doc.get("name", name),
        spec=spec,
        mesh_doc=dict(doc["mesh"]),
        quotes_doc=dict(doc["quotes"]),
        solver=solver,
        output=dict(doc.get("output", {})),
        oracle=dict(doc.get("oracle", {})),
        base_dir=base_dir,
    )


# ----------------------------------------------------------------------------
# bounds


@dataclass
class BoundRun:
    report: BoundReport | None
    status: Status
    certificate: object = None
    lp: object = None
    solution: object = None

    @property
    def certified(self) -> bool:
        return self.certificate is not None and self.certificate.ok


def compute_bound(
    spec: ProblemSpec,
    mesh: Mesh,
    side=None,
    solver: SolverConfig | None = None,
    certify_tol: float = 1e-8,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> BoundRun:
    """validate -> build -> solve -> certify -> report for one side."""
    if side is not None:
        spec = spec.with_side(side)
    vspec = validate_spec(spec, mesh)
    lp = build_dual_lp(vspec, mesh)
    sol = solve(lp, solver)
    if not sol.optimal:
        return BoundRun(None, sol.status, None, lp, sol)
    cert = certify(lp, sol, certify_tol)
    report = build_report(sol, lp, spec, mesh, cert, max_paths)
    return BoundRun(report, sol.status, cert, lp, sol)


# ----------------------------------------------------------------------------
# verification


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool
    note: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.note})" if self.note else ""
        return f"[{flag}] {self.name}: {self.value:.3e} (tol {self.tol:.0e}){extra}"


def reduced_mesh(spec: ProblemSpec, mesh: Mesh) -> Mesh:
    """Strikes, the history and the two mesh ends: a small mesh for oracles."""
    pts = {mesh.lo, mesh.hi, *spec.history.values}
    for block in spec.constraints:
        pts.update(q.strike for q in block.quotes)
    return Mesh(sorted(pts))


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def verify_instance(
    spec: ProblemSpec,
    mesh: Mesh,
    solver: SolverConfig | None = None,
    max_paths: int = DEFAULT_MAX_PATHS,
    samples: int = 20,
    seed: int = 0,
) -> list[CheckResult]:
    """Duality checks of one side of ``spec`` on ``mesh``.

    Raises ``Infeasible`` when no grid martingale measure meets the quotes.
    """
    checks: list[CheckResult] = []
    validate_spec(spec, mesh)
    lp = build_dual_lp(spec, mesh)
    sol = solve(lp, solver)
    brute = None
    try:
        brute = primal_brute_force_lp(spec, mesh, max_paths)
    except TooManyPaths as exc:
        checks.append(CheckResult("brute-force primal = dual", 0.0, 1e-6, True, f"skipped: {exc}"))
    if not sol.optimal:
        raise Infeasible(
            f"dual LP status {sol.status.value}: no martingale measure on the grid "
            "is consistent with the quotes, so the existence hypothesis fails"
        )
    cert = certify(lp, sol)
    checks.append(CheckResult("LP certificate gap", cert.gap, cert.tol, cert.ok))
    if brute is not None:
        value, measure = brute
        checks.append(
            CheckResult("brute-force primal = dual", _rel(value, sol.objective), 1e-6,
                        _rel(value, sol.objective) <= 1e-6)
        )
        fr = check_measure(measure, spec)
        excess = fr.signed_objective - sol.objective
        checks.append(CheckResult("weak duality (optimal measure)", excess, 1e-8, excess <= 1e-8))

    free = spec.without_constraints()
    lp0 = build_dual_lp(free, mesh)
    sol0 = solve(lp0, solver)
    env, _ = iterated_envelope_value(lagrangian_functions(free, mesh), mesh, spec.history)
    if sol0.optimal:
        r = _rel(sol0.objective, env)
        checks.append(CheckResult("p=0 LP = iterated envelope", r, 1e-8, r <= 1e-8))
    else:
        checks.append(CheckResult("p=0 LP = iterated envelope", math.inf, 1e-8, False,
                                  f"LP status {sol0.status.value}"))

    # super-hedge inequality against random grid martingales
    rng = np.random.default_rng(seed)
    report = build_report(sol, lp, spec, mesh, cert)
    worst = 0.0
    for _ in range(samples):
        q = random_grid_martingale(mesh, spec.history, spec.n, rng)
        worst = max(worst, lagrangian_value(report.hedges, spec, q) - sol.objective)
    checks.append(CheckResult("super-hedge margin over random martingales", worst, 1e-8, worst <= 1e-8))
    return checks
