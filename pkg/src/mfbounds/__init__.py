"""Model-free price bounds for path-dependent claims by linear programming.

The usual flow is ``validate_spec -> build_dual_lp -> solve -> certify ->
build_report``; :func:`compute_bound` runs all of it for one side.
"""

from .core import (
    InitialHistory,
    Mesh,
    ProblemSpec,
    Side,
    StateDomain,
    TimeGrid,
    build_paper_mesh,
    interpolation_weights,
    scaled_paper_mesh,
    validate_spec,
)
from .errors import BoundsError
from .lp import SparseLP, build_dual_lp, export_lp, read_mps
from .market import QuoteSet, bs_call, load_quotes_csv, synthesize_quotes
from .oracle import (
    DiscreteMeasure,
    check_measure,
    concave_envelope_on_grid,
    iterated_envelope_value,
    primal_brute_force_lp,
)
from .pipeline import compute_bound, load_config, verify_instance
from .report import BoundReport, build_report, extract_hedges, extract_worst_case_measure
from .solver import LPSolution, Method, SolverConfig, Status, certify, solve

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "BoundsError",
    "DiscreteMeasure",
    "InitialHistory",
    "LPSolution",
    "Mesh",
    "Method",
    "ProblemSpec",
    "QuoteSet",
    "Side",
    "SolverConfig",
    "SparseLP",
    "StateDomain",
    "Status",
    "TimeGrid",
    "bs_call",
    "build_dual_lp",
    "build_paper_mesh",
    "build_report",
    "certify",
    "check_measure",
    "compute_bound",
    "concave_envelope_on_grid",
    "export_lp",
    "extract_hedges",
    "extract_worst_case_measure",
    "interpolation_weights",
    "iterated_envelope_value",
    "load_config",
    "load_quotes_csv",
    "primal_brute_force_lp",
    "read_mps",
    "scaled_paper_mesh",
    "solve",
    "synthesize_quotes",
    "validate_spec",
    "verify_instance",
]
