"""``mfbounds`` command line: bound, verify and quotes-synth.

Exit codes: 0 success, 2 configuration error, 3 solver did not reach
optimality, 4 certificate failure, 5 oracle disagreement.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core import Side
from .errors import BoundsError, Infeasible
from .market import write_quotes_csv
from .oracle import DEFAULT_MAX_PATHS
from .pipeline import (
    ConfigError,
    compute_bound,
    load_config,
    load_quotes,
    reduced_mesh,
    verify_instance,
)
from .report import emit_report

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CERT, EXIT_ORACLE = 0, 2, 3, 4, 5

EXTENSIONS = {"json": "json", "csv": "csv", "table": "txt"}

#: residual thresholds for the worst-case measure, relative to spot / bound
MEASURE_TOL = 1e-6


def _sides(arg: str) -> list[Side]:
    return [Side.UPPER, Side.LOWER] if arg == "both" else [Side(arg)]


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output.get("dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_bound(args) -> int:
    cfg = load_config(args.config)
    mesh = cfg.mesh(args.mesh_scale)
    spec = cfg.full_spec()
    fmt = args.format or cfg.output.get("format", "json")
    out = _out_dir(args, cfg)
    max_paths = int(cfg.oracle.get("max_paths", DEFAULT_MAX_PATHS))
    values = {}
    code = EXIT_OK
    for side in _sides(args.side):
        run = compute_bound(spec, mesh, side, cfg.solver, max_paths=max_paths)
        if run.report is None:
            print(f"{side.value}: solver status {run.status.value}", file=sys.stderr)
            return EXIT_SOLVER
        rep = run.report
        values[side] = rep.bound
        line = f"{side.value} bound: {rep.bound:.6f}"
        if rep.annualized_vol is not None:
            line += f"  (annualized vol {100 * rep.annualized_vol:.2f}%)"
        print(line)
        path = out / f"{cfg.name}_{side.value}.{EXTENSIONS[fmt]}"
        emit_report(rep, fmt, path, times=spec.time_grid.future)
        if not run.certified:
            print(f"{side.value}: certificate failed: {run.certificate.passed}", file=sys.stderr)
            code = max(code, EXIT_CERT)
        if args.oracle == "on":
            check = rep.diagnostics.get("worst_case_check")
            if check is not None:
                spot = abs(spec.history.x0)
                bad_mart = check["martingale_residual"] > MEASURE_TOL * max(1.0, spot)
                gap = abs(check["signed_objective"] - rep.lp_objective)
                bad_obj = gap > MEASURE_TOL * max(1.0, abs(rep.lp_objective))
                if bad_mart or bad_obj:
                    print(f"{side.value}: worst-case measure check failed: {check}", file=sys.stderr)
                    code = max(code, EXIT_ORACLE)
    if len(values) == 2 and values[Side.LOWER] > values[Side.UPPER] + 1e-8 * max(
        1.0, abs(values[Side.UPPER])
    ):
        print("lower bound exceeds upper bound", file=sys.stderr)
        code = max(code, EXIT_CERT)
    return code


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.full_spec()
    mesh = cfg.mesh(args.mesh_scale)
    if "mesh" in cfg.oracle:
        from .core import Mesh

        small = Mesh(cfg.oracle["mesh"])
    else:
        small = reduced_mesh(spec, mesh)
    max_paths = int(cfg.oracle.get("max_paths", DEFAULT_MAX_PATHS))
    print(f"oracle mesh: {small.m} nodes {small.to_list()}")
    ok = True
    for side in _sides(args.side):
        try:
            checks = verify_instance(spec.with_side(side), small, cfg.solver, max_paths)
        except Infeasible as exc:
            print(f"{side.value}: PrimalInfeasible: {exc}")
            return EXIT_ORACLE
        for c in checks:
            print(f"{side.value}: {c.line()}")
            ok &= c.passed
    return EXIT_OK if ok else EXIT_ORACLE


def cmd_quotes_synth(args) -> int:
    cfg = load_config(args.config)
    if "synth" not in cfg.quotes_doc:
        raise ConfigError("quotes-synth needs a 'synth' quote section")
    quotes = load_quotes({"synth": cfg.quotes_doc["synth"]}, cfg.spec, cfg.base_dir)
    out = _out_dir(args, cfg)
    path = out / cfg.output.get("quotes_csv", f"{cfg.name}_quotes.csv")
    write_quotes_csv(quotes, path)
    print(f"wrote {len(quotes)} quotes to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfbounds", description="Model-free price bounds by LP.")
    p.add_argument("command", choices=["bound", "verify", "quotes-synth"])
    p.add_argument("--config", required=True, help="config path or bundled name")
    p.add_argument("--side", choices=["upper", "lower", "both"], default="both")
    p.add_argument("--format", choices=sorted(EXTENSIONS), default=None)
    p.add_argument("--mesh-scale", type=float, default=1.0)
    p.add_argument("--oracle", choices=["on", "off"], default="on")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


COMMANDS = {"bound": cmd_bound, "verify": cmd_verify, "quotes-synth": cmd_quotes_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except BoundsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
