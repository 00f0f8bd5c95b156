"""Acceptance criteria: reproduction targets and grid duality properties.

Each test records one PASS/FAIL line, collected in the terminal summary.
Reference figures are the documented super/sub-replication values.
"""

import time

import highspy
import numpy as np
import pytest

from acceptance_log import record
from instances import random_instance
from mfbounds.lp import build_dual_lp, export_lp, read_mps
from mfbounds.oracle import (
    check_measure,
    iterated_envelope_value,
    lagrangian_functions,
    primal_brute_force_lp,
    random_grid_martingale,
)
from mfbounds.pipeline import compute_bound, load_config
from mfbounds.report import extract_worst_case_measure, lagrangian_value
from mfbounds.solver import SolverConfig, certify, solve

FS_TARGET = {"upper": 5.2708, "lower": 1.9266}
VS_TARGET = {"upper": 0.0208, "lower": 0.0156}
VS_VOL_TARGET = {"upper": 0.223, "lower": 0.193}
GS_TARGET = {"upper": 1.9389, "lower": 1.2443}

SEEDS = range(60)
FREE_SEEDS = range(60)
MEASURE_TOL = 1e-6


def rel(a, b):
    return abs(a - b) / abs(b)


def run_config(name, scale=1.0):
    cfg = load_config(name)
    spec, mesh = cfg.full_spec(), cfg.mesh(scale)
    t0 = time.perf_counter()
    runs = {side: compute_bound(spec, mesh, side, cfg.solver) for side in ("upper", "lower")}
    return runs, time.perf_counter() - t0, spec, mesh


def measure_ok(measure, spec, objective, spot):
    fr = check_measure(measure, spec)
    return (
        fr.martingale_residual <= MEASURE_TOL * spot
        and fr.min_slack >= -MEASURE_TOL
        and fr.normalization_error <= MEASURE_TOL
        and abs(fr.signed_objective - objective) <= MEASURE_TOL * max(1.0, abs(objective))
    ), fr


@pytest.fixture(scope="module")
def forward_start():
    return run_config("forward_start")


@pytest.fixture(scope="module")
def variance_swap():
    return run_config("variance_swap")


@pytest.fixture(scope="module")
def grid_instances():
    """Criterion 4 instances with their LP and brute-force solutions."""
    out = []
    t0 = time.perf_counter()
    for seed in SEEDS:
        inst = random_instance(seed, max_n=3, max_d=1, m_range=(3, 9), max_quotes=3)
        lp = build_dual_lp(inst.spec, inst.mesh)
        sol = solve(lp)
        value, measure = primal_brute_force_lp(inst.spec, inst.mesh)
        out.append((inst, lp, sol, value, measure))
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def free_instances():
    """Criterion 5 instances (no quotes) with LP and envelope values."""
    out = []
    for seed in FREE_SEEDS:
        inst = random_instance(seed, max_n=4, max_d=1, m_range=(3, 40), max_quotes=0)
        lp = build_dual_lp(inst.spec, inst.mesh)
        sol = solve(lp)
        env, _ = iterated_envelope_value(
            lagrangian_functions(inst.spec, inst.mesh), inst.mesh, inst.spec.history
        )
        out.append((inst, lp, sol, env))
    return out


# ----------------------------------------------------------------------------
# 1-3: reproduction


def test_criterion_1_forward_start(forward_start):
    runs, elapsed, _, _ = forward_start
    bounds = {s: r.report.bound for s, r in runs.items()}
    errs = {s: rel(bounds[s], FS_TARGET[s]) for s in bounds}
    ok = all(e <= 0.01 for e in errs.values()) and elapsed <= 60 and all(
        r.certified for r in runs.values()
    )
    record(
        "1 (forward start)",
        ok,
        f"upper {bounds['upper']:.4f} ({100 * errs['upper']:+.2f}% vs 5.2708), "
        f"lower {bounds['lower']:.4f} ({100 * errs['lower']:.2f}% vs 1.9266), {elapsed:.1f}s",
    )
    assert ok


def test_criterion_2_variance_swap(variance_swap):
    runs, elapsed, _, _ = variance_swap
    bounds = {s: r.report.bound for s, r in runs.items()}
    vols = {s: r.report.annualized_vol for s, r in runs.items()}
    ok = (
        all(rel(bounds[s], VS_TARGET[s]) <= 0.02 for s in bounds)
        and all(abs(vols[s] - VS_VOL_TARGET[s]) <= 0.005 for s in vols)
        and elapsed <= 5
        and all(r.certified for r in runs.values())
    )
    record(
        "2 (variance swap)",
        ok,
        f"upper {bounds['upper']:.6f} (vol {100 * vols['upper']:.2f}%), "
        f"lower {bounds['lower']:.6f} (vol {100 * vols['lower']:.2f}%), {elapsed:.2f}s",
    )
    assert ok


@pytest.fixture(scope="module")
def gamma_ci():
    return run_config("gamma_swap", scale=0.5)


def test_criterion_3_gamma_swap_ci(gamma_ci):
    runs, elapsed, _, mesh = gamma_ci
    up, lo = runs["upper"].report.bound, runs["lower"].report.bound
    strict = lo <= GS_TARGET["lower"] <= up
    # the reference figures carry the criterion's +-2% tolerance
    tolerant = lo <= GS_TARGET["lower"] * 1.02 and up >= GS_TARGET["upper"] * 0.98
    certified = all(r.certified for r in runs.values())
    detail = f"mesh {mesh.m} nodes, upper-CI {up:.4f}, lower-CI {lo:.4f}, {elapsed:.0f}s"
    record("3 (gamma swap CI, strict lower-CI <= 1.2443 <= upper-CI)", strict and up >= GS_TARGET["upper"],
           detail)
    ok = tolerant and elapsed <= 180 and certified
    record("3 (gamma swap CI, reference values +-2%)", ok, detail)
    assert ok


@pytest.mark.extended
def test_criterion_3_gamma_swap_full(gamma_ci):
    runs, elapsed, _, _ = run_config("gamma_swap")
    bounds = {s: r.report.bound for s, r in runs.items()}
    up_ci = gamma_ci[0]["upper"].report.bound
    ok = (
        all(rel(bounds[s], GS_TARGET[s]) <= 0.02 for s in bounds)
        and elapsed <= 1800
        and up_ci >= bounds["upper"]
        and all(r.certified for r in runs.values())
    )
    record(
        "3 (gamma swap full)",
        ok,
        f"upper {bounds['upper']:.4f} ({100 * rel(bounds['upper'], GS_TARGET['upper']):.2f}%), "
        f"lower {bounds['lower']:.4f} ({100 * rel(bounds['lower'], GS_TARGET['lower']):.2f}%), "
        f"upper-CI {up_ci:.4f} >= upper, {elapsed:.0f}s",
    )
    assert ok


# ----------------------------------------------------------------------------
# 4-6: grid duality on random instances


def test_criterion_4_grid_strong_duality(grid_instances):
    items, elapsed = grid_instances
    worst, bad = 0.0, []
    for inst, _, sol, value, _ in items:
        assert inst.spec.n <= 3 and inst.spec.d <= 1 and inst.mesh.m <= 9
        assert sum(b.p for b in inst.spec.constraints) <= 6
        err = abs(value - sol.objective) / max(1.0, abs(sol.objective))
        worst = max(worst, err)
        if not sol.optimal or err > 1e-6:
            bad.append(inst.seed)
    ok = not bad and elapsed <= 120 and len(items) >= 50
    record("4 (grid strong duality)", ok,
           f"{len(items)} instances, max rel gap {worst:.1e}, {elapsed:.1f}s, failing seeds {bad}")
    assert ok


def test_criterion_5_envelope_equivalence(free_instances):
    worst, bad = 0.0, []
    for inst, _, sol, env in free_instances:
        assert inst.spec.p == 0 and inst.spec.n <= 4 and inst.mesh.m <= 40
        err = abs(sol.objective - env) / max(1.0, abs(env))
        worst = max(worst, err)
        if not sol.optimal or err > 1e-8:
            bad.append(inst.seed)
    ok = not bad and len(free_instances) >= 50
    record("5 (envelope equivalence)", ok,
           f"{len(free_instances)} instances, max rel gap {worst:.1e}, failing seeds {bad}")
    assert ok


def test_criterion_6_weak_duality(grid_instances, free_instances):
    rng = np.random.default_rng(6)
    worst, count = -np.inf, 0

    def check(measure, spec, bound):
        nonlocal worst, count
        fr = check_measure(measure, spec)
        assert fr.feasible(tol=1e-7, martingale_tol=1e-6)
        worst = max(worst, fr.signed_objective - bound)
        count += 1

    for inst, lp, sol, _, measure in grid_instances[0]:
        check(measure, inst.spec, sol.objective)
        check(inst.pricing, inst.spec, sol.objective)
        check(extract_worst_case_measure(sol, lp, inst.mesh, inst.spec), inst.spec, sol.objective)
    for inst, _, sol, _ in free_instances:
        for _ in range(5):
            q = random_grid_martingale(inst.mesh, inst.spec.history, inst.spec.n, rng)
            check(q, inst.spec, sol.objective)
    ok = worst <= 1e-8
    record("6 (weak duality)", ok, f"{count} feasible measures, max E[f] - bound {worst:.1e}")
    assert ok


# ----------------------------------------------------------------------------
# 7-9: certificates, measures, hedges


def test_criterion_7_worst_case_measures(forward_start, variance_swap, grid_instances):
    results = []
    for runs, _, spec, _ in (forward_start, variance_swap):
        for side, r in runs.items():
            assert r.report.worst_case is not None
            ok, fr = measure_ok(r.report.worst_case, spec.with_side(side), r.report.lp_objective,
                                spec.history.x0)
            results.append(ok)
    for inst, lp, sol, _, _ in grid_instances[0]:
        q = extract_worst_case_measure(sol, lp, inst.mesh, inst.spec)
        ok, _ = measure_ok(q, inst.spec, sol.objective, inst.spec.history.x0)
        results.append(ok)
    ok = all(results)
    record("7 (worst-case measures)", ok, f"{sum(results)}/{len(results)} measures certified")
    assert ok


def test_criterion_8_certificates_and_mps(forward_start, variance_swap, grid_instances,
                                          free_instances, tmp_path):
    reports = [r.certificate for runs, *_ in (forward_start, variance_swap) for r in runs.values()]
    reports += [certify(lp, sol) for _, lp, sol, *_ in grid_instances[0]]
    reports += [certify(lp, sol) for _, lp, sol, _ in free_instances]
    certified = all(c.ok for c in reports)

    runs, _, spec, mesh = forward_start
    lp = runs["upper"].lp
    path = tmp_path / "forward_start.mps"
    export_lp(lp, path)
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(str(path))
    h.run()
    external = h.getInfo().objective_function_value
    internal = solve(read_mps(path), SolverConfig()).objective
    target = runs["upper"].report.lp_objective
    mps_ok = abs(external - target) <= 1e-6 and abs(internal - target) <= 1e-6
    ok = certified and mps_ok
    record("8 (certificates, MPS re-solve)", ok,
           f"{len(reports)} certificates, MPS objective {external:.6f} vs {target:.6f}")
    assert ok


def test_criterion_9_hedge_pattern(forward_start):
    runs, _, spec, mesh = forward_start
    rep = runs["upper"].report
    lam1 = [rep.hedges.net(1, k) for k in rep.hedges.strikes()]
    lam2 = [rep.hedges.net(2, k) for k in rep.hedges.strikes()]
    pattern = all(v > 0 for v in lam2) and sum(v < 0 for v in lam1) > len(lam1) / 2

    rng = np.random.default_rng(9)
    margin = max(
        lagrangian_value(rep.hedges, spec, random_grid_martingale(mesh, spec.history, spec.n, rng))
        - rep.lp_objective
        for _ in range(50)
    )
    ok = pattern and margin <= 1e-8 and runs["upper"].certified
    record("9 (hedge pattern)", ok,
           f"lambda_2 {np.round(lam2, 4).tolist()}, lambda_1 {np.round(lam1, 4).tolist()}, "
           f"super-hedge margin {margin:.1e}")
    assert ok
