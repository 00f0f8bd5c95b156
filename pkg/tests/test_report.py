import json
import math

import numpy as np
import pytest

from mfbounds.core import InitialHistory, Mesh, ProblemSpec, Side, StateDomain, TimeGrid
from mfbounds.errors import StatusNotOptimal
from mfbounds.lp import build_dual_lp
from mfbounds.oracle import check_measure, primal_brute_force_lp, random_grid_martingale
from mfbounds.payoffs import Affine, Call, ConstraintBlock, ForwardStartCall, NegLogContract, Quote, Zero
from mfbounds.report import (
    BoundReport,
    annualized_vol,
    build_report,
    emit_report,
    expand_paths,
    extract_hedges,
    extract_worst_case_measure,
    hedge_csv,
    lagrangian_value,
    text_table,
)
from mfbounds.solver import LPSolution, Status, certify, solve

from instances import random_instance

MESH = Mesh([0.0, 50.0, 100.0, 150.0, 200.0])


def call_spec(side="upper"):
    quotes = (Quote(1, 100.0, 3.0, 4.0), Quote(1, 150.0, 0.0, 1000.0))
    return ProblemSpec(
        TimeGrid.from_future([1.0], 0),
        StateDomain(0.0, 200.0),
        InitialHistory((100.0,)),
        (Call(strike=100.0),),
        (ConstraintBlock(quotes),),
        side,
    )


def solved(spec, mesh):
    lp = build_dual_lp(spec, mesh)
    sol = solve(lp)
    assert sol.optimal
    return sol, lp


@pytest.mark.parametrize("side,bound", [("upper", 4.0), ("lower", 3.0)])
def test_quoted_claim_is_replicated_long(side, bound):
    spec = call_spec(side)
    sol, lp = solved(spec, MESH)
    rep = build_report(sol, lp, spec, MESH, certify(lp, sol))
    assert rep.bound == pytest.approx(bound)
    # long one call either way: bought at the ask, or held against the bid
    assert rep.hedges.net(1, 100.0) == pytest.approx(1.0)
    # the wide quote never binds
    assert rep.hedges.net(1, 150.0) == pytest.approx(0.0, abs=1e-9)
    for row in rep.hedges.rows:
        assert abs(row.net_position) <= row.lambda_bid + row.lambda_ask + 1e-12


def fs_free(mesh=Mesh([0.0, 100.0, 200.0]), history=(100.0,)):
    return ProblemSpec(
        TimeGrid.from_future([0.5, 1.0], 1),
        StateDomain(0.0, 200.0),
        InitialHistory(history),
        (Zero(), ForwardStartCall()),
        (ConstraintBlock(), ConstraintBlock()),
    )


def test_forward_start_worst_case_split():
    mesh = Mesh([0.0, 100.0, 200.0])
    spec = fs_free(mesh)
    sol, lp = solved(spec, mesh)
    q = extract_worst_case_measure(sol, lp, mesh, spec)
    support = {tuple(p): w for p, w in zip(q.paths.tolist(), q.weights)}
    assert support == pytest.approx({(100.0, 0.0): 0.5, (100.0, 200.0): 0.5})
    rep = check_measure(q, spec)
    assert rep.objective == pytest.approx(50.0)


def test_affine_objective_worst_case():
    spec = ProblemSpec(
        TimeGrid.from_future([1.0, 2.0], 0),
        StateDomain(0.0, 200.0),
        InitialHistory((100.0,)),
        (Affine(intercept=1.0, slopes=(0.5,)), Affine(intercept=0.0, slopes=(2.0,))),
        (ConstraintBlock(), ConstraintBlock()),
    )
    sol, lp = solved(spec, MESH)
    q = extract_worst_case_measure(sol, lp, MESH, spec)
    rep = check_measure(q, spec)
    # the value is the payoff along the constant path, whatever the measure
    assert rep.objective == pytest.approx(1.0 + 50.0 + 200.0)
    assert rep.martingale_residual <= 1e-9


@pytest.mark.parametrize("seed", range(15))
def test_worst_case_attains_bound(seed):
    inst = random_instance(seed)
    sol, lp = solved(inst.spec, inst.mesh)
    q = extract_worst_case_measure(sol, lp, inst.mesh, inst.spec)
    rep = check_measure(q, inst.spec)
    assert rep.martingale_residual <= 1e-6 * 100.0
    assert rep.min_slack >= -1e-7
    assert rep.signed_objective == pytest.approx(sol.objective, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_super_hedge_dominates_random_martingales(seed):
    inst = random_instance(seed)
    sol, lp = solved(inst.spec, inst.mesh)
    hedges = extract_hedges(sol, lp, inst.spec)
    rng = np.random.default_rng(seed)
    for _ in range(10):
        q = random_grid_martingale(inst.mesh, inst.spec.history, inst.spec.n, rng)
        assert lagrangian_value(hedges, inst.spec, q) <= sol.objective + 1e-8


def test_not_optimal_raises():
    spec = call_spec()
    lp = build_dual_lp(spec, MESH)
    nan = np.full(lp.num_vars, np.nan)
    bad = LPSolution(Status.ITER_LIMIT, math.nan, nan, np.full(lp.num_rows, np.nan), nan)
    with pytest.raises(StatusNotOptimal):
        extract_hedges(bad, lp, spec)
    with pytest.raises(StatusNotOptimal):
        build_report(bad, lp, spec, MESH)


def test_off_grid_history_skips_measure():
    mesh = Mesh([0.0, 90.0, 110.0, 200.0])
    spec = fs_free(mesh)
    sol, lp = solved(spec, mesh)
    rep = build_report(sol, lp, spec, mesh)
    assert rep.worst_case is None
    assert "worst_case_skipped" in rep.diagnostics


def test_annualized_vol():
    spec = ProblemSpec(
        TimeGrid.from_future([1 / 6, 5 / 12], 0),
        StateDomain(0.0, math.inf, open_lower=True),
        InitialHistory((100.0,)),
        (Zero(), NegLogContract()),
        (ConstraintBlock(), ConstraintBlock()),
    )
    assert annualized_vol(spec, 0.0208) == pytest.approx(math.sqrt(0.0208 * 12 / 5))
    assert annualized_vol(spec, -1.0) is None
    assert annualized_vol(fs_free(), 1.0) is None


def test_json_round_trip_and_formats(tmp_path):
    spec = call_spec()
    sol, lp = solved(spec, MESH)
    rep = build_report(sol, lp, spec, MESH, certify(lp, sol))
    text = rep.to_json()
    back = BoundReport.from_json(text)
    assert back.to_json() == text
    assert back.bound == rep.bound and back.side is Side.UPPER
    assert len(back.worst_case) == len(rep.worst_case)

    for fmt, ext in (("json", "json"), ("csv", "csv"), ("table", "txt")):
        a, b = tmp_path / f"a.{ext}", tmp_path / f"b.{ext}"
        emit_report(rep, fmt, a)
        emit_report(build_report(sol, lp, spec, MESH, certify(lp, sol)), fmt, b)
        assert a.read_bytes() == b.read_bytes()
    json.loads((tmp_path / "a.json").read_text())
    assert hedge_csv(rep.hedges).splitlines()[0] == "expiry_index,strike,net_position"
    with pytest.raises(ValueError):
        emit_report(rep, "xml", tmp_path / "x")


def test_text_table_layout():
    spec = call_spec()
    sol, lp = solved(spec, MESH)
    table = text_table(build_report(sol, lp, spec, MESH), times=[1.0])
    lines = table.splitlines()
    assert lines[0] == "Super-replication value: 4.0000"
    assert lines[2].split() == ["Strike", "$100", "$150"]
    assert lines[3].split()[:2] == ["lambda_1", "T=1"]


def test_empty_hedge_table():
    spec = fs_free()
    mesh = Mesh([0.0, 100.0, 200.0])
    sol, lp = solved(spec, mesh)
    rep = build_report(sol, lp, spec, mesh)
    assert len(rep.hedges) == 0
    assert text_table(rep) == "Super-replication value: 50.0000\n"
    assert rep.worst_case is not None


def test_expand_paths_keeps_small_prefixes_martingale():
    # the prefix (101, 100) has weight 2.5e-6 and then moves down w.p. 1e-7;
    # pruning by path weight would drop that branch and bias the prefix mean
    mesh = Mesh([50.0, 100.0, 101.0, 102.0])
    p = 1e-7
    step = np.eye(4)
    step[:, 1] = [p, 1 - 51 * p, 50 * p, 0.0]
    step[:, 2] = [0.0, 0.5, 0.0, 0.5]
    K = np.stack([step] * 3)
    spec = ProblemSpec(
        TimeGrid.from_future([0.1, 0.2, 0.3], 0),
        StateDomain(0.0, 1000.0),
        InitialHistory((100.0,)),
        (Zero(),) * 3,
        (ConstraintBlock(),) * 3,
        "upper",
    )
    q = expand_paths(K, spec, mesh)
    assert check_measure(q, spec, tol=1e-12).martingale_residual <= 1e-9
