import math

import numpy as np
import pytest

from mfbounds.core import InitialHistory, Mesh, ProblemSpec, StateDomain, TimeGrid, build_paper_mesh
from mfbounds.errors import HistoryOutsideHull, OverflowGuard, WellFormednessError
from mfbounds.lp import (
    CONCAVITY,
    EQ,
    GE,
    HDEF,
    RECURSION,
    TERMINAL,
    SparseLP,
    affine_candidate,
    build_dual_lp,
    export_lp,
    lp_dimensions,
    read_mps,
    sorted_triplets,
    write_triplets_csv,
)
from mfbounds.market import synthesize_quotes
from mfbounds.payoffs import ForwardStartCall, NegLogContract, Zero
from mfbounds.solver import solve

STRIKES = range(70, 131, 10)


def fs_spec(d=1, history=(100.0,)):
    qs = synthesize_quotes(100.0, 0.2, [(1, 1 / 6), (2, 5 / 12)], STRIKES)
    return ProblemSpec(
        TimeGrid.from_future([1 / 6, 5 / 12], d),
        StateDomain(0.0, math.inf),
        InitialHistory(history),
        (Zero(), ForwardStartCall()),
        qs.blocks(2),
    )


def vs_spec():
    qs = synthesize_quotes(100.0, 0.2, [(1, 1 / 6), (2, 5 / 12)], STRIKES)
    return ProblemSpec(
        TimeGrid.from_future([1 / 6, 5 / 12], 0),
        StateDomain(0.0, math.inf, open_lower=True),
        InitialHistory((100.0,)),
        (Zero(), NegLogContract(scale=2.0, reference=100.0)),
        qs.blocks(2),
    )


SMALL = Mesh([0.0, 80.0, 90.0, 100.0, 110.0, 120.0, 200.0])
# every strike on a node: zero-width quotes are then attainable
STRIKE_MESH = Mesh([0.0, *STRIKES, 10000.0])


def test_variance_swap_size():
    # the d = 0 instance has 2 * 2 * 76 grid unknowns plus 28 multipliers
    mesh = build_paper_mesh(100, 70, 130, 1, 10, 1, 10000)
    lp = build_dual_lp(vs_spec(), mesh)
    assert lp.num_vars == 332
    assert lp_dimensions(vs_spec(), mesh) == (lp.num_vars, lp.num_rows, lp.nnz)


def test_dimensions_match_build():
    for spec in (fs_spec(), fs_spec().without_constraints()):
        lp = build_dual_lp(spec, SMALL)
        assert lp_dimensions(spec, SMALL) == (lp.num_vars, lp.num_rows, lp.nnz)


def test_row_groups_in_order():
    lp = build_dual_lp(fs_spec(), SMALL)
    kinds = [(g.kind, g.k) for g in lp.row_groups]
    assert kinds == [(HDEF, 1), (HDEF, 2), (TERMINAL, 2), (RECURSION, 1), (CONCAVITY, 1), (CONCAVITY, 2)]
    starts = [g.start for g in lp.row_groups]
    stops = [g.stop for g in lp.row_groups]
    assert starts[1:] == stops[:-1] and stops[-1] == lp.num_rows
    assert np.all(lp.senses[: 2 * 49] == EQ) and np.all(lp.senses[2 * 49 :] == GE)
    kind, k, idx = lp.row_tag(lp.group(RECURSION, 1).start + 8)
    assert (kind, k, idx) == (RECURSION, 1, (1, 1))


def test_directory_locate():
    lp = build_dual_lp(fs_spec(), SMALL)
    dirn = lp.directory
    assert dirn.locate(0) == ("lambda", 1, 0)
    assert dirn.locate(14) == ("lambda", 2, 0)
    assert dirn.locate(dirn.phi_offset(2) + 8) == ("phi", 2, (1, 1))
    assert dirn.locate(dirn.h_offset(1)) == ("h", 1, (0, 0))
    with pytest.raises(IndexError):
        dirn.locate(dirn.num_vars)


def test_bounds_and_objective():
    lp = build_dual_lp(fs_spec(), SMALL)
    p = lp.directory.p
    assert np.all(lp.lower[:p] == 0) and np.all(np.isneginf(lp.lower[p:]))
    # start point (100, 100) sits on the node (3, 3)
    obj = np.flatnonzero(lp.objective)
    assert obj.tolist() == [lp.directory.phi_offset(1) + 3 + 3 * 7]


def test_off_node_history_interpolates():
    lp = build_dual_lp(fs_spec(history=(95.0,)), SMALL)
    w = lp.objective[lp.objective != 0]
    assert len(w) == 4 and w.sum() == pytest.approx(1.0)
    with pytest.raises(HistoryOutsideHull):
        build_dual_lp(fs_spec(history=(300.0,)), SMALL)


def test_affine_candidate_is_feasible():
    for spec in (fs_spec(), fs_spec().with_side("lower"), vs_spec(), vs_spec().with_side("lower")):
        mesh = Mesh([1.0, 80.0, 90.0, 100.0, 110.0, 120.0, 200.0])
        lp = build_dual_lp(spec, mesh)
        r = lp.residuals(affine_candidate(spec, mesh))
        eq = lp.senses == EQ
        assert np.abs(r[eq]).max() <= 1e-9
        assert r[~eq].min() >= -1e-9


def test_overflow_guard():
    with pytest.raises(OverflowGuard):
        build_dual_lp(fs_spec(), SMALL, max_cells=10)


def test_check_rejects_bad_triplets():
    good = build_dual_lp(fs_spec(), SMALL)
    bad = SparseLP(
        objective=good.objective, rows=good.rows, cols=good.cols + 10**6, coeffs=good.coeffs,
        senses=good.senses, rhs=good.rhs, lower=good.lower, upper=good.upper,
    )
    with pytest.raises(WellFormednessError):
        bad.check()


def test_mps_round_trip(tmp_path):
    spec = fs_spec()
    lp = build_dual_lp(spec, STRIKE_MESH)
    path = tmp_path / "fs.mps"
    export_lp(lp, path)
    back = read_mps(path)
    assert np.array_equal(sorted_triplets(back), sorted_triplets(lp))
    assert np.array_equal(back.objective, lp.objective)
    assert np.array_equal(back.rhs, lp.rhs)
    assert np.array_equal(back.lower, lp.lower)
    assert list(back.senses) == list(lp.senses)
    ref = solve(lp)
    assert ref.optimal
    assert solve(back).objective == pytest.approx(ref.objective, rel=1e-12)


def test_triplet_csv_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_triplets_csv(build_dual_lp(fs_spec(), SMALL), a)
    write_triplets_csv(build_dual_lp(fs_spec(), SMALL), b)
    assert a.read_bytes() == b.read_bytes()
