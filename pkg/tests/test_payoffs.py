import math

import numpy as np
import pytest

from mfbounds.core import Mesh
from mfbounds.errors import CrossedQuote, DomainError, MismatchedLengths, TableMeshMismatch
from mfbounds.payoffs import (
    GAMMA_LEG_BOUND,
    Affine,
    Call,
    ConstraintBlock,
    ForwardStartCall,
    GammaLeg,
    NegLogContract,
    Put,
    Quote,
    Table,
    VarianceLeg,
    Zero,
    constraint_vector,
    eval_payoff,
    payoff_from_dict,
)

ALL = [
    Zero(),
    Call(strike=100.0),
    Put(strike=90.0),
    ForwardStartCall(),
    NegLogContract(scale=2.0, reference=100.0),
    GammaLeg(),
    VarianceLeg(),
    Affine(intercept=1.0, slopes=(2.0, -1.0)),
]


def test_values():
    assert eval_payoff(Call(strike=100.0), [110.0]) == 10.0
    assert eval_payoff(Put(strike=90.0), [80.0]) == 10.0
    assert eval_payoff(ForwardStartCall(), [105.0, 100.0]) == 5.0
    assert eval_payoff(ForwardStartCall(), [95.0, 100.0]) == 0.0
    assert eval_payoff(NegLogContract(), [100.0 * math.e]) == pytest.approx(-2.0)
    assert eval_payoff(GammaLeg(), [110.0, 100.0]) == pytest.approx(100.0 * math.log(1.1) ** 2)
    assert eval_payoff(VarianceLeg(), [90.0, 100.0]) == pytest.approx(math.log(0.9) ** 2)
    assert eval_payoff(Affine(intercept=1.0, slopes=(2.0, -1.0)), [3.0, 4.0]) == 3.0


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(0)
    y, z = rng.uniform(1, 200, 50), rng.uniform(1, 200, 50)
    for f in ALL:
        vec = np.asarray(f([y, z])) * np.ones(50)
        for i in range(50):
            assert vec[i] == pytest.approx(eval_payoff(f, [y[i], z[i]]))


def test_negation_and_round_trip():
    for f in ALL:
        g = f.negated()
        assert eval_payoff(g, [120.0, 100.0]) == -eval_payoff(f, [120.0, 100.0])
        assert payoff_from_dict(f.to_dict()) == f
        assert payoff_from_dict(g.to_dict()) == g
    with pytest.raises(MismatchedLengths):
        payoff_from_dict({"kind": "nope"})


def test_log_payoffs_need_positive_states():
    with pytest.raises(DomainError):
        NegLogContract()([0.0])
    with pytest.raises(DomainError):
        GammaLeg()([1.0, 0.0])


def test_arity_checked():
    with pytest.raises(MismatchedLengths):
        ForwardStartCall()([1.0])


@pytest.mark.parametrize("flip", [False, True])
def test_affine_witnesses_dominate(flip):
    lo, hi = 1.0, 10000.0
    ys = np.concatenate([np.linspace(lo, 300, 300), [1000.0, 5000.0, hi]])
    Y, Z = np.meshgrid(ys, ys)
    for f in ALL:
        f = f.negated() if flip else f
        w = f.affine_witness(lo, hi, 1)
        if w is None:
            continue
        c, (a, b) = w
        gap = c + a * Y + b * Z - np.asarray(f([Y, Z])) * np.ones_like(Y)
        assert gap.min() >= -1e-9 * max(1.0, abs(c)), f


def test_gamma_leg_bound_constant():
    # 4 e^-2 is the sup of log(r)^2 / r, attained at r = e^2, so
    # min(y, z) log(y/z)^2 <= 4 e^-2 max(y, z) <= 4 e^-2 (y + z)
    r = np.exp(np.linspace(0, 6, 20001))
    ratio = np.log(r) ** 2 / r
    assert ratio.max() <= GAMMA_LEG_BOUND + 1e-12
    assert ratio.max() == pytest.approx(GAMMA_LEG_BOUND, rel=1e-6)


def test_variance_leg_has_no_upper_witness():
    assert VarianceLeg().affine_witness(1.0, math.inf, 1) is None
    assert VarianceLeg().negated().affine_witness(1.0, math.inf, 1) == (0.0, (0.0, 0.0))


class TestTable:
    def test_lookup(self):
        mesh = Mesh([0.0, 1.0, 2.0])
        t = Table(mesh=mesh, values=np.arange(9.0))
        assert t.arity == 2
        assert t([2.0, 1.0]) == 5.0
        assert t.at((2, 1)) == 5.0
        assert np.array_equal(t([np.array([0.0, 1.0]), np.array([0.0, 2.0])]), [0.0, 7.0])

    def test_mismatch(self):
        mesh = Mesh([0.0, 1.0, 2.0])
        with pytest.raises(TableMeshMismatch):
            Table(mesh=mesh, values=np.arange(4.0))
        t = Table(mesh=mesh, values=np.arange(3.0))
        with pytest.raises(TableMeshMismatch):
            t([0.5])
        with pytest.raises(TableMeshMismatch):
            payoff_from_dict(t.to_dict(), Mesh([0.0, 1.0, 3.0]))
        assert payoff_from_dict(t.to_dict(), mesh)([2.0]) == 2.0


class TestQuotes:
    def test_crossed_and_negative(self):
        with pytest.raises(CrossedQuote):
            Quote(1, 100.0, 2.0, 1.0)
        with pytest.raises(DomainError):
            Quote(1, 100.0, -1.0, 1.0)
        with pytest.raises(DomainError):
            Quote(1, 0.0, 1.0, 1.0)

    def test_constraint_vector_order(self):
        block = ConstraintBlock((Quote(1, 100.0, 2.0, 3.0), Quote(1, 110.0, 0.5, 0.7)))
        g = constraint_vector(block, [np.array([90.0, 105.0, 120.0])])
        assert g.shape == (4, 3)
        assert np.allclose(g[0], [-2.0, 3.0, 18.0])
        assert np.allclose(g[1], [3.0, -2.0, -17.0])
        assert np.allclose(g[2], [-0.5, -0.5, 9.5])
        assert np.allclose(g[3], [0.7, 0.7, -9.3])
        assert block.p == 4
        assert ConstraintBlock.from_dict(block.to_dict()) == block
