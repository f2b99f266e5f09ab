from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from funnel_select.functionals import (
    ConstantPhi,
    Enumeration,
    SeparatingFunctional,
    TestFunction,
    TruncationBudget,
    quadrature_bound,
    rational_lambdas,
    separates,
    zeta_batch,
    zeta_eval,
)
from funnel_select.paths import Path, TimeGrid, constant_path


def test_lambda_order_is_fixed():
    assert rational_lambdas(3) == [Fraction(1), Fraction(1, 2), Fraction(2), Fraction(1, 3), Fraction(3),
                                   Fraction(2, 3), Fraction(3, 2)]


def test_diagonal_pairing_prefix():
    e = Enumeration("mixed")
    assert [e.pair(n) for n in range(10)] == [
        (0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0), (0, 3), (1, 2), (2, 1), (3, 0)
    ]


def test_pairing_is_a_bijection_onto_finite_lambda_strip():
    e = Enumeration("bumps", lambda_height=2)  # three lambdas
    seen = {e.pair(n) for n in range(300)}
    assert len(seen) == 300
    assert all(0 <= i < 3 for i, _ in seen)


def test_family_members():
    e = Enumeration("mixed")
    assert e.functional(0).phi == TestFunction("gaussian_bump", center=(0.0,))
    assert e.functional(1).phi == TestFunction("coordinate_sigmoid", axis=0, offset=0.0, sign=1)
    s = Enumeration("sigmoids", sign_first=-1)
    assert [s.sigmoid(j).sign for j in range(4)] == [-1, 1, -1, 1]
    assert [s.sigmoid(j).offset for j in range(6)] == [0.0, 0.0, -1.0, -1.0, 1.0, 1.0]
    b = Enumeration("bumps")
    assert [b.bump(j).center for j in range(3)] == [(0.0,), (-1.0,), (1.0,)]


def test_bump_centres_become_dense():
    b = Enumeration("bumps")
    centres = np.array([b.bump(j).center[0] for j in range(200)])
    for x in np.linspace(-3, 3, 13):
        assert np.min(np.abs(centres - x)) <= 0.25


def test_test_functions_map_into_unit_interval():
    x = np.linspace(-800, 800, 101)[:, None]
    for phi in (TestFunction("gaussian_bump", center=(0.3,)),
                TestFunction("coordinate_sigmoid", offset=1.0, sign=-1)):
        v = phi(x)
        assert np.all((0.0 <= v) & (v <= 1.0)) and np.all(np.isfinite(v))


@pytest.mark.parametrize("lam", [Fraction(1), Fraction(1, 3), Fraction(3)])
def test_constant_phi_is_exact(lam):
    g = TimeGrid(0.0, 0.25, 12)
    fun = SeparatingFunctional(0, lam, ConstantPhi(0.7))
    budget = TruncationBudget(3.0, 10.0)
    lf = float(lam)
    expect = 0.7 * (1 - math.exp(-lf * 3.0)) / lf
    assert zeta_eval(constant_path(g, 2.0), fun, budget) == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("phi", [
    TestFunction("coordinate_sigmoid", offset=0.5, sign=1),
    TestFunction("gaussian_bump", center=(1.0,)),
])
def test_quadrature_within_certified_bound(phi):
    g = TimeGrid(0.0, 0.25, 12)
    w = Path(g, (np.sin(g.times) * 2.0)[:, None])
    fun = SeparatingFunctional(0, Fraction(1, 2), phi)
    budget = TruncationBudget(3.0, 10.0)

    def integrand(t):
        x = np.interp(t, g.times, w.samples[:, 0])
        return math.exp(-0.5 * t) * float(phi(np.array([[x]]))[0])

    ref = sum(integrate.quad(integrand, a, b, epsabs=1e-14)[0] for a, b in zip(g.times[:-1], g.times[1:]))
    got = zeta_eval(w, fun, budget)
    assert abs(got - ref) <= quadrature_bound(w, fun, budget) + 1e-14


def test_partial_final_step():
    g = TimeGrid(0.0, 0.25, 12)
    fun = SeparatingFunctional(0, Fraction(1), ConstantPhi(1.0))
    budget = TruncationBudget(2.9, 10.0)
    assert zeta_eval(constant_path(g, 0.0), fun, budget) == pytest.approx(1 - math.exp(-2.9), rel=1e-14)


@given(st.lists(st.floats(-3, 3), min_size=9, max_size=9), st.integers(1, 7))
@settings(max_examples=40, deadline=None)
def test_zeta_splits_at_grid_nodes(values, k):
    # zeta(w) = zeta(prefix) + exp(-lam t_k) zeta(shifted w)
    g = TimeGrid(0.0, 0.25, 8)
    arr = np.array(values)[None, :, None]
    fun = SeparatingFunctional(0, Fraction(2, 3), TestFunction("gaussian_bump", center=(0.5,)))
    whole = zeta_batch(arr, 0.25, fun)[0]
    head = zeta_batch(arr[:, : k + 1], 0.25, fun)[0]
    tail = zeta_batch(arr[:, k:], 0.25, fun)[0]
    assert whole == pytest.approx(head + math.exp(-fun.lam_f * 0.25 * k) * tail, abs=1e-14)


def test_budget_covering_and_check():
    lams = rational_lambdas(3)
    b = TruncationBudget.covering(3.0, lams)
    assert b.epsilon_tail == pytest.approx(math.exp(-1.0) * 3.0)  # lambda = 1/3 dominates
    for lam in lams:
        b.check(float(lam))
    with pytest.raises(ValueError, match="does not cover"):
        TruncationBudget(3.0, 1e-3).check(1.0)


def test_separates_distinct_paths_only():
    g = TimeGrid(0.0, 0.25, 12)
    u = constant_path(g, 0.0)
    v = Path(g, np.linspace(0.0, 0.5, 13)[:, None])
    budget = TruncationBudget.covering(3.0, rational_lambdas(3))
    assert separates(u, u, 50, budget) is None
    n = separates(u, v, 50, budget)
    assert n is not None and n <= 5
