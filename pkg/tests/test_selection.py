from __future__ import annotations

import numpy as np
import pytest

from funnel_select.clairaut import ClairautRule
from funnel_select.funnel import unroll
from funnel_select.functionals import Enumeration, TruncationBudget, enumerate_functional, zeta_eval
from funnel_select.paths import TimeGrid
from funnel_select.problems import SqrtAbsRule, random_synthetic_funnel
from funnel_select.selection import (
    ReductionParams,
    SemiProcess,
    argmax_set,
    build_semi_process,
    funnel_zeta,
    reduce,
    value_function,
    verify_semigroup,
)

SIG = Enumeration("sigmoids")


def budget_for(f, enum=SIG):
    return TruncationBudget.covering(f.grid.horizon, enum.lambdas)


def test_value_function_matches_brute_force():
    for seed in range(10):
        _, f = random_synthetic_funnel(seed)
        enum = Enumeration("mixed", dim=2)
        b = budget_for(f, enum)
        for n in range(3):
            fun = enum.functional(n)
            brute = max(zeta_eval(p, fun, b) for p in f.paths)
            assert value_function(f, fun, b).root_value == pytest.approx(brute, abs=1e-12)


def test_value_table_entries_are_subtree_maxima():
    g = TimeGrid(0.0, 0.25, 4)
    f = unroll(SqrtAbsRule(), 0.0, [0.0], g)
    fun = SIG.functional(0)
    table = value_function(f, fun, budget_for(f))
    # root value is reached by leaving zero immediately (increasing sigmoid)
    best = int(np.argmax(funnel_zeta(f, fun, budget_for(f))))
    assert f.samples[best, 1, 0] == 0.015625
    assert (0.0, (0.0,)) in table.entries


def test_argmax_set_tie_tolerance():
    g = TimeGrid(0.0, 0.25, 4)
    f = unroll(SqrtAbsRule(), 0.0, [0.0], g)
    fun = SIG.functional(0)
    b = budget_for(f)
    assert argmax_set(f, fun, b).n_paths == 1
    assert argmax_set(f, fun, b, eta_tie=10.0).n_paths == f.n_paths
    with pytest.raises(ValueError):
        argmax_set(f, fun, b, eta_tie=-1.0)


def test_reduce_on_sqrt_abs_picks_by_orientation():
    g = TimeGrid(0.0, 0.25, 8)
    f = unroll(SqrtAbsRule(), 0.0, [0.0], g)
    up = reduce(f, 50, budget_for(f), enumeration=SIG)
    assert up.converged
    assert np.array_equal(up.selected.samples[:, 0], (g.times / 2) ** 2)
    down_enum = Enumeration("sigmoids", sign_first=-1)
    down = reduce(f, 50, budget_for(f, down_enum), enumeration=down_enum)
    assert np.array_equal(down.selected.samples[:, 0], np.zeros(9))


def test_reduce_trace_is_monotone():
    _, f = random_synthetic_funnel(3)
    enum = Enumeration("bumps", dim=2)
    out = reduce(f, 40, budget_for(f, enum), enumeration=enum)
    sizes = [s.survivors for s in out.trace.stages]
    diams = [s.diameter for s in out.trace.stages]
    assert sizes == sorted(sizes, reverse=True)
    assert diams == sorted(diams, reverse=True)


def test_reduce_zero_budget_keeps_everything():
    _, f = random_synthetic_funnel(4)
    out = reduce(f, 0, budget_for(f, Enumeration(dim=2)), enumeration=Enumeration(dim=2))
    assert out.trace.stop_reason in ("budget_exhausted", "singleton")
    assert out.trace.stages == []


def test_semi_process_identity_and_cache():
    p = SemiProcess(ClairautRule(), 0.25, 2.0, ReductionParams(enumeration=SIG))
    assert np.array_equal(p.U(1.0, 1.0, [0.3]), np.array([0.3]))
    assert p.select(0.0, [1.0]) is p.select(0.0, [1.0])
    with pytest.raises(ValueError):
        p.grid_for(0.1)
    with pytest.raises(ValueError):
        p.U(0.0, 1.0, [0.0])


def test_semigroup_on_sqrt_abs():
    p = SemiProcess(SqrtAbsRule(), 0.25, 2.0, ReductionParams(enumeration=SIG))
    triples = [(0.0, 0.5, 1.5, [0.0]), (0.25, 0.25, 2.0, [0.0]), (0.0, 1.0, 2.0, [0.4])]
    rep = verify_semigroup(p, triples)
    assert rep.ok and rep.worst == 0.0


def test_semigroup_report_flags_bad_triples():
    p = SemiProcess(SqrtAbsRule(), 0.25, 2.0, ReductionParams(enumeration=SIG))
    rep = verify_semigroup(p, [(1.0, 0.5, 2.0, [0.0]), (0.0, 0.5, 1.0, [-1.0])])
    assert not rep.ok and len(rep.errors) == 2


def test_build_semi_process_records_errors():
    p = build_semi_process(SqrtAbsRule(), [(0.0, [0.0]), (0.0, [-1.0])], 0.25, 1.0,
                           ReductionParams(enumeration=SIG), workers=2)
    assert list(p.errors) == [(0.0, (-1.0,))]


def test_worker_count_does_not_change_results():
    rule = ClairautRule()
    nodes = [(0.0, [1.0]), (0.5, [0.2]), (1.0, [-0.25])]
    a = build_semi_process(rule, nodes, 0.25, 2.0, ReductionParams(enumeration=SIG), workers=1)
    b = build_semi_process(rule, nodes, 0.25, 2.0, ReductionParams(enumeration=SIG), workers=4)
    for t0, x in nodes:
        assert a.select(t0, x).to_json() == b.select(t0, x).to_json()


def test_params_validation():
    with pytest.raises(ValueError):
        ReductionParams(eps_singleton=0.0)
    with pytest.raises(ValueError):
        ReductionParams(n_max=-1)


def test_functional_index_is_stable():
    assert enumerate_functional(1).describe()["phi"]["kind"] == "coordinate_sigmoid"
