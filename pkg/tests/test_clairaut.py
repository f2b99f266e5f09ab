from __future__ import annotations

import numpy as np
import pytest

from funnel_select.clairaut import (
    FUTURE_RAY_THEN_PARABOLA,
    PAST_RAY_EVERYWHERE,
    SHIPPED_PHI_CONFIGS,
    AdmissibleRegion,
    ClairautConfig,
    ClairautRule,
    c_plus_minus,
    classify_process,
    clairaut_branch_rule,
    follows_then_leaves,
    future_ray_then_parabola,
    lattice_samples,
    legendre_tilde,
    past_ray,
    touch_times,
)
from funnel_select.funnel import InadmissibleInitialCondition, unroll
from funnel_select.functionals import Enumeration
from funnel_select.paths import TimeGrid
from funnel_select.selection import ReductionParams, SemiProcess

# which tag each shipped configuration selects; pinned from runs, not assumed
EXPECTED_TAGS = {
    "increasing_sigmoids": PAST_RAY_EVERYWHERE,
    "decreasing_sigmoids": FUTURE_RAY_THEN_PARABOLA,
}


def process(family="sigmoids", sign=1, t_end=3.0):
    params = ReductionParams(enumeration=Enumeration(family, sign_first=sign))
    return SemiProcess(ClairautRule(), 0.25, t_end, params)


@pytest.mark.parametrize("t0,x0,expect", [
    (0.0, 1.0, (1.0, -1.0)),
    (0.0, 0.0, (0.0,)),
    (2.0, 0.0, (0.0, -2.0)),
    (0.0, -1.0, ()),
])
def test_c_plus_minus_examples(t0, x0, expect):
    assert c_plus_minus(t0, x0) == pytest.approx(expect)


def test_c_roots_solve_the_line_equation():
    for t0 in np.linspace(-5, 5, 21):
        for gap in (0.0, 0.01, 1.0, 7.5):
            x0 = -t0 * t0 / 4 + gap
            for c in c_plus_minus(t0, x0):
                assert abs(x0 - (c * t0 + c * c)) <= 1e-12 * max(1.0, abs(x0))


@pytest.mark.parametrize("t0,x0,expect", [(0.0, 1.0, (-2.0, 2.0)), (2.0, 0.0, (0.0, 4.0))])
def test_touch_times(t0, x0, expect):
    assert touch_times(t0, x0) == pytest.approx(expect)


def test_touch_time_reflection():
    for t0, x0 in [(1.0, 0.3), (-2.0, 5.0), (0.5, -0.01)]:
        tp, tf = touch_times(t0, x0)
        rp, rf = touch_times(-t0, x0)
        assert (rp, rf) == pytest.approx((-tf, -tp))


def test_touch_times_rejects_boundary():
    with pytest.raises(ValueError):
        touch_times(2.0, -1.0)


def test_legendre_square():
    assert legendre_tilde("square", 2.0) == -1.0
    assert legendre_tilde("square", 0.0) == 0.0
    for t in np.linspace(-10, 10, 41):
        assert abs(legendre_tilde("square", t) + t * t / 4) <= 1e-12
        assert abs(legendre_tilde(lambda s: s * s, t) + t * t / 4) <= 1e-9


def test_legendre_quartic_matches_dense_grid():
    psi = lambda s: s ** 4 + 0.5 * s * s  # noqa: E731
    cs = np.linspace(-4, 4, 2_000_001)
    for t in (-3.0, -0.7, 0.0, 1.3, 4.0):
        ref = np.min(t * cs + psi(cs))
        assert legendre_tilde(psi, t, bracket=(-10, 10)) == pytest.approx(ref, abs=1e-9)


def test_legendre_bracket_failure():
    with pytest.raises(ValueError, match="not bracketed"):
        legendre_tilde(lambda s: s * s, 30.0, bracket=(-1.0, 1.0))


def test_admissible_region():
    r = AdmissibleRegion()
    assert r.on_boundary(2.0, -1.0) and r.contains(2.0, -1.0)
    assert not r.contains(2.0, -1.1)


def test_config_only_square_has_generator():
    assert isinstance(clairaut_branch_rule(ClairautConfig()), ClairautRule)
    with pytest.raises(ValueError):
        ClairautConfig(psi="quartic")


def test_arcs_per_node():
    rule = ClairautRule()
    assert len(rule.arcs(2.0, np.array([-1.0]), 0.25)) == 2
    assert len(rule.arcs(0.0, np.array([1.0]), 0.25)) == 2
    with pytest.raises(InadmissibleInitialCondition):
        rule.arcs(0.0, np.array([-0.5]), 0.25)


def test_arcs_solve_the_ode():
    # x = t x' + x'^2 at arc midpoints, slope from the finite difference
    rule = ClairautRule()
    f = unroll(rule, -1.0, [0.75], TimeGrid(-1.0, 0.25, 8))
    t = f.grid.times
    for s in f.samples[:, :, 0]:
        slope = np.diff(s) / 0.25
        mid_t = 0.5 * (t[:-1] + t[1:])
        mid_x = 0.5 * (s[:-1] + s[1:])
        line = np.abs(mid_x - mid_t * slope - slope ** 2)
        # parabola chords are not lines; they follow x = -t^2/4 at the nodes instead
        on_par = np.isclose(s[:-1], -t[:-1] ** 2 / 4, atol=1e-12) & np.isclose(s[1:], -t[1:] ** 2 / 4, atol=1e-12)
        assert np.all(line[~on_par] <= 1e-9)


def test_interior_funnel_contains_future_ray_then_parabola():
    g = TimeGrid(0.0, 0.25, 12)
    f = unroll(ClairautRule(), 0.0, [1.0], g)
    assert f.contains(future_ray_then_parabola(g.times, 0.0, 1.0)[:, None])
    assert f.contains(past_ray(g.times, 0.0, 1.0)[:, None])


def test_lines_rebranch_at_interior_nodes():
    # the two lines through an interior node meet the boundary only at their touch
    # times, yet the generator offers both lines again at every node
    g = TimeGrid(0.0, 0.25, 4)
    f = unroll(ClairautRule(), 0.0, [1.0], g)
    assert f.n_paths == 2 ** 4


def test_follows_then_leaves_detector():
    t = np.arange(0, 9) * 0.25
    par = -t * t / 4
    leave = par.copy()
    leave[5:] = -0.5 * t[4] * t[5:] + 0.25 * t[4] ** 2
    assert follows_then_leaves(t, leave)
    assert not follows_then_leaves(t, par)
    # leaving from the first node (tangent take-off at t0) is allowed
    assert not follows_then_leaves(t, -0.5 * t[0] * t + 0.25 * t[0] ** 2)


@pytest.mark.parametrize("name", sorted(SHIPPED_PHI_CONFIGS))
def test_shipped_configurations_classify(name):
    family, sign = SHIPPED_PHI_CONFIGS[name]
    pc = classify_process(process(family, sign), lattice_samples([0.0, 0.5, 1.0], 0.25, max_back=2))
    assert pc.ok, pc.failures
    assert pc.tag == EXPECTED_TAGS[name]
    assert not any(e.excluded for e in pc.evidence)


def test_singular_preferring_boundary_sample_stays_on_parabola():
    p = process("sigmoids", -1)
    out = p.select(1.0, [-0.25])
    t = out.selected.grid.times
    assert np.array_equal(out.selected.samples[:, 0], -t * t / 4)


def test_bumps_do_not_classify():
    pc = classify_process(process("bumps", 1), lattice_samples([0.0, 0.5], 0.25, max_back=2))
    assert pc.tag is None and pc.failures


def test_classification_needs_both_kinds_of_sample():
    pc = classify_process(process(), [(0.0, 1.0)])
    assert not pc.ok
