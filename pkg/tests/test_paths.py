from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funnel_select.paths import (
    GridMismatchError,
    Path,
    TimeGrid,
    constant_path,
    diameter,
    evaluate,
    extend_const,
    extend_const_future,
    metric_d,
    path_from_csv,
    path_to_csv,
    rho,
    shift,
    splice,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def ramp(n=8, step=0.25, t0=0.0, slope=1.0):
    g = TimeGrid(t0, step, n)
    return Path(g, (slope * (g.times - t0))[:, None])


def test_rho_is_truncated_euclidean():
    assert rho([0.0, 0.0], [0.3, 0.4]) == pytest.approx(0.5)
    assert rho([0.0], [5.0]) == 1.0


def test_metric_constant_offset_closed_form():
    # offset 0.5 over horizon 2: (1/2 + 1/4) * (0.5 / 1.5) = 0.25
    g = TimeGrid(0.0, 0.25, 8)
    u, v = constant_path(g, 0.0), constant_path(g, 0.5)
    assert metric_d(u, v) == pytest.approx(0.25, abs=1e-15)


def test_metric_sees_late_differences_with_smaller_weight():
    g = TimeGrid(0.0, 0.25, 8)
    u = constant_path(g, 0.0)
    early = Path(g, np.where(g.times[:, None] <= 1.0, 0.5, 0.5))
    late_samples = np.zeros((9, 1))
    late_samples[-1] = 0.5
    late = Path(g, late_samples)
    # sup over [0, 1] is zero for the late path, so only the l = 2 term counts
    assert metric_d(u, late) == pytest.approx(0.25 * (1 / 3), abs=1e-15)
    assert metric_d(u, early) > metric_d(u, late)


@given(st.lists(st.tuples(finite, finite, finite), min_size=5, max_size=5))
@settings(max_examples=50, deadline=None)
def test_metric_axioms(rows):
    g = TimeGrid(0.0, 0.5, 4)
    arr = np.array(rows)
    u, v, w = (Path(g, arr[:, i:i + 1]) for i in range(3))
    assert metric_d(u, u) == 0.0
    assert metric_d(u, v) == pytest.approx(metric_d(v, u), abs=1e-15)
    assert metric_d(u, w) <= metric_d(u, v) + metric_d(v, w) + 1e-12
    assert 0.0 <= metric_d(u, v) <= 1.0


def test_diameter_exact_and_bound():
    g = TimeGrid(0.0, 0.25, 4)
    stack = np.stack([constant_path(g, c).samples for c in (0.0, 0.1, 0.3)])
    d = diameter(stack, g)
    assert d == pytest.approx(metric_d(constant_path(g, 0.0), constant_path(g, 0.3)))
    assert diameter(stack, g, exact_limit=2) >= d


def test_shift_and_splice_roundtrip():
    u = ramp()
    s = shift(u, 3)
    assert s.grid.t_start == u.grid.time(3)
    assert np.array_equal(s.samples, u.samples[3:])
    assert splice(u, 3, s) == u


def test_splice_rejects_mismatched_junction():
    u = ramp()
    v = ramp(n=5, t0=0.75, slope=2.0)
    with pytest.raises(ValueError, match="junction state mismatch"):
        splice(u, 3, Path(v.grid, v.samples + 1.0))
    with pytest.raises(GridMismatchError):
        splice(u, 2, v)


def test_extend_const_both_ways():
    u = ramp(n=4, t0=1.0)
    e = extend_const(u, 0.0)
    assert e.grid.t_start == 0.0 and e.grid.n_steps == 8
    assert np.all(e.samples[:4] == u.samples[0])
    f = extend_const_future(u, 3)
    assert np.all(f.samples[-4:] == u.samples[-1])
    with pytest.raises(GridMismatchError):
        extend_const(u, 0.1)


def test_evaluate_interpolates_and_hits_nodes():
    u = ramp(slope=2.0)
    assert evaluate(u, 0.5)[0] == 1.0
    assert evaluate(u, 0.375)[0] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        evaluate(u, 3.0)


@given(st.lists(finite, min_size=2, max_size=30), st.sampled_from([0.1, 0.25, 1 / 3, 0.01]),
       st.floats(-10, 10))
@settings(max_examples=60, deadline=None)
def test_csv_roundtrip_is_bit_exact(values, step, t0):
    g = TimeGrid(t0, step, len(values) - 1)
    u = Path(g, np.array(values)[:, None])
    back = path_from_csv(path_to_csv(u))
    assert np.array_equal(back.samples, u.samples)
    assert np.array_equal(back.grid.times, u.grid.times)


def test_path_rejects_nonfinite_and_bad_shape():
    g = TimeGrid(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        Path(g, np.array([[0.0], [math.nan], [1.0]]))
    with pytest.raises(ValueError):
        Path(g, np.zeros((2, 1)))
