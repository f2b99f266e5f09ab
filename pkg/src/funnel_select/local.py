"""Local funnels: paths that live until a terminal time T(t, x), possibly finite."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .funnel import DEFAULT_MAX_PATHS, AxiomReport, BranchRule, Funnel, Violation, unroll
from .functionals import (
    DEFAULT_REFINE,
    SeparatingFunctional,
    TruncationBudget,
    accumulate,
    quadrature_bound_batch,
    step_integrals,
)
from .paths import Path, TimeGrid, as_state
from .selection import ReductionParams, ReductionTrace, SelectionOutcome, reduce

DEFAULT_GAP_FRACTION = 1e-3


class LocalRule(BranchRule):
    """A branch rule that also reports the remaining lifetime T(t, x)."""

    def terminal_time(self, t: float, x) -> float:
        raise NotImplementedError


def local_grid(t0: float, T: float, step: float, guard_gap: float,
               horizon: float | None = None) -> tuple[TimeGrid, bool]:
    """Grid from ``t0`` that stops ``guard_gap`` short of ``t0 + T``.

    Returns the grid and whether it was cut by the terminal time (as opposed
    to ``horizon``).
    """
    if not T > 0:
        raise ValueError(f"terminal time must be positive, got {T}")
    if guard_gap < 0:
        raise ValueError("guard_gap must be nonnegative")
    usable = T - guard_gap
    by_terminal = True
    if horizon is not None and horizon <= usable:
        usable, by_terminal = horizon, False
    if math.isinf(usable):
        raise ValueError("infinite terminal time needs a finite horizon")
    if usable <= 0:
        raise ValueError(f"guard gap {guard_gap} swallows the whole lifetime {T}")
    n = int(math.floor(usable / step * (1 + 1e-12)))
    if n * step >= T:
        n -= 1
    # n == 0 is a single-point funnel: the node is less than one step from blow-up
    return TimeGrid(t0, step, max(n, 0)), by_terminal


@dataclass(frozen=True)
class LocalFunnel:
    funnel: Funnel
    terminal_T: float
    guard_gap: float
    cut_by_terminal: bool

    @property
    def extension(self) -> float:
        """Length of the stretch between the last grid time and t0 + T."""
        return self.terminal_T - self.funnel.grid.horizon if self.cut_by_terminal else 0.0


def unroll_local(rule: LocalRule, t0: float, a, step: float, guard_gap: float | None = None,
                 horizon: float | None = None, max_paths: int = DEFAULT_MAX_PATHS) -> LocalFunnel:
    a = as_state(a)
    T = float(rule.terminal_time(t0, a))
    gap = DEFAULT_GAP_FRACTION * T if guard_gap is None else float(guard_gap)
    grid, by_terminal = local_grid(t0, T, step, gap, horizon)
    return LocalFunnel(unroll(rule, t0, a, grid, max_paths), T, gap, by_terminal)


# --- axioms ----------------------------------------------------------------------

def _stencil_drop(T_fn, t: float, x: np.ndarray, base: float, delta: float) -> float:
    offsets = np.array(np.meshgrid(*([[-delta, 0.0, delta]] * (x.size + 1)), indexing="ij"))
    offsets = offsets.reshape(x.size + 1, -1).T
    return base - min(T_fn(t + o[0], x + o[1:]) for o in offsets if np.any(o))


def check_TT(T_fn: Callable[[float, np.ndarray], float], samples: Sequence[tuple[float, Sequence[float]]],
             delta: float = 1e-2, lsc_tol: float = 1e-9, levels: int = 5) -> AxiomReport:
    """Lower semicontinuity probe on shrinking stencils.

    With drop(r) = T(p) - min of T over a stencil of radius r, lower
    semicontinuity means drop(r) vanishes as r -> 0.  Radii shrink by 10 each
    level; a drop that does not shrink at least linearly (up to ``lsc_tol``)
    is reported.
    """
    viol = []
    radii = [delta * 10.0 ** -j for j in range(levels)]
    for i, (t, x) in enumerate(samples):
        x = np.asarray(x, dtype=float).ravel()
        base = T_fn(t, x)
        drops = [_stencil_drop(T_fn, t, x, base, r) for r in radii]
        slope = 2.0 * max(drops[0], 0.0) / radii[0]
        for r, d in zip(radii, drops):
            if d > lsc_tol + slope * r:
                viol.append(Violation(i, 0, t, f"T={base} drops by {d} within radius {r}"))
                break
    return AxiomReport("TT", 0, len(samples), viol)


def check_LS3(lf: LocalFunnel, rule: LocalRule, k: int, tol: float = 1e-9,
              max_paths: int = DEFAULT_MAX_PATHS) -> AxiomReport:
    """Shifted paths belong to the local funnel of their node, whose lifetime is at least T - k*step."""
    f = lf.funnel
    t_k = f.grid.time(k)
    spent = k * f.grid.step
    viol = []
    seen: dict[bytes, LocalFunnel] = {}
    for i in range(f.n_paths):
        x_k = f.samples[i, k]
        key = x_k.tobytes()
        if key not in seen:
            seen[key] = unroll_local(rule, t_k, x_k, f.grid.step, lf.guard_gap, max_paths=max_paths)
        sub = seen[key]
        if sub.terminal_T < lf.terminal_T - spent - tol:
            viol.append(Violation(i, k, t_k, f"T at node {sub.terminal_T} < {lf.terminal_T - spent}"))
        n = min(sub.funnel.grid.n_steps, f.grid.n_steps - k)
        tails = sub.funnel.samples[:, : n + 1]
        piece = f.samples[i, k: k + n + 1]
        if not np.any(np.all(tails == piece, axis=(1, 2))):
            viol.append(Violation(i, k, t_k, "shifted path is not in the local funnel of its node"))
    return AxiomReport("LS3", k, f.n_paths, viol)


def ls3_defect(lf: LocalFunnel, rule: LocalRule, k: int) -> float:
    """max over nodes at step k of |T(t_k, x_k) - (T - k*step)|; zero when LS3 holds with equality."""
    f = lf.funnel
    t_k = f.grid.time(k)
    target = lf.terminal_T - k * f.grid.step
    return max(abs(rule.terminal_time(t_k, x) - target) for x in np.unique(f.samples[:, k], axis=0))


def reparametrize(w: Path, T: float) -> Path:
    """Rescale time so the path starts at s = 0 and its lifetime ``T`` becomes 1."""
    if not (0 < T < math.inf):
        raise ValueError("reparametrisation needs a finite positive terminal time")
    grid = TimeGrid(0.0, w.grid.step / T, w.grid.n_steps)
    return Path(grid, w.samples)


def unreparametrize(v: Path, t0: float, T: float) -> Path:
    return Path(TimeGrid(t0, v.grid.step * T, v.grid.n_steps), v.samples)


# --- functional on local paths -----------------------------------------------------

def extension_weight(lam: float, t_last: float, T: float) -> float:
    """Integral of exp(-lam t) over [t_last, T]."""
    if T <= t_last:
        return 0.0
    return math.exp(-lam * t_last) * (-math.expm1(-lam * (T - t_last))) / lam


def zeta_local(w: Path, T: float, fun: SeparatingFunctional, refine: int = DEFAULT_REFINE,
               extension: bool = True) -> float:
    """zeta over the lifetime [0, T) of ``w``; the last state is held constant after the last sample."""
    lam = fun.lam_f
    horizon = w.grid.horizon
    if horizon > T * (1 + 1e-12):
        raise ValueError(f"path horizon {horizon} exceeds its lifetime {T}")
    ints = step_integrals(w.samples[None], w.grid.step, lam, fun.phi, refine)
    val = float(accumulate(ints, lam, w.grid.step)[0])
    if extension:
        val += extension_weight(lam, horizon, T) * float(fun.phi(w.samples[-1][None])[0])
    return val


def gap_sensitivity_bound(w_short: Path, w_long: Path, T: float, fun: SeparatingFunctional,
                          refine: int = DEFAULT_REFINE) -> float:
    """Certified bound on |zeta_local(w_short) - zeta_local(w_long)| for two guard gaps.

    Both paths share their common prefix, so they differ only after the last
    sample of ``w_short``, where the integrands lie in [0, 1].  The
    quadrature error of the longer path is added on top.
    """
    n = w_short.grid.n_steps
    if w_long.grid.n_steps < n or not np.array_equal(w_long.samples[: n + 1], w_short.samples):
        raise ValueError("w_short must be a prefix of w_long")
    lam = fun.lam_f
    quad = quadrature_bound_batch(w_long.samples[None], w_long.grid.step, fun, refine)[0]
    return extension_weight(lam, w_short.grid.horizon, T) + float(quad)


def reduce_local(lf: LocalFunnel, params: ReductionParams = ReductionParams()) -> SelectionOutcome:
    f = lf.funnel
    extra = {"terminal_T": lf.terminal_T, "guard_gap": lf.guard_gap}
    if f.grid.n_steps == 0:
        return SelectionOutcome(f.t0, f.anchor, f.path(0), ReductionTrace(1, 0.0), 0, extra)
    budget = TruncationBudget.covering(f.grid.horizon, params.enumeration.lambdas)
    out = reduce(f, params.n_max, budget, params.eta_tie, params.eps_singleton,
                 params.enumeration, params.refine, extension=lf.extension)
    out.extra.update(extra)
    return out


class LocalSemiProcess:
    """Selections on local funnels with one absolute guard gap, so lifetimes line up along paths."""

    def __init__(self, rule: LocalRule, step: float, guard_gap: float = 1e-3,
                 params: ReductionParams = ReductionParams()):
        self.rule = rule
        self.step = float(step)
        self.guard_gap = float(guard_gap)
        self.params = params
        self.cache: dict[tuple[float, bytes], SelectionOutcome] = {}
        self._lock = threading.Lock()

    def local_funnel(self, t0: float, a) -> LocalFunnel:
        return unroll_local(self.rule, t0, a, self.step, self.guard_gap, max_paths=self.params.max_paths)

    def select(self, t0: float, a) -> SelectionOutcome:
        a = as_state(a)
        key = (float(t0), a.tobytes())
        with self._lock:
            hit = self.cache.get(key)
        if hit is not None:
            return hit
        out = reduce_local(self.local_funnel(t0, a), self.params)
        with self._lock:
            self.cache.setdefault(key, out)
        return out

    def U(self, t1: float, t0: float, a) -> np.ndarray:
        return self.select(t0, a).state_at(t1)


__all__ = [
    "LocalRule", "LocalFunnel", "LocalSemiProcess", "local_grid", "unroll_local", "check_TT",
    "check_LS3", "ls3_defect", "reparametrize", "unreparametrize", "zeta_local", "extension_weight",
    "gap_sensitivity_bound", "reduce_local",
]
