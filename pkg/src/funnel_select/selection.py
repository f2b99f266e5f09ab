"""Successive argmax reduction of funnels, semi-processes, and the semigroup verifier."""

from __future__ import annotations

import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .funnel import DEFAULT_MAX_PATHS, BranchRule, Funnel, unroll
from .functionals import (
    DEFAULT_ENUMERATION,
    DEFAULT_REFINE,
    Enumeration,
    SeparatingFunctional,
    TruncationBudget,
    accumulate,
    step_integrals,
)
from .paths import Path, TimeGrid, as_state, diameter, evaluate, path_to_csv, rho

THREADS_ENV = "FUNNEL_SELECT_THREADS"


def max_workers() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    return min(4, os.cpu_count() or 1)


def parallel_map(fn: Callable, items: Sequence, workers: int | None = None) -> list:
    """Order-preserving map; results never depend on the worker count."""
    workers = max_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --- windowed functional over a funnel ------------------------------------------

def _window_steps(f: Funnel, budget: TruncationBudget) -> int:
    pos = budget.horizon_T / f.grid.step
    k = round(pos)
    if abs(pos - k) > 1e-9 * max(1.0, pos):
        raise ValueError(
            f"budget horizon {budget.horizon_T} is not a whole number of grid steps ({f.grid.step})"
        )
    if k > f.grid.n_steps:
        raise ValueError(f"funnel horizon {f.grid.horizon} is shorter than budget horizon {budget.horizon_T}")
    return int(k)


def _leaf_weight(lam: float, t_last: float, extension: float) -> float:
    """Weight of the constant extension of the last sample over [t_last, t_last + extension]."""
    if extension <= 0.0:
        return 0.0
    return math.exp(-lam * t_last) * (-math.expm1(-lam * extension)) / lam


def funnel_zeta(f: Funnel, fun: SeparatingFunctional, budget: TruncationBudget,
                refine: int = DEFAULT_REFINE, extension: float = 0.0,
                rows: np.ndarray | None = None) -> np.ndarray:
    """zeta of every path (or of ``rows``) over the budget window, plus optional constant tail."""
    budget.check(fun.lam_f)
    k = _window_steps(f, budget)
    samples = f.samples if rows is None else f.samples[rows]
    window = samples[:, : k + 1]
    lam = fun.lam_f
    vals = accumulate(step_integrals(window, f.grid.step, lam, fun.phi, refine), lam, f.grid.step)
    wl = _leaf_weight(lam, k * f.grid.step, extension)
    if wl:
        vals = vals + wl * fun.phi(window[:, -1])
    return vals


@dataclass
class ValueTable:
    """Value function m(t_k, x) = max of zeta over the sub-funnel rooted at each tree node."""

    functional: SeparatingFunctional
    t0: float
    step: float
    node_values: np.ndarray
    node_depth: np.ndarray
    node_states: np.ndarray

    @property
    def root_value(self) -> float:
        return float(self.node_values[0])

    @property
    def entries(self) -> dict[tuple[float, tuple[float, ...]], float]:
        """(grid time, state) -> value, with zeta measured from that node's own start."""
        out = {}
        for v, d, s in zip(self.node_values, self.node_depth, self.node_states):
            out[(self.t0 + int(d) * self.step, tuple(float(c) for c in s))] = float(v)
        return out


def value_function(f: Funnel, fun: SeparatingFunctional, budget: TruncationBudget,
                   refine: int = DEFAULT_REFINE, extension: float = 0.0) -> ValueTable:
    """Backward recursion over the funnel tree.

    m(node) = max over child arcs of [arc integral + exp(-lam*step) * m(child)],
    leaves carry the constant-tail term when ``extension`` > 0.
    """
    budget.check(fun.lam_f)
    k_win = _window_steps(f, budget)
    lam, step = fun.lam_f, f.grid.step
    depth, parent = f.node_depth, f.node_parent
    values = np.full(f.n_nodes, -np.inf)
    leaves = depth == k_win
    wl = _leaf_weight(lam, 0.0, extension)  # measured from the leaf itself
    values[leaves] = wl * fun.phi(f.node_states[leaves]) if wl else 0.0
    edges = np.nonzero((parent >= 0) & (depth <= k_win))[0]
    ends = np.stack([f.node_states[parent[edges]], f.node_states[edges]], axis=1)
    arc = step_integrals(ends, step, lam, fun.phi, refine)[:, 0]
    decay = math.exp(-lam * step)
    for d in range(k_win, 0, -1):
        sel = depth[edges] == d
        child = edges[sel]
        cand = arc[sel] + decay * values[child]
        np.maximum.at(values, parent[child], cand)
    return ValueTable(fun, f.t0, step, values, depth, f.node_states)


def _argmax_rows(vals: np.ndarray, eta_tie: float) -> np.ndarray:
    m = vals.max()
    return np.nonzero(vals >= m - eta_tie)[0]


def argmax_set(f: Funnel, fun: SeparatingFunctional, budget: TruncationBudget,
               eta_tie: float = 1e-12, refine: int = DEFAULT_REFINE,
               extension: float = 0.0) -> Funnel:
    """Sub-funnel of paths whose zeta is within ``eta_tie`` of the maximum."""
    if eta_tie < 0:
        raise ValueError("eta_tie must be nonnegative")
    vals = funnel_zeta(f, fun, budget, refine, extension)
    return f.subset(_argmax_rows(vals, eta_tie))


# --- reduction ----------------------------------------------------------------

@dataclass(frozen=True)
class StageRecord:
    stage: int
    n: int
    lam: str
    phi: dict
    survivors: int
    diameter: float
    max_value: float

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "n": self.n,
            "lambda": self.lam,
            "phi": self.phi,
            "survivors": self.survivors,
            "diameter": self.diameter,
            "max_value": self.max_value,
        }


@dataclass
class ReductionTrace:
    initial_paths: int
    initial_diameter: float
    stages: list[StageRecord] = field(default_factory=list)
    stop_reason: str = "singleton"

    def to_list(self) -> list[dict]:
        return [s.to_dict() for s in self.stages]


@dataclass
class SelectionOutcome:
    t0: float
    anchor: np.ndarray
    selected: Path
    trace: ReductionTrace
    selected_index: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.trace.stop_reason == "singleton"

    def state_at(self, t: float) -> np.ndarray:
        return evaluate(self.selected, t)

    def to_json_dict(self) -> dict:
        d = {
            "t0": self.t0,
            "anchor": [float(c) for c in self.anchor],
            "selected_path_csv": path_to_csv(self.selected),
            "selected_index": self.selected_index,
            "initial_paths": self.trace.initial_paths,
            "trace": self.trace.to_list(),
            "stop_reason": self.trace.stop_reason,
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


@dataclass(frozen=True)
class ReductionParams:
    n_max: int = 500
    eta_tie: float = 1e-12
    eps_singleton: float = 1e-6
    enumeration: Enumeration = DEFAULT_ENUMERATION
    refine: int = DEFAULT_REFINE
    max_paths: int = DEFAULT_MAX_PATHS

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError("n_max must be nonnegative")
        if self.eta_tie < 0 or not self.eps_singleton > 0:
            raise ValueError("eta_tie must be >= 0 and eps_singleton > 0")


def reduce(f: Funnel, n_max: int, budget: TruncationBudget, eta_tie: float = 1e-12,
           eps_singleton: float = 1e-6, enumeration: Enumeration = DEFAULT_ENUMERATION,
           refine: int = DEFAULT_REFINE, extension: float = 0.0) -> SelectionOutcome:
    """Apply argmax sets for the first ``n_max`` functionals until the survivors are a near-singleton.

    The selection is the first survivor in canonical tree order.  If the
    budget runs out first, the outcome is still returned with
    ``stop_reason == "budget_exhausted"``.
    """
    alive = np.arange(f.n_paths)
    d0 = diameter(f.samples, f.grid)
    trace = ReductionTrace(f.n_paths, d0)
    diam = d0
    for stage in range(1, n_max + 1):
        if diam < eps_singleton:
            break
        fun = enumeration.functional(stage - 1)
        vals = funnel_zeta(f, fun, budget, refine, extension, rows=alive)
        keep = _argmax_rows(vals, eta_tie)
        alive = alive[keep]
        # survivors are nested, so the previous (possibly upper-bound) diameter still applies
        diam = min(diam, diameter(f.samples[alive], f.grid)) if alive.size > 1 else 0.0
        trace.stages.append(StageRecord(stage, fun.index_n, str(fun.lam), fun.phi.describe(),
                                        int(alive.size), diam, float(vals.max())))
    trace.stop_reason = "singleton" if diam < eps_singleton else "budget_exhausted"
    first = int(alive[0])
    return SelectionOutcome(f.t0, f.anchor, f.path(first), trace, first)


# --- semi-processes ---------------------------------------------------------------

class SemiProcess:
    """Selections u(.; t0, a) on a common absolute window ending at ``t_end``.

    Every funnel is unrolled on ``t0, t0 + step, ..., t_end`` and reduced with
    the functionals integrated up to ``t_end``; U(t1, t0)(a) evaluates the
    selected path at ``t1``.
    """

    def __init__(self, rule: BranchRule, step: float, t_end: float,
                 params: ReductionParams = ReductionParams()):
        self.rule = rule
        self.step = float(step)
        self.t_end = float(t_end)
        self.params = params
        self.cache: dict[tuple[float, bytes], SelectionOutcome] = {}
        self.errors: dict[tuple[float, tuple[float, ...]], str] = {}
        self._lock = threading.Lock()

    def grid_for(self, t0: float) -> TimeGrid:
        pos = (self.t_end - t0) / self.step
        n = round(pos)
        if n < 0 or abs(pos - n) > 1e-9 * max(1.0, abs(pos)):
            raise ValueError(f"t0={t0} is not a grid time before t_end={self.t_end}")
        grid = TimeGrid(t0, self.step, n)
        if grid.t_end != self.t_end:
            raise ValueError(f"t0={t0} does not land exactly on the step lattice ending at {self.t_end}")
        return grid

    def budget_for(self, horizon: float) -> TruncationBudget:
        return TruncationBudget.covering(horizon, self.params.enumeration.lambdas)

    def funnel(self, t0: float, a) -> Funnel:
        return unroll(self.rule, t0, a, self.grid_for(t0), self.params.max_paths)

    def _compute(self, t0: float, a: np.ndarray) -> SelectionOutcome:
        f = self.funnel(t0, a)
        if f.grid.n_steps == 0:
            trace = ReductionTrace(1, 0.0)
            return SelectionOutcome(t0, a, f.path(0), trace, 0)
        p = self.params
        return reduce(f, p.n_max, self.budget_for(f.grid.horizon), p.eta_tie, p.eps_singleton,
                      p.enumeration, p.refine)

    def select(self, t0: float, a) -> SelectionOutcome:
        a = as_state(a)
        key = (float(t0), a.tobytes())
        with self._lock:
            hit = self.cache.get(key)
        if hit is not None:
            return hit
        out = self._compute(float(t0), a)
        with self._lock:
            self.cache.setdefault(key, out)
        return out

    def U(self, t1: float, t0: float, a) -> np.ndarray:
        """Transition map U(t1, t0)(a)."""
        if t1 < t0:
            raise ValueError("U(t1, t0) needs t1 >= t0")
        return self.select(t0, a).state_at(t1)


def build_semi_process(rule: BranchRule, domain: Iterable[tuple[float, Sequence[float]]],
                       step: float, t_end: float, params: ReductionParams = ReductionParams(),
                       workers: int | None = None) -> SemiProcess:
    """Unroll and reduce every sample; per-sample failures are recorded, not raised."""
    p = SemiProcess(rule, step, t_end, params)
    items = [(float(t0), as_state(a)) for t0, a in domain]

    def work(item):
        t0, a = item
        try:
            p.select(t0, a)
            return None
        except Exception as exc:  # noqa: BLE001 - batch keeps going, error is reported
            return f"{type(exc).__name__}: {exc}"

    for (t0, a), err in zip(items, parallel_map(work, items, workers)):
        if err is not None:
            p.errors[(t0, tuple(float(c) for c in a))] = err
    return p


@dataclass
class SemigroupRecord:
    t0: float
    t1: float
    t2: float
    anchor: list[float]
    deviation: float

    def to_dict(self) -> dict:
        return {"t0": self.t0, "t1": self.t1, "t2": self.t2, "anchor": self.anchor,
                "deviation": self.deviation}


@dataclass
class SemigroupReport:
    tol: float
    records: list[SemigroupRecord] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def worst(self) -> float:
        return max((r.deviation for r in self.records), default=0.0)

    @property
    def failures(self) -> list[SemigroupRecord]:
        return [r for r in self.records if r.deviation > self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures and not self.errors

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "n_checked": len(self.records),
            "worst_deviation": self.worst,
            "ok": self.ok,
            "failures": [r.to_dict() for r in self.failures],
            "errors": list(self.errors),
        }


def verify_semigroup(p, triples: Iterable[tuple[float, float, float, Sequence[float]]],
                     tol: float = 1e-9, workers: int | None = None) -> SemigroupReport:
    """rho(U(t2,t1) U(t1,t0) a, U(t2,t0) a) for every triple.

    The intermediate selection is reduced from scratch at ``(t1, U(t1,t0)a)``.
    Works for any object with ``select(t0, a)`` returning a :class:`SelectionOutcome`.
    """
    items = [(float(t0), float(t1), float(t2), as_state(a)) for t0, t1, t2, a in triples]
    report = SemigroupReport(tol)

    def work(item):
        t0, t1, t2, a = item
        if not t0 <= t1 <= t2:
            return f"triple not ordered: {(t0, t1, t2)}"
        try:
            direct = p.select(t0, a)
            x1 = direct.state_at(t1)
            later = p.select(t1, x1)
            dev = rho(later.state_at(t2), direct.state_at(t2))
        except Exception as exc:  # noqa: BLE001
            return f"{(t0, t1, t2, a.tolist())}: {type(exc).__name__}: {exc}"
        return SemigroupRecord(t0, t1, t2, [float(c) for c in a], dev)

    for res in parallel_map(work, items, workers):
        if isinstance(res, str):
            report.errors.append(res)
        else:
            report.records.append(res)
    return report
