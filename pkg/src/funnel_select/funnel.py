"""Finite tree funnels generated by one-step branch rules, with S3/S4 checks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .paths import Path, TimeGrid, as_state

DEFAULT_MAX_PATHS = 1 << 15


class InadmissibleInitialCondition(ValueError):
    """The rule has no solutions through the requested node."""


def _key(samples: np.ndarray) -> bytes:
    # adding +0.0 maps -0.0 to 0.0 so membership is exact equality, not bit equality
    return np.ascontiguousarray(samples + 0.0).tobytes()


class FunnelTooLarge(RuntimeError):
    pass


class BranchRule:
    """Generator of a funnel family: maps a grid node to the endpoints of one-step arcs.

    Subclasses implement :meth:`arcs`.  The returned list must be nonempty and
    depend only on ``(t, x, dt)`` so that unrolling from any node reproduces
    the corresponding subtree bit for bit.
    """

    name = "rule"
    max_branching = 2

    def arcs(self, t: float, x: np.ndarray, dt: float) -> list[np.ndarray]:
        raise NotImplementedError

    def check_admissible(self, t: float, x: np.ndarray) -> None:
        """Raise :class:`InadmissibleInitialCondition` if no solution passes through (t, x)."""

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class FunctionRule(BranchRule):
    """Wrap a plain callable ``f(t, x, dt) -> list of endpoints``."""

    def __init__(self, fn: Callable[[float, np.ndarray, float], Sequence], max_branching: int,
                 name: str = "function"):
        self.fn = fn
        self.max_branching = max_branching
        self.name = name

    def arcs(self, t, x, dt):
        return [np.asarray(e, dtype=float).reshape(x.shape) for e in self.fn(t, x, dt)]


def _next_endpoints(rule: BranchRule, t: float, x: np.ndarray, dt: float) -> list[np.ndarray]:
    ends = rule.arcs(t, x, dt)
    if len(ends) == 0:
        raise InadmissibleInitialCondition(f"{rule.name}: no arcs at node t={t}, x={x.tolist()}")
    if len(ends) > rule.max_branching:
        raise ValueError(
            f"{rule.name}: {len(ends)} arcs at t={t} exceeds max_branching={rule.max_branching}"
        )
    out = []
    for e in ends:
        e = np.asarray(e, dtype=float).reshape(x.shape)
        if not np.all(np.isfinite(e)):
            raise ValueError(f"{rule.name}: non-finite arc endpoint at t={t}, x={x.tolist()}")
        out.append(e)
    return out


@dataclass(frozen=True, eq=False)
class Funnel:
    """All paths of a finite tree rooted at ``(t0, anchor)``.

    ``samples[i]`` holds path ``i`` in canonical (lexicographic arc) order;
    ``node_ids[i, k]`` is the tree node path ``i`` occupies at grid index ``k``,
    so two paths agree on ``[t0, t_k]`` iff they share ``node_ids[:, k]``.
    """

    t0: float
    anchor: np.ndarray
    grid: TimeGrid
    samples: np.ndarray
    node_ids: np.ndarray
    node_states: np.ndarray
    node_depth: np.ndarray
    node_parent: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("samples", "node_ids", "node_states", "node_depth", "node_parent"):
            getattr(self, name).setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    @property
    def n_nodes(self) -> int:
        return self.node_states.shape[0]

    @cached_property
    def paths(self) -> tuple[Path, ...]:
        return tuple(Path(self.grid, s) for s in self.samples)

    def path(self, i: int) -> Path:
        return self.paths[i]

    @cached_property
    def path_keys(self) -> dict[bytes, int]:
        keys: dict[bytes, int] = {}
        for i, s in enumerate(self.samples):
            keys.setdefault(_key(s), i)
        return keys

    def contains(self, samples: np.ndarray) -> bool:
        s = np.ascontiguousarray(samples, dtype=float)
        return s.shape == self.samples.shape[1:] and _key(s) in self.path_keys

    def branch_counts(self) -> np.ndarray:
        """Number of children of every node (0 for leaves)."""
        counts = np.zeros(self.n_nodes, dtype=int)
        parents = self.node_parent[self.node_parent >= 0]
        np.add.at(counts, parents, 1)
        return counts

    def subset(self, indices) -> "Funnel":
        """Sub-funnel made of the given paths (kept in canonical order)."""
        idx = np.sort(np.asarray(indices, dtype=int))
        if idx.size == 0:
            raise ValueError("a funnel cannot be empty")
        return _build_from_node_ids(self, self.samples[idx], self.node_ids[idx])

    def without_path(self, i: int) -> "Funnel":
        keep = [j for j in range(self.n_paths) if j != i]
        return self.subset(keep)

    def with_path_replaced(self, i: int, samples: np.ndarray) -> "Funnel":
        new = np.array(self.samples)
        new[i] = samples
        return Funnel.from_paths(self.t0, self.anchor, self.grid, new)

    @classmethod
    def from_paths(cls, t0: float, anchor, grid: TimeGrid, samples: np.ndarray,
                   meta: dict | None = None) -> "Funnel":
        """Rebuild the prefix tree from a stack of paths sharing ``(t0, anchor)``."""
        samples = np.array(samples, dtype=float)
        if samples.ndim == 2:
            samples = samples[:, :, None]
        anchor = as_state(anchor)
        if samples.shape[1] != grid.n_steps + 1:
            raise ValueError("path length does not match grid")
        if not np.all(samples[:, 0, :] == anchor[None, :]):
            raise ValueError("every path must start at the anchor")
        p, n1, _ = samples.shape
        node_ids = np.zeros((p, n1), dtype=int)
        states, depth, parent = [samples[0, 0]], [0], [-1]
        for k in range(1, n1):
            seen: dict[tuple[int, bytes], int] = {}
            for i in range(p):
                key = (int(node_ids[i, k - 1]), _key(samples[i, k]))
                nid = seen.get(key)
                if nid is None:
                    nid = len(states)
                    seen[key] = nid
                    states.append(samples[i, k])
                    depth.append(k)
                    parent.append(key[0])
                node_ids[i, k] = nid
        return cls(float(t0), anchor, grid, samples, node_ids, np.array(states),
                   np.array(depth), np.array(parent), dict(meta or {}))

    def to_json_dict(self) -> dict:
        return {
            "t0": self.t0,
            "anchor": [float(c) for c in self.anchor],
            "delta": self.grid.step,
            "n_steps": self.grid.n_steps,
            "paths": [[[float(c) for c in state] for state in path] for path in self.samples],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, text: str | dict) -> "Funnel":
        d = json.loads(text) if isinstance(text, str) else text
        grid = TimeGrid(d["t0"], d["delta"], d["n_steps"])
        return cls.from_paths(d["t0"], d["anchor"], grid, np.array(d["paths"], dtype=float))


def _build_from_node_ids(parent_funnel: Funnel, samples, node_ids) -> Funnel:
    used = np.unique(node_ids)
    remap = -np.ones(parent_funnel.n_nodes, dtype=int)
    remap[used] = np.arange(used.size)
    par = parent_funnel.node_parent[used]
    new_parent = np.where(par >= 0, remap[np.maximum(par, 0)], -1)
    return Funnel(parent_funnel.t0, parent_funnel.anchor, parent_funnel.grid,
                  np.ascontiguousarray(samples), remap[node_ids],
                  parent_funnel.node_states[used], parent_funnel.node_depth[used],
                  new_parent, dict(parent_funnel.meta))


def unroll(rule: BranchRule, t0: float, a, grid: TimeGrid,
           max_paths: int = DEFAULT_MAX_PATHS) -> Funnel:
    """Build the funnel of all arc concatenations from ``(t0, a)`` along ``grid``."""
    if grid.t_start != t0:
        raise ValueError(f"grid starts at {grid.t_start}, funnel root is t0={t0}")
    a = as_state(a)
    rule.check_admissible(t0, a)
    states = [a]
    depth = [0]
    parent = [-1]
    level = [0]
    for k in range(grid.n_steps):
        t = grid.time(k)
        nxt = []
        for nid in level:
            for end in _next_endpoints(rule, t, states[nid], grid.step):
                states.append(end)
                depth.append(k + 1)
                parent.append(nid)
                nxt.append(len(states) - 1)
            if len(nxt) > max_paths:
                raise FunnelTooLarge(
                    f"{rule.name}: more than {max_paths} paths at step {k + 1} "
                    f"(expanding node t={t}, x={states[nid].tolist()})"
                )
        level = nxt
    parent_arr = np.array(parent)
    node_ids = np.empty((len(level), grid.n_steps + 1), dtype=int)
    node_ids[:, grid.n_steps] = level
    for k in range(grid.n_steps, 0, -1):
        node_ids[:, k - 1] = parent_arr[node_ids[:, k]]
    state_arr = np.array(states)
    samples = np.ascontiguousarray(state_arr[node_ids])
    return Funnel(float(t0), a, grid, samples, node_ids, state_arr, np.array(depth),
                  parent_arr, {"rule": rule.name})


# --- axiom checks -----------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    path_index: int
    k: int
    t: float
    detail: str

    def to_dict(self) -> dict:
        return {"path_index": self.path_index, "k": self.k, "t": self.t, "detail": self.detail}


@dataclass
class AxiomReport:
    axiom: str
    k: int
    n_checked: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "axiom": self.axiom,
            "k": self.k,
            "n_checked": self.n_checked,
            "ok": self.ok,
            "violations": [v.to_dict() for v in self.violations],
        }


class _SubfunnelCache:
    def __init__(self, rule: BranchRule, grid: TimeGrid, max_paths: int):
        self.rule, self.grid, self.max_paths = rule, grid, max_paths
        self._cache: dict[tuple[int, bytes], Funnel] = {}

    def get(self, k: int, x: np.ndarray) -> Funnel:
        key = (k, np.ascontiguousarray(x).tobytes())
        f = self._cache.get(key)
        if f is None:
            g = self.grid.shifted(k)
            f = unroll(self.rule, g.t_start, x, g, self.max_paths)
            self._cache[key] = f
        return f


def check_S3(f: Funnel, rule: BranchRule, k: int, max_paths: int = DEFAULT_MAX_PATHS,
             _cache: _SubfunnelCache | None = None) -> AxiomReport:
    """Every shifted path ``sigma_k u`` must belong to the funnel unrolled at ``(t_k, u(t_k))``."""
    if not 0 <= k <= f.grid.n_steps:
        raise IndexError(f"k={k} outside [0, {f.grid.n_steps}]")
    report = AxiomReport("S3", k)
    cache = _cache or _SubfunnelCache(rule, f.grid, max_paths)
    t_k = f.grid.time(k)
    for i in range(f.n_paths):
        report.n_checked += 1
        if k == 0 and np.array_equal(f.samples[i, 0], f.anchor):
            # sigma_0 is the identity; membership in f itself is what is being asked
            continue
        sub = cache.get(k, f.samples[i, k])
        if not sub.contains(f.samples[i, k:]):
            report.violations.append(Violation(i, k, t_k, "shifted path not in sub-funnel"))
    return report


def check_S4(f: Funnel, rule: BranchRule, k: int, max_paths: int = DEFAULT_MAX_PATHS,
             _cache: _SubfunnelCache | None = None) -> AxiomReport:
    """Splicing any path with any member of its sub-funnel at ``t_k`` must stay in ``f``."""
    if not 0 <= k <= f.grid.n_steps:
        raise IndexError(f"k={k} outside [0, {f.grid.n_steps}]")
    report = AxiomReport("S4", k)
    cache = _cache or _SubfunnelCache(rule, f.grid, max_paths)
    t_k = f.grid.time(k)
    done: set[tuple[int, int]] = set()
    for i in range(f.n_paths):
        node = int(f.node_ids[i, k])
        sub = cache.get(k, f.samples[i, k])
        for j in range(sub.n_paths):
            # paths sharing the node at k share the prefix, so one check per (node, v) suffices
            if (node, j) in done:
                continue
            done.add((node, j))
            report.n_checked += 1
            w = np.concatenate([f.samples[i, :k], sub.samples[j]], axis=0)
            if not f.contains(w):
                report.violations.append(
                    Violation(i, k, t_k, f"splice with sub-funnel path {j} missing from funnel")
                )
    return report


def check_axioms(f: Funnel, rule: BranchRule, ks: Sequence[int] | None = None,
                 max_paths: int = DEFAULT_MAX_PATHS) -> list[AxiomReport]:
    """S3 and S4 for every requested shift (default: all grid indices)."""
    cache = _SubfunnelCache(rule, f.grid, max_paths)
    ks = range(f.grid.n_steps + 1) if ks is None else ks
    out = []
    for k in ks:
        out.append(check_S3(f, rule, k, max_paths, cache))
        out.append(check_S4(f, rule, k, max_paths, cache))
    return out
