"""Grid-sampled paths in R^n and the shift / extend / splice / evaluate algebra.

A :class:`Path` is a trajectory sampled on a uniform :class:`TimeGrid`; between
grid nodes it is read as the linear interpolant.  Grid times are always
computed as ``t_start + k * step`` so that shifted grids reproduce the same
floating-point node times as long as the step is a dyadic rational (0.25,
0.125, ...), which is what every shipped benchmark uses.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class GridMismatchError(ValueError):
    """Two paths (or a path and a time) do not live on compatible grids."""


def as_state(x: Sequence[float] | np.ndarray | float) -> np.ndarray:
    """Coerce ``x`` to a read-only 1-D float array; rejects NaN/Inf."""
    arr = np.array(x, dtype=float, ndmin=1)
    if arr.ndim != 1:
        raise ValueError(f"state must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"state has non-finite coordinates: {arr!r}")
    arr.setflags(write=False)
    return arr


def rho(x, y) -> float:
    """Bounded metric on X = R^n: ``min(||x - y||_2, 1)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return min(float(np.linalg.norm(x - y)), 1.0)


def rho_array(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorised :func:`rho` over the last axis."""
    return np.minimum(np.linalg.norm(x - y, axis=-1), 1.0)


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    step: float
    n_steps: int

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError(f"grid step must be positive, got {self.step}")
        if self.n_steps < 0 or int(self.n_steps) != self.n_steps:
            raise ValueError(f"n_steps must be a nonnegative integer, got {self.n_steps}")
        if not math.isfinite(self.t_start):
            raise ValueError("t_start must be finite")
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    def time(self, k: int) -> float:
        return self.t_start + k * self.step

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.n_steps + 1) * self.step

    @property
    def t_end(self) -> float:
        return self.time(self.n_steps)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.step

    def shifted(self, k: int) -> "TimeGrid":
        if not 0 <= k <= self.n_steps:
            raise IndexError(f"shift {k} outside [0, {self.n_steps}]")
        return TimeGrid(self.time(k), self.step, self.n_steps - k)

    def index_of(self, t: float, atol: float = 1e-9) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid node."""
        k = round((t - self.t_start) / self.step)
        if not (0 <= k <= self.n_steps) or abs(self.time(k) - t) > atol * max(1.0, abs(t)):
            raise GridMismatchError(f"time {t} is not a node of {self}")
        return int(k)


@dataclass(frozen=True, eq=False)
class Path:
    """A trajectory sampled at the nodes of ``grid``; ``samples`` has shape (n_steps+1, dim)."""

    grid: TimeGrid
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] != self.grid.n_steps + 1:
            raise ValueError(
                f"expected {self.grid.n_steps + 1} samples, got array of shape {s.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise ValueError("path samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def t_start(self) -> float:
        return self.grid.t_start

    @property
    def start(self) -> np.ndarray:
        return self.samples[0]

    @property
    def end(self) -> np.ndarray:
        return self.samples[-1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Path):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash((self.grid, self.samples.tobytes()))

    def __call__(self, t: float) -> np.ndarray:
        return evaluate(self, t)

    def __repr__(self) -> str:
        return (
            f"Path(t={self.grid.t_start}..{self.grid.t_end}, step={self.grid.step}, "
            f"dim={self.dim})"
        )


def metric_d(u: Path, v: Path, n_terms: int | None = None) -> float:
    """Bounded compact-open metric ``sum_l 2^-l s_l / (1 + s_l)``.

    ``s_l`` is the sup of :func:`rho` over samples in the first ``l`` time
    units of the paths; past the grid horizon the full-grid sup is used.
    """
    if u.grid != v.grid:
        raise GridMismatchError("metric_d needs paths on the same grid")
    if u.dim != v.dim:
        raise ValueError("dimension mismatch")
    min_terms = max(1, math.ceil(u.grid.horizon))
    if n_terms is None:
        n_terms = min_terms
    if n_terms < min_terms:
        raise ValueError(f"n_terms={n_terms} is shorter than the grid horizon ({min_terms})")
    dist = rho_array(u.samples, v.samples)
    return float(_metric_from_rho(dist[None, :], u.grid, n_terms)[0])


def _metric_from_rho(dist: np.ndarray, grid: TimeGrid, n_terms: int) -> np.ndarray:
    """Metric values for rows of sample-wise rho distances (shape (m, n_steps+1))."""
    running = np.maximum.accumulate(dist, axis=1)
    rel = np.arange(grid.n_steps + 1) * grid.step
    total = np.zeros(dist.shape[0])
    for ell in range(1, n_terms + 1):
        # last sample index with relative time <= ell
        idx = int(np.searchsorted(rel, ell * (1 + 1e-12), side="right")) - 1
        s = running[:, idx]
        total += 2.0 ** (-ell) * s / (1.0 + s)
    return total


def diameter(samples: np.ndarray, grid: TimeGrid, n_terms: int | None = None,
             exact_limit: int = 1024, chunk: int = 256) -> float:
    """metric_d-diameter of a stack of paths, ``samples`` of shape (P, N+1, dim).

    Exact for up to ``exact_limit`` paths.  Larger stacks get the certified
    upper bound ``2 * max_j d(u_0, u_j)`` (triangle inequality) to keep the
    cost linear.
    """
    p = samples.shape[0]
    if p <= 1:
        return 0.0
    if n_terms is None:
        n_terms = max(1, math.ceil(grid.horizon))
    if p > exact_limit:
        dist = rho_array(samples[:1], samples)
        return min(1.0, 2.0 * float(_metric_from_rho(dist, grid, n_terms).max()))
    best = 0.0
    for i0 in range(0, p, chunk):
        block = samples[i0:i0 + chunk]
        dist = rho_array(block[:, None, :, :], samples[None, i0:, :, :])
        vals = _metric_from_rho(dist.reshape(-1, dist.shape[-1]), grid, n_terms)
        best = max(best, float(vals.max()))
    return best


def shift(u: Path, k: int) -> Path:
    """Erase the first ``k`` grid steps of ``u``."""
    if not 0 <= k <= u.grid.n_steps:
        raise IndexError(f"shift {k} outside [0, {u.grid.n_steps}]")
    if k == 0:
        return u
    return Path(u.grid.shifted(k), u.samples[k:])


def extend_const(v: Path, new_t_start: float) -> Path:
    """Extend ``v`` into the past by holding its initial state from ``new_t_start``."""
    gap = (v.grid.t_start - new_t_start) / v.grid.step
    k = round(gap)
    if gap < -1e-9 or abs(gap - k) > 1e-9:
        raise GridMismatchError(
            f"extension from {new_t_start} to {v.grid.t_start} is not a whole number of steps"
        )
    if k == 0:
        return v
    grid = TimeGrid(v.grid.t_start - k * v.grid.step, v.grid.step, v.grid.n_steps + k)
    prefix = np.repeat(v.samples[:1], k, axis=0)
    return Path(grid, np.vstack([prefix, v.samples]))


def extend_const_future(v: Path, n_extra: int) -> Path:
    """Hold the final state of ``v`` for ``n_extra`` more grid steps."""
    if n_extra < 0:
        raise ValueError("n_extra must be nonnegative")
    grid = TimeGrid(v.grid.t_start, v.grid.step, v.grid.n_steps + n_extra)
    return Path(grid, np.vstack([v.samples, np.repeat(v.samples[-1:], n_extra, axis=0)]))


def splice(u: Path, k: int, v: Path) -> Path:
    """Follow ``u`` up to grid index ``k``, then ``v``; the junction must match exactly."""
    if not 0 <= k <= u.grid.n_steps:
        raise IndexError(f"splice index {k} outside [0, {u.grid.n_steps}]")
    if v.grid.step != u.grid.step:
        raise GridMismatchError("splice needs equal grid steps")
    if v.grid.t_start != u.grid.time(k):
        raise GridMismatchError(
            f"v starts at t={v.grid.t_start}, junction is at t={u.grid.time(k)}"
        )
    if not np.array_equal(v.samples[0], u.samples[k]):
        raise ValueError(
            f"junction state mismatch at t={v.grid.t_start}: {u.samples[k]} vs {v.samples[0]}"
        )
    grid = TimeGrid(u.grid.t_start, u.grid.step, k + v.grid.n_steps)
    return Path(grid, np.vstack([u.samples[:k], v.samples]))


def evaluate(u: Path, t: float) -> np.ndarray:
    """Linear interpolation of ``u`` at time ``t``; exact at grid nodes."""
    g = u.grid
    pos = (t - g.t_start) / g.step
    tol = 1e-12 * max(1.0, g.n_steps)
    if pos < -tol or pos > g.n_steps + tol:
        raise ValueError(f"t={t} outside [{g.t_start}, {g.t_end}]")
    pos = min(max(pos, 0.0), float(g.n_steps))
    k = int(math.floor(pos))
    frac = pos - k
    if k >= g.n_steps or frac == 0.0:
        return u.samples[min(k, g.n_steps)].copy()
    near = round(pos)
    if abs(pos - near) <= 1e-12 * max(1.0, pos):
        return u.samples[near].copy()
    return (1.0 - frac) * u.samples[k] + frac * u.samples[k + 1]


# --- CSV serialisation -------------------------------------------------------

def path_to_csv(u: Path) -> str:
    """Header ``t,x1,...,xn``; ``repr`` gives the shortest round-trip decimal."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(u.dim)])
    for t, row in zip(u.grid.times, u.samples):
        w.writerow([repr(float(t))] + [repr(float(c)) for c in row])
    return buf.getvalue()


def path_from_csv(text: str) -> Path:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "t":
        raise ValueError("path CSV must start with a 't,x1,...' header")
    body = [[float(c) for c in r] for r in rows[1:] if r]
    if not body:
        raise ValueError("path CSV has no samples")
    arr = np.array(body)
    times = arr[:, 0]
    n = len(times) - 1
    if n == 0:
        return Path(TimeGrid(times[0], 1.0, 0), arr[:, 1:])
    raw = [(times[-1] - times[0]) / n, times[1] - times[0]]
    # the step that generated the times lies within a few ulps of the raw differences
    candidates = list(raw)
    for c in raw:
        up = down = c
        for _ in range(64):
            up, down = np.nextafter(up, np.inf), np.nextafter(down, -np.inf)
            candidates.extend([float(up), float(down)])
    for step in candidates:
        grid = TimeGrid(times[0], step, n)
        if np.array_equal(grid.times, times):
            return Path(grid, arr[:, 1:])
    grid = TimeGrid(times[0], raw[0], n)
    if not np.allclose(grid.times, times, rtol=0, atol=1e-9 * max(1.0, np.abs(times).max())):
        raise GridMismatchError("CSV times are not uniformly spaced")
    return Path(grid, arr[:, 1:])


def constant_path(grid: TimeGrid, x: Iterable[float] | float) -> Path:
    x = as_state(x)
    return Path(grid, np.repeat(x[None, :], grid.n_steps + 1, axis=0))
