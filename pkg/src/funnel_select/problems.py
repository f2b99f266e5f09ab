"""Benchmark branch rules besides Clairaut: sqrt|x|, Riccati blow-up, log blow-up, random trees."""

from __future__ import annotations

import math
import zlib

import numpy as np

from .funnel import BranchRule, FunnelTooLarge, InadmissibleInitialCondition, unroll
from .paths import TimeGrid


class SqrtAbsRule(BranchRule):
    """x' = sqrt(|x|) on x >= 0: at 0 either stay or depart as ((t - r)/2)^2."""

    name = "sqrt_abs"
    max_branching = 2

    def check_admissible(self, t, x):
        if float(x[0]) < 0.0:
            raise InadmissibleInitialCondition(f"inadmissible initial condition: x={float(x[0])} < 0")

    def arcs(self, t, x, dt):
        x0 = float(x[0])
        self.check_admissible(t, x)
        if x0 == 0.0:
            return [np.array([0.0]), np.array([(0.5 * dt) ** 2])]
        return [np.array([(math.sqrt(x0) + 0.5 * dt) ** 2])]


def sqrt_abs_departure(t, r: float):
    """Solution of x' = sqrt|x| that sits at 0 until ``r`` and then departs."""
    t = np.asarray(t, dtype=float)
    return np.where(t <= r, 0.0, 0.25 * (t - r) ** 2)


class RiccatiRule(BranchRule):
    """x' = 1 + x^2, unique solutions x = tan(t - t0 + arctan a), blow-up after pi/2 - arctan a."""

    name = "riccati_blowup"
    max_branching = 1

    def terminal_time(self, t: float, x) -> float:
        return math.pi / 2 - math.atan(float(np.ravel(x)[0]))

    def arcs(self, t, x, dt):
        phase = math.atan(float(x[0])) + dt
        if phase >= math.pi / 2:
            raise ValueError(f"solution through ({t}, {float(x[0])}) blows up within one step")
        return [np.array([math.tan(phase)])]


class LogBlowupRule(BranchRule):
    """x' = kappa / (t_blow - t) with kappa from ``rates``: every path blows up at ``t_blow``."""

    name = "log_blowup"

    def __init__(self, t_blow: float = 3.1, rates: tuple[float, ...] = (1.0, 2.0)):
        self.t_blow = float(t_blow)
        self.rates = tuple(float(r) for r in rates)
        self.max_branching = len(self.rates)

    def terminal_time(self, t: float, x) -> float:
        return self.t_blow - t

    def check_admissible(self, t, x):
        if t >= self.t_blow:
            raise InadmissibleInitialCondition(f"t={t} is past the blow-up time {self.t_blow}")

    def arcs(self, t, x, dt):
        left = self.t_blow - t
        if dt >= left:
            raise ValueError(f"step from t={t} crosses the blow-up time {self.t_blow}")
        growth = -math.log1p(-dt / left)
        return [np.array([float(x[0]) + k * growth]) for k in self.rates]


class SyntheticRule(BranchRule):
    """Pseudo-random but deterministic tree generator keyed on (seed, t, x).

    With ``integer=True`` states live in Z^2: the first coordinate takes
    integer steps (repeats allowed) and the second coordinate labels the arc,
    so functionals that only read the first coordinate produce exact ties.
    """

    name = "synthetic_tree"

    def __init__(self, seed: int, max_branching: int = 3, dim: int = 2, integer: bool = False,
                 spread: float = 1.0):
        self.seed = int(seed)
        self.max_branching = int(max_branching)
        self.dim = int(dim)
        self.integer = integer
        self.spread = float(spread)

    def _rng(self, t: float, x: np.ndarray) -> np.random.Generator:
        key = zlib.crc32(np.float64(t).tobytes() + np.ascontiguousarray(x, dtype=float).tobytes())
        return np.random.default_rng([self.seed, key])

    def arcs(self, t, x, dt):
        rng = self._rng(t, x)
        b = int(rng.integers(1, self.max_branching + 1))
        if self.integer:
            ends = []
            for j in range(b):
                e = np.array(x, dtype=float)
                e[0] += float(rng.integers(-2, 3))
                if self.dim > 1:
                    e[1] += float(j)
                ends.append(e)
            return ends
        return [np.asarray(x, dtype=float) + self.spread * rng.standard_normal(self.dim) * math.sqrt(dt)
                for _ in range(b)]


def random_synthetic_funnel(seed: int, max_paths: int = 200, integer: bool = False,
                            step: float = 0.25, dim: int = 2):
    """A random synthetic funnel with at most ``max_paths`` paths (depth shrinks until it fits)."""
    rng = np.random.default_rng(seed)
    n_steps = int(rng.integers(2, 7))
    branching = int(rng.integers(2, 4))
    rule = SyntheticRule(seed, branching, dim=dim, integer=integer)
    anchor = np.round(rng.normal(size=dim)) if integer else rng.normal(size=dim)
    while True:
        try:
            f = unroll(rule, 0.0, anchor, TimeGrid(0.0, step, n_steps), max_paths)
            return rule, f
        except FunnelTooLarge:
            n_steps -= 1
