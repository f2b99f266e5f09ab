"""Countable separating family, its enumeration, and the discounted functionals.

Quadrature: along every path segment the integrand ``phi(w(t))`` is replaced
by its quadratic interpolant on ``refine`` equal sub-intervals and integrated
against ``exp(-lam * t)`` exactly (weights from a 24-point Gauss-Legendre
rule, which is exact to rounding for these entire integrands).  Constant
``phi`` therefore integrates exactly, and step integrals add up across grid
nodes, which the dynamic-programming recursion relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .paths import Path

GAUSS_D3 = 3.91  # sup |d^3/dy^3 exp(-y^2)| = 3.9036...
SIGMOID_D3 = 0.125  # sup |sigma'''|
DEFAULT_REFINE = 8
PHI_FAMILIES = ("bumps", "sigmoids", "mixed")


class Phi(Protocol):
    def __call__(self, x: np.ndarray) -> np.ndarray: ...

    def d3_bound(self, v: np.ndarray) -> np.ndarray:
        """Upper bound on |d^3/ds^3 phi(x + s v)| for velocity rows ``v``."""
        ...


@dataclass(frozen=True)
class TestFunction:
    """Member of the separating family: a unit Gaussian bump or a coordinate sigmoid."""

    kind: str
    center: tuple[float, ...] = ()
    axis: int = 0
    offset: float = 0.0
    sign: int = 1

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.kind not in ("gaussian_bump", "coordinate_sigmoid"):
            raise ValueError(f"unknown test-function kind {self.kind!r}")
        if self.kind == "coordinate_sigmoid" and self.sign not in (1, -1):
            raise ValueError("sigmoid sign must be +1 or -1")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian_bump":
            q = np.asarray(self.center)
            return np.exp(-np.sum((x - q) ** 2, axis=-1))
        z = self.sign * (x[..., self.axis] - self.offset)
        # exp(-|z|) form avoids overflow for large |z|
        e = np.exp(-np.abs(z))
        return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def d3_bound(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "gaussian_bump":
            return GAUSS_D3 * np.linalg.norm(v, axis=-1) ** 3
        return SIGMOID_D3 * np.abs(v[..., self.axis]) ** 3

    def describe(self) -> dict:
        if self.kind == "gaussian_bump":
            return {"kind": self.kind, "center": list(self.center)}
        return {"kind": self.kind, "axis": self.axis, "offset": self.offset, "sign": self.sign}


@dataclass(frozen=True)
class ConstantPhi:
    """Constant stub, handy for closed-form checks."""

    value: float = 1.0

    def __call__(self, x):
        return np.full(np.shape(x)[:-1], float(self.value))

    def d3_bound(self, v):
        return np.zeros(np.shape(v)[:-1])

    def describe(self) -> dict:
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class SeparatingFunctional:
    index_n: int
    lam: Fraction
    phi: Phi

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")

    @property
    def lam_f(self) -> float:
        return float(self.lam)

    def describe(self) -> dict:
        phi = self.phi.describe() if hasattr(self.phi, "describe") else repr(self.phi)
        return {"n": self.index_n, "lambda": str(self.lam), "phi": phi}


# --- enumeration --------------------------------------------------------------

def rational_lambdas(height: int) -> list[Fraction]:
    """Positive rationals of height <= ``height``: 1, 1/2, 2, 1/3, 3, 2/3, 3/2, ..."""
    out = [Fraction(1)]
    for h in range(2, height + 1):
        for m in range(1, h):
            if math.gcd(m, h) == 1:
                out.extend([Fraction(m, h), Fraction(h, m)])
    return out


@lru_cache(maxsize=None)
def _grid_level(level: int, dim: int) -> tuple[tuple[Fraction, ...], ...]:
    """Rational points of spacing 1/level in the box [-level, level]^dim, new at this level."""
    def pts(m):
        ticks = [Fraction(k, m) for k in range(-m * m, m * m + 1)]
        grids = np.array(np.meshgrid(*([np.arange(len(ticks))] * dim), indexing="ij")).reshape(dim, -1).T
        return {tuple(ticks[i] for i in row) for row in grids}

    new = pts(level)
    if level > 1:
        for m in range(1, level):
            new -= pts(m)
    return tuple(sorted(new, key=lambda q: (max(abs(c) for c in q), sum(c * c for c in q), q)))


class _LazySequence:
    def __init__(self, level_fn):
        self.level_fn = level_fn
        self.items: list = []
        self.level = 0

    def __getitem__(self, j: int):
        while len(self.items) <= j:
            self.level += 1
            self.items.extend(self.level_fn(self.level))
        return self.items[j]


@dataclass(frozen=True)
class Enumeration:
    """Fixed total ordering n -> (lambda_n, phi_n) via diagonal pairing.

    ``lambda`` runs through :func:`rational_lambdas` (height <= ``lambda_height``),
    ``phi`` through the chosen family; pairs are visited along anti-diagonals
    ``i + j = 0, 1, 2, ...`` with ``i`` the lambda index.
    """

    family: str = "mixed"
    dim: int = 1
    lambda_height: int = 3
    sign_first: int = 1
    _centers: _LazySequence = field(init=False, repr=False, compare=False)
    _offsets: _LazySequence = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in PHI_FAMILIES:
            raise ValueError(f"phi family must be one of {PHI_FAMILIES}, got {self.family!r}")
        if self.lambda_height < 1 or self.dim < 1:
            raise ValueError("lambda_height and dim must be >= 1")
        if self.sign_first not in (1, -1):
            raise ValueError("sign_first must be +1 or -1")
        object.__setattr__(self, "_centers", _LazySequence(lambda m: _grid_level(m, self.dim)))
        object.__setattr__(self, "_offsets", _LazySequence(lambda m: [q[0] for q in _grid_level(m, 1)]))

    @property
    def lambdas(self) -> list[Fraction]:
        return rational_lambdas(self.lambda_height)

    def bump(self, j: int) -> TestFunction:
        return TestFunction("gaussian_bump", center=tuple(float(c) for c in self._centers[j]))

    def sigmoid(self, j: int) -> TestFunction:
        per_offset = 2 * self.dim
        off = self._offsets[j // per_offset]
        axis, s = divmod(j % per_offset, 2)
        sign = self.sign_first if s == 0 else -self.sign_first
        return TestFunction("coordinate_sigmoid", axis=axis, offset=float(off), sign=sign)

    def test_function(self, j: int) -> TestFunction:
        if self.family == "bumps":
            return self.bump(j)
        if self.family == "sigmoids":
            return self.sigmoid(j)
        return self.bump(j // 2) if j % 2 == 0 else self.sigmoid(j // 2)

    def pair(self, n: int) -> tuple[int, int]:
        """Index pair (lambda index i, phi index j) at position ``n``."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        L = len(self.lambdas)
        full = L * (L + 1) // 2  # pairs on the complete triangular diagonals 0..L-1
        if n < full:
            d = int((math.isqrt(8 * n + 1) - 1) // 2)
            while (d + 1) * (d + 2) // 2 <= n:
                d += 1
            while d * (d + 1) // 2 > n:
                d -= 1
            i = n - d * (d + 1) // 2
            return i, d - i
        d, i = divmod(n - full, L)
        d += L
        return i, d - i

    def functional(self, n: int) -> SeparatingFunctional:
        i, j = self.pair(n)
        return SeparatingFunctional(n, self.lambdas[i], self.test_function(j))

    def functionals(self, n_max: int) -> list[SeparatingFunctional]:
        return [self.functional(n) for n in range(n_max)]


DEFAULT_ENUMERATION = Enumeration()


def enumerate_functional(n: int, enumeration: Enumeration = DEFAULT_ENUMERATION) -> SeparatingFunctional:
    return enumeration.functional(n)


# --- truncation budget and quadrature ---------------------------------------

@dataclass(frozen=True)
class TruncationBudget:
    horizon_T: float
    epsilon_tail: float

    def __post_init__(self):
        if not self.horizon_T > 0 or not self.epsilon_tail > 0:
            raise ValueError("horizon_T and epsilon_tail must be positive")

    @staticmethod
    def tail(lam: float, horizon: float) -> float:
        """Bound on the integral of exp(-lam t) * phi over [horizon, inf) for 0 <= phi <= 1."""
        return math.exp(-lam * horizon) / lam

    def covers(self, lam: float) -> bool:
        return self.tail(float(lam), self.horizon_T) <= self.epsilon_tail * (1 + 1e-12)

    def check(self, lam: float) -> None:
        if not self.covers(lam):
            raise ValueError(
                f"budget (T={self.horizon_T}, eps={self.epsilon_tail}) does not cover "
                f"lambda={lam}: tail {self.tail(float(lam), self.horizon_T):.3g}"
            )

    @classmethod
    def covering(cls, horizon_T: float, lambdas: Sequence) -> "TruncationBudget":
        """Smallest epsilon_tail that covers every lambda in ``lambdas`` at ``horizon_T``."""
        eps = max(cls.tail(float(l), horizon_T) for l in lambdas)
        return cls(horizon_T, eps)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


@lru_cache(maxsize=4096)
def _sub_weights(z: float) -> tuple[float, float, float]:
    """Integrals over s in [0,1] of the quadratic Lagrange basis (nodes 0, 1/2, 1) times exp(-z s)."""
    s = 0.5 * (_GL_NODES + 1.0)
    w = 0.5 * _GL_WEIGHTS * np.exp(-z * s)
    l0 = 2.0 * (s - 0.5) * (s - 1.0)
    l1 = -4.0 * s * (s - 1.0)
    l2 = 2.0 * s * (s - 0.5)
    return float(w @ l0), float(w @ l1), float(w @ l2)


@lru_cache(maxsize=4096)
def step_weights(lam: float, step: float, refine: int) -> np.ndarray:
    """Weights on the 2*refine+1 equispaced points of one grid step (relative to the step start)."""
    h = step / refine
    w0, w1, w2 = _sub_weights(lam * h)
    out = np.zeros(2 * refine + 1)
    for m in range(refine):
        d = math.exp(-lam * m * h) * h
        out[2 * m] += d * w0
        out[2 * m + 1] += d * w1
        out[2 * m + 2] += d * w2
    out.setflags(write=False)
    return out


def _step_points(samples: np.ndarray, refine: int) -> np.ndarray:
    """Linear-interpolant points inside every step: shape (..., N, 2*refine+1, d)."""
    a = samples[..., :-1, None, :]
    b = samples[..., 1:, None, :]
    s = (np.arange(2 * refine + 1) / (2 * refine))[:, None]
    return a + (b - a) * s


def step_integrals(samples: np.ndarray, step: float, lam: float, phi: Phi,
                   refine: int = DEFAULT_REFINE) -> np.ndarray:
    """Undiscounted-at-start integrals over each grid step: shape (P, N).

    Entry (p, k) is the integral over [0, step] of exp(-lam s) phi(w_p(t_k + s)) ds.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-2] < 2:
        return np.zeros(samples.shape[:-2] + (0,))
    f = phi(_step_points(samples, refine))
    return (f * step_weights(float(lam), float(step), refine)).sum(axis=-1)


def discounts(lam: float, step: float, n: int) -> np.ndarray:
    return np.exp(-lam * step * np.arange(n))


def accumulate(ints: np.ndarray, lam: float, step: float) -> np.ndarray:
    """Forward discounted sum of step integrals, one fixed summation order for any batch size."""
    d = discounts(lam, step, ints.shape[-1])
    acc = np.zeros(ints.shape[:-1])
    for k in range(ints.shape[-1]):
        acc = acc + d[k] * ints[..., k]
    return acc


def zeta_batch(samples: np.ndarray, step: float, fun: SeparatingFunctional,
               refine: int = DEFAULT_REFINE) -> np.ndarray:
    """Discounted functional over the full sample window for a stack of paths (P, N+1, d)."""
    lam = fun.lam_f
    return accumulate(step_integrals(samples, step, lam, fun.phi, refine), lam, step)


def _window(w: Path, horizon: float) -> tuple[np.ndarray, float, float]:
    """Samples covering whole steps up to ``horizon`` plus the length of a trailing partial step."""
    g = w.grid
    if horizon > g.horizon * (1 + 1e-12) + 1e-12:
        raise ValueError(f"path horizon {g.horizon} is shorter than the budget horizon {horizon}")
    pos = horizon / g.step
    k = int(math.floor(pos + 1e-9))
    rem = horizon - k * g.step
    if rem <= 1e-12 * max(1.0, horizon) or k >= g.n_steps:
        rem = 0.0
    return w.samples[: k + 1], rem, g.step


def zeta_eval(w: Path, fun: SeparatingFunctional, budget: TruncationBudget,
              refine: int = DEFAULT_REFINE) -> float:
    """Integral over [0, budget.horizon_T] of exp(-lam t) phi(w(t0 + t)) dt."""
    budget.check(fun.lam_f)
    samples, rem, step = _window(w, budget.horizon_T)
    lam = fun.lam_f
    val = float(zeta_batch(samples[None], step, fun, refine)[0])
    if rem > 0.0:
        k = samples.shape[0] - 1
        frac = rem / step
        end = samples[-1] + frac * (w.samples[k + 1] - samples[-1])
        part = step_integrals(np.stack([samples[-1], end])[None], rem, lam, fun.phi, refine)
        val += math.exp(-lam * k * step) * float(part[0, 0])
    return val


def quadrature_bound_batch(samples: np.ndarray, step: float, fun: SeparatingFunctional,
                           refine: int = DEFAULT_REFINE) -> np.ndarray:
    """Certified bound on the interpolation error of :func:`zeta_batch` for each path."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape[-2] < 2:
        return np.zeros(samples.shape[:-2])
    lam = fun.lam_f
    v = np.diff(samples, axis=-2) / step
    m3 = fun.phi.d3_bound(v)
    h = step / refine
    per_step = step * h ** 3 * m3 / 192.0
    return (per_step * discounts(lam, step, per_step.shape[-1])).sum(axis=-1)


def quadrature_bound(w: Path, fun: SeparatingFunctional, budget: TruncationBudget,
                     refine: int = DEFAULT_REFINE) -> float:
    samples, rem, step = _window(w, budget.horizon_T)
    if rem > 0.0:
        samples = w.samples[: samples.shape[0] + 1]
    return float(quadrature_bound_batch(samples[None], step, fun, refine)[0])


def zeta_error_bound(w: Path, fun: SeparatingFunctional, budget: TruncationBudget,
                     refine: int = DEFAULT_REFINE) -> float:
    """|zeta_eval - true infinite-horizon zeta| <= tail + quadrature bound."""
    return TruncationBudget.tail(fun.lam_f, budget.horizon_T) + quadrature_bound(w, fun, budget, refine)


def separates(u: Path, v: Path, n_max: int, budget: TruncationBudget,
              enumeration: Enumeration = DEFAULT_ENUMERATION,
              refine: int = DEFAULT_REFINE) -> int | None:
    """Least n <= n_max whose functional tells u and v apart beyond the certified noise band.

    The band is 3 * (tail(lam_n) + quadrature bounds of both paths); the tail
    of a functional never exceeds ``budget.epsilon_tail`` for covered lambdas.
    """
    if u.grid != v.grid:
        raise ValueError("separates needs paths on the same grid")
    if np.array_equal(u.samples, v.samples):
        return None
    for n in range(n_max + 1):
        fun = enumeration.functional(n)
        if not budget.covers(fun.lam_f):
            continue
        diff = abs(zeta_eval(u, fun, budget, refine) - zeta_eval(v, fun, budget, refine))
        band = 3.0 * (
            TruncationBudget.tail(fun.lam_f, budget.horizon_T)
            + quadrature_bound(u, fun, budget, refine)
            + quadrature_bound(v, fun, budget, refine)
        )
        if diff > band:
            return n
    return None
