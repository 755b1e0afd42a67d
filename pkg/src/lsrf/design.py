"""Stochastic sampling designs ``s_j = A_n s_{0,j}`` and the big/small block partition."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from . import rng as _rng


class DesignError(ValueError):
    pass


# ---------------------------------------------------------------- densities


@dataclass(frozen=True)
class UniformDensity:
    d: int

    def pdf(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        inside = np.all((u >= 0) & (u <= 1), axis=1)
        return inside.astype(float)

    def inf(self) -> float:
        return 1.0

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        return gen.random((n, self.d))


@dataclass(frozen=True)
class ProductBetaDensity:
    """Per coordinate ``mix + (1 - mix) Beta(a_i, b_i)``; ``mix > 0`` keeps the density bounded below."""

    a: tuple[float, ...]
    b: tuple[float, ...]
    mix: float = 0.5

    def __post_init__(self):
        if len(self.a) != len(self.b) or len(self.a) == 0:
            raise DesignError("beta density needs one (a, b) pair per coordinate")
        if any(x <= 0 for x in (*self.a, *self.b)):
            raise DesignError("beta parameters must be positive")
        if not 0 <= self.mix <= 1:
            raise DesignError("mixing weight must lie in [0, 1]")
        if self.inf() <= 0:
            raise DesignError("product-beta density vanishes somewhere on the unit cube; raise mix")

    @property
    def d(self) -> int:
        return len(self.a)

    def _pdf1(self, x, i):
        return self.mix + (1 - self.mix) * stats.beta.pdf(x, self.a[i], self.b[i])

    def pdf(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.ones(u.shape[0])
        for i in range(self.d):
            out = out * self._pdf1(u[:, i], i)
        inside = np.all((u >= 0) & (u <= 1), axis=1)
        return np.where(inside, out, 0.0)

    def inf(self) -> float:
        grid = np.linspace(0.0, 1.0, 2001)
        val = 1.0
        for a, b in zip(self.a, self.b):
            lo = float(np.min(stats.beta.pdf(grid, a, b)))
            val *= self.mix + (1 - self.mix) * lo
        return val

    def _cdf1(self, x, i):
        return self.mix * x + (1 - self.mix) * special.betainc(self.a[i], self.b[i], x)

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        u = gen.random((n, self.d))
        out = np.empty_like(u)
        for i in range(self.d):
            if self.mix == 0:
                out[:, i] = special.betaincinv(self.a[i], self.b[i], u[:, i])
                continue
            lo = np.zeros(n)
            hi = np.ones(n)
            # bisection on the monotone mixture CDF
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                below = self._cdf1(mid, i) < u[:, i]
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            out[:, i] = 0.5 * (lo + hi)
        return out


@dataclass(frozen=True)
class PiecewiseConstantDensity:
    """Density constant on the cells of a regular grid over ``[0,1]^d``.

    ``values`` (any positive scale) is normalised on construction. Draws pick
    a cell by Walker/Vose alias sampling, then a uniform point inside it.
    """

    values: np.ndarray
    min_efficiency: float = 0.01

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 0 or v.size == 0 or np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise DesignError("piecewise-constant density needs positive finite cell values")
        cell = 1.0 / np.prod(v.shape)
        v = v / (v.sum() * cell)
        if v.mean() / v.max() < self.min_efficiency:
            raise DesignError("piecewise-constant density too peaked: sampler efficiency below 1%")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        prob, alias = _vose_tables(v.ravel() / v.sum())
        object.__setattr__(self, "_prob", prob)
        object.__setattr__(self, "_alias", alias)

    @property
    def d(self) -> int:
        return self.values.ndim

    def pdf(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        shape = np.asarray(self.values.shape)
        idx = np.clip(np.ceil(u * shape).astype(int) - 1, 0, shape - 1)
        inside = np.all((u >= 0) & (u <= 1), axis=1)
        return np.where(inside, self.values[tuple(idx.T)], 0.0)

    def inf(self) -> float:
        return float(self.values.min())

    def sample(self, gen: np.random.Generator, n: int) -> np.ndarray:
        k = len(self._prob)
        col = gen.integers(0, k, n)
        coin = gen.random(n)
        cell = np.where(coin < self._prob[col], col, self._alias[col])
        multi = np.stack(np.unravel_index(cell, self.values.shape), axis=1)
        return (multi + gen.random((n, self.d))) / np.asarray(self.values.shape)


def _vose_tables(p: np.ndarray):
    k = len(p)
    scaled = p * k
    prob = np.zeros(k)
    alias = np.zeros(k, dtype=int)
    small = [i for i in range(k) if scaled[i] < 1.0]
    large = [i for i in range(k) if scaled[i] >= 1.0]
    while small and large:
        s, l = small.pop(), large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] + scaled[s] - 1.0
        (small if scaled[l] < 1.0 else large).append(l)
    for i in large + small:
        prob[i] = 1.0
    return prob, alias


def density_integral(density, tol: float = 1e-10) -> float:
    """``int f_S`` over the unit cube (product quadrature or exact cell sum)."""
    if isinstance(density, UniformDensity):
        return 1.0
    if isinstance(density, PiecewiseConstantDensity):
        return float(density.values.sum() / density.values.size)
    total = 1.0
    for i in range(density.d):
        val, _ = integrate.quad(lambda x: float(density._pdf1(x, i)), 0, 1, epsabs=tol, limit=200)
        total *= val
    return total


# ---------------------------------------------------------------- designs


@dataclass(frozen=True)
class SamplingDesign:
    d: int
    n: int
    A_n: float
    density: object = None
    seed: object = 0
    C0: float = 1e-2

    def __post_init__(self):
        if self.d < 1:
            raise DesignError("dimension must be at least 1")
        if self.n < 0:
            raise DesignError("site count must be non-negative")
        if not self.A_n > 0:
            raise DesignError("region edge A_n must be positive")
        if self.density is None:
            object.__setattr__(self, "density", UniformDensity(self.d))
        if self.density.d != self.d:
            raise DesignError("density dimension does not match d")
        if abs(density_integral(self.density) - 1.0) > 1e-6:
            raise DesignError("sampling density does not integrate to 1")
        if not self.density.inf() > 0:
            raise DesignError("sampling density must be bounded away from zero")
        if self.n > 0 and self.n * self.A_n ** (-self.d) < self.C0:
            raise DesignError(f"site intensity n A_n^-d = {self.n * self.A_n ** -self.d:.3g} below C0 = {self.C0}")


@dataclass(frozen=True)
class SiteSet:
    sites_unit: np.ndarray
    A_n: float

    def __post_init__(self):
        u = np.asarray(self.sites_unit, dtype=float)
        if u.ndim != 2:
            raise DesignError("sites must be an (n, d) array")
        if np.any((u < 0) | (u > 1)):
            raise DesignError("unit-cube sites must lie in [0, 1]^d")
        u.flags.writeable = False
        object.__setattr__(self, "sites_unit", u)
        s = self.A_n * u
        s.flags.writeable = False
        object.__setattr__(self, "_sites", s)

    @property
    def sites(self) -> np.ndarray:
        return self._sites

    @property
    def n(self) -> int:
        return self.sites_unit.shape[0]

    @property
    def d(self) -> int:
        return self.sites_unit.shape[1]


def draw_sites(design: SamplingDesign, key: Sequence[int] = ()) -> SiteSet:
    """``n`` iid draws from ``f_S`` scaled by ``A_n``; ``key`` selects a sub-stream."""
    gen = _rng.stream(design.seed, _rng.SITES, *key)
    unit = design.density.sample(gen, design.n) if design.n else np.zeros((0, design.d))
    return SiteSet(np.clip(unit, 0.0, 1.0), design.A_n)


@dataclass(frozen=True)
class Regime:
    regime: str
    ratio: float


def classify_regime(n: int, A_n: float, d: int, kappa_max: float = 100.0) -> Regime:
    """``pure-increasing`` when ``n A_n^-d <= kappa_max``, otherwise ``mixed-increasing``."""
    ratio = n / A_n ** d
    if abs(ratio - round(ratio)) < 1e-9 * max(1.0, ratio):
        ratio = float(round(ratio))
    return Regime("pure-increasing" if ratio <= kappa_max else "mixed-increasing", ratio)


# ---------------------------------------------------------------- blocks


@dataclass(frozen=True)
class BlockPartition:
    """Blocks ``(ell + (0,1]^d) A3`` split per axis into ``(ell A3, ell A3 + A1]`` (label 1)
    and ``(ell A3 + A1, (ell+1) A3]`` (label 2)."""

    A_n: float
    A1: float
    A2: float
    d: int
    n_per_axis: int

    @property
    def A3(self) -> float:
        return self.A1 + self.A2

    def indices(self):
        return itertools.product(range(self.n_per_axis), repeat=self.d)

    def epsilons(self):
        return itertools.product((1, 2), repeat=self.d)

    def is_interior(self, ell) -> bool:
        return all((l + 1) * self.A3 <= self.A_n for l in ell)

    @property
    def interior(self) -> list[tuple[int, ...]]:
        return [l for l in self.indices() if self.is_interior(l)]

    @property
    def boundary(self) -> list[tuple[int, ...]]:
        return [l for l in self.indices() if not self.is_interior(l)]

    def interval(self, l: int, eps: int) -> tuple[float, float]:
        base = l * self.A3
        return (base, base + self.A1) if eps == 1 else (base + self.A1, (l + 1) * self.A3)

    def sub_block(self, ell, eps) -> list[tuple[float, float]]:
        return [self.interval(l, e) for l, e in zip(ell, eps)]

    def volume(self, eps) -> float:
        """``A1^q A2^(d-q)`` with ``q`` the number of label-1 axes."""
        q = sum(1 for e in eps if e == 1)
        return self.A1 ** q * self.A2 ** (self.d - q)

    def clipped_volume(self, ell, eps) -> float:
        vol = 1.0
        for a, b in self.sub_block(ell, eps):
            vol *= max(0.0, min(b, self.A_n) - min(a, self.A_n))
        return vol


def build_block_partition(A_n: float, A1: float | None = None, A2: float | None = None, d: int = 2) -> BlockPartition:
    """Partition of ``[0, A_n]^d``; defaults ``A1 = A_n^0.3`` and ``A2 = A_n^0.15``."""
    A1 = A_n ** 0.3 if A1 is None else float(A1)
    A2 = A_n ** 0.15 if A2 is None else float(A2)
    if not (0 < A2 < A1 < A_n):
        raise DesignError(f"block scales must satisfy 0 < A2 < A1 < A_n, got A2={A2}, A1={A1}, A_n={A_n}")
    return BlockPartition(float(A_n), A1, A2, d, int(math.ceil(A_n / (A1 + A2) - 1e-12)))


@dataclass
class BlockReport:
    rows: list = field(default_factory=list)  # (ell, eps, q, volume, count, flagged)
    unit_counts: np.ndarray | None = None
    unit_bound: float = 0.0
    unit_flags: int = 0
    block_flags: int = 0
    C: float = 3.0

    @property
    def total(self) -> int:
        return int(sum(r[4] for r in self.rows))


def _cell_index(x: np.ndarray, width: float, n_cells: int) -> np.ndarray:
    # half-open (a, b] cells; x = 0 goes to the first cell
    return np.clip(np.ceil(x / width).astype(int) - 1, 0, n_cells - 1)


def assign_sites_to_blocks(sites: SiteSet, part: BlockPartition, C: float = 3.0) -> BlockReport:
    """Count sites per sub-block and per unit cube, flagging counts above their bounds.

    Unit cubes: ``2 (log n + n A_n^-d)``. Sub-blocks:
    ``C A1^q A2^(d-q) n A_n^-d``. Flags are reported, never raised.
    """
    s = np.asarray(sites.sites, dtype=float)
    n = s.shape[0]
    if s.shape[1] != part.d:
        raise DesignError("site dimension does not match the partition")
    if n and (np.any(s < 0) or np.any(s > part.A_n)):
        raise DesignError("site outside the sampling region")
    L = part.n_per_axis
    ell = _cell_index(s, part.A3, L) if n else np.zeros((0, part.d), dtype=int)
    off = s - ell * part.A3
    eps = np.where(off <= part.A1, 1, 2)
    code = np.zeros(n, dtype=np.int64)
    for k in range(part.d):
        code = code * (2 * L) + ell[:, k] * 2 + (eps[:, k] - 1)
    counts = np.bincount(code, minlength=(2 * L) ** part.d) if n else np.zeros((2 * L) ** part.d, int)
    intensity = n / part.A_n ** part.d
    report = BlockReport(C=C)
    for ell_t in part.indices():
        for eps_t in part.epsilons():
            c = 0
            for l, e in zip(ell_t, eps_t):
                c = c * (2 * L) + l * 2 + (e - 1)
            cnt = int(counts[c])
            vol = part.volume(eps_t)
            flagged = n > 0 and cnt > C * vol * intensity
            report.block_flags += int(flagged)
            report.rows.append((ell_t, eps_t, sum(1 for e in eps_t if e == 1), vol, cnt, bool(flagged)))
    n_unit = int(math.ceil(part.A_n - 1e-12))
    if n:
        cube = _cell_index(s, 1.0, n_unit)
        flat = np.ravel_multi_index(tuple(cube.T), (n_unit,) * part.d)
        report.unit_counts = np.bincount(flat, minlength=n_unit ** part.d).reshape((n_unit,) * part.d)
        report.unit_bound = 2.0 * (math.log(n) + intensity)
        report.unit_flags = int(np.sum(report.unit_counts > report.unit_bound))
    else:
        report.unit_counts = np.zeros((n_unit,) * part.d, dtype=int)
    return report
