"""Levy random measures on a cell grid and the moving-average fields they drive.

Only the Gaussian and compound-Poisson parts of a Levy triplet are sampled,
so every cell mass is drawn exactly (no small-jump approximation).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, special
from scipy.ndimage import map_coordinates
from scipy.signal import fftconvolve

from . import rng as _rng


class LevyError(ValueError):
    pass


class CoverageError(LevyError):
    pass


# ---------------------------------------------------------------- measures


@dataclass(frozen=True)
class JumpDistribution:
    """Jump-size law of a compound-Poisson part.

    kind: ``constant`` (params ``value``), ``normal`` (``mean``, ``sd``) or
    ``uniform`` (``low``, ``high``).
    """

    kind: str = "constant"
    value: float = 1.0
    mean: float = 0.0
    sd: float = 1.0
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "normal", "uniform"):
            raise LevyError(f"unsupported jump distribution {self.kind!r}")
        if self.kind == "normal" and self.sd < 0:
            raise LevyError("jump sd must be non-negative")
        if self.kind == "uniform" and not self.high > self.low:
            raise LevyError("uniform jumps need high > low")

    def moment(self, k: int) -> float:
        if self.kind == "constant":
            return self.value ** k
        if self.kind == "normal":
            return [1.0, self.mean, self.mean ** 2 + self.sd ** 2][k]
        return (self.high ** (k + 1) - self.low ** (k + 1)) / ((k + 1) * (self.high - self.low))

    def charfn(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.exp(1j * t * self.value)
        if self.kind == "normal":
            return np.exp(1j * t * self.mean - 0.5 * (self.sd * t) ** 2)
        a, b = self.low, self.high
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (np.exp(1j * t * b) - np.exp(1j * t * a)) / (1j * t * (b - a))
        return np.where(t == 0, 1.0 + 0j, out)

    def sum_of_jumps(self, gen: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        """Sum of ``counts[i]`` iid jumps per entry."""
        counts = np.asarray(counts)
        if self.kind == "constant":
            return self.value * counts.astype(float)
        if self.kind == "normal":
            z = gen.standard_normal(counts.shape)
            return self.mean * counts + self.sd * np.sqrt(counts) * z
        flat = counts.ravel()
        total = int(flat.sum())
        jumps = gen.uniform(self.low, self.high, total)
        owner = np.repeat(np.arange(flat.size), flat)
        return np.bincount(owner, weights=jumps, minlength=flat.size).reshape(counts.shape)


@dataclass(frozen=True)
class CompoundPoisson:
    rate: float
    jumps: JumpDistribution = field(default_factory=JumpDistribution)

    def __post_init__(self):
        if not self.rate > 0:
            raise LevyError("compound-Poisson rate must be positive")


@dataclass(frozen=True)
class LevyCharacteristic:
    """Levy triplet ``(gamma0, sigma0, nu0)`` with ``nu0`` either ``None`` or
    a :class:`CompoundPoisson`.

    The jump part is uncompensated: a cell ``E`` receives
    ``N(gamma0 |E|, sigma0 |E|)`` plus ``Poisson(rate |E|)`` jumps, so the
    first two moment densities are ``gamma0 + rate E[J]`` and
    ``sigma0 + rate E[J^2]``.
    """

    gamma0: float = 0.0
    sigma0: float = 1.0
    nu0: CompoundPoisson | None = None
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.sigma0 < 0:
            raise LevyError("sigma0 must be non-negative")
        if self.is_degenerate and not self.allow_degenerate:
            raise LevyError("degenerate Levy characteristic: sigma0 = 0, no jumps and gamma0 = 0")

    @property
    def is_degenerate(self) -> bool:
        return self.sigma0 == 0 and self.nu0 is None and self.gamma0 == 0

    @property
    def mean_density(self) -> float:
        """``mu0 = -i psi'(0)``."""
        jump = self.nu0.rate * self.nu0.jumps.moment(1) if self.nu0 else 0.0
        return self.gamma0 + jump

    @property
    def second_moment_density(self) -> float:
        """``-psi''(0)`` restricted to the centred part, i.e. the variance density."""
        jump = self.nu0.rate * self.nu0.jumps.moment(2) if self.nu0 else 0.0
        return self.sigma0 + jump

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        out = 1j * t * self.gamma0 - 0.5 * self.sigma0 * t * t
        if self.nu0 is not None:
            out = out + self.nu0.rate * (self.nu0.jumps.charfn(t) - 1.0)
        return out


# ---------------------------------------------------------------- kernels


@dataclass(frozen=True)
class CoefFn:
    """Coefficient function ``r(u)`` on ``[0,1]^d``.

    ``polynomial``: ``terms`` is a tuple of ``(coef, exponents)`` pairs, e.g.
    ``((1.0, (0, 0)), (0.3, (1, 0)))`` for ``1 + 0.3 u_1``.
    ``piecewise-linear``: linear interpolation of ``values`` at ``knots``
    along coordinate ``axis`` (constant extension outside).
    """

    kind: str = "polynomial"
    terms: tuple = ((1.0, ()),)
    axis: int = 0
    knots: tuple[float, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "polynomial":
            object.__setattr__(self, "terms", tuple((float(c), tuple(int(e) for e in ex))
                                                    for c, ex in self.terms))
            if any(e < 0 for _, ex in self.terms for e in ex):
                raise LevyError("polynomial exponents must be non-negative")
        elif self.kind == "piecewise-linear":
            k = np.asarray(self.knots, dtype=float)
            if len(k) < 2 or len(k) != len(self.values) or np.any(np.diff(k) <= 0):
                raise LevyError("piecewise-linear coefficient needs increasing knots matching values")
        else:
            raise LevyError(f"unknown coefficient kind {self.kind!r}")

    @classmethod
    def constant(cls, c: float) -> "CoefFn":
        return cls("polynomial", ((c, ()),))

    @property
    def is_constant(self) -> bool:
        if self.kind == "polynomial":
            return all(sum(ex) == 0 or c == 0 for c, ex in self.terms)
        return len(set(self.values)) == 1

    def __call__(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.kind == "polynomial":
            out = np.zeros(u.shape[0])
            for c, ex in self.terms:
                t = np.full(u.shape[0], c)
                for i, e in enumerate(ex):
                    if e:
                        t = t * u[:, i] ** e
                out = out + t
            return out
        return np.interp(u[:, self.axis], self.knots, self.values)

    @property
    def lipschitz(self) -> float:
        """Upper bound on the Lipschitz constant over ``[0,1]^d`` (sup norm of gradient, l1)."""
        if self.kind == "polynomial":
            return float(sum(abs(c) * sum(ex) for c, ex in self.terms))
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.knots))))

    @property
    def sup_abs(self) -> float:
        if self.kind == "polynomial":
            return float(sum(abs(c) for c, _ in self.terms))
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class CarmaParams:
    """Distinct negative roots ``lambdas`` and numerator coefficients ``b0..bq`` (``bq = 1``)."""

    lambdas: tuple[float, ...]
    b_coeffs: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.size == 0 or np.any(lam >= 0):
            raise LevyError("CARMA roots must be negative")
        if len(self.b_coeffs) == 0 or self.b_coeffs[-1] != 1.0:
            raise LevyError("leading CARMA numerator coefficient must be 1")
        if len(self.b_coeffs) - 1 >= lam.size:
            raise LevyError("CARMA numerator degree must be below the number of roots")
        if len(self.b_coeffs) > 1:
            zeros = np.roots(list(self.b_coeffs)[::-1])
            for z in zeros:
                if np.any(np.abs(lam ** 2 - z ** 2) < 1e-12):
                    raise LevyError("a CARMA root squared coincides with a squared numerator zero")

    def b(self, z):
        return sum(c * np.asarray(z) ** k for k, c in enumerate(self.b_coeffs))

    def a_prime(self, i: int) -> float:
        """Derivative of ``a(z) = prod (z^2 - lambda_j^2)`` at ``lambda_i``."""
        lam = self.lambdas
        val = 2.0 * lam[i]
        for j, lj in enumerate(lam):
            if j != i:
                val *= lam[i] ** 2 - lj ** 2
        return val

    def coefficients(self) -> np.ndarray:
        out = []
        for i, li in enumerate(self.lambdas):
            ap = self.a_prime(i)
            if ap == 0:
                raise LevyError("singular CARMA parameters (repeated root)")
            out.append(float(self.b(li)) / ap)
        return np.asarray(out)


def carma_kernel_eval(params: CarmaParams, r):
    """``g(r) = sum_i b(lambda_i) / a'(lambda_i) exp(lambda_i r)``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise LevyError("distance must be non-negative")
    coef = params.coefficients()
    out = np.zeros_like(r)
    for c, li in zip(coef, params.lambdas):
        out = out + c * np.exp(li * r)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SpatialKernel:
    """``g(u, r) = sum_k r_k(u) exp(-c_k r)``; ``form`` records the origin."""

    coefs: tuple[CoefFn, ...]
    rates: tuple[float, ...]
    form: str = "exp-sum"

    def __post_init__(self):
        if len(self.coefs) == 0 or len(self.coefs) != len(self.rates):
            raise LevyError("kernel needs matching coefficient functions and decay rates")
        if any(not c > 0 for c in self.rates):
            raise LevyError("all decay rates must be positive")
        if self.form not in ("exp-sum", "carma"):
            raise LevyError(f"unknown kernel form {self.form!r}")

    @classmethod
    def exponential(cls, c: float = 1.0, coef: CoefFn | float = 1.0) -> "SpatialKernel":
        if not isinstance(coef, CoefFn):
            coef = CoefFn.constant(coef)
        return cls((coef,), (float(c),))

    @classmethod
    def from_carma(cls, params: CarmaParams) -> "SpatialKernel":
        coef = params.coefficients()
        return cls(tuple(CoefFn.constant(float(c)) for c in coef),
                   tuple(-float(l) for l in params.lambdas), "carma")

    @property
    def min_rate(self) -> float:
        return min(self.rates)

    @property
    def lipschitz(self) -> float:
        return max(c.lipschitz for c in self.coefs)

    def coef_values(self, u) -> np.ndarray:
        """``(N, K)`` array of ``r_k(u)``."""
        return np.stack([c(u) for c in self.coefs], axis=-1)

    def __call__(self, u, r):
        r = np.asarray(r, dtype=float)
        cv = self.coef_values(u)[0]
        out = np.zeros_like(r)
        for ck, c in zip(cv, self.rates):
            out = out + ck * np.exp(-c * r)
        return out

    def envelope(self, r):
        """``gbar(r) = sum_k sup|r_k| exp(-c_k r)``, dominating ``|g(u, r)|`` for all u."""
        r = np.asarray(r, dtype=float)
        return sum(cf.sup_abs * np.exp(-c * r) for cf, c in zip(self.coefs, self.rates))

    def default_radius(self, m: float = 0.0) -> float:
        return max(m, 18.0 / self.min_rate)


def iota(x, m: float):
    """Taper equal to 1 on ``[0, m/2]``, linear down to 0 at ``m``, 0 beyond."""
    if not m > 0:
        raise LevyError("truncation range m must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise LevyError("ι argument must be non-negative")
    out = np.where(x <= m / 2.0, 1.0, np.where(x <= m, -2.0 / m * x + 2.0, 0.0))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- mass grids


@dataclass(frozen=True)
class LevyMassGrid:
    """Cell masses on the box ``lower + delta * [0, shape)``.

    ``masses`` has shape ``(p, *shape)``: one layer per independent driving
    measure, all sharing the geometry.
    """

    lower: tuple[float, ...]
    delta: float
    shape: tuple[int, ...]
    masses: np.ndarray
    seed: tuple[int, ...] = ()

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.ndim == len(self.shape):
            m = m[None]
        if tuple(m.shape[1:]) != tuple(self.shape):
            raise LevyError("mass array does not match grid shape")
        m.flags.writeable = False
        object.__setattr__(self, "masses", m)

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def p(self) -> int:
        return self.masses.shape[0]

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(lo + self.delta * s for lo, s in zip(self.lower, self.shape))

    @property
    def cell_volume(self) -> float:
        return self.delta ** self.d

    def centers(self, axis: int) -> np.ndarray:
        return self.lower[axis] + self.delta * (np.arange(self.shape[axis]) + 0.5)

    def box_mass(self, lo_idx: Sequence[int], hi_idx: Sequence[int], layer: int = 0) -> float:
        sl = tuple(slice(a, b) for a, b in zip(lo_idx, hi_idx))
        return float(self.masses[layer][sl].sum())

    def with_masses(self, masses: np.ndarray) -> "LevyMassGrid":
        return LevyMassGrid(self.lower, self.delta, self.shape, masses, self.seed)

    def __add__(self, other: "LevyMassGrid") -> "LevyMassGrid":
        if (self.lower, self.delta, self.shape) != (other.lower, other.delta, other.shape):
            raise LevyError("mass grids have different geometry")
        return self.with_masses(self.masses + other.masses)


def _grid_shape(lower, upper, delta):
    if not delta > 0:
        raise LevyError("cell edge delta must be positive")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or np.any(upper <= lower):
        raise LevyError("region must have positive volume")
    # region is extended up to a whole number of cells
    shape = np.ceil((upper - lower) / delta - 1e-9).astype(int)
    return tuple(float(x) for x in lower), tuple(int(s) for s in np.maximum(shape, 1))


def sample_levy_masses(region, delta: float, chi: LevyCharacteristic, seed, p: int = 1) -> LevyMassGrid:
    """Independent cell masses ``L(cell)`` on ``region = (lower, upper)``.

    Each slab along the first axis draws from its own stream keyed by
    ``(layer, slab)``, so results do not depend on evaluation order.
    """
    if not isinstance(chi, LevyCharacteristic):
        raise LevyError("unsupported Levy characteristic")
    lower, shape = _grid_shape(region[0], region[1], delta)
    vol = delta ** len(shape)
    row_shape = shape[1:]
    out = np.empty((p, *shape))
    for layer in range(p):
        for i in range(shape[0]):
            gen = _rng.stream(seed, _rng.MASSES, layer, i)
            row = np.full(row_shape, chi.gamma0 * vol)
            if chi.sigma0 > 0:
                row = row + math.sqrt(chi.sigma0 * vol) * gen.standard_normal(row_shape)
            if chi.nu0 is not None:
                counts = gen.poisson(chi.nu0.rate * vol, row_shape)
                row = row + chi.nu0.jumps.sum_of_jumps(gen, counts)
            out[layer, i] = row
    return LevyMassGrid(lower, float(delta), shape, out, tuple(_rng.seed_words(seed)))


_MAGIC = b"LSRFMASS"


def save_mass_grid(grid: LevyMassGrid, path) -> None:
    """Flat little-endian layout: magic, d, p, bounds, delta, shape, seed words, masses."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", grid.d, grid.p))
        fh.write(struct.pack(f"<{grid.d}d", *grid.lower))
        fh.write(struct.pack(f"<{grid.d}d", *grid.upper))
        fh.write(struct.pack("<d", grid.delta))
        fh.write(struct.pack(f"<{grid.d}q", *grid.shape))
        fh.write(struct.pack("<I", len(grid.seed)))
        fh.write(struct.pack(f"<{len(grid.seed)}Q", *grid.seed))
        fh.write(np.ascontiguousarray(grid.masses, dtype="<f8").tobytes())


def load_mass_grid(path) -> LevyMassGrid:
    buf = Path(path).read_bytes()
    if buf[:8] != _MAGIC:
        raise LevyError("not a mass-grid file")
    off = 8
    d, p = struct.unpack_from("<II", buf, off); off += 8
    lower = struct.unpack_from(f"<{d}d", buf, off); off += 8 * d
    off += 8 * d  # upper bound is implied by shape and delta
    (delta,) = struct.unpack_from("<d", buf, off); off += 8
    shape = struct.unpack_from(f"<{d}q", buf, off); off += 8 * d
    (ns,) = struct.unpack_from("<I", buf, off); off += 4
    seed = struct.unpack_from(f"<{ns}Q", buf, off); off += 8 * ns
    masses = np.frombuffer(buf, dtype="<f8", offset=off).reshape((p, *shape)).astype(float)
    return LevyMassGrid(tuple(lower), delta, tuple(int(s) for s in shape), masses, tuple(seed))


# ---------------------------------------------------------------- fields


def _boundary_distance(grid: LevyMassGrid, pts: np.ndarray) -> np.ndarray:
    lo = np.asarray(grid.lower)
    hi = np.asarray(grid.upper)
    return np.min(np.minimum(pts - lo, hi - pts), axis=1)


def eval_field(
    masses: LevyMassGrid,
    kernel: SpatialKernel,
    A_n: float,
    points,
    mode: str = "locally-stationary",
    u=None,
    m: float | None = None,
    layer: int = 0,
    tol: float = 1e-7,
) -> np.ndarray:
    """Discretised moving average ``sum_cells g(.,|s - v|) [iota] L(cell)`` at ``points``.

    ``mode`` is ``locally-stationary`` (coefficients at ``s / A_n``),
    ``stationary`` (coefficients at fixed ``u``) or ``truncated`` (fixed
    ``u`` and taper ``iota(.: m)``). Cells beyond ``max(m, 18/c_min)`` are
    skipped; a point whose neglected kernel mass outside the grid could
    exceed ``tol`` raises :class:`CoverageError`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != masses.d:
        raise LevyError("point dimension does not match the mass grid")
    if mode not in ("locally-stationary", "stationary", "truncated"):
        raise LevyError(f"unknown field mode {mode!r}")
    if mode != "locally-stationary" and u is None:
        raise LevyError(f"mode {mode!r} needs a rescaled location u")
    if mode == "truncated":
        if m is None or not m > 0:
            raise LevyError("truncated mode needs m > 0")
        radius = float(m)
    else:
        radius = kernel.default_radius()

    dist_b = _boundary_distance(masses, pts)
    reach = np.minimum(dist_b, radius)
    bad = (dist_b < radius) & ((dist_b < 0) | (kernel.envelope(np.maximum(reach, 0.0)) > tol))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise CoverageError(f"point {pts[i].tolist()} is too close to the edge of the mass grid")

    if mode == "locally-stationary":
        coefs = kernel.coef_values(pts / A_n)
    else:
        coefs = np.repeat(kernel.coef_values(np.asarray(u, dtype=float).reshape(1, -1)), len(pts), 0)
    rates = np.asarray(kernel.rates)
    lo = np.asarray(masses.lower)
    shape = np.asarray(masses.shape)
    layer_m = masses.masses[layer]
    out = np.empty(len(pts))
    for i, s in enumerate(pts):
        i0 = np.clip(np.floor((s - radius - lo) / masses.delta).astype(int), 0, shape)
        i1 = np.clip(np.ceil((s + radius - lo) / masses.delta).astype(int), 0, shape)
        sl = tuple(slice(a, b) for a, b in zip(i0, i1))
        axes = [lo[k] + masses.delta * (np.arange(i0[k], i1[k]) + 0.5) - s[k] for k in range(masses.d)]
        sq = np.zeros([len(a) for a in axes])
        for k, a in enumerate(axes):
            sq = sq + a.reshape([-1 if j == k else 1 for j in range(masses.d)]) ** 2
        r = np.sqrt(sq)
        w = np.zeros_like(r)
        for ck, c in zip(coefs[i], rates):
            w = w + ck * np.exp(-c * r)
        if mode == "truncated":
            w = w * iota(r, m)
        else:
            w = np.where(r <= radius, w, 0.0)
        out[i] = float(np.sum(w * layer_m[sl]))
    return out


def term_fields(masses: LevyMassGrid, kernel: SpatialKernel, layer: int = 0) -> np.ndarray:
    """Per-term convolutions ``Z_k(v) = sum_cells exp(-c_k |v - v'|) L(cell')`` at cell centres.

    Returns shape ``(K, *masses.shape)``; computed by FFT with the stencil
    cut at ``18 / c_min``.
    """
    radius = kernel.default_radius()
    half = int(math.ceil(radius / masses.delta))
    offs = masses.delta * np.arange(-half, half + 1)
    grids = np.meshgrid(*([offs] * masses.d), indexing="ij")
    r = np.sqrt(sum(g * g for g in grids))
    inside = r <= radius
    out = []
    for c in kernel.rates:
        stencil = np.where(inside, np.exp(-c * r), 0.0)
        out.append(fftconvolve(masses.masses[layer], stencil, mode="same"))
    return np.stack(out)


def field_at_sites(
    masses: LevyMassGrid,
    kernel: SpatialKernel,
    A_n: float,
    sites,
    layer: int = 0,
    terms: np.ndarray | None = None,
) -> np.ndarray:
    """Locally stationary field ``sum_k r_k(s / A_n) Z_k(s)`` at arbitrary sites.

    ``Z_k`` comes from :func:`term_fields` and is interpolated to the sites
    with cubic splines. Much faster than :func:`eval_field` for many sites.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    if terms is None:
        terms = term_fields(masses, kernel, layer)
    radius = kernel.default_radius()
    if np.any(_boundary_distance(masses, sites) < radius):
        raise CoverageError("sites too close to the edge of the mass grid for the kernel radius")
    idx = ((sites - np.asarray(masses.lower)) / masses.delta - 0.5).T
    coefs = kernel.coef_values(sites / A_n)
    out = np.zeros(len(sites))
    for k in range(terms.shape[0]):
        zk = map_coordinates(terms[k], idx, order=3, mode="nearest")
        out = out + coefs[:, k] * zk
    return out


# ---------------------------------------------------------------- moments


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2.0) / special.gamma(d / 2.0)


def stationary_moments(kernel: SpatialKernel, u, chi: LevyCharacteristic, d: int | None = None,
                       rtol: float = 1e-8) -> tuple[float, float]:
    """Mean ``mu0 int g(u,|s|) ds`` and variance ``sigma0bar^2 int g^2(u,|s|) ds`` of ``X_u(s)``."""
    u = np.asarray(u, dtype=float).reshape(1, -1)
    d = u.shape[1] if d is None else d
    area = _sphere_area(d)
    cv = kernel.coef_values(u)[0]
    rates = np.asarray(kernel.rates)

    def g(r):
        return float(np.dot(cv, np.exp(-rates * r)))

    def radial(fun):
        scale = 1.0 / kernel.min_rate
        total, err = 0.0, 0.0
        # split so the adaptive rule sees the exponential decay scale
        edges = [0.0, scale, 5 * scale, 20 * scale, 60 * scale, np.inf]
        for a, b in zip(edges[:-1], edges[1:]):
            val, e = integrate.quad(lambda r: r ** (d - 1) * fun(r), a, b,
                                    epsabs=0.0, epsrel=1e-12, limit=200)
            total += val
            err += e
        if not math.isfinite(total) or err > rtol * max(abs(total), 1e-300):
            raise LevyError("radial quadrature did not converge")
        return area * total

    mu0 = chi.mean_density
    mean = mu0 * radial(g) if mu0 != 0 else 0.0
    var = chi.second_moment_density * radial(lambda r: g(r) ** 2)
    return mean, var


@dataclass
class TruncationTable:
    m: np.ndarray
    gamma: np.ndarray
    se: np.ndarray
    q: int
    n_rep: int

    def is_decreasing(self, n_se: float = 1.0) -> bool:
        """Each step down by more than ``-n_se`` standard errors of the difference."""
        diff = np.diff(self.gamma)
        slack = n_se * np.sqrt(self.se[1:] ** 2 + self.se[:-1] ** 2)
        return bool(np.all(diff < slack))


def estimate_truncation_error(
    kernel: SpatialKernel,
    chi: LevyCharacteristic,
    m_values: Sequence[float],
    q: int,
    seed,
    n_rep: int = 1000,
    d: int = 2,
    u=None,
    delta: float | None = None,
    radius: float | None = None,
    min_rep: int = 100,
) -> TruncationTable:
    """Empirical ``(E|X_u(s) - X_u(s:m)|^q)^(1/q)`` over replicated mass grids.

    The residual at the origin is ``sum_cells g(u,|v|)(1 - iota(|v|:m)) L(cell)``
    over a grid of radius ``radius`` (default ``max(max m, 18/c_min)``).
    """
    if q < 2 or q % 2:
        raise LevyError("moment order q must be even and at least 2")
    if n_rep < min_rep:
        raise LevyError(f"need at least {min_rep} replications, got {n_rep}")
    m_values = np.sort(np.asarray(m_values, dtype=float))
    if m_values.size == 0 or np.any(m_values <= 0):
        raise LevyError("m values must be positive")
    u = np.full(d, 0.5) if u is None else np.asarray(u, dtype=float)
    delta = 0.25 / kernel.min_rate if delta is None else float(delta)
    radius = kernel.default_radius(float(m_values.max())) if radius is None else float(radius)
    half = int(math.ceil(radius / delta))
    # origin at a cell centre
    lo = -(half + 0.5) * delta
    hi = (half + 0.5) * delta
    centres = lo + delta * (np.arange(2 * half + 1) + 0.5)
    axes = [centres] * d
    grids = np.meshgrid(*axes, indexing="ij")
    r = np.sqrt(sum(g * g for g in grids)).ravel()
    keep = r <= radius
    g_val = kernel(u.reshape(1, -1), r[keep])
    weights = np.stack([g_val * (1.0 - iota(r[keep], m)) for m in m_values], axis=1)

    seed_w = _rng.seed_words(seed)
    resid = np.empty((n_rep, len(m_values)))
    for rep in range(n_rep):
        grid = sample_levy_masses((np.full(d, lo), np.full(d, hi)), delta, chi,
                                  (*seed_w, _rng.TRUNCATION, rep))
        resid[rep] = grid.masses[0].ravel()[keep] @ weights
    powq = np.abs(resid) ** q
    mom = powq.mean(axis=0)
    gamma = mom ** (1.0 / q)
    mom_se = powq.std(axis=0, ddof=1) / math.sqrt(n_rep)
    with np.errstate(invalid="ignore", divide="ignore"):
        se = np.where(mom > 0, gamma / (q * mom) * mom_se, 0.0)
    return TruncationTable(m_values, gamma, se, q, n_rep)


def exp_sum_moments(kernel: SpatialKernel, chi: LevyCharacteristic, u) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form mean and variance of ``X_u(s)`` for an exp-sum kernel at each row of ``u``.

    Uses ``int exp(-c |s|) ds = |S^(d-1)| Gamma(d) / c^d`` on ``R^d``.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    d = u.shape[1]
    const = _sphere_area(d) * math.gamma(d)
    rates = np.asarray(kernel.rates)
    cv = kernel.coef_values(u)
    int_g = cv @ (const / rates ** d)
    pair = const / (rates[:, None] + rates[None, :]) ** d
    int_g2 = np.einsum("nk,kl,nl->n", cv, pair, cv)
    return chi.mean_density * int_g, chi.second_moment_density * int_g2
