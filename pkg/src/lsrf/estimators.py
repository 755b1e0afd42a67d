"""Kernel sums over irregular sites: the general weighted estimator, the joint
density estimator, Nadaraya-Watson regression, and the asymptotic bias and
variance of the regression estimator.

Sums are formed with :func:`math.fsum`, which is exactly rounded and so
independent of the order and number of zero terms. The indexed and naive
paths therefore agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .design import SiteSet
from .index import CellIndex
from .kernels import KernelSpec, kernel_constants


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    sites: SiteSet
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.shape[0] != self.sites.n or Y.shape[0] != self.sites.n:
            raise EstimatorError("sites, covariates and responses disagree in length")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise EstimatorError("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def A_n(self) -> float:
        return self.sites.A_n

    @property
    def n(self) -> int:
        return self.sites.n

    @property
    def d(self) -> int:
        return self.sites.d

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_response(self, Y) -> "Dataset":
        return Dataset(self.sites, self.X, Y)


@dataclass(frozen=True)
class EvalGrid:
    """Evaluation points ``(u_i, x_i)``.

    Build a tensor grid with :meth:`from_axes` or pass matched point lists.
    """

    u: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        x = np.asarray(self.x, dtype=float)
        x = x.reshape(len(u), -1) if x.ndim < 2 else x
        if len(u) == 0 or len(u) != len(x):
            raise EstimatorError("evaluation grid must be nonempty with matching u and x points")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x", x)

    @classmethod
    def from_axes(cls, u_axes, x_axes) -> "EvalGrid":
        u_axes = [np.asarray(a, dtype=float) for a in u_axes]
        x_axes = [np.asarray(a, dtype=float) for a in x_axes]
        for a in (*u_axes, *x_axes):
            if a.size == 0 or np.any(np.diff(a) <= 0):
                raise EstimatorError("grid axes must be nonempty and strictly increasing")
        mesh = np.meshgrid(*u_axes, *x_axes, indexing="ij")
        flat = np.stack([m.ravel() for m in mesh], axis=1)
        d = len(u_axes)
        return cls(flat[:, :d], flat[:, d:])

    def __len__(self) -> int:
        return len(self.u)

    def interior_mask(self, c1: float, h: float) -> np.ndarray:
        """Points with ``u`` in ``[C1 h, 1 - C1 h]^d``."""
        lo, hi = c1 * h, 1.0 - c1 * h
        return np.all((self.u >= lo) & (self.u <= hi), axis=1)

    def subset(self, mask) -> "EvalGrid":
        return EvalGrid(self.u[mask], self.x[mask])


@dataclass
class EstimateField:
    u: np.ndarray
    x: np.ndarray
    value: np.ndarray
    denom: np.ndarray
    ess: np.ndarray
    degenerate: np.ndarray
    boundary: np.ndarray

    def __len__(self) -> int:
        return len(self.value)


def _spatial_weights(kspec: KernelSpec, h: float, unit: np.ndarray, u: np.ndarray) -> np.ndarray:
    w = kspec((u[0] - unit[:, 0]) / h)
    for i in range(1, unit.shape[1]):
        w = w * kspec((u[i] - unit[:, i]) / h)
    return w


def _full_weights(kspec, h, spatial, X, x):
    w = spatial
    for k in range(X.shape[1]):
        w = w * kspec((x[k] - X[:, k]) / h)
    return w


def _fsum(a) -> float:
    # + 0.0 turns a signed zero into +0
    return math.fsum(a.tolist()) + 0.0


def _prepare(data: Dataset, kspec: KernelSpec, h: float, grid: EvalGrid, full_cube: bool):
    if not h > 0:
        raise EstimatorError("bandwidth must be positive")
    if grid.u.shape[1] != data.d or grid.x.shape[1] != data.p:
        raise EstimatorError("evaluation grid dimensions do not match the dataset")
    boundary = ~grid.interior_mask(kspec.C1, h)
    if not full_cube:
        grid = grid.subset(~boundary)
        boundary = boundary[~boundary]
        if len(boundary) == 0:
            raise EstimatorError("no evaluation point lies inside [C1 h, 1 - C1 h]^d")
    return grid, boundary


def kernel_sums(data: Dataset, kspec: KernelSpec, h: float, grid: EvalGrid, reducer: Callable,
                method: str = "index") -> list:
    """Apply ``reducer(weights, idx)`` at each grid point.

    ``weights`` are the nonzero product-kernel weights and ``idx`` the
    matching site indices (candidates come from the cell index, or from all
    sites with ``method="naive"``).
    """
    unit = data.sites.sites_unit
    X = data.X
    out = []
    if method == "naive":
        idx_all = np.arange(data.n)
        cache_u, spatial = None, None
        for u, x in zip(grid.u, grid.x):
            if cache_u is None or not np.array_equal(u, cache_u):
                cache_u, spatial = u, _spatial_weights(kspec, h, unit, u)
            w = _full_weights(kspec, h, spatial, X, x)
            nz = w != 0
            out.append(reducer(w[nz], idx_all[nz]))
        return out
    if method != "index":
        raise EstimatorError(f"unknown summation method {method!r}")
    index = CellIndex(unit, kspec.C1 * h)
    cache_u, idx, spatial = None, None, None
    for u, x in zip(grid.u, grid.x):
        if cache_u is None or not np.array_equal(u, cache_u):
            cache_u = u
            idx = index.query(u)
            spatial = _spatial_weights(kspec, h, unit[idx], u)
            keep = spatial != 0
            idx, spatial = idx[keep], spatial[keep]
        w = _full_weights(kspec, h, spatial, X[idx], x)
        nz = w != 0
        out.append(reducer(w[nz], idx[nz]))
    return out


def _ess(w, s0):
    s2 = _fsum(w * w)
    return s0 * s0 / s2 if s2 > 0 else 0.0


def general_kernel_estimate(data: Dataset, W, kspec: KernelSpec, h: float, grid: EvalGrid, *,
                            full_cube: bool = False, method: str = "index",
                            denom_floor: float = 1e-12) -> EstimateField:
    """``(n h^(d+p))^-1 sum_j Kbar_h(u - s_j/A_n) prod_l K_h(x_l - X_j^l) W_j``."""
    W = np.asarray(W, dtype=float).ravel()
    if W.shape[0] != data.n or not np.all(np.isfinite(W)):
        raise EstimatorError("weights must be finite, one per site")
    grid, boundary = _prepare(data, kspec, h, grid, full_cube)
    norm = data.n * h ** (data.d + data.p) if data.n else 1.0

    def reducer(w, idx):
        s0 = _fsum(w)
        return _fsum(w * W[idx]), s0, _ess(w, s0)

    res = np.asarray(kernel_sums(data, kspec, h, grid, reducer, method), dtype=float).reshape(-1, 3)
    denom = res[:, 1] / norm
    return EstimateField(grid.u, grid.x, res[:, 0] / norm, denom, res[:, 2], denom < denom_floor, boundary)


def density_estimate(data: Dataset, kspec: KernelSpec, h: float, grid: EvalGrid, *,
                     full_cube: bool = False, method: str = "index") -> EstimateField:
    """Joint density estimate of ``(s/A_n, X)``; the general estimator with ``W = 1``."""
    grid, boundary = _prepare(data, kspec, h, grid, full_cube)
    norm = data.n * h ** (data.d + data.p) if data.n else 1.0

    def reducer(w, idx):
        s0 = _fsum(w)
        return s0, _ess(w, s0)

    res = np.asarray(kernel_sums(data, kspec, h, grid, reducer, method), dtype=float).reshape(-1, 2)
    f = res[:, 0] / norm
    return EstimateField(grid.u, grid.x, f, f, res[:, 1], np.zeros(len(f), bool), boundary)


def nw_regression(data: Dataset, kspec: KernelSpec, h: float, grid: EvalGrid,
                  denom_floor: float = 1e-12, *, full_cube: bool = False,
                  method: str = "index") -> EstimateField:
    """Nadaraya-Watson estimate; ``value`` is NaN where the density estimate is below ``denom_floor``."""
    grid, boundary = _prepare(data, kspec, h, grid, full_cube)
    norm = data.n * h ** (data.d + data.p) if data.n else 1.0
    Y = data.Y

    def reducer(w, idx):
        s0 = _fsum(w)
        if s0 / norm < denom_floor:
            return math.nan, s0, 0.0
        return _fsum((w / s0) * Y[idx]), s0, _ess(w, s0)

    res = np.asarray(kernel_sums(data, kspec, h, grid, reducer, method), dtype=float).reshape(-1, 3)
    denom = res[:, 1] / norm
    return EstimateField(grid.u, grid.x, res[:, 0], denom, res[:, 2], denom < denom_floor, boundary)


def contributing_sites(data: Dataset, kspec: KernelSpec, h: float, u, x) -> np.ndarray:
    """Sorted indices of the sites with nonzero kernel weight at ``(u, x)``."""
    u = np.asarray(u, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    spatial = _spatial_weights(kspec, h, data.sites.sites_unit, u)
    w = _full_weights(kspec, h, spatial, data.X, x)
    return np.flatnonzero(w != 0)


# ---------------------------------------------------------------- asymptotics


@dataclass(frozen=True)
class AsymptoticsConfig:
    """Symbols of the rate theory: moment order ``rho`` of the local
    stationarity error (``r = min(1, rho)``), moment order ``zeta`` of the
    weights, and ``c0 = lim n h^(d+p+4)``."""

    rho: float = 1.0
    zeta: float = 4.0
    c0: float = 1.0

    def __post_init__(self):
        if not self.rho > 0:
            raise EstimatorError("rho must be positive")
        if not self.zeta > 2:
            raise EstimatorError("zeta must exceed 2")

    @property
    def r(self) -> float:
        return min(1.0, self.rho)


def fd_gradient(fun: Callable, z: np.ndarray, step: float = 1e-5) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty(len(z))
    for i in range(len(z)):
        e = np.zeros(len(z))
        e[i] = step
        out[i] = (fun(z + e) - fun(z - e)) / (2 * step)
    return out


def fd_hessian_diag(fun: Callable, z: np.ndarray, step: float = 1e-4) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    f0 = fun(z)
    out = np.empty(len(z))
    for i in range(len(z)):
        e = np.zeros(len(z))
        e[i] = step
        out[i] = (fun(z + e) - 2 * f0 + fun(z - e)) / step ** 2
    return out


def _derivs(model, name, u, x, d):
    """Gradient and Hessian diagonal of ``model.<name>`` in ``(u, x)``."""
    grad = getattr(model, f"grad_{name}", None)
    hess = getattr(model, f"hess_{name}", None)
    z = np.concatenate([u, x])
    fun = getattr(model, name)

    def joint(zz):
        return float(fun(zz[:d], zz[d:]))

    g = np.asarray(grad(u, x), dtype=float) if grad is not None else fd_gradient(joint, z)
    H = np.asarray(hess(u, x), dtype=float) if hess is not None else fd_hessian_diag(joint, z)
    return g, H


def theoretical_bias_variance(model, u, x, kspec: KernelSpec, d: int, p: int, c0: float,
                              form: str = "density_weighted") -> tuple[float, float]:
    """Asymptotic bias ``B`` and variance ``V`` of ``sqrt(n h^(d+p)) (m_hat - m)``.

    ``model`` provides callables ``m(u, x)``, ``f(u, x)``, ``f_S(u)`` and
    ``sigma(u, x)``; optional ``grad_m``, ``hess_m`` and ``grad_f`` return
    analytic derivatives, otherwise central differences are used.

    ``form="density_weighted"`` returns
    ``sqrt(c0) kappa2/2 sum_i (2 dm df + d2m f)`` over all ``d + p``
    coordinates. ``form="standard"`` divides the bracket by the joint
    density ``q = f_S f`` and includes the derivative of ``f_S``, giving
    ``sqrt(c0) kappa2 sum_i (dm dq / q + d2m / 2)``.
    """
    u = np.asarray(u, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if len(u) != d or len(x) != p:
        raise EstimatorError("point dimensions do not match d and p")
    k0, k2 = kernel_constants(kspec)
    fS = float(model.f_S(u))
    f = float(model.f(u, x))
    if not fS * f > 0:
        raise EstimatorError("singular point: f_S(u) f(u,x) must be positive")
    sigma = float(model.sigma(u, x))
    V = k0 ** (d + p) * sigma ** 2 / (fS * f)
    gm, Hm = _derivs(model, "m", u, x, d)
    grad_f = getattr(model, "grad_f", None)
    if grad_f is not None:
        gf = np.asarray(grad_f(u, x), dtype=float)
    else:
        z = np.concatenate([u, x])
        gf = fd_gradient(lambda zz: float(model.f(zz[:d], zz[d:])), z)
    if form == "density_weighted":
        B = math.sqrt(c0) * k2 / 2.0 * float(np.sum(2 * gm * gf + Hm * f))
    elif form == "standard":
        grad_fS = getattr(model, "grad_f_S", None)
        if grad_fS is not None:
            gs = np.asarray(grad_fS(u), dtype=float)
        else:
            gs = fd_gradient(lambda uu: float(model.f_S(uu)), u)
        dq_over_q = gf / f + np.concatenate([gs / fS, np.zeros(p)])
        B = math.sqrt(c0) * k2 * float(np.sum(gm * dq_over_q + 0.5 * Hm))
    else:
        raise EstimatorError(f"unknown bias form {form!r}")
    return B, V


def plugin_bandwidth(model_pilot, points, kspec: KernelSpec, n: int, d: int, p: int) -> float:
    """Bandwidth minimising the summed asymptotic MSE ``h^4 b^2 + V / (n h^(d+p))`` over ``points``.

    ``model_pilot`` supplies pilot ``m``, ``f``, ``f_S`` and ``sigma`` (and
    optional derivatives); ``b`` is the standard-form bias per unit ``h^2``.
    """
    bs, vs = [], []
    for u, x in points:
        b, v = theoretical_bias_variance(model_pilot, u, x, kspec, d, p, 1.0, form="standard")
        bs.append(b * b)
        vs.append(v)
    b2 = float(np.mean(bs))
    if b2 <= 0:
        raise EstimatorError("pilot bias vanishes; plug-in bandwidth undefined")
    return ((d + p) * float(np.mean(vs)) / (4.0 * n * b2)) ** (1.0 / (d + p + 4))


def _monomials(nvar: int, degree: int) -> list[tuple[int, ...]]:
    import itertools
    return [e for e in itertools.product(range(degree + 1), repeat=nvar) if sum(e) <= degree]


def data_plugin_bandwidth(data: Dataset, kspec: KernelSpec, points, h_pilot: float | None = None,
                          degree: int = 3) -> float:
    """Plug-in bandwidth from the data alone.

    A global polynomial of total degree ``degree`` in ``(u, x)`` supplies the
    derivatives of ``m`` and the residual variance; the joint density and its
    gradient come from kernel density estimates at the pilot bandwidth
    ``h_pilot`` (default ``n^(-1/(d+p+4))``). The result minimises the
    averaged asymptotic MSE over ``points``.
    """
    d, p, n = data.d, data.p, data.n
    k = d + p
    h0 = float(n) ** (-1.0 / (k + 4)) if h_pilot is None else float(h_pilot)
    Z = np.column_stack([data.sites.sites_unit, data.X])
    mons = _monomials(k, degree)
    D = np.column_stack([np.prod(Z ** np.array(e), axis=1) for e in mons])
    coef, *_ = np.linalg.lstsq(D, data.Y, rcond=None)
    sigma2 = float(np.mean((data.Y - D @ coef) ** 2))
    k0, k2 = kernel_constants(kspec)

    def poly_derivs(z):
        g = np.zeros(k)
        H = np.zeros(k)
        for c, e in zip(coef, mons):
            e = np.array(e)
            for i in range(k):
                if e[i] >= 1:
                    ee = e.copy(); ee[i] -= 1
                    g[i] += c * e[i] * np.prod(z ** ee)
                if e[i] >= 2:
                    ee = e.copy(); ee[i] -= 2
                    H[i] += c * e[i] * (e[i] - 1) * np.prod(z ** ee)
        return g, H

    bs, vs = [], []
    step = 0.5 * h0
    for u, x in points:
        z = np.concatenate([np.ravel(u), np.ravel(x)]).astype(float)
        pts = [z] + [z + s * step * np.eye(k)[i] for i in range(k) for s in (1, -1)]
        grid = EvalGrid(np.array([q[:d] for q in pts]), np.array([q[d:] for q in pts]))
        q = density_estimate(data, kspec, h0, grid, full_cube=True).value
        if not q[0] > 0:
            raise EstimatorError(f"pilot density vanishes at {z.tolist()}")
        dq = np.array([(q[1 + 2 * i] - q[2 + 2 * i]) / (2 * step) for i in range(k)])
        g, H = poly_derivs(z)
        bs.append((k2 * float(np.sum(g * dq / q[0] + 0.5 * H))) ** 2)
        vs.append(k0 ** k * sigma2 / q[0])
    b2 = float(np.mean(bs))
    if b2 <= 0:
        raise EstimatorError("pilot bias vanishes; plug-in bandwidth undefined")
    return (k * float(np.mean(vs)) / (4.0 * n * b2)) ** (1.0 / (k + 4))
