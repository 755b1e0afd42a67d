"""Smooth backfitting of the additive model ``m(u, x) = m0(u) + sum_l m_l(u, x_l)``
at a fixed rescaled location ``u``.

Covariates enter through boundary-corrected weights on a shared working grid
over ``[0, 1]``. The covariate weights are normalised by the same trapezoid
rule that evaluates the coupling integrals, so marginals of the pilot
densities are consistent to rounding error and the projection is exactly
idempotent on the grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .estimators import Dataset
from .kernels import KernelSpec, boundary_kernel_weight, kernel_constants


class BackfitError(ValueError):
    pass


def working_grid(n_points: int = 101) -> tuple[np.ndarray, np.ndarray]:
    """Equispaced nodes on ``[0, 1]`` and their trapezoid weights."""
    x = np.linspace(0.0, 1.0, n_points)
    w = np.full(n_points, 1.0 / (n_points - 1))
    w[0] = w[-1] = 0.5 / (n_points - 1)
    return x, w


def spatial_weights(data: Dataset, kspec: KernelSpec, h: float, u) -> np.ndarray:
    """``Kbar_h(u, s_j / A_n) = prod_i K_h(u_i, s_{j,i} / A_n)`` for every site."""
    u = np.asarray(u, dtype=float).ravel()
    unit = data.sites.sites_unit
    a = np.ones(data.n)
    for i in range(data.d):
        a = a * boundary_kernel_weight(kspec, h, u[i], unit[:, i])
    return a


def _in_cube(X):
    return np.all((X >= 0) & (X <= 1), axis=1)


def local_count(data: Dataset, kspec: KernelSpec, h: float, u, floor: float = 1e-12) -> float:
    """Kernel-localised number of observations with covariates in ``[0,1]^p``."""
    a = spatial_weights(data, kspec, h, u)
    f_tilde = math.fsum(a.tolist()) / data.n if data.n else 0.0
    if f_tilde < floor:
        raise BackfitError(f"degenerate location u={np.ravel(u).tolist()}: no sites nearby")
    inside = _in_cube(data.X)
    return math.fsum(a[inside].tolist()) / f_tilde


def model_constant(data: Dataset, kspec: KernelSpec, h: float, u) -> float:
    """Localised mean of ``Y`` over observations with covariates in the unit cube."""
    a = spatial_weights(data, kspec, h, u)
    inside = _in_cube(data.X)
    w = a[inside]
    tot = math.fsum(w.tolist())
    if not tot > 0:
        raise BackfitError(f"degenerate location u={np.ravel(u).tolist()}: no in-cube sites nearby")
    return math.fsum(((w / tot) * data.Y[inside]).tolist())


@dataclass
class PilotEstimates:
    """Pilot quantities at one location on the working grid.

    ``p_l[l]`` and ``m_l[l]`` are marginal density and one-dimensional
    regression pilots, ``p_lk[l, k]`` the pairwise marginals (``G x G``); the
    full tensor ``p_hat`` is kept only for ``p <= 3``.
    """

    u: np.ndarray
    x_grid: np.ndarray
    tw: np.ndarray
    n_unit: float
    f_tilde_S: float
    p_l: np.ndarray
    p_lk: np.ndarray
    m_l: np.ndarray
    m0_tilde: float
    degenerate: np.ndarray
    p_hat: np.ndarray | None = None
    denom_floor: float = 1e-12

    @property
    def p(self) -> int:
        return self.p_l.shape[0]


def _covariate_weights(kspec, h, x_grid, tw, values):
    """``G x m`` matrix of boundary weights ``K_h(x_g, X_j)``, each column integrating to 1 under ``tw``."""
    B = kspec((x_grid[:, None] - values[None, :]) / h)
    mass = tw @ B
    if np.any(mass <= 0):
        raise BackfitError("covariate kernel weight has no mass on the working grid; bandwidth too small")
    return B / mass


def compute_pilots(data: Dataset, kspec: KernelSpec, h: float, u, n_grid: int = 101,
                   denom_floor: float = 1e-12, keep_tensor: bool = True) -> PilotEstimates:
    """Density and regression pilots at location ``u``."""
    u = np.asarray(u, dtype=float).ravel()
    x_grid, tw = working_grid(n_grid)
    a = spatial_weights(data, kspec, h, u)
    f_tilde = math.fsum(a.tolist()) / data.n if data.n else 0.0
    if f_tilde < denom_floor:
        raise BackfitError(f"degenerate location u={u.tolist()}: no sites nearby")
    sel = (a > 0) & _in_cube(data.X)
    w = a[sel]
    if w.size == 0:
        raise BackfitError(f"degenerate location u={u.tolist()}: no in-cube sites nearby")
    n_unit = math.fsum(w.tolist()) / f_tilde
    X = data.X[sel]
    Y = data.Y[sel]
    p = data.p
    G = len(x_grid)
    Bs = [_covariate_weights(kspec, h, x_grid, tw, X[:, l]) for l in range(p)]
    wa = w / n_unit
    p_l = np.stack([B @ wa for B in Bs])
    num_l = np.stack([B @ (wa * Y) for B in Bs])
    degenerate = p_l < denom_floor
    with np.errstate(invalid="ignore", divide="ignore"):
        m_l = np.where(degenerate, np.nan, num_l / np.where(degenerate, 1.0, p_l))
    p_lk = np.zeros((p, p, G, G))
    for l in range(p):
        for k in range(p):
            if k != l:
                p_lk[l, k] = (Bs[l] * wa) @ Bs[k].T
    p_hat = None
    if keep_tensor and p <= 3:
        letters = "abc"[:p]
        spec = "j," + ",".join(f"{c}j" for c in letters) + "->" + letters
        p_hat = np.einsum(spec, wa, *Bs)
    m0 = math.fsum(((w / math.fsum(w.tolist())) * Y).tolist())
    return PilotEstimates(u, x_grid, tw, n_unit, f_tilde, p_l, p_lk, m_l, m0, degenerate,
                          p_hat, denom_floor)


@dataclass
class AdditiveModel:
    u: np.ndarray
    m0: float
    x_grid: np.ndarray
    components: np.ndarray
    iterations: int
    final_delta: float
    converged: bool
    history: list = field(default_factory=list)  # (sup change, max |int m_l p_l|) per sweep

    def component(self, l: int, x) -> np.ndarray:
        return np.interp(x, self.x_grid, self.components[l])

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.m0 + sum(self.component(l, x[:, l]) for l in range(self.components.shape[0]))


def _center(g, p_l, tw):
    return g - (tw @ (g * p_l)) / (tw @ p_l)


def smooth_backfit(pilots: PilotEstimates, tol: float = 1e-8, max_iter: int = 200,
                   init: np.ndarray | None = None) -> AdditiveModel:
    """Gauss-Seidel iteration of the backfitting equations with re-centring after each update.

    Stops once the sup-norm change of a sweep drops below ``tol``; returns
    ``converged=False`` (not an error) after ``max_iter`` sweeps.
    """
    P = pilots.p_l
    if np.any(~np.isfinite(P)) or np.any(P <= pilots.denom_floor):
        raise BackfitError("marginal pilot density not bounded away from zero on the working grid")
    if np.any(~np.isfinite(pilots.m_l)):
        raise BackfitError("regression pilot undefined on the working grid")
    p = pilots.p
    tw = pilots.tw
    m = np.zeros_like(pilots.m_l) if init is None else np.array(init, dtype=float)
    # coupling operators: (C_lk g)(x_l) = int g(x_k) p_lk(x_l, x_k) / p_l(x_l) dx_k
    C = {(l, k): pilots.p_lk[l, k] * tw[None, :] / P[l][:, None]
         for l in range(p) for k in range(p) if k != l}
    history = []
    delta = math.inf
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        old = m.copy()
        for l in range(p):
            upd = pilots.m_l[l] - pilots.m0_tilde
            for k in range(p):
                if k != l:
                    upd = upd - C[l, k] @ m[k]
            m[l] = _center(upd, P[l], tw)
        if not np.all(np.isfinite(m)):
            raise BackfitError("numeric failure: non-finite component after a sweep")
        delta = float(np.max(np.abs(m - old)))
        norm = max(abs(float(tw @ (m[l] * P[l]))) for l in range(p))
        history.append((delta, norm))
        if delta < tol:
            converged = True
            break
    return AdditiveModel(pilots.u, pilots.m0_tilde, pilots.x_grid, m, it, delta, converged, history)


def project_additive(pilots: PilotEstimates, model: AdditiveModel) -> PilotEstimates:
    """Pilots whose one-dimensional regressions are the marginal projections of ``model``.

    ``m_l <- m0 + g_l + sum_k int g_k p_lk / p_l``: the pilot an exactly
    additive, centred regression function would produce.
    """
    P = pilots.p_l
    tw = pilots.tw
    g = model.components
    m_l = np.empty_like(g)
    for l in range(pilots.p):
        v = model.m0 + g[l]
        for k in range(pilots.p):
            if k != l:
                v = v + (pilots.p_lk[l, k] @ (tw * g[k])) / P[l]
        m_l[l] = v
    return replace(pilots, m_l=m_l, m0_tilde=model.m0)


def additive_asymptotics(sigma_l: float, f_S: float, p_l: float, kspec: KernelSpec, d: int) -> float:
    """Asymptotic variance ``kappa0^(d+1) sigma_l^2 / (f_S p_l)`` of a backfitted component."""
    if not f_S * p_l > 0:
        raise BackfitError("singular denominator f_S p_l")
    k0, _ = kernel_constants(kspec)
    return k0 ** (d + 1) * sigma_l ** 2 / (f_S * p_l)
