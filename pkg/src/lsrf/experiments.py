"""Monte Carlo harness: rate, central-limit, additive, truncation-decay and
joint confidence-interval studies built from a :class:`RunConfig`.

Replicate ``r`` at every schedule entry reuses the streams keyed by ``r``
(sites, masses, noise), so errors along the schedule are paired. Replicates
may run in worker processes; results are always reduced in replicate order,
so reports do not depend on ``threads``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import rng as _rng
from .backfit import BackfitError, additive_asymptotics, compute_pilots, smooth_backfit, working_grid
from .config import RunConfig
from .design import (PiecewiseConstantDensity, ProductBetaDensity, SamplingDesign, SiteSet,
                     UniformDensity, draw_sites)
from .estimators import (Dataset, EstimatorError, EvalGrid, data_plugin_bandwidth, density_estimate,
                         nw_regression, theoretical_bias_variance)
from .io import fmt, write_rows
from .kernels import KernelSpec, kernel_constants
from .levy import (CarmaParams, CoefFn, CompoundPoisson, JumpDistribution, LevyCharacteristic, LevyError,
                   SpatialKernel, estimate_truncation_error, exp_sum_moments, field_at_sites,
                   sample_levy_masses, term_fields)
from .truth import ExprFn, SymbolicModel


class ScenarioError(RuntimeError):
    """A configured experiment cannot run (degenerate coverage, missing truth, bad points...)."""


# ---------------------------------------------------------------- builders


def build_kernel(cfg: RunConfig) -> KernelSpec:
    k = cfg.kernel
    if k.family == "custom":
        return KernelSpec("custom", tuple(map(tuple, k.table)), k.support)
    return KernelSpec(k.family)


def _coef(entry) -> CoefFn:
    if isinstance(entry, (int, float)):
        return CoefFn.constant(float(entry))
    e = dict(entry)
    if "terms" in e:
        e["terms"] = tuple((c, tuple(ex)) for c, ex in e["terms"])
    for key in ("knots", "values"):
        if key in e:
            e[key] = tuple(e[key])
    return CoefFn(**e)


def build_field(cfg: RunConfig) -> tuple[SpatialKernel, LevyCharacteristic]:
    f = cfg.field
    if f.carma is not None:
        kernel = SpatialKernel.from_carma(CarmaParams(tuple(f.carma["lambdas"]), tuple(f.carma["b_coeffs"])))
    else:
        coefs = f.coefs if f.coefs is not None else [1.0] * len(f.rates)
        kernel = SpatialKernel(tuple(_coef(c) for c in coefs), tuple(float(r) for r in f.rates))
    nu = None
    if f.cp_rate is not None:
        nu = CompoundPoisson(f.cp_rate, JumpDistribution(**(f.jump or {})))
    return kernel, LevyCharacteristic(f.gamma0, f.sigma0, nu)


def build_density(cfg: RunConfig):
    s = cfg.sampling
    if s.density == "beta":
        return ProductBetaDensity(tuple(s.beta_a), tuple(s.beta_b), s.beta_mix)
    if s.density == "piecewise":
        return PiecewiseConstantDensity(np.asarray(s.piecewise_values, dtype=float))
    return UniformDensity(s.d)


def schedule(cfg: RunConfig) -> list[tuple[int, float]]:
    s = cfg.sampling
    if s.schedule:
        return [(int(n), float(a)) for n, a in s.schedule]
    if s.n is None or s.A_n is None:
        raise ScenarioError("sampling needs either a schedule or both n and A_n")
    return [(int(s.n), float(s.A_n))]


def single_size(cfg: RunConfig) -> tuple[int, float]:
    """``(n, A_n)`` for one-size studies: ``sampling.n``/``A_n`` if set, else the last schedule entry."""
    s = cfg.sampling
    if s.n is not None and s.A_n is not None:
        return int(s.n), float(s.A_n)
    return schedule(cfg)[-1]


def bandwidth(cfg: RunConfig, n: int, n_smoothed: int, data: Dataset | None = None,
              points=None) -> float:
    """Bandwidth under ``kernel.rule``; ``n_smoothed`` is the number of smoothed dimensions.

    ``rate`` gives ``c n^(-1/(n_smoothed+4))``; ``plugin`` needs data and points.
    """
    k = cfg.kernel
    if k.rule == "manual":
        return float(k.h)
    if k.rule == "rate":
        return k.c * float(n) ** (-1.0 / (n_smoothed + 4))
    if data is None or points is None:
        raise ScenarioError("plug-in bandwidth needs a dataset and evaluation points")
    return k.c * data_plugin_bandwidth(data, build_kernel(cfg), points)


# ---------------------------------------------------------------- truth


class ScenarioModel:
    """Truth of a simulated scenario: regression function, noise level,
    design density and the covariate density of the stationary companion.

    Covariate layers are independent copies of the field, so the covariate
    density factorises; it is Gaussian for a purely Gaussian field with the
    identity transform and uniform on ``[0,1]`` for ``normal-cdf``.
    """

    def __init__(self, cfg: RunConfig):
        d, p = cfg.sampling.d, cfg.field.p
        x = cfg.experiment
        self.d, self.p = d, p
        self.density = build_density(cfg)
        self.kernel, self.chi = build_field(cfg)
        self.transform = cfg.field.transform
        if x.additive_components is not None:
            if len(x.additive_components) != p:
                raise ScenarioError("experiment.additive_components needs one expression per covariate")
            parts = [f"({x.additive_m0 or '0'})"] + [f"({c})" for c in x.additive_components]
            m_expr = " + ".join(parts)
            self.components = [ExprFn(c, d, p) for c in x.additive_components]
            self.m0_fn = ExprFn(x.additive_m0 or "0", d, p)
        else:
            m_expr = x.truth_m
            self.components = None
            self.m0_fn = None
        try:
            self.sym = SymbolicModel(d, p, m_expr, x.truth_sigma)
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"cannot parse regression truth: {exc}") from exc
        self.noise = x.noise
        self.gaussian = self.chi.nu0 is None

    # regression and noise
    def m(self, u, x):
        return self.sym.m(u, x)

    def grad_m(self, u, x):
        return self.sym.grad_m(u, x)

    def hess_m(self, u, x):
        return self.sym.hess_m(u, x)

    def sigma(self, u, x):
        if self.noise == "none":
            return 0.0 * np.asarray(self.sym.sigma(u, x))
        return self.sym.sigma(u, x)

    # densities
    def f_S(self, u):
        return float(self.density.pdf(np.asarray(u, dtype=float).reshape(1, -1))[0])

    def covariate_moments(self, u):
        mean, var = exp_sum_moments(self.kernel, self.chi, np.asarray(u, dtype=float).reshape(1, -1))
        return float(mean[0]), math.sqrt(float(var[0]))

    def marginal(self, u, x):
        """Density of one covariate at values ``x`` at location ``u``."""
        x = np.asarray(x, dtype=float)
        if self.transform == "normal-cdf":
            return np.where((x >= 0) & (x <= 1), 1.0, 0.0)
        if not self.gaussian:
            raise ScenarioError("covariate density unavailable for a field with jumps")
        mu, sd = self.covariate_moments(u)
        return stats.norm.pdf(x, mu, sd)

    def f(self, u, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(np.prod(self.marginal(u, x)))

    def cube_marginal(self, u, x):
        """Density of one covariate conditioned on all covariates lying in ``[0,1]``."""
        if self.transform == "normal-cdf":
            return self.marginal(u, x)
        mu, sd = self.covariate_moments(u)
        mass = stats.norm.cdf(1.0, mu, sd) - stats.norm.cdf(0.0, mu, sd)
        return np.where((np.asarray(x) >= 0) & (np.asarray(x) <= 1), self.marginal(u, x) / mass, 0.0)

    def centred_components(self, u, x_grid) -> tuple[float, np.ndarray]:
        """Additive truth at ``u`` normalised so each component integrates to 0 against its marginal."""
        if self.components is None:
            raise ScenarioError("additive truth not configured")
        fine, tw = working_grid(2001)
        dens = self.cube_marginal(u, fine)
        uu = np.tile(np.asarray(u, dtype=float), (len(fine), 1))
        m0 = float(self.m0_fn(np.asarray(u, dtype=float), np.zeros(self.p)))
        out = []
        for l, comp in enumerate(self.components):
            X = np.zeros((len(fine), self.p))
            X[:, l] = fine
            mean = float(tw @ (comp(uu, X) * dens) / (tw @ dens))
            m0 += mean
            Xg = np.zeros((len(x_grid), self.p))
            Xg[:, l] = x_grid
            out.append(comp(np.tile(np.asarray(u, dtype=float), (len(x_grid), 1)), Xg) - mean)
        return m0, np.array(out)

    def component_sigma2(self, u, l: int, x_l: float, n_nodes: int = 101) -> float:
        """``E[sigma^2(u, X) | X^l = x_l]`` with the other covariates in ``[0,1]``."""
        if self.noise == "none":
            return 0.0
        if self.sym.exprs["sigma"].strip() and ExprFn(self.sym.exprs["sigma"], self.d, self.p).sym.is_number:
            return float(ExprFn(self.sym.exprs["sigma"], self.d, self.p).sym) ** 2
        nodes, tw = working_grid(n_nodes)
        dens = self.cube_marginal(u, nodes)
        others = [k for k in range(self.p) if k != l]
        mesh = np.meshgrid(*([nodes] * len(others)), indexing="ij")
        wmesh = np.meshgrid(*([tw * dens] * len(others)), indexing="ij")
        w = np.prod(np.stack([m.ravel() for m in wmesh]), axis=0) if others else np.ones(1)
        X = np.full((w.size, self.p), float(x_l))
        for j, k in enumerate(others):
            X[:, k] = mesh[j].ravel()
        s = self.sym.sigma(np.tile(np.asarray(u, dtype=float), (w.size, 1)), X)
        return float(np.sum(w * s ** 2) / np.sum(w))


# ---------------------------------------------------------------- simulation


_MODEL_CACHE: dict[str, ScenarioModel] = {}


def scenario_model(cfg: RunConfig) -> ScenarioModel:
    key = cfg.digest()
    if key not in _MODEL_CACHE:
        _MODEL_CACHE[key] = ScenarioModel(cfg)
    return _MODEL_CACHE[key]


def field_delta(cfg: RunConfig, kernel: SpatialKernel) -> float:
    return cfg.field.delta if cfg.field.delta is not None else 0.25 / kernel.min_rate


def simulate_covariates(cfg: RunConfig, sites, A_n: float, rep: int, return_masses: bool = False):
    """Covariate field values at ``sites`` for replicate ``rep``; shape ``(n, p)``.

    With ``return_masses`` the underlying mass grid is returned as well.
    """
    model = scenario_model(cfg)
    kernel, chi = model.kernel, model.chi
    d = sites.shape[1]
    delta = field_delta(cfg, kernel)
    pad = kernel.default_radius() + 2 * delta
    # the lower corner is fixed so mass cells keep their physical location across A_n
    region = (np.full(d, -pad), np.full(d, A_n + pad))
    masses = sample_levy_masses(region, delta, chi, (cfg.seed, rep), p=cfg.field.p)
    X = np.empty((len(sites), cfg.field.p))
    unit = sites / A_n
    if cfg.field.transform == "normal-cdf":
        mean, var = exp_sum_moments(kernel, chi, unit)
        sd = np.sqrt(var)
    for l in range(cfg.field.p):
        terms = term_fields(masses, kernel, l)
        z = field_at_sites(masses, kernel, A_n, sites, l, terms)
        X[:, l] = stats.norm.cdf((z - mean) / sd) if cfg.field.transform == "normal-cdf" else z
    return (X, masses) if return_masses else X


def simulate_dataset(cfg: RunConfig, n: int, A_n: float, rep: int) -> Dataset:
    """Sites, covariate field and responses ``Y = m(s/A_n, X) + sigma(s/A_n, X) e`` for replicate ``rep``."""
    model = scenario_model(cfg)
    design = SamplingDesign(cfg.sampling.d, n, A_n, model.density, seed=cfg.seed, C0=cfg.sampling.C0)
    return simulate_on_sites(cfg, draw_sites(design, key=(rep,)), rep)


def simulate_on_sites(cfg: RunConfig, sites: SiteSet, rep: int = 0, return_masses: bool = False):
    """Covariates and responses at given sites, using the streams of replicate ``rep``."""
    model = scenario_model(cfg)
    n = sites.n
    X, masses = simulate_covariates(cfg, sites.sites, sites.A_n, rep, return_masses=True)
    U = sites.sites_unit
    Y = np.asarray(model.m(U, X), dtype=float)
    if cfg.experiment.noise == "normal":
        e = _rng.stream(cfg.seed, _rng.NOISE, rep).standard_normal(n)
        Y = Y + np.broadcast_to(np.asarray(model.sym.sigma(U, X), dtype=float), Y.shape) * e
    data = Dataset(sites, X, Y)
    return (data, masses) if return_masses else data


def _map(fn, jobs: list, threads: int | None) -> list:
    if threads is None:
        threads = os.cpu_count() or 1
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------- reports


@dataclass
class Report:
    """Rows plus a summary; written as ``<stem>.csv`` and ``<stem>_summary.txt``."""

    stem: str
    header: list
    rows: list
    summary: dict
    digest: str
    seeds: list = field(default_factory=list)

    def comments(self) -> list[str]:
        return [f"config_digest={self.digest}", "seeds=" + " ".join(str(s) for s in self.seeds)]

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.stem}.csv"
        txt_path = out / f"{self.stem}_summary.txt"
        write_rows(csv_path, self.header, self.rows, self.comments())
        lines = [f"# {c}" for c in self.comments()]
        lines += [f"{k} = {fmt(v)}" for k, v in self.summary.items()]
        txt_path.write_text("\n".join(lines) + "\n")
        return [csv_path, txt_path]


class RateReport(Report):
    pass


class CltReport(Report):
    pass


class DecayReport(Report):
    pass


class CoverageReport(Report):
    pass


def loglog_slope(n_values, errors) -> tuple[float, float, float, float]:
    """OLS slope of ``log(error)`` on ``log(n)`` with its standard error and 95% interval.

    All four values are NaN when an error is not positive (e.g. an exact fit).
    """
    e = np.asarray(errors, dtype=float)
    if np.any(~(e > 0)):
        return (math.nan,) * 4
    x = np.log(np.asarray(n_values, dtype=float))
    y = np.log(e)
    res = stats.linregress(x, y)
    df = len(x) - 2
    t = stats.t.ppf(0.975, df) if df > 0 else math.inf
    return float(res.slope), float(res.stderr), float(res.slope - t * res.stderr), float(res.slope + t * res.stderr)


# ---------------------------------------------------------------- rate


def _axis(lo, hi, count):
    return np.linspace(lo, hi, int(count))


def _u_axes(cfg: RunConfig, margin: float):
    if not margin < 0.5:
        raise ScenarioError(f"bandwidth too large: interior margin {margin:.3g} leaves no evaluation points")
    k = cfg.experiment.u_axis_points
    return [_axis(margin, 1.0 - margin, k)] * cfg.sampling.d


def _x_axes(cfg: RunConfig):
    lo, hi, cnt = cfg.experiment.x_axis
    return [_axis(lo, hi, cnt)] * cfg.field.p


def _nw_sup_error(cfg, data, kspec, h, grid, truth):
    est = nw_regression(data, kspec, h, grid, cfg.estimator.denom_floor, full_cube=True)
    frac = float(np.mean(est.degenerate))
    if frac > 0.1:
        raise ScenarioError(f"{frac:.0%} of evaluation points are degenerate at n={data.n}")
    ok = ~est.degenerate
    return float(np.max(np.abs(est.value[ok] - truth[ok]))), frac


def _backfit_sup_error(cfg, data, kspec, h, u_points, x_margin):
    model = scenario_model(cfg)
    worst = 0.0
    for u in u_points:
        try:
            pil = compute_pilots(data, kspec, h, u, cfg.estimator.n_grid, cfg.estimator.denom_floor,
                                 keep_tensor=False)
            fit = smooth_backfit(pil, cfg.estimator.tol, cfg.estimator.max_iter)
        except BackfitError as exc:
            raise ScenarioError(f"backfitting failed at u={list(u)}: {exc}") from exc
        _, truth = model.centred_components(u, pil.x_grid)
        keep = (pil.x_grid >= x_margin) & (pil.x_grid <= 1.0 - x_margin)
        worst = max(worst, float(np.max(np.abs(fit.components[:, keep] - truth[:, keep]))))
    return worst


def _rate_job(args):
    cfg, rep, plan = args
    kspec = build_kernel(cfg)
    rows = []
    for n, A_n, h_nw, h_bf, nw_grid, nw_truth, bf_u, bf_margin in plan:
        data = simulate_dataset(cfg, n, A_n, rep)
        for est in cfg.experiment.estimators:
            if est == "nw":
                err, frac = _nw_sup_error(cfg, data, kspec, h_nw, nw_grid, nw_truth)
                rows.append(["nw", n, A_n, h_nw, rep, err, frac])
            else:
                err = _backfit_sup_error(cfg, data, kspec, h_bf, bf_u, bf_margin)
                rows.append(["backfit", n, A_n, h_bf, rep, err, 0.0])
    return rows


def _rate_plan(cfg: RunConfig, sched):
    """Per-size bandwidths and evaluation sets; sets come from the widest bandwidth so they are common."""
    kspec = build_kernel(cfg)
    model = scenario_model(cfg)
    d, p = cfg.sampling.d, cfg.field.p
    if cfg.kernel.rule == "plugin":
        raise ScenarioError("rate experiments need a deterministic bandwidth rule (manual or rate)")
    h_nw = [bandwidth(cfg, n, d + p) for n, _ in sched]
    h_bf = [bandwidth(cfg, n, d + 1) for n, _ in sched]
    nw_grid = EvalGrid.from_axes(_u_axes(cfg, kspec.C1 * max(h_nw)), _x_axes(cfg))
    nw_truth = np.asarray(model.m(nw_grid.u, nw_grid.x), dtype=float)
    bf_margin = 2 * kspec.C1 * max(h_bf)
    bf_u = (np.stack(np.meshgrid(*_u_axes(cfg, bf_margin), indexing="ij"), -1).reshape(-1, d)
            if "backfit" in cfg.experiment.estimators else None)
    return [(n, A, hn, hb, nw_grid, nw_truth, bf_u, bf_margin)
            for (n, A), hn, hb in zip(sched, h_nw, h_bf)]


def _rate_summary(cfg, rows, sched, estimators):
    summary = {"scenario": cfg.experiment.scenario, "replicates": cfg.experiment.replicates}
    d, p = cfg.sampling.d, cfg.field.p
    anomalous = False
    for est in estimators:
        sel = [r for r in rows if r[0] == est]
        means = [float(np.mean([r[5] for r in sel if r[1] == n])) for n, _ in sched]
        for (n, _), mval in zip(sched, means):
            summary[f"{est}_mean_sup_error_n{n}"] = mval
        slope, se, lo, hi = loglog_slope([r[1] for r in sel], [r[5] for r in sel])
        dec = all(b < a for a, b in zip(means, means[1:]))
        anomalous |= not dec
        summary[f"{est}_slope"] = slope
        summary[f"{est}_slope_se"] = se
        summary[f"{est}_slope_ci_low"] = lo
        summary[f"{est}_slope_ci_high"] = hi
        summary[f"{est}_predicted_slope"] = -2.0 / (d + p + 4) if est == "nw" else -2.0 / (d + 5)
        summary[f"{est}_strictly_decreasing"] = dec
    summary["anomalous"] = anomalous
    return summary


def run_rate_experiment(cfg: RunConfig, estimators=None) -> RateReport:
    """Replicate sup errors along the schedule and the fitted log-log slope."""
    sched = schedule(cfg)
    if len(sched) < 3:
        raise ScenarioError("rate experiments need a schedule of at least 3 sizes")
    if estimators is not None:
        from .config import with_overrides
        cfg = with_overrides(cfg, {"experiment.estimators": list(estimators)})
    plan = _rate_plan(cfg, sched)
    M = cfg.experiment.replicates
    parts = _map(_rate_job, [(cfg, r, plan) for r in range(M)], cfg.threads)
    rows = [[cfg.experiment.scenario] + row for part in parts for row in part]
    order = {e: i for i, e in enumerate(cfg.experiment.estimators)}
    rows.sort(key=lambda r: (order[r[1]], r[2], r[5]))
    summary = _rate_summary(cfg, [r[1:] for r in rows], sched, cfg.experiment.estimators)
    header = ["scenario", "estimator", "n", "A_n", "h", "replicate", "sup_error", "degenerate_fraction"]
    return RateReport("rate", header, rows, summary, cfg.digest(), [cfg.seed, M])


# ---------------------------------------------------------------- clt


def _points(cfg: RunConfig):
    x = cfg.experiment
    if not x.u_points or not x.x_points or len(x.u_points) != len(x.x_points):
        raise ScenarioError("experiment.u_points and experiment.x_points must be matching nonempty lists")
    u = np.array(x.u_points, dtype=float).reshape(len(x.u_points), -1)
    xx = np.array(x.x_points, dtype=float).reshape(len(x.x_points), -1)
    if u.shape[1] != cfg.sampling.d or xx.shape[1] != cfg.field.p:
        raise ScenarioError("evaluation point dimensions do not match d and p")
    return u, xx


def _check_interior(u, margin):
    if np.any((u < margin) | (u > 1.0 - margin)):
        raise ScenarioError(f"evaluation locations must lie in [{margin:.4g}, {1 - margin:.4g}]^d")


def _nw_point_job(args):
    cfg, rep, n, A_n, h, u, x = args
    data = simulate_dataset(cfg, n, A_n, rep)
    est = nw_regression(data, build_kernel(cfg), h, EvalGrid(u, x), cfg.estimator.denom_floor, full_cube=True)
    if np.any(est.degenerate):
        raise ScenarioError(f"degenerate evaluation point in replicate {rep}")
    return est.value


def _nw_point_study(cfg: RunConfig, min_rep: int):
    M = cfg.experiment.replicates
    if M < min_rep:
        raise ScenarioError(f"need at least {min_rep} replicates, got {M}")
    n, A_n = single_size(cfg)
    d, p = cfg.sampling.d, cfg.field.p
    kspec = build_kernel(cfg)
    u, x = _points(cfg)
    if cfg.kernel.rule == "plugin":
        pts = list(zip(u, x))
        h = bandwidth(cfg, n, d + p, simulate_dataset(cfg, n, A_n, M), pts)
    else:
        h = bandwidth(cfg, n, d + p)
    _check_interior(u, kspec.C1 * h)
    est = np.array(_map(_nw_point_job, [(cfg, r, n, A_n, h, u, x) for r in range(M)], cfg.threads))
    return n, A_n, h, u, x, est


def run_clt_experiment(cfg: RunConfig) -> CltReport:
    """Standardised NW statistics at the configured points against the limiting normal law."""
    n, A_n, h, u, x, est = _nw_point_study(cfg, 50)
    model = scenario_model(cfg)
    kspec = build_kernel(cfg)
    d, p = cfg.sampling.d, cfg.field.p
    M = est.shape[0]
    scale = math.sqrt(n * h ** (d + p))
    c0 = n * h ** (d + p + 4)
    truth = np.array([float(model.m(ui, xi)) for ui, xi in zip(u, x)])
    T = scale * (est - truth)
    rows = [[cfg.experiment.scenario, j, n, A_n, h, r, est[r, j], truth[j], T[r, j]]
            for j in range(len(u)) for r in range(M)]
    summary = {"scenario": cfg.experiment.scenario, "n": n, "A_n": A_n, "h": h, "replicates": M, "c0": c0}
    for j in range(len(u)):
        try:
            B_weighted, V = theoretical_bias_variance(model, u[j], x[j], kspec, d, p, c0, form="density_weighted")
            B_std, _ = theoretical_bias_variance(model, u[j], x[j], kspec, d, p, c0, form="standard")
        except (EstimatorError, ScenarioError) as exc:
            raise ScenarioError(f"limit law unavailable at point {j}: {exc}") from exc
        t = T[:, j]
        mean, var = float(np.mean(t)), float(np.var(t, ddof=1))
        pre = f"point{j}_"
        summary[pre + "mean"] = mean
        summary[pre + "mean_se"] = math.sqrt(var / M)
        summary[pre + "variance"] = var
        summary[pre + "bias_density_weighted"] = B_weighted
        summary[pre + "bias_standard_form"] = B_std
        summary[pre + "V"] = V
        if V > 0:
            summary[pre + "variance_ratio"] = var / V
            summary[pre + "ks_centred"] = float(stats.kstest(t - mean, "norm", args=(0.0, math.sqrt(V))).statistic)
            summary[pre + "ks_bias_standard_form"] = float(
                stats.kstest(t, "norm", args=(B_std, math.sqrt(V))).statistic)
        summary[pre + "ks_threshold"] = 1.36 / math.sqrt(M) + 0.05
    header = ["scenario", "point", "n", "A_n", "h", "replicate", "estimate", "truth", "statistic"]
    return CltReport("clt", header, rows, summary, cfg.digest(), [cfg.seed, M])


# ---------------------------------------------------------------- additive


def _additive_point_job(args):
    cfg, rep, n, A_n, h, u, xvec = args
    data = simulate_dataset(cfg, n, A_n, rep)
    kspec = build_kernel(cfg)
    try:
        pil = compute_pilots(data, kspec, h, u, cfg.estimator.n_grid, cfg.estimator.denom_floor, keep_tensor=False)
        fit = smooth_backfit(pil, cfg.estimator.tol, cfg.estimator.max_iter)
    except BackfitError as exc:
        raise ScenarioError(f"backfitting failed in replicate {rep}: {exc}") from exc
    comps = np.array([fit.component(l, xvec[l]) for l in range(len(xvec))])
    return comps, pil.n_unit


def run_additive_experiment(cfg: RunConfig) -> tuple[RateReport | None, CltReport]:
    """Backfitting rate along the schedule (when it has at least 3 sizes) and the
    component-wise central-limit study at one size."""
    model = scenario_model(cfg)
    if model.components is None:
        raise ScenarioError("additive experiments need experiment.additive_components")
    rate = None
    sched = cfg.sampling.schedule
    if sched and len(sched) >= 3:
        rate = run_rate_experiment(cfg, estimators=["backfit"])
        rate.stem = "additive_rate"
    M = cfg.experiment.replicates
    if M < 50:
        raise ScenarioError(f"need at least 50 replicates, got {M}")
    n, A_n = single_size(cfg)
    d, p = cfg.sampling.d, cfg.field.p
    kspec = build_kernel(cfg)
    u_all, x_all = _points(cfg)
    u, xvec = u_all[0], x_all[0]
    h = bandwidth(cfg, n, d + 1)
    _check_interior(u.reshape(1, -1), 2 * kspec.C1 * h)
    if np.any((xvec < 2 * kspec.C1 * h) | (xvec > 1 - 2 * kspec.C1 * h)):
        raise ScenarioError("covariate evaluation point outside the interior covariate range")
    out = _map(_additive_point_job, [(cfg, r, n, A_n, h, u, xvec) for r in range(M)], cfg.threads)
    comps = np.array([o[0] for o in out])
    n_unit = np.array([o[1] for o in out])
    _, truth_grid = model.centred_components(u, xvec)
    truth = np.array([truth_grid[l, l] for l in range(p)])
    T = np.sqrt(n_unit * h ** (d + 1))[:, None] * (comps - truth[None, :])
    rows = [[cfg.experiment.scenario, l + 1, n, A_n, h, r, n_unit[r], comps[r, l], truth[l], T[r, l]]
            for l in range(p) for r in range(M)]
    summary = {"scenario": cfg.experiment.scenario, "n": n, "A_n": A_n, "h": h, "replicates": M}
    fS = model.f_S(u)
    for l in range(p):
        t = T[:, l]
        mean, var = float(np.mean(t)), float(np.var(t, ddof=1))
        sig2 = model.component_sigma2(u, l, xvec[l])
        pl = float(model.cube_marginal(u, np.array([xvec[l]]))[0])
        v = additive_asymptotics(math.sqrt(sig2), fS, pl, kspec, d)
        pre = f"component{l + 1}_"
        summary[pre + "mean"] = mean
        summary[pre + "variance"] = var
        summary[pre + "v"] = v
        if v > 0:
            summary[pre + "variance_ratio"] = var / v
            summary[pre + "ks_centred"] = float(stats.kstest(t - mean, "norm", args=(0.0, math.sqrt(v))).statistic)
    if p > 1:
        C = np.corrcoef(T.T)
        off = np.abs(C[~np.eye(p, dtype=bool)])
        summary["max_abs_cross_correlation"] = float(off.max())
    summary["ks_threshold"] = 1.36 / math.sqrt(M) + 0.05
    header = ["scenario", "component", "n", "A_n", "h", "replicate", "local_count", "estimate", "truth",
              "statistic"]
    return rate, CltReport("additive_clt", header, rows, summary, cfg.digest(), [cfg.seed, M])


# ---------------------------------------------------------------- truncation decay


def run_mn_dependence_experiment(cfg: RunConfig) -> DecayReport:
    """Truncation error ``gamma(m)`` and the fitted exponential decay rate."""
    kernel, chi = build_field(cfg)
    if len(kernel.rates) != 1 or not kernel.coefs[0].is_constant:
        raise ScenarioError("decay experiments need a single-term exponential kernel with constant coefficient")
    m_values = cfg.experiment.m_values
    if len(m_values) < 3:
        raise ScenarioError("decay experiments need at least 3 truncation radii")
    c = float(kernel.rates[0])
    try:
        tab = estimate_truncation_error(kernel, chi, m_values, cfg.experiment.q, cfg.seed,
                                        n_rep=cfg.experiment.n_rep, d=cfg.sampling.d,
                                        delta=cfg.experiment.decay_delta)
    except LevyError as exc:
        raise ScenarioError(str(exc)) from exc
    if not np.all(np.isfinite(tab.gamma) & (tab.gamma > 0)):
        raise ScenarioError("truncation error estimate is not positive and finite")
    res = stats.linregress(tab.m, np.log(tab.gamma))
    rows = [[cfg.experiment.scenario, m, g, s] for m, g, s in zip(tab.m, tab.gamma, tab.se)]
    summary = {
        "scenario": cfg.experiment.scenario,
        "q": tab.q,
        "n_rep": tab.n_rep,
        "rate": c,
        "slope": float(res.slope),
        "slope_se": float(res.stderr),
        "theory_slope": -c / 2.0,
        "slope_ratio": float(res.slope) / (-c / 2.0),
        "decreasing": tab.is_decreasing(),
    }
    return DecayReport("decay", ["scenario", "m", "gamma", "gamma_se"], rows, summary, cfg.digest(),
                       [cfg.seed, tab.n_rep])


# ---------------------------------------------------------------- confidence intervals


def joint_quantile(tau: float, L: int) -> float:
    """``q`` with ``P(max_l |Z_l| > q) = tau`` for ``L`` independent standard normals."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    if L < 1:
        raise ValueError("need at least one point")
    return float(stats.norm.ppf((1.0 + (1.0 - tau) ** (1.0 / L)) / 2.0))


def confidence_intervals(estimates, V, n: int, h: float, d: int, p: int, tau: float):
    """Joint ``100(1 - tau)%`` intervals ``m_hat +- sqrt(V / (n h^(d+p))) q``.

    Returns ``(lower, upper, q)``.
    """
    est = np.atleast_1d(np.asarray(estimates, dtype=float))
    V = np.broadcast_to(np.asarray(V, dtype=float), est.shape)
    if np.any(~(V > 0)):
        raise ValueError("asymptotic variances must be positive")
    q = joint_quantile(tau, est.size)
    half = np.sqrt(V / (n * h ** (d + p))) * q
    return est - half, est + half, q


def plugin_variance(data: Dataset, kspec: KernelSpec, h: float, u, x, denom_floor: float = 1e-12):
    """Estimated ``V = kappa0^(d+p) sigma^2 / (f_S f)`` and NW estimates at matched points.

    ``sigma^2`` is the local second moment of ``Y`` minus the squared NW
    estimate; the joint density is the kernel density estimate.
    """
    grid = EvalGrid(u, x)
    mhat = nw_regression(data, kspec, h, grid, denom_floor, full_cube=True)
    m2 = nw_regression(data.with_response(data.Y ** 2), kspec, h, grid, denom_floor, full_cube=True)
    dens = density_estimate(data, kspec, h, grid, full_cube=True)
    k0, _ = kernel_constants(kspec)
    if np.any(mhat.degenerate) or np.any(~(dens.value > 0)):
        raise ScenarioError("degenerate point: no observations near an interval centre")
    sig2 = np.maximum(m2.value - mhat.value ** 2, 0.0)
    return mhat.value, k0 ** (data.d + data.p) * sig2 / dens.value


def run_ci_experiment(cfg: RunConfig) -> CoverageReport:
    """Simulated joint coverage of the intervals at the configured points, with true ``V``."""
    n, A_n, h, u, x, est = _nw_point_study(cfg, 50)
    model = scenario_model(cfg)
    kspec = build_kernel(cfg)
    d, p = cfg.sampling.d, cfg.field.p
    M, L = est.shape
    truth = np.array([float(model.m(ui, xi)) for ui, xi in zip(u, x)])
    V = np.array([theoretical_bias_variance(model, ui, xi, kspec, d, p, 0.0)[1] for ui, xi in zip(u, x)])
    rows = []
    covered = np.zeros(M, bool)
    for r in range(M):
        lo, hi, q = confidence_intervals(est[r], V, n, h, d, p, cfg.experiment.tau)
        inside = (lo <= truth) & (truth <= hi)
        covered[r] = bool(np.all(inside))
        rows += [[cfg.experiment.scenario, r, j, est[r, j], lo[j], hi[j], truth[j], inside[j]] for j in range(L)]
    summary = {
        "scenario": cfg.experiment.scenario,
        "n": n,
        "A_n": A_n,
        "h": h,
        "replicates": M,
        "points": L,
        "nominal": 1.0 - cfg.experiment.tau,
        "quantile": joint_quantile(cfg.experiment.tau, L),
        "joint_coverage": float(np.mean(covered)),
        "undersmoothing_ratio": h ** 2 * math.sqrt(n * h ** (d + p)),
    }
    header = ["scenario", "replicate", "point", "estimate", "lower", "upper", "truth", "covered"]
    return CoverageReport("ci_coverage", header, rows, summary, cfg.digest(), [cfg.seed, M])
