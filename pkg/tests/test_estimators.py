import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lsrf.config import config_from_dict
from lsrf.design import SiteSet
from lsrf.estimators import (AsymptoticsConfig, Dataset, EstimatorError, EvalGrid, contributing_sites,
                             density_estimate, general_kernel_estimate, nw_regression,
                             theoretical_bias_variance)
from lsrf.experiments import scenario_model, simulate_dataset
from lsrf.kernels import KernelSpec
from lsrf.truth import SymbolicModel

EPA = KernelSpec("epanechnikov")


def epa(v):
    v = np.asarray(v, dtype=float)
    return np.where(np.abs(v) <= 1, 0.75 * (1 - v * v), 0.0)


def random_instance(seed, n=None, d=2, p=1):
    g = np.random.default_rng(seed)
    n = int(g.integers(1, 201)) if n is None else n
    A = float(g.uniform(2.0, 30.0))
    data = Dataset(SiteSet(g.random((n, d)), A), g.normal(size=(n, p)), g.normal(size=n))
    h = float(g.uniform(0.08, 0.4))
    grid = EvalGrid(g.random((12, d)), g.normal(scale=0.7, size=(12, p)))
    return data, h, grid


def brute_force(data, h, u, x, W):
    """Direct double loop over sites and coordinates."""
    total = 0.0
    for j in range(data.n):
        w = 1.0
        for i in range(data.d):
            w *= float(epa((u[i] - data.sites.sites_unit[j, i]) / h))
        for k in range(data.p):
            w *= float(epa((x[k] - data.X[j, k]) / h))
        total += w * W[j]
    return total / (data.n * h ** (data.d + data.p))


@settings(max_examples=50)
@given(st.integers(0, 10 ** 6))
def test_index_sums_equal_naive_bitwise(seed):
    data, h, grid = random_instance(seed)
    W = np.random.default_rng(seed + 1).normal(size=data.n)
    for fn, args in ((general_kernel_estimate, (data, W, EPA, h, grid)),
                     (nw_regression, (data, EPA, h, grid)),
                     (density_estimate, (data, EPA, h, grid))):
        a = fn(*args, full_cube=True, method="index")
        b = fn(*args, full_cube=True, method="naive")
        assert np.array_equal(a.value, b.value, equal_nan=True)
        assert np.array_equal(a.denom, b.denom) and np.array_equal(a.ess, b.ess)


def test_unit_weights_reproduce_density_exactly():
    data, h, grid = random_instance(3, n=150)
    a = general_kernel_estimate(data, np.ones(data.n), EPA, h, grid, full_cube=True)
    b = density_estimate(data, EPA, h, grid, full_cube=True)
    assert np.array_equal(a.value, b.value)


def test_far_sites_give_zero():
    sites = SiteSet(np.array([[0.9, 0.9], [0.95, 0.8]]), 10.0)
    data = Dataset(sites, np.zeros((2, 1)), np.ones(2))
    est = general_kernel_estimate(data, np.array([2.0, 3.0]), EPA, 0.1, EvalGrid([[0.3, 0.3]], [[0.0]]))
    assert est.value[0] == 0.0


def test_two_site_general_estimate_matches_hand_sum():
    sites = SiteSet(np.array([[0.40, 0.55], [0.47, 0.49]]), 10.0)
    data = Dataset(sites, np.array([[0.1], [-0.05]]), np.zeros(2))
    W = np.array([1.7, -0.4])
    h = 0.2
    u, x = np.array([0.45, 0.5]), np.array([0.02])
    est = general_kernel_estimate(data, W, EPA, h, EvalGrid([u], [x]))
    hand = (epa(0.05 / h) * epa(-0.05 / h) * epa(-0.08 / h) * 1.7
            + epa(-0.02 / h) * epa(0.01 / h) * epa(0.07 / h) * -0.4) / (2 * h ** 3)
    assert abs(est.value[0] - hand) < 1e-14
    assert abs(est.value[0] - brute_force(data, h, u, x, W)) < 1e-14


def test_single_site_regression_returns_its_response():
    data = Dataset(SiteSet(np.array([[0.5, 0.5]]), 10.0), np.array([[0.3]]), np.array([2.75]))
    est = nw_regression(data, EPA, 0.2, EvalGrid([[0.5, 0.5]], [[0.3]]))
    assert est.value[0] == 2.75


def test_constant_response_is_reproduced():
    data, h, grid = random_instance(11, n=180)
    est = nw_regression(data.with_response(np.full(data.n, -1.25)), EPA, h, grid, full_cube=True)
    ok = ~est.degenerate
    assert ok.any()
    assert np.allclose(est.value[ok], -1.25, rtol=0, atol=1e-15)
    assert np.all(np.isnan(est.value[~ok]))


def test_three_site_regression_matches_weighted_average():
    U = np.array([[0.50, 0.50], [0.55, 0.45], [0.42, 0.58]])
    X = np.array([[0.0], [0.1], [-0.12]])
    Y = np.array([1.0, 2.0, -0.5])
    data = Dataset(SiteSet(U, 5.0), X, Y)
    h = 0.25
    u, x = np.array([0.49, 0.52]), np.array([0.03])
    w = [brute_force(Dataset(SiteSet(U[j:j + 1], 5.0), X[j:j + 1], Y[j:j + 1]), h, u, x, [1.0]) for j in range(3)]
    oracle = sum(wj * yj for wj, yj in zip(w, Y)) / sum(w)
    est = nw_regression(data, EPA, h, EvalGrid([u], [x]))
    assert abs(est.value[0] - oracle) < 1e-14


def test_density_is_nonnegative():
    data, h, grid = random_instance(5, n=200)
    assert np.all(density_estimate(data, EPA, h, grid, full_cube=True).value >= 0)


def test_density_integrates_over_covariates():
    data, h, _ = random_instance(8, n=60, p=1)
    u = np.array([0.5, 0.45])
    # the estimate is quadratic in x between kink points, so two-point Gauss-Legendre is exact per piece
    brk = np.unique(np.concatenate([data.X[:, 0] - h, data.X[:, 0] + h]))
    nodes, wts = np.polynomial.legendre.leggauss(2)
    mid, half = 0.5 * (brk[1:] + brk[:-1]), 0.5 * (brk[1:] - brk[:-1])
    xs = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    ws = (half[:, None] * wts[None, :]).ravel()
    f = density_estimate(data, EPA, h, EvalGrid(np.tile(u, (len(xs), 1)), xs[:, None]), full_cube=True).value
    spatial = np.prod(epa((u[None, :] - data.sites.sites_unit) / h), axis=1)
    target = spatial.sum() / (data.n * h ** 2)
    assert abs(float(np.dot(ws, f)) - target) < 1e-6


def test_covariate_shift_leaves_regression_unchanged():
    data, h, grid = random_instance(21, n=200)
    shift = 3.7
    moved = Dataset(data.sites, data.X + shift, data.Y)
    a = nw_regression(data, EPA, h, grid, full_cube=True)
    b = nw_regression(moved, EPA, h, EvalGrid(grid.u, grid.x + shift), full_cube=True)
    assert np.array_equal(a.degenerate, b.degenerate)
    ok = ~a.degenerate
    assert np.allclose(a.value[ok], b.value[ok], rtol=0, atol=1e-12)


@given(st.integers(0, 10 ** 5), st.floats(0.1, 0.5), st.floats(0.3, 0.9))
def test_shrinking_bandwidth_shrinks_contributing_set(seed, h, frac):
    data, _, grid = random_instance(seed, n=200)
    big = set(contributing_sites(data, EPA, h, grid.u[0], grid.x[0]).tolist())
    small = set(contributing_sites(data, EPA, h * frac, grid.u[0], grid.x[0]).tolist())
    assert small <= big


def test_interior_restriction_and_boundary_flags():
    data, h, _ = random_instance(2, n=100)
    grid = EvalGrid([[0.5, 0.5], [0.01, 0.5]], [[0.0], [0.0]])
    assert len(nw_regression(data, EPA, 0.1, grid)) == 1
    full = nw_regression(data, EPA, 0.1, grid, full_cube=True)
    assert full.boundary.tolist() == [False, True]
    with pytest.raises(EstimatorError):
        nw_regression(data, EPA, 0.1, EvalGrid([[0.01, 0.5]], [[0.0]]))
    with pytest.raises(EstimatorError):
        nw_regression(data, EPA, 0.0, grid)


def test_dataset_and_config_validation():
    sites = SiteSet(np.array([[0.2, 0.3]]), 2.0)
    with pytest.raises(EstimatorError):
        Dataset(sites, np.array([[np.inf]]), np.array([1.0]))
    with pytest.raises(EstimatorError):
        Dataset(sites, np.zeros((2, 1)), np.zeros(2))
    with pytest.raises(EstimatorError):
        EvalGrid.from_axes([[0.2, 0.1]], [[0.0]])
    assert AsymptoticsConfig(rho=1.7).r == 1.0 and AsymptoticsConfig(rho=0.4).r == 0.4
    with pytest.raises(EstimatorError):
        AsymptoticsConfig(zeta=2.0)


def test_linear_truth_has_zero_bias():
    model = SymbolicModel(2, 1, "0.3 + 2*u1 - u2 + 0.7*x1")
    B, _ = theoretical_bias_variance(model, [0.4, 0.6], [0.2], EPA, 2, 1, 1.3)
    assert B == 0.0


def test_variance_constant_for_unit_densities():
    model = SymbolicModel(2, 1, "u1*x1")
    _, V = theoretical_bias_variance(model, [0.5, 0.5], [0.0], EPA, 2, 1, 1.0)
    assert abs(V - 0.216) < 1e-12


def test_singular_point_rejected():
    model = SymbolicModel(1, 1, "x1", f="x1")
    with pytest.raises(EstimatorError):
        theoretical_bias_variance(model, [0.5], [0.0], EPA, 1, 1, 1.0)


class _NoDerivatives:
    def __init__(self, model):
        self._m = model

    def m(self, u, x):
        return self._m.m(u, x)

    def f(self, u, x):
        return self._m.f(u, x)

    def f_S(self, u):
        return self._m.f_S(u)

    def sigma(self, u, x):
        return self._m.sigma(u, x)


@pytest.mark.parametrize("seed", range(20))
def test_finite_difference_bias_matches_analytic(seed):
    g = np.random.default_rng(seed)
    a = g.uniform(-1, 1, 6)
    m = f"{a[0]}*sin(u1 + {a[1]}*x1) + {a[2]}*u2**2*x1 + {a[3]}*exp({a[4]}*x1)"
    f = f"exp(-({a[5]}*x1)**2/2 + u1*x1/3)"
    fS = "1 + (u1 - 0.5)*(u2 - 0.5)"
    model = SymbolicModel(2, 1, m, f=f, f_S=fS)
    u, x = g.uniform(0.2, 0.8, 2), g.uniform(-0.5, 0.5, 1)
    for form in ("density_weighted", "standard"):
        b1, v1 = theoretical_bias_variance(model, u, x, EPA, 2, 1, 0.8, form=form)
        b2, v2 = theoretical_bias_variance(_NoDerivatives(model), u, x, EPA, 2, 1, 0.8, form=form)
        assert abs(b1 - b2) < 1e-6 and v1 == v2


def test_regression_clt_with_independent_covariates():
    """Sample mean within 4 sqrt(V/M) of the bias and variance within 25% of V."""
    n, M, A = 20000, 400, 40.0
    u, x = np.array([0.5, 0.5]), np.array([0.5])
    model = SymbolicModel(2, 1, "(1 + u1)*sin(2*x1) + u2**2")
    h = n ** (-1.0 / 7)
    stat = np.empty(M)
    for r in range(M):
        g = np.random.default_rng([77, r])
        U, X = g.random((n, 2)), g.random((n, 1))
        Y = model.m(U, X) + g.standard_normal(n)
        est = nw_regression(Dataset(SiteSet(U, A), X, Y), EPA, h, EvalGrid([u], [x]))
        stat[r] = math.sqrt(n * h ** 3) * (est.value[0] - float(model.m(u, x)))
    c0 = n * h ** 7
    B, V = theoretical_bias_variance(model, u, x, EPA, 2, 1, c0, form="standard")
    assert abs(stat.mean() - B) < 4 * math.sqrt(V / M)
    assert abs(stat.var(ddof=1) / V - 1) < 0.25


def test_density_error_shrinks_with_n_on_gaussian_field():
    cfg = config_from_dict({"seed": 5, "field": {"rates": [1.0], "sigma0": 1.0},
                            "experiment": {"truth_m": "x1"}})
    model = scenario_model(cfg)
    grid = EvalGrid.from_axes([np.linspace(0.35, 0.65, 3)] * 2, [np.linspace(-1.5, 1.5, 7)])
    truth = np.array([model.f_S(u) * model.f(u, x) for u, x in zip(grid.u, grid.x)])

    def sup_error(n, A, rep):
        data = simulate_dataset(cfg, n, A, rep)
        est = density_estimate(data, EPA, n ** (-1.0 / 7), grid)
        return float(np.max(np.abs(est.value - truth)))

    wins = sum(sup_error(20000, 60.0, r) < sup_error(5000, 30.0, r) for r in range(20))
    assert stats.binomtest(wins, 20, 0.5, alternative="greater").pvalue < 0.05
