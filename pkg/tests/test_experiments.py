import math

import numpy as np
import pytest

from lsrf import experiments as E
from lsrf.backfit import compute_pilots, smooth_backfit
from lsrf.config import config_from_dict, with_overrides
from lsrf.estimators import EvalGrid, nw_regression

from scenarios import decay, nw_rate

FIELD = {"p": 1, "rates": [1.0], "sigma0": 0.6366197723675814}
SMALL = {"d": 2, "schedule": [[1000, 10.0], [2000, 14.0], [4000, 20.0]]}


def small_rate_cfg(**experiment):
    base = {"replicates": 3, "u_axis_points": 3, "x_axis": [-0.5, 0.5, 3]}
    base.update(experiment)
    return config_from_dict({"seed": 2, "field": FIELD, "sampling": SMALL, "kernel": {"c": 1.2},
                             "experiment": base, "threads": 1})


def test_constant_truth_without_noise_is_exact():
    rep = E.run_rate_experiment(small_rate_cfg(truth_m="2.5", noise="none"))
    assert max(r[6] for r in rep.rows) < 1e-10


def test_halving_responses_halves_errors():
    a = E.run_rate_experiment(small_rate_cfg(truth_m="0", truth_sigma="1"))
    b = E.run_rate_experiment(small_rate_cfg(truth_m="0", truth_sigma="1/2"))
    assert all(rb[6] == 0.5 * ra[6] for ra, rb in zip(a.rows, b.rows))


def test_rate_report_layout():
    rep = E.run_rate_experiment(small_rate_cfg())
    assert rep.header[:7] == ["scenario", "estimator", "n", "A_n", "h", "replicate", "sup_error"]
    assert len(rep.rows) == 9
    assert rep.summary["nw_predicted_slope"] == -2 / 7
    assert rep.seeds == [2, 3]


def test_thread_count_does_not_change_results():
    cfg = small_rate_cfg()
    one = E.run_rate_experiment(cfg)
    two = E.run_rate_experiment(with_overrides(cfg, {"threads": 2}))
    assert one.rows == two.rows and one.summary == two.summary


def test_slope_of_exact_power_law():
    n = np.array([1000, 4000, 16000] * 2)
    slope, se, lo, hi = E.loglog_slope(n, 3.0 * n ** -0.4)
    assert abs(slope + 0.4) < 1e-12 and lo <= slope <= hi


def test_regression_rate_slope_in_bracket():
    s = nw_rate().summary
    print(f"regression slope {s['nw_slope']:.4f} (se {s['nw_slope_se']:.4f})")
    assert -0.45 <= s["nw_slope"] <= -0.13


def test_noiseless_constant_truth_gives_degenerate_statistics():
    cfg = config_from_dict({"seed": 4, "field": FIELD, "sampling": {"d": 2, "n": 2000, "A_n": 10.0},
                            "experiment": {"replicates": 50, "truth_m": "1.5", "noise": "none",
                                           "u_points": [[0.5, 0.5]], "x_points": [[0.0]]}, "threads": 1})
    rep = E.run_clt_experiment(cfg)
    c0 = rep.summary["c0"]
    model = E.scenario_model(with_overrides(cfg, {"experiment.noise": "normal"}))
    from lsrf.estimators import theoretical_bias_variance
    _, V_ref = theoretical_bias_variance(model, [0.5, 0.5], [0.0], E.build_kernel(cfg), 2, 1, c0)
    assert rep.summary["point0_bias_density_weighted"] == 0.0
    assert all(abs(r[-1]) < 1e-9 for r in rep.rows)
    assert rep.summary["point0_variance"] < 1e-6 * V_ref


def test_joint_quantile_values():
    assert abs(E.joint_quantile(0.05, 1) - 1.959964) < 1e-6
    q4 = E.joint_quantile(0.05, 4)
    assert abs((2 * E.stats.norm.cdf(q4) - 1) ** 4 - 0.95) < 1e-12
    with pytest.raises(ValueError):
        E.joint_quantile(1.2, 3)


def test_intervals_contain_their_centres():
    est = np.array([0.3, -1.2, 2.0])
    lo, hi, q = E.confidence_intervals(est, [0.5, 1.0, 0.2], 10000, 0.1, 2, 1, 0.05)
    assert np.all((lo < est) & (est < hi))
    assert np.allclose(hi - est, np.sqrt(np.array([0.5, 1.0, 0.2]) / (10000 * 0.1 ** 3)) * q)
    with pytest.raises(ValueError):
        E.confidence_intervals(est, [0.5, 0.0, 0.2], 10000, 0.1, 2, 1, 0.05)


ADDITIVE_FIELD = {"p": 2, "rates": [1.0], "sigma0": 1.0, "transform": "normal-cdf"}


def test_null_component_recovered_near_zero():
    cfg = config_from_dict({"seed": 6, "field": ADDITIVE_FIELD, "sampling": {"d": 2, "n": 20000, "A_n": 140.0},
                            "experiment": {"additive_m0": "1+u1", "additive_components": ["(1+u2)*sin(pi*x1)", "0"],
                                           "noise": "none"}})
    data = E.simulate_dataset(cfg, 20000, 140.0, 0)
    h = 0.6 * 20000 ** (-1 / 7)
    u = [0.5, 0.5]
    pil = compute_pilots(data, E.build_kernel(cfg), h, u)
    fit = smooth_backfit(pil)
    _, truth = E.scenario_model(cfg).centred_components(u, pil.x_grid)
    keep = (pil.x_grid >= 2 * h) & (pil.x_grid <= 1 - 2 * h)
    err = np.max(np.abs(fit.components[:, keep] - truth[:, keep]), axis=1)
    assert np.all(truth[1] == 0.0)
    # without noise the null component only absorbs leakage of the other component's smoothing bias
    assert err[1] < err[0]


def test_single_covariate_backfit_matches_regression():
    """With one covariate the backfit is the pilot regression, which differs from plain NW only
    through the grid normalisation of the covariate weights."""
    cfg = config_from_dict({"seed": 8, "field": {"p": 1, "rates": [1.0], "transform": "normal-cdf"},
                            "sampling": {"d": 2, "n": 10000, "A_n": 100.0},
                            "experiment": {"additive_m0": "u2", "additive_components": ["(1+u1)*sin(pi*x1)"]}})
    data = E.simulate_dataset(cfg, 10000, 100.0, 0)
    K = E.build_kernel(cfg)
    h, u = 0.15, np.array([0.5, 0.5])
    fit = smooth_backfit(compute_pilots(data, K, h, u))
    x, tw = fit.x_grid, compute_pilots(data, K, h, u).tw
    mass = tw @ K((x[:, None] - data.X[None, :, 0]) / h)
    # relative weight perturbation from the trapezoid normalisation of each covariate kernel
    inner = (data.X[:, 0] >= h) & (data.X[:, 0] <= 1 - h)
    eps = float(np.max(np.abs(h / mass[inner] - 1)))
    nodes = x[(x >= 2 * h) & (x <= 1 - 2 * h)]
    nw = nw_regression(data, K, h, EvalGrid(np.tile(u, (len(nodes), 1)), nodes[:, None]), full_cube=True).value
    spread = max(float(np.max(np.abs(data.Y - v))) for v in nw)
    gap = np.abs(fit.m0 + fit.component(0, nodes) - nw)
    assert np.max(gap) <= 2 * eps * spread / (1 - eps)
    assert np.max(gap) < 0.02


def test_decay_slope_doubles_with_rate():
    base, fast = decay(1.0).summary, decay(2.0).summary
    ratio = fast["slope"] / base["slope"]
    print(f"decay slope ratio {ratio:.3f}")
    assert 1.5 <= ratio <= 2.5
    assert base["decreasing"] and fast["decreasing"]
    assert all(r[2] > 0 and math.isfinite(r[2]) for r in decay(1.0).rows)


def test_harness_errors():
    with pytest.raises(E.ScenarioError):
        E.run_rate_experiment(config_from_dict({"sampling": {"n": 100, "A_n": 5.0}}))
    with pytest.raises(E.ScenarioError):
        E.run_clt_experiment(config_from_dict({"sampling": {"n": 100, "A_n": 5.0},
                                               "experiment": {"replicates": 10, "u_points": [[0.5, 0.5]],
                                                              "x_points": [[0.0]]}}))
    with pytest.raises(E.ScenarioError):
        E.run_mn_dependence_experiment(config_from_dict({"experiment": {"m_values": [2, 4]}}))
    with pytest.raises(E.ScenarioError):
        E.run_additive_experiment(config_from_dict({"sampling": {"n": 100, "A_n": 5.0}}))
    with pytest.raises(E.ScenarioError):
        E.ScenarioModel(config_from_dict({"experiment": {"truth_m": "u1 + bogus"}}))
    sparse = config_from_dict({"seed": 1, "field": FIELD, "kernel": {"c": 0.2},
                               "sampling": {"d": 2, "schedule": [[40, 2.0], [80, 3.0], [160, 4.0]]},
                               "experiment": {"replicates": 1, "x_axis": [-2.0, 2.0, 9]}, "threads": 1})
    with pytest.raises(E.ScenarioError):
        E.run_rate_experiment(sparse)
