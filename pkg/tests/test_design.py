import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from lsrf.design import (DesignError, PiecewiseConstantDensity, ProductBetaDensity, SamplingDesign, SiteSet,
                         UniformDensity, assign_sites_to_blocks, build_block_partition, classify_regime,
                         density_integral, draw_sites)


def test_sites_lie_in_region_and_scale_exactly():
    sites = draw_sites(SamplingDesign(2, 5000, 37.5, ProductBetaDensity((2.0, 0.5), (3.0, 0.7)), seed=4))
    assert np.all((sites.sites >= 0) & (sites.sites <= 37.5))
    assert np.array_equal(sites.sites, 37.5 * sites.sites_unit)


def test_uniform_sites_mean():
    n, A = 10 ** 5, 50.0
    s = draw_sites(SamplingDesign(2, n, A, seed=1)).sites
    assert np.all(np.abs(s.mean(axis=0) - A / 2) < 3 * A / math.sqrt(12 * n))


def test_same_seed_same_sites():
    des = SamplingDesign(3, 2000, 12.0, PiecewiseConstantDensity(np.arange(1.0, 9.0).reshape(2, 2, 2)), seed=8)
    a, b = draw_sites(des), draw_sites(des)
    assert np.array_equal(a.sites_unit, b.sites_unit)
    assert not np.array_equal(a.sites_unit, draw_sites(des, key=(1,)).sites_unit)


def test_sites_are_a_prefix_across_n():
    small = draw_sites(SamplingDesign(2, 100, 10.0, seed=3))
    big = draw_sites(SamplingDesign(2, 400, 20.0, seed=3))
    assert np.array_equal(small.sites_unit, big.sites_unit[:100])


@pytest.mark.parametrize("density", [
    UniformDensity(2),
    ProductBetaDensity((2.0, 0.6), (2.0, 1.5), mix=0.4),
    PiecewiseConstantDensity(np.array([[1.0, 2.0, 3.0], [4.0, 0.5, 1.5]])),
])
def test_histogram_matches_density(density):
    n = 10 ** 5
    u = draw_sites(SamplingDesign(2, n, 100.0, density, seed=2)).sites_unit
    bins = 6
    edges = np.linspace(0, 1, bins + 1)
    counts, _, _ = np.histogram2d(u[:, 0], u[:, 1], bins=[edges, edges])
    # expected cell probabilities by midpoint-refined quadrature
    fine = 40
    t = (np.arange(bins * fine) + 0.5) / (bins * fine)
    X, Y = np.meshgrid(t, t, indexing="ij")
    pdf = density.pdf(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
    prob = pdf.reshape(bins, fine, bins, fine).sum(axis=(1, 3))
    prob /= prob.sum()
    chi2 = float(np.sum((counts - n * prob) ** 2 / (n * prob)))
    assert chi2 < stats.chi2.ppf(0.99, bins * bins - 1)


def test_density_validation():
    assert abs(density_integral(ProductBetaDensity((2.0,), (5.0,), 0.3)) - 1.0) < 1e-8
    with pytest.raises(DesignError):
        ProductBetaDensity((2.0,), (2.0,), mix=0.0)  # vanishes at the edges
    with pytest.raises(DesignError):
        PiecewiseConstantDensity(np.array([1.0, 0.0]))
    with pytest.raises(DesignError):
        PiecewiseConstantDensity(np.r_[np.full(999, 1e-4), 1000.0])
    with pytest.raises(DesignError):
        SamplingDesign(2, 5, 100.0)  # intensity 5e-4 below C0
    with pytest.raises(DesignError):
        SiteSet(np.array([[0.5, 1.2]]), 3.0)


def test_regime_examples():
    r = classify_regime(1000, 10 * math.sqrt(10), 2)
    assert r.regime == "pure-increasing" and r.ratio == 1.0
    r = classify_regime(10 ** 6, 10.0, 2)
    assert r.regime == "mixed-increasing" and r.ratio == 1e4
    assert classify_regime(343, 7.0, 3).ratio == 1.0


def test_one_dimensional_partition_intervals():
    part = build_block_partition(10.0, 4.0, 1.0, d=1)
    assert part.n_per_axis == 2
    assert [part.interval(0, 1), part.interval(1, 1)] == [(0.0, 4.0), (5.0, 9.0)]
    assert [part.interval(0, 2), part.interval(1, 2)] == [(4.0, 5.0), (9.0, 10.0)]
    with pytest.raises(DesignError):
        build_block_partition(10.0, 1.0, 4.0, d=1)


@given(st.integers(1, 4), st.floats(0.5, 5.0), st.floats(0.05, 0.95))
def test_sub_block_volumes(d, A1, frac):
    A2 = frac * A1
    part = build_block_partition(10 * (A1 + A2), A1, A2, d)
    ell = (0,) * d
    vols = [part.volume(e) for e in part.epsilons()]
    assert len(vols) == 2 ** d
    assert math.isclose(sum(vols), part.A3 ** d, rel_tol=1e-12)
    for e in part.epsilons():
        q = sum(1 for x in e if x == 1)
        assert part.volume(e) == A1 ** q * A2 ** (d - q)
        box = part.sub_block(ell, e)
        assert math.isclose(math.prod(b - a for a, b in box), part.volume(e), rel_tol=1e-12)
    assert part.volume((1,) * d) == A1 ** d


def test_each_point_in_exactly_one_sub_block(gen):
    part = build_block_partition(23.0, 3.0, 1.2, d=2)
    pts = gen.uniform(0, 23.0, (10 ** 5, 2))
    hits = np.zeros(len(pts), dtype=int)
    for ell in part.indices():
        for eps in part.epsilons():
            inside = np.ones(len(pts), bool)
            for k, (a, b) in enumerate(part.sub_block(ell, eps)):
                inside &= (pts[:, k] > a) & (pts[:, k] <= b)
            hits += inside
    assert np.all(hits == 1)
    rep = assign_sites_to_blocks(SiteSet(pts / 23.0, 23.0), part)
    assert rep.total == len(pts)


def test_assignment_matches_box_membership(gen):
    part = build_block_partition(17.0, 2.5, 1.0, d=2)
    pts = gen.uniform(0, 17.0, (3000, 2))
    rep = assign_sites_to_blocks(SiteSet(pts / 17.0, 17.0), part)
    for ell, eps, q, vol, cnt, flagged in rep.rows:
        inside = np.ones(len(pts), bool)
        for k, (a, b) in enumerate(part.sub_block(ell, eps)):
            inside &= (pts[:, k] > a) & (pts[:, k] <= b)
        assert cnt == int(inside.sum())


def test_interior_and_boundary_blocks():
    part = build_block_partition(10.0, 2.0, 1.0, d=2)
    assert part.n_per_axis == 4
    assert len(part.interior) == 9 and len(part.boundary) == 7
    assert part.clipped_volume((3, 3), (1, 1)) == 1.0


def test_empty_site_set_gives_no_counts():
    part = build_block_partition(10.0, 2.0, 1.0, d=2)
    rep = assign_sites_to_blocks(SiteSet(np.zeros((0, 2)), 10.0), part)
    assert rep.total == 0 and rep.unit_flags == 0 and rep.block_flags == 0


def test_site_outside_region_rejected():
    part = build_block_partition(10.0, 2.0, 1.0, d=2)
    with pytest.raises(DesignError):
        assign_sites_to_blocks(SiteSet(np.array([[0.9, 0.5]]), 20.0), part)


def test_unit_cube_bound_holds_on_seeded_runs():
    part = build_block_partition(100.0, d=2)
    flags = 0
    for seed in range(20):
        sites = draw_sites(SamplingDesign(2, 10 ** 4, 100.0, seed=seed))
        rep = assign_sites_to_blocks(sites, part)
        assert rep.unit_counts.sum() == 10 ** 4
        assert rep.unit_bound == 2 * (math.log(10 ** 4) + 1.0)
        flags += rep.unit_flags
    assert flags == 0
