import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from wprop.measures import (
    REAL_LINE,
    DiscreteDistribution,
    Gaussian,
    Interval,
    ProductDistribution,
    Uniform,
    from_dict,
    product,
    region_probability,
    sample,
    truncated_moment,
)
from wprop.validate import quadrature_moment

INF = math.inf


def test_full_line_second_moment_is_variance():
    assert truncated_moment(Gaussian(0, 1), REAL_LINE, 0.0, 2) == pytest.approx(1.0, abs=1e-14)


def test_half_line_halves_variance():
    assert truncated_moment(Gaussian(0, 1), Interval(0, INF), 0.0, 2) == pytest.approx(0.5, abs=1e-14)


def test_uniform_second_moment():
    assert truncated_moment(Uniform(0, 1), Interval(0, 1), 0.0, 2) == pytest.approx(1 / 3, abs=1e-14)


def test_gaussian_window_against_scipy_quad():
    comp = Gaussian(0.2, 0.5)
    ref, _ = integrate.quad(lambda x: (x - 0.2) ** 2 * norm.pdf(x, 0.2, 0.5), -1, 1, epsabs=1e-13, epsrel=1e-12)
    assert truncated_moment(comp, Interval(-1, 1), 0.2, 2) == pytest.approx(ref, rel=1e-10)


def test_first_moment_of_gaussian_is_mean_abs_deviation():
    assert truncated_moment(Gaussian(3, 2), REAL_LINE, 3.0, 1) == pytest.approx(2 * math.sqrt(2 / math.pi), rel=1e-13)


def test_rejects_other_orders():
    with pytest.raises(ValueError):
        truncated_moment(Gaussian(0, 1), REAL_LINE, 0.0, 3)


def test_invalid_components():
    with pytest.raises(ValueError):
        Gaussian(0, 0)
    with pytest.raises(ValueError):
        Uniform(1, 1)
    with pytest.raises(ValueError):
        Interval(2, 1)


def test_region_probability_examples():
    p = ProductDistribution([Gaussian(0, 1), Gaussian(0, 1)])
    assert region_probability(p, [REAL_LINE, REAL_LINE]) == pytest.approx(1.0, abs=1e-15)
    assert region_probability(ProductDistribution([Gaussian(0, 1)]), [Interval(0, INF)]) == pytest.approx(0.5)
    mixed = ProductDistribution([Gaussian(0, 1), Uniform(0, 2)])
    expected = (norm.cdf(1) - norm.cdf(-1)) * 0.5
    assert region_probability(mixed, [Interval(-1, 1), Interval(0, 1)]) == pytest.approx(expected, rel=1e-12)


def test_region_probability_dimension_mismatch():
    with pytest.raises(ValueError):
        region_probability(ProductDistribution([Gaussian(0, 1)]), [REAL_LINE, REAL_LINE])


def test_sampling():
    single = DiscreteDistribution.dirac([5.0])
    assert sample(single, 3, seed=0).ravel().tolist() == [5.0, 5.0, 5.0]
    g = ProductDistribution([Gaussian(0, 1)])
    xs = sample(g, 100_000, seed=11)
    assert abs(xs.mean()) < 0.02
    np.testing.assert_array_equal(xs, sample(g, 100_000, seed=11))
    assert not np.array_equal(xs[:10], sample(g, 10, seed=12))


def test_discrete_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        DiscreteDistribution([[0.0], [1.0]], [0.5, 0.6])
    d = DiscreteDistribution([[0.0], [1.0]], [1.0, 3.0], normalize=True)
    assert d.weights.tolist() == [0.25, 0.75]


def test_product_of_discretes_is_outer_product():
    a = DiscreteDistribution([[0.0], [1.0]], [0.3, 0.7])
    b = DiscreteDistribution([[5.0], [6.0], [7.0]], [0.2, 0.3, 0.5])
    ab = product(a, b)
    assert ab.dim == 2 and ab.size == 6
    assert ab.weights.sum() == pytest.approx(1.0)
    assert ab.mean == pytest.approx([0.7, 6.3])


def test_json_round_trip():
    p = ProductDistribution([Gaussian(0.5, 2.0), Uniform(-1, 3)])
    assert from_dict(json.loads(json.dumps(p.to_dict()))) == p
    d = DiscreteDistribution([[0.0, 1.0], [2.0, 3.0]], [0.25, 0.75])
    back = from_dict(json.loads(json.dumps(d.to_dict())))
    np.testing.assert_array_equal(back.locations, d.locations)
    np.testing.assert_array_equal(back.weights, d.weights)


def test_gaussian_constructor_takes_variances():
    p = ProductDistribution.gaussian([1.0, 2.0], [4.0, 0.25])
    assert [c.std for c in p.components] == [2.0, 0.5]


# -- properties ---------------------------------------------------------------

components = st.one_of(
    st.builds(Gaussian, st.floats(-5, 5), st.floats(0.05, 5)),
    st.tuples(st.floats(-5, 5), st.floats(0.05, 10)).map(lambda t: Uniform(t[0], t[0] + t[1])),
)
finite = st.floats(-20, 20)


def _iv(a, b):
    return Interval(min(a, b), max(a, b))


@settings(max_examples=200, deadline=None)
@given(components, finite, finite, finite, finite, finite, st.sampled_from([1, 2]))
def test_moment_monotone_under_inclusion(comp, a, b, s, t, c, rho):
    inner = _iv(a, b)
    outer = Interval(min(inner.lo, s, t), max(inner.hi, s, t))
    m_in = truncated_moment(comp, inner, c, rho)
    m_out = truncated_moment(comp, outer, c, rho)
    assert m_in >= 0
    assert m_in <= m_out * (1 + 1e-12) + 1e-15


@settings(max_examples=200, deadline=None)
@given(components, st.lists(finite, min_size=1, max_size=8, unique=True), finite, st.sampled_from([1, 2]))
def test_moments_and_masses_add_up_over_partitions(comp, cuts, c, rho):
    edges = [-INF, *sorted(cuts), INF]
    pieces = [Interval(a, b) for a, b in zip(edges[:-1], edges[1:])]
    total = truncated_moment(comp, REAL_LINE, c, rho)
    assert sum(truncated_moment(comp, iv, c, rho) for iv in pieces) == pytest.approx(total, rel=1e-8, abs=1e-12)
    p = ProductDistribution([comp])
    assert sum(region_probability(p, [iv]) for iv in pieces) == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(components, finite, finite, finite, st.sampled_from([1, 2]))
def test_closed_form_matches_quadrature(comp, a, b, c, rho):
    iv = _iv(a, b)
    got = truncated_moment(comp, iv, c, rho)
    ref = quadrature_moment(comp, iv, c, rho)
    assert got == pytest.approx(ref, rel=1e-8, abs=1e-14)
