import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from wprop.bounds import (
    AmbiguityBall,
    algorithm1,
    bound_lipschitz,
    bound_thm4,
    bound_thm6,
    coeff_type_i,
    coeff_type_ii,
    lipschitz_report,
    split_boxes,
    thm4_from_atoms,
)
from wprop.experiments import benchmark
from wprop.funcmodel import BUILTINS, Affine, Const, FunctionModel, Node, builtin, global_lipschitz, induced_norm
from wprop.measures import DiscreteDistribution, Gaussian, Interval, ProductDistribution
from wprop.quantize import BoxPartition, QuantizationOperator, apply, optimized_grid, theta_d
from wprop.validate import exact_wasserstein, mc_lower_bound

INF = math.inf
SIGMOID = builtin("sigmoid")


def pushforward(f, d):
    return DiscreteDistribution(f(d.locations), d.weights)


def test_range_coefficient_examples():
    beta = coeff_type_i(SIGMOID, [5.0])
    assert beta == pytest.approx(max(expit(5), 1 - expit(5)) ** 2, rel=1e-12)
    assert beta <= 1.0
    const = FunctionModel(1, [Node(Const([3.0]), ())])
    assert coeff_type_i(const, [0.0]) == 0.0
    assert coeff_type_i(FunctionModel.chain(1, Affine([[2.0]])), [0.0]) == INF


def test_slope_coefficient_examples():
    A = np.array([[1.0, 2.0], [0.5, -1.0]])
    lin = FunctionModel.chain(2, Affine(A))
    cuts = split_boxes([-INF, -INF], [INF, INF], [[-1.0, 2.0], [0.0]])
    assert coeff_type_ii(lin, [0.0, 0.0], subpartition=cuts) == pytest.approx(induced_norm(A) ** 2)
    # whole real line: the global slope bound
    assert coeff_type_ii(SIGMOID, [5.0]) == pytest.approx(0.25**2)


def test_sigmoid_slope_coefficient_on_split_line():
    boxes = split_boxes([-INF], [INF], [[-5.0, 0.0, 5.0]])
    alpha = coeff_type_ii(SIGMOID, [5.0], subpartition=boxes)
    assert alpha <= 0.25**2
    # it is a valid coefficient: no secant from c = 5 is steeper
    x = np.linspace(-60, 60, 200_001)
    x = x[x != 5.0]
    ratio = ((expit(x) - expit(5.0)) / (x - 5.0)) ** 2
    assert ratio.max() <= alpha * (1 + 1e-12)


def test_algorithm1_hand_trace():
    value, mask = algorithm1([2.0, 0.5], [0.1, 10.0], [0.1, 0.9], theta=0.6, theta_d=0.4, rho=1)
    assert value == pytest.approx(0.51)
    assert mask.tolist() == [True, False]


def test_algorithm1_without_finite_ranges():
    value, mask = algorithm1([4.0, 1.0], [INF, INF], [0.5, 0.5], theta=0.2, theta_d=0.1, rho=2)
    assert value == pytest.approx(2.0 * 0.3)
    assert not mask.any()


def test_algorithm1_boundary_uses_zero_slope():
    # swapping every location leaves a pure range bound
    value, mask = algorithm1([1.0, 1.0], [0.01, 0.01], [0.5, 0.5], theta=1.0, theta_d=0.0, rho=2)
    assert value == pytest.approx(0.1)
    assert mask.all()


def test_algorithm1_early_stop_can_only_be_looser():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = rng.integers(1, 12)
        a, b, pi = rng.exponential(size=n), rng.exponential(size=n), rng.dirichlet(np.ones(n))
        full = algorithm1(a, b, pi, 0.3, 0.2)[0]
        early = algorithm1(a, b, pi, 0.3, 0.2, early_stop=True)[0]
        assert full <= early + 1e-15


def test_bound_lipschitz_examples():
    assert bound_lipschitz(0.1, 0.2, 2.0) == pytest.approx(0.6)
    assert bound_lipschitz(0.0, 0.0, 5.0) == 0.0
    L = 1.7
    forced = algorithm1([L**2] * 3, [INF] * 3, [0.2, 0.3, 0.5], 0.4, 0.1)[0]
    assert forced == pytest.approx(bound_lipschitz(0.4, 0.1, L), rel=1e-15)
    with pytest.raises(ValueError):
        bound_lipschitz(-1, 0, 1)


def test_thm4_linear_example():
    f = FunctionModel.chain(1, Affine([[2.0]]))
    rep = thm4_from_atoms(f, [[0.0], [1.0]], [0.5, 0.5], theta=0.5, theta_d=0.25)
    assert rep.value == 1.5


def test_thm4_degenerate_identity():
    q = QuantizationOperator(BoxPartition.trivial(1), [[0.0]])
    ident = FunctionModel.chain(1, Affine([[1.0]]))
    assert bound_thm4(q, DiscreteDistribution.dirac([0.0]), 0.0, ident).value == 0.0
    assert bound_thm4(q, DiscreteDistribution.dirac([0.0]), 0.0, SIGMOID).value >= 0.0
    with pytest.raises(ValueError):
        bound_thm4(q, DiscreteDistribution.dirac([0.0]), -0.1, ident)
    with pytest.raises(ValueError):
        AmbiguityBall(None, -1.0)


def test_thm4_mountain_car_beats_lipschitz():
    f, p = benchmark("mountain_car")
    q = optimized_grid(p, 1000)
    rep = bound_thm4(q, p, 0.1, f)
    lip = lipschitz_report(q, p, 0.1, f)
    assert math.isfinite(rep.value)
    assert rep.value < lip.value


def test_thm6_identity_is_theta_d():
    p = ProductDistribution([Gaussian(0, 1), Gaussian(2, 0.5)])
    q = optimized_grid(p, 20)
    ident = FunctionModel.chain(2, Affine(np.eye(2)))
    assert bound_thm6(q, p, ident).value == pytest.approx(theta_d(q, p), rel=1e-14)


def test_thm6_sigmoid_with_ten_locations():
    p = ProductDistribution([Gaussian(0.2, 0.5)])
    rep = bound_thm6(optimized_grid(p, 10), p, SIGMOID)
    assert 1e-3 < rep.value < 5e-2


def test_thm6_linear_is_norm_times_theta_d():
    A = np.array([[0.3, -1.2], [2.0, 0.4]])
    p = ProductDistribution([Gaussian(0, 1), Gaussian(0, 3)])
    q = optimized_grid(p, 50)
    rep = bound_thm6(q, p, FunctionModel.chain(2, Affine(A, [1.0, -1.0])))
    assert rep.value == pytest.approx(induced_norm(A) * theta_d(q, p), rel=1e-12)


def test_report_records_ingredients():
    f, p = benchmark("mountain_car")
    q = optimized_grid(p, 100)
    rep = bound_thm6(q, p, f)
    d = rep.to_dict()
    assert d["method"] == "thm6" and len(d["locations"]) == rep.pi.size
    assert rep.pi.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("name", BUILTINS)
def test_orderings_on_benchmarks(name):
    f, p = benchmark(name)
    q = optimized_grid(p, 100)
    td = theta_d(q, p)
    L = global_lipschitz(f)
    t6 = bound_thm6(q, p, f).value
    t4 = bound_thm4(q, p, 0.0, f).value
    assert t6 <= L * td + 1e-12
    assert t6 <= t4 + 1e-12
    for theta in (0.0, 0.1, 1.0):
        t4 = bound_thm4(q, p, theta, f).value
        lip = bound_lipschitz(theta, td, L)
        assert t4 <= lip + 1e-12
        if f.is_affine:
            assert t4 == pytest.approx(lip, abs=1e-9)


def test_saturation_for_bounded_map():
    f, p = benchmark("bounded_linear")
    q = optimized_grid(p, 10)
    assert bound_thm4(q, p, 10.0, f).value == pytest.approx(bound_thm4(q, p, 100.0, f).value, abs=1e-9)


@pytest.mark.parametrize("name", ["sigmoid", "mountain_car"])
def test_thm6_sound_against_sampled_lower_estimate(name):
    f, p = benchmark(name)
    q = optimized_grid(p, 5)
    bound = bound_thm6(q, p, f).value
    target = pushforward(f, apply(q, p))

    class Push:
        def sample(self, n, seed):
            return f(p.sample(n, seed))

    low, se = mc_lower_bound(Push(), target, n=2000, repeats=5, seed=3)
    assert low <= bound**2 + 3 * se


def test_worst_coupling_exceeds_designed_coupling():
    # P = delta_0 quantized to (0, t): the slope bound charges 2 t, the map moves it only 0.1 t
    t = 0.3
    f = FunctionModel.chain(2, Affine(np.diag([2.0, 0.1])))
    P = DiscreteDistribution.dirac([0.0, 0.0])
    DP = DiscreteDistribution.dirac([0.0, t])
    Q = DiscreteDistribution.dirac([t, 0.0])
    assert exact_wasserstein(P, DP)[0] == pytest.approx(t)
    assert exact_wasserstein(P, Q)[0] == pytest.approx(t)
    designed = exact_wasserstein(pushforward(f, P), pushforward(f, DP))[0]
    worst = exact_wasserstein(pushforward(f, P), pushforward(f, Q))[0]
    assert designed**2 == pytest.approx(0.1**2 * t**2)
    assert worst**2 == pytest.approx(2**2 * t**2)
    assert worst > 10 * designed


# -- properties ---------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 1)), min_size=1, max_size=10),
    st.floats(0, 5),
    st.floats(0, 5),
    st.floats(0, 1),
    st.sampled_from([1, 2]),
)
def test_algorithm1_monotone_in_theta_and_below_lipschitz(rows, t1, t2, td, rho):
    a, b, w = (np.array(c) for c in zip(*rows))
    pi = w / w.sum()
    lo, hi = sorted((t1, t2))
    v_lo = algorithm1(a, b, pi, lo, td, rho)[0]
    v_hi = algorithm1(a, b, pi, hi, td, rho)[0]
    assert v_lo <= v_hi * (1 + 1e-12) + 1e-300
    assert v_hi <= a.max() ** (1 / rho) * (hi + td) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_triangle_sandwich_on_discrete_instances(seed, theta):
    rng = np.random.default_rng(seed)
    f = builtin("mountain_car")
    n = int(rng.integers(2, 6))
    P = DiscreteDistribution(rng.normal(size=(n, 2)), rng.dirichlet(np.ones(n)))
    q = QuantizationOperator(BoxPartition([[-INF, 0.0, INF], [-INF, INF]]), [[-0.5, 0.0], [0.5, 0.0]])
    DP = apply(q, P)
    # finite candidate set for the ball: shifted and reweighted copies of P
    cands = [P]
    for _ in range(30):
        Q = DiscreteDistribution(P.locations + rng.normal(scale=theta, size=P.locations.shape), rng.dirichlet(np.ones(n)))
        if exact_wasserstein(P, Q)[0] <= theta:
            cands.append(Q)
    fP, fDP = pushforward(f, P), pushforward(f, DP)
    sup_quant = max(exact_wasserstein(pushforward(f, Q), fDP)[0] for Q in cands)
    sup_true = max(exact_wasserstein(pushforward(f, Q), fP)[0] for Q in cands)
    assert abs(sup_quant - sup_true) <= exact_wasserstein(fP, fDP)[0] + 1e-9
