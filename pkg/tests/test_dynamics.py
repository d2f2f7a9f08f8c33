import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wprop.dynamics import (
    SYSTEMS,
    BudgetExceeded,
    PropagationConfig,
    StochasticSystem,
    additive_system,
    ambiguous_start,
    builtin_system,
    empirical_errors,
    error_recursion,
    fixed_point_bound,
    propagate_horizon,
    propagate_step,
    separable_step_bound,
    simulate,
    system_from_dict,
)
from wprop.funcmodel import Affine, FunctionModel, builtin
from wprop.measures import DiscreteDistribution, ProductDistribution

NOISE = ProductDistribution.gaussian([0.0], [1.0])


def linear_system(gain, initial):
    g = FunctionModel.chain(1, Affine([[gain]]))
    s = FunctionModel.chain(1, Affine([[0.0]]))  # noise has no effect
    f = FunctionModel.chain(2, Affine([[gain, 0.0]]))
    return StochasticSystem(f, NOISE, initial, g, s)


def test_identity_dynamics_keep_a_dirac():
    sys = linear_system(1.0, DiscreteDistribution.dirac([0.0]))
    res = propagate_step(sys, sys.initial, 0.0, PropagationConfig(state_budget=3, noise_budget=4))
    assert res.theta_next == 0.0
    assert np.all(res.distribution.locations == 0.0)


def test_halving_dynamics_move_a_dirac():
    sys = linear_system(0.5, DiscreteDistribution.dirac([1.0]))
    res = propagate_step(sys, sys.initial, 0.0)
    assert res.theta_next == 0.0
    assert np.all(res.distribution.locations == 0.5)


def test_mountain_car_first_step_near_published_value():
    res = propagate_step(builtin_system("mountain_car"), builtin_system("mountain_car").initial, 0.0)
    assert res.report.method == "thm6"
    assert 0.0547 / 3 <= res.theta_next <= 0.0547 * 3


def test_positive_radius_uses_ball_bound():
    sys = builtin_system("mountain_car")
    res = propagate_step(sys, sys.initial, 0.05, PropagationConfig(state_budget=20, noise_budget=5))
    assert res.report.method == "thm4"


def test_contractive_system_settles_below_fixed_point():
    sys = builtin_system("contractive")
    trace, _ = propagate_horizon(sys, 30, 0.1)
    th = trace.theta
    assert all(b <= 0.5 * (a + 0.1) + 1e-12 for a, b in zip(th, th[1:]))
    assert th[-1] <= fixed_point_bound(0.5, 0.1)
    assert not trace.diverged


def test_support_stays_within_budget():
    cfg = PropagationConfig(state_budget=30, noise_budget=7)
    trace, dists = propagate_horizon(builtin_system("dubins_car"), 4, math.inf, cfg)
    assert all(n <= 30 * 7 for n in trace.support)
    assert [d.size for d in dists[1:]] == trace.support


def test_budget_growth_and_cap():
    sys = builtin_system("quadruple_tank")
    with pytest.raises(BudgetExceeded):
        propagate_horizon(sys, 2, 1e-6, PropagationConfig(state_budget=4, noise_budget=2, max_growth=4))
    trace, _ = propagate_horizon(sys, 2, None, PropagationConfig(state_budget=20, noise_budget=4))
    assert len(trace.theta) == 3


def test_trace_rows():
    trace, _ = propagate_horizon(builtin_system("contractive"), 3, math.inf, PropagationConfig(state_budget=10, noise_budget=5))
    rows = list(trace.rows())
    assert [r["t"] for r in rows] == [0, 1, 2, 3]
    assert all(r["theta_t"] >= 0 for r in rows)


def test_error_recursion_examples():
    seq, div = error_recursion([0.25] * 60, [0.0] * 60, 1.0, 0.1)
    assert not div and abs(seq[30] - 0.1) < 1e-6
    seq, div = error_recursion([1.0] * 10, [0.0] * 10, 0.7, 0.0)
    assert seq == pytest.approx([0.7] * 11)
    seq, div = error_recursion([4.0] * 200, [0.0] * 200, 0.1, 0.1)
    assert div and len(seq) < 201
    assert all(b > a for a, b in zip(seq, seq[1:]))
    with pytest.raises(ValueError):
        error_recursion([1.0], [0.0, 0.0], 0.0, 0.0)


def test_fixed_point_examples():
    assert fixed_point_bound(0.5, 0.1) == pytest.approx(0.1)
    assert fixed_point_bound(0.0, 0.3) == 0.0
    assert fixed_point_bound(0.9, 1.0) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        fixed_point_bound(1.0, 0.1)


def test_separable_step_bound():
    sys = builtin_system("mountain_car")
    assert separable_step_bound(sys, 0.0, 0.0) == 0.0
    assert separable_step_bound(sys, 0.3, 0.2) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        separable_step_bound(builtin_system("nn_layer_3d"), 0.1, 0.1)


def test_ambiguous_start():
    assert ambiguous_start(0.0, 0.0) == (0.0, False)
    r, use = ambiguous_start(0.1, 0.2)
    assert r == pytest.approx(0.3) and use
    assert ambiguous_start(0.4, 0.0) == (0.4, True)
    with pytest.raises(ValueError):
        ambiguous_start(-0.1, 0.0)


def test_ambiguous_start_feeds_the_first_step():
    cfg = PropagationConfig(state_budget=10, noise_budget=5, theta0=0.2)
    trace, _ = propagate_horizon(builtin_system("quadruple_tank"), 1, math.inf, cfg)
    assert trace.theta[0] == 0.2
    plain, _ = propagate_horizon(builtin_system("quadruple_tank"), 1, math.inf, PropagationConfig(state_budget=10, noise_budget=5))
    assert trace.theta[1] > plain.theta[1]


def test_separable_form_is_checked():
    g = builtin("mountain_car")
    sys = additive_system(g, ProductDistribution.gaussian([0, 0], 0.01), ProductDistribution.gaussian([0, 0], 1))
    with pytest.raises(ValueError):
        StochasticSystem(sys.f, sys.noise, sys.initial, FunctionModel.chain(2, Affine(np.eye(2))), sys.s)
    with pytest.raises(ValueError):
        StochasticSystem(sys.f, sys.noise, ProductDistribution.gaussian([0.0], 1.0))


def test_system_from_dict():
    sys = system_from_dict({"builtin": "mountain_car", "initial": {"kind": "discrete", "atoms": [{"loc": [0, 0], "w": 1}]}})
    assert isinstance(sys.initial, DiscreteDistribution) and sys.separable
    g = FunctionModel.chain(1, Affine([[0.9]]))
    spec = {
        "g": g.to_dict(),
        "noise": {"kind": "product", "components": [{"type": "gaussian", "mean": 0, "std": 0.1}]},
        "initial": {"kind": "product", "components": [{"type": "uniform", "lo": 0, "hi": 1}]},
    }
    sys = system_from_dict(spec)
    assert sys.separable and sys.step(np.array([[1.0]]), np.array([[0.5]]))[0, 0] == pytest.approx(1.4)
    with pytest.raises(ValueError):
        builtin_system("pendulum")


def test_simulation_is_reproducible():
    sys = builtin_system("dubins_car")
    a, b = simulate(sys, 100, 3, seed=5), simulate(sys, 100, 3, seed=5)
    assert len(a) == 4
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("name", SYSTEMS)
def test_short_horizon_soundness(name):
    sys = builtin_system(name)
    cfg = PropagationConfig(state_budget=50, noise_budget=10)
    trace, dists = propagate_horizon(sys, 3, math.inf, cfg)
    emp = empirical_errors(sys, dists, [1, 2, 3], n_traj=3000, repeats=5, n=1500, seed=2)
    for t, (est, se) in emp.items():
        assert est <= trace.theta[t] + 3 * se


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(0.0, 1.0), st.floats(0.0, 10.0))
def test_constant_recursion_approaches_fixed_point(L, eps, theta1):
    seq, div = error_recursion([L**2] * 2000, [0.0] * 2000, theta1, eps)
    assert not div
    assert seq[-1] == pytest.approx(fixed_point_bound(L, eps), abs=1e-9)
