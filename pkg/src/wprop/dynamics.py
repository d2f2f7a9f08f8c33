"""Multi-step discrete approximation of stochastic systems ``x' = f(x, w)``.

Each step quantizes the current (discrete or Gaussian) state together with the
noise, pushes the atoms through the dynamics and bounds the Wasserstein error
of the result.  Errors compose through the recursion

    theta_{t+1} = (alpha_max,t (theta_t + theta_d,t)^rho + sum_k pi_k beta_k)^(1/rho),

or, for additive dynamics ``g(x) + s(w)``, as the sum of a state part and a
noise part that is computed once.
"""

from __future__ import annotations

import math
import time
from functools import lru_cache
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import (
    BoundReport,
    bound_thm4,
    bound_thm6,
    subpartition_from_points,
    thm4_from_atoms,
)
from .funcmodel import Affine, FunctionModel, builtin, global_lipschitz, with_additive_noise
from .measures import DiscreteDistribution, ProductDistribution, product, sample
from .quantize import apply, optimized_grid, reduce_discrete, theta_d as quant_error

DIVERGED = 1e30


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class StochasticSystem:
    """Dynamics over (state, noise); ``g``/``s`` give the additive split if any."""

    f: FunctionModel
    noise: ProductDistribution
    initial: object
    g: FunctionModel | None = None
    s: FunctionModel | None = None
    name: str = "custom"

    def __post_init__(self):
        d, q = self.initial.dim, self.noise.dim
        if self.f.input_dim != d + q or self.f.output_dim != d:
            raise ValueError(f"dynamics must map R^{d + q} -> R^{d}")
        if (self.g is None) != (self.s is None):
            raise ValueError("separable form needs both g and s")
        if self.g is not None:
            if self.g.input_dim != d or self.s.input_dim != q:
                raise ValueError("separable parts have the wrong input dims")
            rng = np.random.Generator(np.random.Philox(12345))
            x, w = 3 * rng.standard_normal((1000, d)), 3 * rng.standard_normal((1000, q))
            gap = np.abs(self.step(x, w) - self.g(x) - self.s(w)).max()
            if gap > 1e-12 * max(1.0, float(np.abs(self.step(x, w)).max())):
                raise ValueError(f"separable form disagrees with f by {gap:.3g}")

    @property
    def state_dim(self) -> int:
        return self.initial.dim

    @property
    def separable(self) -> bool:
        return self.g is not None

    def step(self, x, w) -> np.ndarray:
        return self.f(np.hstack([np.atleast_2d(x), np.atleast_2d(w)]))


def identity_map(d: int) -> FunctionModel:
    return FunctionModel.chain(d, Affine(np.eye(d)), name="identity")


def additive_system(g: FunctionModel, noise, initial, name: str = "custom") -> StochasticSystem:
    return StochasticSystem(with_additive_noise(g), noise, initial, g, identity_map(g.input_dim), name)


STATIC_DISTRIBUTIONS = {
    "sigmoid": ([0.2], [0.5]),
    "bounded_linear": ([1.5, 2.5], [0.4, 0.5]),
    "quadruple_tank": ([1.5, 2.5, -0.5, -1.0], [0.001, 0.02, 0.4, 0.01]),
    "nn_layer": (
        [0.0, 1.0, 0.5, -0.7, 0.3, 2.0, -3.0, 0.4, -0.1, 4.0],
        [0.0001, 0.5, 0.7, 0.2, 1.5, 2.5, 0.1, 0.5, 0.8, 0.2],
    ),
    "mountain_car": ([0.3, 0.2], [0.1, 1e-3]),
    "dubins_car": ([0.3, 0.2, 0.01], [0.1, 0.01, 0.001]),
}


def static_distribution(name: str) -> ProductDistribution:
    """Input law of a benchmark map (means, variances)."""
    mean, var = STATIC_DISTRIBUTIONS[name]
    return ProductDistribution.gaussian(mean, var)


def builtin_system(name: str) -> StochasticSystem:
    if name in ("mountain_car", "dubins_car", "quadruple_tank"):
        g = builtin(name)
        d = g.input_dim
        return additive_system(g, ProductDistribution.gaussian(np.zeros(d), 1e-2), static_distribution(name), name)
    if name in ("nn_layer_3d", "nn_layer"):
        f = builtin("nn_layer", {"variant": "3d"})
        noise = ProductDistribution.gaussian([0.0, 0.0, 0.0], [0.1, 0.1, 0.01])
        init = ProductDistribution.gaussian([1.5, -1.2, 2.4], [0.1, 0.5, 0.2])
        return StochasticSystem(f, noise, init, name="nn_layer_3d")
    if name == "contractive":
        # x' = 0.5 (x + w)
        g = FunctionModel.chain(1, Affine([[0.5]]), name="half")
        f = FunctionModel.chain(2, Affine([[0.5, 0.5]]), name="contractive")
        s = FunctionModel.chain(1, Affine([[0.5]]), name="half")
        return StochasticSystem(f, ProductDistribution.gaussian([0.0], [1.0]), ProductDistribution.gaussian([1.0], [1.0]), g, s, name)
    raise ValueError(f"unknown system {name!r}")


SYSTEMS = ("mountain_car", "quadruple_tank", "dubins_car", "nn_layer_3d")


@dataclass(frozen=True)
class PropagationConfig:
    state_budget: int = 100
    noise_budget: int = 25
    rho: int = 2
    epsilon: float | None = None  # None: first-step quantization error
    max_growth: int = 16
    seed: int = 0
    theta0: float = 0.0
    theta_omega: float = 0.0
    subpartition_cells: int = 256
    early_stop: bool = False

    def __post_init__(self):
        if self.state_budget < 1 or self.noise_budget < 1:
            raise ValueError("budgets must be >= 1")
        if self.rho not in (1, 2):
            raise ValueError("rho must be 1 or 2")


@dataclass
class StepResult:
    distribution: DiscreteDistribution
    report: BoundReport  # bound on the state part (or the joint map)
    theta_next: float
    theta_d: float
    noise_part: float
    lipschitz_next: float
    support: int
    state_budget: int


@dataclass
class ErrorTrace:
    theta: list = field(default_factory=list)  # theta_t, t = 0..T
    lipschitz: list = field(default_factory=list)
    theta_d: list = field(default_factory=list)
    support: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    alpha_max: list = field(default_factory=list)
    beta_sum: list = field(default_factory=list)
    slope_sum: list = field(default_factory=list)
    noise_part: list = field(default_factory=list)  # theta_t = step bound + noise part
    diverged: bool = False

    def rows(self):
        for t in range(len(self.theta)):
            yield {
                "t": t,
                "theta_t": self.theta[t],
                "lipschitz_t": self.lipschitz[t],
                "theta_d_t": self.theta_d[t] if t < len(self.theta_d) else math.nan,
                "support": self.support[t] if t < len(self.support) else 0,
                "seconds": self.seconds[t] if t < len(self.seconds) else 0.0,
            }


def _combine(a: float, b: float, rho: int) -> float:
    return (a**rho + b**rho) ** (1.0 / rho)


class _NoiseCache:
    """Noise quantizer and its pushforward bound, computed once per system."""

    def __init__(self, sys: StochasticSystem, budget: int, rho: int):
        self.q = optimized_grid(sys.noise, budget)
        self.atoms = apply(self.q, sys.noise)
        self.theta_d = quant_error(self.q, sys.noise, rho)
        if sys.separable:
            self.bound = bound_thm6(self.q, sys.noise, sys.s, rho).value
            self.lip_bound = _lipschitz(sys.s, rho) * self.theta_d
        else:
            self.bound = self.lip_bound = math.nan


_cache: dict = {}


def noise_part(sys: StochasticSystem, budget: int, rho: int) -> _NoiseCache:
    key = (sys, budget, rho)
    if key not in _cache:
        _cache[key] = _NoiseCache(sys, budget, rho)
    return _cache[key]


def _quantize_state(state, budget: int, seed: int, rho: int):
    """(atoms, weights, theta_d, operator or None)."""
    if isinstance(state, ProductDistribution):
        q = optimized_grid(state, budget)
        probs = q.cell_probabilities(state)
        live = probs > 0
        return q.locations[live], probs[live], quant_error(q, state, rho), q
    reduced, err = reduce_discrete(state, budget, seed, rho)
    return reduced.locations, reduced.weights, err, None


@lru_cache(maxsize=64)
def _lipschitz(f: FunctionModel, rho: int) -> float:
    return global_lipschitz(f, rho)


def _pair_atoms(xs, wx, ws, ww):
    n, m = len(xs), len(ws)
    locs = np.hstack([np.repeat(xs, m, axis=0), np.tile(ws, (n, 1))])
    return locs, np.outer(wx, ww).reshape(-1)


def propagate_step(
    sys: StochasticSystem,
    state_hat,
    theta_t: float,
    config: PropagationConfig = PropagationConfig(),
    lipschitz_t: float | None = None,
    step_index: int = 0,
) -> StepResult:
    """One step of the scheme: quantize, push forward, bound.

    ``state_hat`` is the current approximation (a Gaussian at the start);
    ``theta_t`` the certified distance between it and the true state law.  A
    zero radius with a continuous state uses per-cell coefficients.
    """
    rho = config.rho
    lip_t = theta_t if lipschitz_t is None else lipschitz_t
    noise = noise_part(sys, config.noise_budget, rho)
    seed = config.seed * 1_000_003 + step_index
    xs, wx, td_state, q_state = _quantize_state(state_hat, config.state_budget, seed, rho)
    if sys.separable:
        g = sys.g
        if q_state is not None and theta_t == 0:
            rep = bound_thm6(q_state, state_hat, g, rho)
        elif q_state is not None:
            rep = bound_thm4(q_state, state_hat, theta_t, g, rho, max_cells=config.subpartition_cells, early_stop=config.early_stop)
        else:
            sub = subpartition_from_points(xs, max_cells=config.subpartition_cells)
            rep = thm4_from_atoms(g, xs, wx, theta_t, td_state, rho, sub, config.early_stop)
        theta_next = rep.value + noise.bound
        lip_next = _lipschitz(g, rho) * (lip_t + td_state) + noise.lip_bound
        gx = g(xs)
        sw = sys.s(noise.atoms.locations)
        locs = (gx[:, None, :] + sw[None, :, :]).reshape(-1, sys.state_dim)
        weights = np.outer(wx, noise.atoms.weights).reshape(-1)
        td = td_state
        npart = noise.bound
    else:
        f = sys.f
        if q_state is not None:
            # continuous start: quantize state and noise jointly
            joint = product(state_hat, sys.noise)
            qj = optimized_grid(joint, config.state_budget * config.noise_budget)
            if theta_t == 0:
                rep = bound_thm6(qj, joint, f, rho)
            else:
                rep = bound_thm4(qj, joint, theta_t, f, rho, max_cells=config.subpartition_cells, early_stop=config.early_stop)
            probs = qj.cell_probabilities(joint)
            live = probs > 0
            anchors, pi = qj.locations[live], probs[live]
            td = quant_error(qj, joint, rho)
        else:
            anchors, pi = _pair_atoms(xs, wx, noise.atoms.locations, noise.atoms.weights)
            td = _combine(td_state, noise.theta_d, rho)
            sub = subpartition_from_points(anchors, per_axis=8, max_cells=config.subpartition_cells)
            rep = thm4_from_atoms(f, anchors, pi, theta_t, td, rho, sub, config.early_stop)
        theta_next = rep.value
        lip_next = _lipschitz(f, rho) * (lip_t + td)
        locs = f(anchors)
        weights = pi
        npart = 0.0
    dist = DiscreteDistribution(locs, weights / weights.sum())
    return StepResult(dist, rep, theta_next, td, npart, lip_next, dist.size, config.state_budget)


def propagate_horizon(sys: StochasticSystem, T: int, epsilon: float | None = None, config: PropagationConfig = PropagationConfig()):
    """Run ``T`` steps; returns (ErrorTrace, [approximation at t = 0..T]).

    The state budget doubles (up to ``max_growth`` times the base) until the
    state quantization error is at most ``epsilon``.
    """
    if T < 1:
        raise ValueError("horizon must be >= 1")
    eps = config.epsilon if epsilon is None else epsilon
    if eps is not None and eps <= 0:
        raise ValueError("epsilon must be positive")
    theta0, start_thm4 = ambiguous_start(config.theta0, config.theta_omega)
    trace = ErrorTrace(theta=[theta0], lipschitz=[theta0])
    dists = [sys.initial]
    state = sys.initial
    for t in range(T):
        t0 = time.perf_counter()
        budget = config.state_budget
        while True:
            cfg = replace(config, state_budget=budget)
            res = propagate_step(sys, state, trace.theta[-1], cfg, trace.lipschitz[-1], t)
            if eps is None:
                eps = res.theta_d
            if res.theta_d <= eps * (1 + 1e-12) or not math.isfinite(eps):
                break
            if budget * 2 > config.state_budget * config.max_growth:
                raise BudgetExceeded(
                    f"step {t}: quantization error {res.theta_d:.4g} > epsilon {eps:.4g} at state budget {budget}"
                )
            budget *= 2
        trace.theta.append(res.theta_next)
        trace.lipschitz.append(min(res.lipschitz_next, DIVERGED))
        trace.theta_d.append(res.theta_d)
        trace.support.append(res.support)
        trace.alpha_max.append(res.report.alpha_max)
        trace.beta_sum.append(res.report.beta_sum)
        trace.slope_sum.append(res.report.slope_sum)
        trace.noise_part.append(res.noise_part)
        trace.seconds.append(time.perf_counter() - t0)
        if not math.isfinite(res.theta_next) or res.theta_next >= DIVERGED:
            trace.diverged = True
        dists.append(res.distribution)
        state = res.distribution
    return trace, dists


def error_recursion(alpha_max_seq, beta_terms_seq, theta_1: float, epsilon: float, rho: int = 2):
    """theta_{t+1} = (alpha_t (theta_t + eps)^rho + b_t)^(1/rho), starting at theta_1.

    Returns (sequence, diverged); the sequence stops once it passes 1e30.
    """
    alpha = np.asarray(alpha_max_seq, float)
    beta = np.asarray(beta_terms_seq, float)
    if alpha.shape != beta.shape:
        raise ValueError("sequences must have the same length")
    out = [float(theta_1)]
    for a, b in zip(alpha, beta):
        nxt = (a * (out[-1] + epsilon) ** rho + b) ** (1.0 / rho)
        out.append(float(nxt))
        if not math.isfinite(nxt) or nxt >= DIVERGED:
            return out, True
    return out, False


def fixed_point_bound(lipschitz: float, epsilon: float) -> float:
    if not 0 <= lipschitz < 1:
        raise ValueError("fixed point needs 0 <= lipschitz < 1")
    return lipschitz / (1.0 - lipschitz) * epsilon


def separable_step_bound(sys: StochasticSystem, state_bound: float, noise_bound: float) -> float:
    if not sys.separable:
        raise ValueError("system has no additive split")
    return state_bound + noise_bound


def ambiguous_start(theta_0: float, theta_omega: float) -> tuple[float, bool]:
    """Initial radius and whether the first step must use the ball bound."""
    if theta_0 < 0 or theta_omega < 0:
        raise ValueError("radii must be non-negative")
    r = theta_0 + theta_omega
    return r, r > 0


def simulate(sys: StochasticSystem, n: int, T: int, seed: int = 0) -> list[np.ndarray]:
    """Monte Carlo state samples for t = 0..T with fresh noise every step."""
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(T + 1)]
    x = sample(sys.initial, n, seeds[0])
    out = [x]
    for t in range(1, T + 1):
        w = sample(sys.noise, n, seeds[t])
        x = sys.step(x, w)
        out.append(x)
    return out


def empirical_errors(
    sys: StochasticSystem, dists, times, n_traj: int = 5000, repeats: int = 10, rho: int = 2, seed: int = 0, n: int | None = None
):
    """Sampled W_rho(true state law, approximation) at each ``t`` in ``times``.

    ``n_traj`` trajectories are simulated once; each repeat draws ``n`` of
    them without replacement (default: all that fit the transport cap).
    Returns {t: (estimate, stderr)}.
    """
    from .validate import EXACT_CAP, mc_wasserstein

    times = sorted(set(int(t) for t in times))
    paths = simulate(sys, n_traj, max(times), seed)
    out = {}
    for t in times:
        approx = dists[t]
        if isinstance(approx, DiscreteDistribution):
            cap = min(n_traj, EXACT_CAP * EXACT_CAP // approx.size)
        else:
            cap = min(n_traj, EXACT_CAP)
        m = cap if n is None else min(n, cap)
        out[t] = mc_wasserstein(paths[t], approx, n=m, repeats=repeats, rho=rho, seed=seed + 7919 * (t + 1))
    return out


def system_from_dict(d: dict) -> StochasticSystem:
    """``{"builtin": name}`` or explicit ``f``/``noise``/``initial`` (+ ``g``, ``s``)."""
    from .measures import from_dict as dist_from_dict

    if "builtin" in d:
        sys = builtin_system(d["builtin"])
        if "initial" in d or "noise" in d:
            sys = replace(
                sys,
                initial=dist_from_dict(d["initial"]) if "initial" in d else sys.initial,
                noise=dist_from_dict(d["noise"]) if "noise" in d else sys.noise,
            )
        return sys
    noise = dist_from_dict(d["noise"])
    initial = dist_from_dict(d["initial"])
    name = d.get("name", "custom")
    if "g" in d and "f" not in d:
        return additive_system(FunctionModel.from_dict(d["g"]), noise, initial, name)
    g = FunctionModel.from_dict(d["g"]) if "g" in d else None
    s = FunctionModel.from_dict(d["s"]) if "s" in d else None
    return StochasticSystem(FunctionModel.from_dict(d["f"]), noise, initial, g, s, name)


def load_system(path) -> StochasticSystem:
    import json

    with open(path) as fh:
        return system_from_dict(json.load(fh))
