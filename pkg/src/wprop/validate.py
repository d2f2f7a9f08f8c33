"""Independent oracles: exact discrete transport, sampled Wasserstein estimates,
closed-form Gaussian W2 and adaptive quadrature of constrained moments."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .measures import Component, DiscreteDistribution, Gaussian, Interval, ProductDistribution, sample

# POT probes optional GPU/autodiff backends on import; none are needed here.
for _backend in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")
import ot  # noqa: E402

EXACT_CAP = 4000


@dataclass(frozen=True)
class TransportPlan:
    source: np.ndarray
    target: np.ndarray
    mass: np.ndarray
    cost: float

    def marginals(self, n_source: int, n_target: int) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.bincount(self.source, weights=self.mass, minlength=n_source),
            np.bincount(self.target, weights=self.mass, minlength=n_target),
        )


def cost_matrix(x, y, rho: int = 2) -> np.ndarray:
    """Pairwise ``||x_i - y_j||_2^rho``."""
    x = np.atleast_2d(np.asarray(x, float))
    y = np.atleast_2d(np.asarray(y, float))
    if rho == 2:
        return ot.dist(x, y, metric="sqeuclidean")
    return ot.dist(x, y, metric="euclidean") ** rho


def exact_wasserstein(a: DiscreteDistribution, b: DiscreteDistribution, rho: int = 2) -> tuple[float, TransportPlan]:
    """Optimal transport between two discrete measures by network simplex."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    if a.size + b.size > EXACT_CAP:
        raise ValueError(f"combined support {a.size + b.size} exceeds exact cap {EXACT_CAP}")
    M = cost_matrix(a.locations, b.locations, rho)
    wa = a.weights / a.weights.sum()
    wb = b.weights / b.weights.sum()
    G = ot.emd(wa, wb, M, numItermax=10_000_000)
    src, tgt = np.nonzero(G > 0)
    mass = G[src, tgt]
    cost = float(np.sum(mass * M[src, tgt]))
    return max(cost, 0.0) ** (1.0 / rho), TransportPlan(src, tgt, mass, cost)


def _transport_cost(xs: np.ndarray, wx: np.ndarray, ys: np.ndarray, wy: np.ndarray, rho: int) -> float:
    if xs.shape[1] == 1:
        # monotone rearrangement is optimal for convex costs on the line
        cost = ot.wasserstein_1d(xs[:, 0], ys[:, 0], wx, wy, p=rho)
    else:
        cost = ot.emd2(wx, wy, cost_matrix(xs, ys, rho), numItermax=10_000_000)
    return max(float(cost), 0.0) ** (1.0 / rho)


def _semi_discrete(xs: np.ndarray, q: DiscreteDistribution, rho: int) -> float:
    w = np.full(len(xs), 1.0 / len(xs))
    return _transport_cost(xs, w, q.locations, q.weights / q.weights.sum(), rho)


def _assignment(xs: np.ndarray, ys: np.ndarray, rho: int) -> float:
    # equal sizes and weights: the optimal plan is a permutation
    w = np.full(len(xs), 1.0 / len(xs))
    return _transport_cost(xs, w, ys, w, rho)


def mc_wasserstein(p, q, n: int = 2000, repeats: int = 10, rho: int = 2, seed: int = 0) -> tuple[float, float]:
    """Sampled estimate of W_rho(p, q) with its standard error over repeats.

    A discrete side is used exactly when the ``n`` x atoms cost matrix fits in
    ``EXACT_CAP**2`` entries (the other side is sampled); otherwise both sides
    are sampled with ``n <= EXACT_CAP`` equal weight points and matched by an
    exact assignment.  Sample arrays may be
    passed directly for either side.
    """
    if n < 1 or repeats < 1:
        raise ValueError("n and repeats must be positive")
    ss = np.random.SeedSequence(seed)
    seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(repeats)]
    est = []
    for s in seeds:
        est.append(_one_estimate(p, q, n, rho, s))
    est = np.array(est)
    err = float(est.std(ddof=1) / math.sqrt(repeats)) if repeats > 1 else 0.0
    return float(est.mean()), err


def _draw(p, n: int, seed: int) -> np.ndarray:
    if isinstance(p, np.ndarray):
        if len(p) < n:
            raise ValueError("not enough stored samples")
        rng = np.random.Generator(np.random.Philox(seed))
        return p[rng.choice(len(p), size=n, replace=False)]
    return sample(p, n, seed)


def _one_estimate(p, q, n: int, rho: int, seed: int) -> float:
    # semi-discrete problems are capped by cost-matrix size, not sample count
    cells = EXACT_CAP * EXACT_CAP
    if isinstance(q, DiscreteDistribution) and q.size * n <= cells and not isinstance(p, DiscreteDistribution):
        return _semi_discrete(_draw(p, n, seed), q, rho)
    if isinstance(p, DiscreteDistribution) and p.size * n <= cells and not isinstance(q, DiscreteDistribution):
        return _semi_discrete(_draw(q, n, seed), p, rho)
    if n > EXACT_CAP:
        raise ValueError(f"n = {n} exceeds exact cap {EXACT_CAP} for two-sample assignment")
    return _assignment(_draw(p, n, seed), _draw(q, n, seed + 1), rho)


def mc_lower_bound(p, q: DiscreteDistribution, n: int = 2000, repeats: int = 5, rho: int = 2, seed: int = 0, n_eval: int = 20000):
    """Conservative sampled estimate of ``W_rho(p, q)**rho`` for discrete ``q``.

    Dual potentials fitted on ``n`` samples are scored on ``n_eval`` fresh
    ones.  Every dual-feasible pair lower-bounds the transport cost, so the
    mean of the returned estimate is at most the true ``W**rho``; unlike the
    plain empirical distance it is not biased upward.  Returns (mean, stderr)
    in units of cost, not distance.
    """
    if n < 1 or repeats < 1 or n > EXACT_CAP:
        raise ValueError("need 1 <= n <= EXACT_CAP and repeats >= 1")
    ss = np.random.SeedSequence(seed)
    wq = q.weights / q.weights.sum()
    vals = []
    for child in ss.spawn(repeats):
        fit, score = (int(x) for x in child.generate_state(2))
        xs = _draw(p, n, fit)
        M = cost_matrix(xs, q.locations, rho)
        _, log = ot.emd(np.full(n, 1.0 / n), wq, M, numItermax=10_000_000, log=True)
        v = log["v"]
        ys = _draw(p, n_eval, score)
        u = np.min(cost_matrix(ys, q.locations, rho) - v[None, :], axis=1)
        vals.append(float(u.mean() + wq @ v))
    vals = np.array(vals)
    err = float(vals.std(ddof=1) / math.sqrt(repeats)) if repeats > 1 else 0.0
    return float(vals.mean()), err


def gaussian_w2(p: ProductDistribution, q: ProductDistribution) -> float:
    """Closed-form W2 between diagonal Gaussians."""
    for comp in p.components + q.components:
        if not isinstance(comp, Gaussian):
            raise TypeError("closed form needs Gaussian components")
    dm = p.mean - q.mean
    ds = np.sqrt(p.var) - np.sqrt(q.var)
    return float(math.sqrt(dm @ dm + ds @ ds))


def quadrature_moment(comp: Component, iv: Interval, c: float, rho: float, tol: float = 1e-10) -> float:
    """Adaptive quadrature of ``int_iv |x - c|^rho d comp(x)`` for real rho >= 1.

    Semi-infinite Gaussian intervals are cut at 12 standard deviations beyond
    the farther of the mean and ``c``; the discarded tail is integrated
    separately on the half line so nothing is silently dropped.
    """
    if rho < 1:
        raise ValueError("rho must be >= 1")
    lo, hi = iv.lo, iv.hi
    if isinstance(comp, Gaussian):
        mu, s = comp.mean, comp.std
        pdf = lambda x: math.exp(-0.5 * ((x - mu) / s) ** 2) / (s * math.sqrt(2 * math.pi))  # noqa: E731
    else:
        lo, hi = max(lo, comp.lo), min(hi, comp.hi)
        dens = 1.0 / (comp.hi - comp.lo)
        pdf = lambda x: dens  # noqa: E731
    if not lo < hi:
        return 0.0
    g = lambda x: abs(x - c) ** rho * pdf(x)  # noqa: E731
    pieces = []
    a, b = lo, hi
    if isinstance(comp, Gaussian):
        reach = 12.0 * comp.std + abs(c - comp.mean)
        cut_lo, cut_hi = comp.mean - reach, comp.mean + reach
        if a < cut_lo:
            pieces.append((a, min(cut_lo, b)))
            a = min(cut_lo, b)
        if b > cut_hi:
            pieces.append((max(cut_hi, a), b))
            b = max(cut_hi, a)
    total = 0.0
    # split at c so the kink of |x - c| is a breakpoint
    core = [(a, c), (c, b)] if a < c < b else [(a, b)]
    for u, v in core + pieces:
        if u >= v:
            continue
        val, err = integrate.quad(g, u, v, epsabs=tol * 1e-3, epsrel=tol, limit=500)
        if not math.isfinite(val) or err > max(tol, tol * abs(val)) * 100:
            raise RuntimeError(f"quadrature did not converge on [{u}, {v}]: err {err}")
        total += val
    return total
