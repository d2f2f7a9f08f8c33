"""Certified bounds on the Wasserstein error of quantized pushforwards.

Every location ``c_k`` gets a norm linearization
``||f(x) - f(c_k)||^rho <= alpha_k ||x - c_k||^rho + beta_k``, either of slope
type ``(alpha, 0)`` or range type ``(0, beta)``.  Global coefficients (valid on
all of R^d) feed the ambiguity-ball bound; per-cell coefficients feed the
sharper bound for an exactly known input measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .funcmodel import FunctionModel, global_lipschitz, induced_norm, interval_matrix_norm
from .measures import DiscreteDistribution, Interval, ProductDistribution
from .quantize import QuantizationOperator, cell_moments, theta_d as quant_error

_PAIR_BUDGET = 4_000_000  # floats per chunk in pairwise coefficient sweeps


@dataclass(frozen=True)
class AmbiguityBall:
    center: object
    theta: float
    rho: int = 2

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("ball radius must be non-negative")


@dataclass(frozen=True)
class NormLinearization:
    alpha: np.ndarray
    beta: np.ndarray
    scope: str  # "global" or "local"


@dataclass
class BoundReport:
    value: float
    theta_d: float
    alpha_max: float
    method: str
    theta: float = 0.0
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    pi: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    uses_beta: np.ndarray = field(default_factory=lambda: np.zeros(0, bool), repr=False)
    beta_sum: float = 0.0
    slope_sum: float = math.nan  # value == (slope_sum + beta_sum) ** (1 / rho)
    lipschitz: float = math.nan
    unbounded: bool = False

    def to_dict(self) -> dict:
        def num(v):
            v = float(v)
            return v if math.isfinite(v) else str(v)

        return {
            "method": self.method,
            "value": num(self.value),
            "theta": num(self.theta),
            "theta_d": num(self.theta_d),
            "alpha_max": num(self.alpha_max),
            "beta_sum": num(self.beta_sum),
            "slope_sum": num(self.slope_sum),
            "lipschitz": num(self.lipschitz),
            "unbounded": self.unbounded,
            "locations": [
                {"alpha": num(a), "beta": num(b), "pi": float(p), "uses_beta": bool(u)}
                for a, b, p, u in zip(self.alpha, self.beta, self.pi, self.uses_beta)
            ],
        }


# ---------------------------------------------------------------------------
# coefficient computation


def _boxes(region: Sequence[Interval]) -> tuple[np.ndarray, np.ndarray]:
    return np.array([[iv.lo for iv in region]]), np.array([[iv.hi for iv in region]])


def _beta_from(res, rho: int) -> np.ndarray:
    dev = np.maximum(np.abs(res.lo - res.value), np.abs(res.hi - res.value))
    with np.errstate(invalid="ignore"):
        out = np.sum(dev**rho, axis=1)
    return np.where(np.isfinite(out), out, np.inf)


def pair_coefficients(f: FunctionModel, anchors, lo, hi, rho: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """alpha and beta of every anchor on every box, maximised over boxes.

    ``anchors`` is (N, d); ``lo``/``hi`` are (S, d).  Returns two (N,) arrays.
    """
    anchors = np.atleast_2d(np.asarray(anchors, float))
    lo = np.atleast_2d(np.asarray(lo, float))
    hi = np.atleast_2d(np.asarray(hi, float))
    N, d = anchors.shape
    S = lo.shape[0]
    per_pair = max(1, 6 * f.output_dim * d + 8 * max(f.node_dims()))
    rows = max(1, _PAIR_BUDGET // (per_pair * S))
    alpha = np.zeros(N)
    beta = np.zeros(N)
    for start in range(0, N, rows):
        c = anchors[start : start + rows]
        n = c.shape[0]
        res = f.slopes(np.tile(lo, (n, 1)), np.tile(hi, (n, 1)), np.repeat(c, S, axis=0))
        a = interval_matrix_norm(res.jl, res.ju, rho) ** rho
        b = _beta_from(res, rho)
        alpha[start : start + n] = a.reshape(n, S).max(axis=1)
        beta[start : start + n] = b.reshape(n, S).max(axis=1)
    return alpha, beta


def local_coefficients(f: FunctionModel, anchors, lo, hi, rho: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """alpha and beta of anchor k on its own box k (row-wise)."""
    res = f.slopes(lo, hi, anchors)
    return interval_matrix_norm(res.jl, res.ju, rho) ** rho, _beta_from(res, rho)


def _axis_edges(l, h, c, scale, pieces: int, growth: float = 2.0) -> np.ndarray:
    """(N, pieces + 1) sorted edges splitting [l, h] around anchors c."""
    n = l.size
    cuts = np.empty((n, pieces - 1))
    for k in range(n):
        lo_inf, hi_inf = np.isinf(l[k]), np.isinf(h[k])
        m = pieces - 1
        if not (lo_inf or hi_inf):
            inner = np.linspace(l[k], h[k], pieces + 1)[1:-1]
        else:
            left = (m + 1) // 2 if lo_inf and hi_inf else (m if lo_inf else 0)
            right = m - left if hi_inf else 0
            fin = m - left - right
            steps = scale * growth ** np.arange(max(left, right, 1))
            span = (l[k], c[k]) if hi_inf else (c[k], h[k])
            inner = np.concatenate([c[k] - steps[:left], c[k] + steps[:right], np.linspace(*span, fin + 2)[1:-1] if fin else []])
        cuts[k] = np.clip(inner, l[k], h[k])
    return np.column_stack([l, np.sort(cuts, axis=1), h])


def refined_coefficients(f: FunctionModel, anchors, lo, hi, scale, rho: int = 2, max_sub: int = 256):
    """Per-cell alpha and beta, each cell split into at most ``max_sub`` boxes.

    Boxes away from the anchor get secant slopes through the division form,
    which is much tighter than the derivative range over the whole cell.
    """
    anchors = np.atleast_2d(np.asarray(anchors, float))
    lo = np.atleast_2d(np.asarray(lo, float))
    hi = np.atleast_2d(np.asarray(hi, float))
    N, d = anchors.shape
    pieces = int(math.floor(max_sub ** (1.0 / d) + 1e-9))
    if pieces < 2:
        return local_coefficients(f, anchors, lo, hi, rho)
    scale = np.broadcast_to(np.asarray(scale, float), (d,))
    edges = np.stack([_axis_edges(lo[:, m], hi[:, m], anchors[:, m], scale[m], pieces) for m in range(d)], axis=1)
    idx = np.indices([pieces] * d).reshape(d, -1).T
    B = idx.shape[0]
    axes = np.arange(d)
    per_pair = max(1, 6 * f.output_dim * d + 8 * max(f.node_dims()))
    rows = max(1, _PAIR_BUDGET // (per_pair * B))
    alpha = np.zeros(N)
    beta = np.zeros(N)
    for start in range(0, N, rows):
        e = edges[start : start + rows]
        n = e.shape[0]
        sub_lo = e[:, axes, idx].reshape(-1, d)
        sub_hi = e[:, axes, idx + 1].reshape(-1, d)
        res = f.slopes(sub_lo, sub_hi, np.repeat(anchors[start : start + n], B, axis=0))
        alpha[start : start + n] = (interval_matrix_norm(res.jl, res.ju, rho) ** rho).reshape(n, B).max(axis=1)
        beta[start : start + n] = _beta_from(res, rho).reshape(n, B).max(axis=1)
    return alpha, beta


def coeff_type_i(f: FunctionModel, c, scope: Sequence[Interval] | None = None, subpartition=None, rho: int = 2) -> float:
    """Range-type coefficient: bound on sup over the scope of ||f(x) - f(c)||^rho."""
    lo, hi = _scope_boxes(f, scope, subpartition)
    return float(pair_coefficients(f, np.atleast_2d(c), lo, hi, rho)[1][0])


def coeff_type_ii(f: FunctionModel, c, scope: Sequence[Interval] | None = None, subpartition=None, rho: int = 2) -> float:
    """Slope-type coefficient: bound on sup ||f(x) - f(c)||^rho / ||x - c||^rho."""
    lo, hi = _scope_boxes(f, scope, subpartition)
    alpha = float(pair_coefficients(f, np.atleast_2d(c), lo, hi, rho)[0][0])
    return min(alpha, global_lipschitz(f, rho) ** rho)


def _scope_boxes(f, scope, subpartition):
    if subpartition is not None:
        if isinstance(subpartition, tuple):
            return subpartition
        return subpartition.cell_bounds()
    if scope is None:
        scope = [Interval(-math.inf, math.inf)] * f.input_dim
    return _boxes(scope)


def split_boxes(lo, hi, cuts: Sequence[Sequence[float]]) -> tuple[np.ndarray, np.ndarray]:
    """Split one box (d,) along per-axis cut points into a grid of boxes."""
    lo = np.asarray(lo, float).reshape(-1)
    hi = np.asarray(hi, float).reshape(-1)
    edges = []
    for m in range(lo.size):
        inner = [t for t in sorted(cuts[m]) if lo[m] < t < hi[m]] if cuts and cuts[m] is not None else []
        edges.append(np.array([lo[m], *inner, hi[m]]))
    idx = np.indices([e.size - 1 for e in edges]).reshape(lo.size, -1).T
    blo = np.column_stack([e[idx[:, m]] for m, e in enumerate(edges)])
    bhi = np.column_stack([e[idx[:, m] + 1] for m, e in enumerate(edges)])
    return blo, bhi


def global_subpartition(breakpoints: Sequence[np.ndarray], max_cells: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Boxes of a tensor grid covering R^d, coarsened to at most ``max_cells``.

    The widest axis (most intervals) is halved until the product fits.
    """
    inner = [np.asarray(b, float)[1:-1] for b in breakpoints]
    while math.prod(len(b) + 1 for b in inner) > max_cells:
        m = int(np.argmax([len(b) for b in inner]))
        b = inner[m]
        inner[m] = b[1::2] if len(b) > 1 else b[:0]
    return split_boxes(np.full(len(inner), -np.inf), np.full(len(inner), np.inf), inner)


def subpartition_from_points(points, per_axis: int = 16, max_cells: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Grid whose per-axis breakpoints are empirical quantiles of ``points``."""
    pts = np.atleast_2d(np.asarray(points, float))
    bps = []
    for m in range(pts.shape[1]):
        qs = np.unique(np.quantile(pts[:, m], np.linspace(0, 1, per_axis + 1)))
        bps.append(np.concatenate([[-np.inf], qs, [np.inf]]))
    return global_subpartition(bps, max_cells)


# ---------------------------------------------------------------------------
# greedy prefix scan over locations


def algorithm1(alpha, beta, pi, theta: float, theta_d: float, rho: int = 2, early_stop: bool = False):
    """Swap the largest slope coefficients for range coefficients.

    Locations are sorted by alpha (descending; ties put the larger beta last)
    and prefixes of the order switch to their beta.  With ``early_stop`` the
    scan halts at the first candidate that does not improve; otherwise every
    prefix is evaluated and the smallest finite bound is returned.  Returns
    ``(value, mask)`` where ``mask`` marks locations that use beta.
    """
    alpha = np.asarray(alpha, float)
    beta = np.asarray(beta, float)
    pi = np.asarray(pi, float)
    n = alpha.size
    r = (theta + theta_d) ** rho
    mask = np.zeros(n, bool)
    if n == 0:
        return 0.0, mask
    best = float(alpha.max() ** (1.0 / rho) * (theta + theta_d))
    order = np.lexsort((beta, -alpha))
    a_sorted = alpha[order]
    with np.errstate(invalid="ignore"):
        terms = np.where(pi[order] > 0, pi[order] * beta[order], 0.0)
    b = np.cumsum(terms)
    a_next = np.append(a_sorted[1:], 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        cand = (a_next * r + b) ** (1.0 / rho)
    best_k = 0
    for k in range(n):
        w = cand[k]
        if not np.isfinite(w):
            if early_stop:
                break
            continue
        if w < best:
            best, best_k = float(w), k + 1
        elif early_stop:
            break
    mask[order[:best_k]] = True
    return best, mask


# ---------------------------------------------------------------------------
# bounds


def bound_lipschitz(theta: float, theta_d: float, lipschitz: float) -> float:
    if min(theta, theta_d, lipschitz) < 0:
        raise ValueError("arguments must be non-negative")
    return lipschitz * (theta + theta_d)


def _support(q: QuantizationOperator, p) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, DiscreteDistribution):
        cells = q.partition.locate(p.locations)
        probs = np.bincount(cells, weights=p.weights, minlength=q.size)
    else:
        probs = q.cell_probabilities(p)
    return probs, probs > 0


def thm4_from_atoms(
    f: FunctionModel,
    anchors,
    pi,
    theta: float,
    theta_d: float,
    rho: int = 2,
    subpartition: tuple | None = None,
    early_stop: bool = False,
) -> BoundReport:
    """Ambiguity-ball bound for a quantized centre given by atoms and masses."""
    anchors = np.atleast_2d(np.asarray(anchors, float))
    pi = np.asarray(pi, float)
    lip = global_lipschitz(f, rho)
    if f.is_affine:
        # slope coefficient is exactly the induced norm everywhere
        alpha = np.full(len(pi), lip**rho)
        beta = pair_coefficients(f, anchors, *_scope_boxes(f, None, None), rho)[1]
    else:
        if subpartition is None:
            subpartition = subpartition_from_points(anchors)
        alpha, beta = pair_coefficients(f, anchors, *subpartition, rho)
        alpha = np.minimum(alpha, lip**rho)
    value, mask = algorithm1(alpha, beta, pi, theta, theta_d, rho, early_stop)
    if f.is_affine and not mask.any():
        value = lip * (theta + theta_d)  # same number, without the rho-th root rounding
    kept = alpha[~mask]
    alpha_max = float(kept.max()) if kept.size else 0.0
    beta_sum = float(np.sum(pi[mask] * beta[mask])) if mask.any() else 0.0
    return BoundReport(
        value=value,
        theta_d=theta_d,
        alpha_max=alpha_max,
        method="thm4",
        theta=theta,
        alpha=alpha,
        beta=beta,
        pi=pi,
        uses_beta=mask,
        beta_sum=beta_sum,
        slope_sum=alpha_max * (theta + theta_d) ** rho,
        lipschitz=lip,
        unbounded=not math.isfinite(value),
    )


def bound_thm4(
    q: QuantizationOperator,
    p,
    theta: float,
    f: FunctionModel,
    rho: int = 2,
    subpartition: tuple | None = None,
    max_cells: int = 1024,
    early_stop: bool = False,
) -> BoundReport:
    """Bound on sup over the theta-ball around p of W(f#Q, f#(q#p))."""
    if theta < 0:
        raise ValueError("theta must be non-negative")
    probs, live = _support(q, p)
    td = quant_error(q, p, rho)
    if subpartition is None:
        subpartition = global_subpartition(q.partition.breakpoints, max_cells)
    return thm4_from_atoms(f, q.locations[live], probs[live], theta, td, rho, subpartition, early_stop)


def _spread(p) -> np.ndarray:
    if isinstance(p, DiscreteDistribution):
        mu = p.mean
        sd = np.sqrt(p.weights @ (p.locations - mu) ** 2)
    else:
        sd = np.sqrt(p.var)
    return np.where(sd > 0, sd, 1.0)


def bound_thm6(q: QuantizationOperator, p, f: FunctionModel, rho: int = 2, refine: int = 256) -> BoundReport:
    """Bound on W(f#p, f#(q#p)) from per-cell coefficients.

    ``refine`` caps the sub-boxes each cell is split into when computing its
    coefficients (1 disables splitting).
    """
    probs, live = _support(q, p)
    lo, hi = q.partition.cell_bounds()
    lo, hi, locs, pi = lo[live], hi[live], q.locations[live], probs[live]
    if isinstance(p, DiscreteDistribution):
        cells = q.partition.locate(p.locations)
        dev = np.sum(np.abs(p.locations - q.locations[cells]) ** rho, axis=1)
        mom = np.bincount(cells, weights=p.weights * dev, minlength=q.size)[live]
    else:
        mom = cell_moments(q, p, rho)[live]
    lip = global_lipschitz(f, rho)
    if refine > 1 and not f.is_affine:
        alpha, beta = refined_coefficients(f, locs, lo, hi, _spread(p), rho, refine)
    else:
        alpha, beta = local_coefficients(f, locs, lo, hi, rho)
    alpha = np.minimum(alpha, lip**rho)
    slope_cost = alpha * mom
    with np.errstate(invalid="ignore"):
        range_cost = np.where(np.isfinite(beta), pi * beta, np.inf)
    mask = range_cost < slope_cost
    total = float(np.sum(np.where(mask, range_cost, slope_cost)))
    td = float(np.sum(mom)) ** (1.0 / rho)
    value = lip * td if f.is_affine and not mask.any() else total ** (1.0 / rho)
    return BoundReport(
        value=value,
        theta_d=td,
        alpha_max=float(alpha[~mask].max()) if (~mask).any() else 0.0,
        method="thm6",
        alpha=alpha,
        beta=beta,
        pi=pi,
        uses_beta=mask,
        beta_sum=float(np.sum(range_cost[mask])),
        slope_sum=float(np.sum(slope_cost[~mask])),
        lipschitz=lip,
    )


def lipschitz_report(q: QuantizationOperator, p, theta: float, f: FunctionModel, rho: int = 2) -> BoundReport:
    lip = global_lipschitz(f, rho)
    td = quant_error(q, p, rho)
    return BoundReport(
        value=bound_lipschitz(theta, td, lip),
        theta_d=td,
        alpha_max=lip**rho,
        method="lipschitz",
        theta=theta,
        slope_sum=(lip * (theta + td)) ** rho,
        lipschitz=lip,
    )


def linear_report(q: QuantizationOperator, p, theta: float, A, rho: int = 2) -> BoundReport:
    """Shortcut for linear maps: ||A|| (theta + theta_d)."""
    norm = induced_norm(A, rho)
    td = quant_error(q, p, rho)
    return BoundReport(
        value=norm * (theta + td),
        theta_d=td,
        alpha_max=norm**rho,
        method="linear",
        theta=theta,
        slope_sum=(norm * (theta + td)) ** rho,
        lipschitz=norm,
    )
