"""Tensor-grid quantizers and their exact quantization error.

A quantizer pairs an axis-aligned box partition of R^d with one location per
cell.  Because every cell is a product of intervals, the error
``sum_k int_{R_k} ||x - c_k||_rho^rho dP`` of a product measure splits into
1-D constrained moments times 1-D probabilities, so it is computed exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .measures import (
    Component,
    DiscreteDistribution,
    Gaussian,
    Interval,
    ProductDistribution,
    conditional_mean,
    interval_probability,
    moment,
    quantile,
)

_INF = math.inf


def _check_rho(rho: int) -> None:
    if rho not in (1, 2):
        raise ValueError(f"rho must be 1 or 2, got {rho}")


@dataclass(frozen=True, eq=False)
class BoxPartition:
    """Per-axis breakpoints ``-inf = t_0 < ... < t_n = inf``; cells in C order."""

    breakpoints: tuple

    def __init__(self, breakpoints: Sequence[Sequence[float]]):
        axes = []
        for b in breakpoints:
            b = np.asarray(b, float)
            if b.ndim != 1 or b.size < 2:
                raise ValueError("each axis needs at least two breakpoints")
            if b[0] != -_INF or b[-1] != _INF:
                raise ValueError("outer breakpoints must be -inf and +inf")
            if np.any(np.diff(b) <= 0):
                raise ValueError("breakpoints must be strictly increasing")
            b.setflags(write=False)
            axes.append(b)
        object.__setattr__(self, "breakpoints", tuple(axes))

    @classmethod
    def trivial(cls, dim: int) -> "BoxPartition":
        return cls([[-_INF, _INF]] * dim)

    @property
    def dim(self) -> int:
        return len(self.breakpoints)

    @property
    def shape(self) -> tuple:
        return tuple(b.size - 1 for b in self.breakpoints)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis_indices(self) -> np.ndarray:
        """(N, d) per-axis interval index of every cell."""
        grids = np.indices(self.shape).reshape(self.dim, -1)
        return grids.T

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners, each (N, d)."""
        idx = self.axis_indices()
        lo = np.column_stack([b[idx[:, m]] for m, b in enumerate(self.breakpoints)])
        hi = np.column_stack([b[idx[:, m] + 1] for m, b in enumerate(self.breakpoints)])
        return lo, hi

    def cell(self, k: int) -> list[Interval]:
        idx = np.unravel_index(k, self.shape)
        return [Interval(float(b[i]), float(b[i + 1])) for b, i in zip(self.breakpoints, idx)]

    def locate(self, x) -> np.ndarray:
        """Flat index of the cell containing each row of ``x``."""
        x = np.atleast_2d(np.asarray(x, float))
        if x.shape[1] != self.dim:
            raise ValueError(f"points have dim {x.shape[1]}, partition has {self.dim}")
        idx = [np.searchsorted(b[1:-1], x[:, m], side="right") for m, b in enumerate(self.breakpoints)]
        return np.ravel_multi_index(idx, self.shape)


@dataclass(frozen=True, eq=False)
class QuantizationOperator:
    partition: BoxPartition
    locations: np.ndarray

    def __init__(self, partition: BoxPartition, locations):
        locs = np.asarray(locations, float)
        if locs.ndim == 1:
            locs = locs[:, None]
        if locs.shape != (partition.size, partition.dim):
            raise ValueError(f"expected locations of shape {(partition.size, partition.dim)}, got {locs.shape}")
        locs.setflags(write=False)
        object.__setattr__(self, "partition", partition)
        object.__setattr__(self, "locations", locs)

    @property
    def dim(self) -> int:
        return self.partition.dim

    @property
    def size(self) -> int:
        return self.partition.size

    def __call__(self, x) -> np.ndarray:
        return self.locations[self.partition.locate(x)]

    def cell_probabilities(self, p: ProductDistribution) -> np.ndarray:
        return _cell_probs(self.partition, p)

    def to_dict(self) -> dict:
        def enc(v):
            return str(v) if math.isinf(v) else float(v)

        return {
            "breakpoints": [[enc(v) for v in b] for b in self.partition.breakpoints],
            "locations": self.locations.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizationOperator":
        bps = [[float(v) for v in b] for b in d["breakpoints"]]
        return cls(BoxPartition(bps), d["locations"])


def _per_axis_probs(partition: BoxPartition, p: ProductDistribution) -> list[np.ndarray]:
    return [interval_probability(c, b[:-1], b[1:]) for c, b in zip(p.components, partition.breakpoints)]


def _cell_probs(partition: BoxPartition, p: ProductDistribution) -> np.ndarray:
    if p.dim != partition.dim:
        raise ValueError(f"distribution dim {p.dim} != partition dim {partition.dim}")
    idx = partition.axis_indices()
    probs = np.ones(partition.size)
    for m, pm in enumerate(_per_axis_probs(partition, p)):
        probs = probs * pm[idx[:, m]]
    return probs


def _merge_atoms(locs: np.ndarray, weights: np.ndarray) -> DiscreteDistribution:
    keep = weights > 0
    locs, weights = locs[keep], weights[keep]
    uniq, inv = np.unique(locs, axis=0, return_inverse=True)
    w = np.bincount(inv.reshape(-1), weights=weights, minlength=len(uniq))
    return DiscreteDistribution(uniq, w / w.sum())


def apply(q: QuantizationOperator, p) -> DiscreteDistribution:
    """Pushforward of ``p`` under the quantizer; coincident atoms are merged."""
    if p.dim != q.dim:
        raise ValueError(f"distribution dim {p.dim} != quantizer dim {q.dim}")
    if isinstance(p, DiscreteDistribution):
        cells = q.partition.locate(p.locations)
        w = np.bincount(cells, weights=p.weights, minlength=q.size)
        return _merge_atoms(q.locations, w)
    return _merge_atoms(q.locations, _cell_probs(q.partition, p))


def cell_moments(q: QuantizationOperator, p: ProductDistribution, rho: int) -> np.ndarray:
    """Per-cell ``int_{R_k} ||x - c_k||_rho^rho dP`` (length N)."""
    _check_rho(rho)
    if p.dim != q.dim:
        raise ValueError(f"distribution dim {p.dim} != quantizer dim {q.dim}")
    part = q.partition
    idx = part.axis_indices()
    lo, hi = part.cell_bounds()
    axis_probs = [pm[idx[:, m]] for m, pm in enumerate(_per_axis_probs(part, p))]
    total = np.zeros(part.size)
    for m, comp in enumerate(p.components):
        others = np.ones(part.size)
        for j in range(part.dim):
            if j != m:
                others = others * axis_probs[j]
        total += moment(comp, lo[:, m], hi[:, m], q.locations[:, m], rho) * others
    return total


def theta_d(q: QuantizationOperator, p, rho: int = 2) -> float:
    """Exact quantization error bound of ``p`` under ``q``."""
    _check_rho(rho)
    if isinstance(p, DiscreteDistribution):
        if p.dim != q.dim:
            raise ValueError(f"distribution dim {p.dim} != quantizer dim {q.dim}")
        diff = np.abs(p.locations - q(p.locations))
        return float(p.weights @ np.sum(diff**rho, axis=1)) ** (1.0 / rho)
    return float(np.sum(cell_moments(q, p, rho))) ** (1.0 / rho)


def _compander(comp: Component) -> Component:
    # High-resolution optimal point density is proportional to pdf^(1/3); for a
    # Gaussian that is the same law with std scaled by sqrt(3).
    if isinstance(comp, Gaussian):
        return Gaussian(comp.mean, comp.std * math.sqrt(3.0))
    return comp


@lru_cache(maxsize=4096)
def _lloyd_cached(comp: Component, n: int, tol: float, max_iter: int):
    if n == 1:
        bps = np.array([-_INF, _INF])
        loc = np.array([comp.mean])
        return bps, loc, math.sqrt(float(moment(comp, -_INF, _INF, comp.mean, 2)))
    locs = quantile(_compander(comp), (np.arange(n) + 0.5) / n)
    prev = _INF
    err = _INF
    for _ in range(max_iter):
        bps = np.concatenate([[-_INF], 0.5 * (locs[1:] + locs[:-1]), [_INF]])
        locs = conditional_mean(comp, bps[:-1], bps[1:])
        bps = np.concatenate([[-_INF], 0.5 * (locs[1:] + locs[:-1]), [_INF]])
        err = math.sqrt(float(np.sum(moment(comp, bps[:-1], bps[1:], locs, 2))))
        if prev - err < tol:
            break
        prev = err
    return bps, locs, err


def lloyd_quantizer_1d(comp: Component, n: int, tol: float = 1e-9, max_iter: int = 500):
    """Lloyd-Max scalar quantizer: (breakpoints, locations, rms error)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    bps, locs, err = _lloyd_cached(comp, int(n), float(tol), int(max_iter))
    return bps.copy(), locs.copy(), err


def _tensor_operator(bps: list, locs: list) -> QuantizationOperator:
    part = BoxPartition(bps)
    idx = part.axis_indices()
    grid = np.column_stack([np.asarray(l)[idx[:, m]] for m, l in enumerate(locs)])
    return QuantizationOperator(part, grid)


def allocate(p: ProductDistribution, budget: int, weights=None, tol: float = 1e-9, max_iter: int = 500) -> tuple:
    """Greedy per-axis level counts with product <= budget.

    Each step increments the axis with the largest (weighted) drop in squared
    error; ties go to the lowest axis index.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    d = p.dim
    w = np.ones(d) if weights is None else np.asarray(weights, float)
    if d == 1:
        return (int(budget),)
    counts = [1] * d

    def mse(m, n):
        return lloyd_quantizer_1d(p.components[m], n, tol, max_iter)[2] ** 2

    while True:
        total = math.prod(counts)
        best, best_gain = None, -_INF
        for m in range(d):
            if total // counts[m] * (counts[m] + 1) > budget:
                continue
            gain = w[m] * (mse(m, counts[m]) - mse(m, counts[m] + 1))
            if gain > best_gain:
                best, best_gain = m, gain
        if best is None:
            return tuple(counts)
        counts[best] += 1


def optimized_grid(p: ProductDistribution, budget: int, weights=None, tol: float = 1e-9, max_iter: int = 500) -> QuantizationOperator:
    """Tensor grid of per-axis Lloyd-Max quantizers under a cell budget."""
    counts = allocate(p, budget, weights, tol, max_iter)
    axes = [lloyd_quantizer_1d(c, n, tol, max_iter) for c, n in zip(p.components, counts)]
    return _tensor_operator([a[0] for a in axes], [a[1] for a in axes])


def equispaced_grid(q: QuantizationOperator) -> QuantizationOperator:
    """Move a tensor grid's locations to equal spacing over the same per-axis span.

    Boundaries are midpoints, i.e. the Voronoi cells of the new grid.
    """
    bps, locs = [], []
    for m in range(q.partition.dim):
        axis = np.unique(q.locations[:, m])
        loc = np.linspace(axis[0], axis[-1], axis.size)
        locs.append(loc)
        bps.append(np.concatenate([[-_INF], 0.5 * (loc[1:] + loc[:-1]), [_INF]]))
    return _tensor_operator(bps, locs)


def _cube_inner_moment(p: ProductDistribution, center: np.ndarray, h: float, rho: int) -> float:
    probs = [float(interval_probability(c, m - h, m + h)) for c, m in zip(p.components, center)]
    total = 0.0
    for m, comp in enumerate(p.components):
        rest = math.prod(probs[:m] + probs[m + 1 :])
        total += float(moment(comp, center[m] - h, center[m] + h, center[m], rho)) * rest
    return total


def tail_moment(p: ProductDistribution, h: float, rho: int) -> float:
    """``int ||x - mean||^rho dP`` outside the cube of half-side ``h`` at the mean."""
    center = p.mean
    full = sum(float(moment(c, -_INF, _INF, m, rho)) for c, m in zip(p.components, center))
    return max(full - _cube_inner_moment(p, center, h, rho), 0.0)


def uniform_cells_per_axis(epsilon: float, lipschitz: float, dim: int, halfside: float, rho: int) -> int:
    """Smallest n with n >= 2^(1/rho) L d^(1/rho) h / eps."""
    need = 2.0 ** (1.0 / rho) * lipschitz * dim ** (1.0 / rho) * halfside / epsilon
    return max(1, math.ceil(need - 1e-12))


def uniform_grid(
    p: ProductDistribution, epsilon: float, lipschitz: float, rho: int = 2, max_cells: int = 1_000_000
) -> QuantizationOperator:
    """Uniform hypercube grid certifying ``lipschitz * theta_d <= epsilon``.

    A cube centred at the mean is grown by bisection until its exterior moment
    is at most eps^rho / (2 L^rho); the cube is cut into equal sub-cubes with
    centre locations, and every exterior cell maps to the mean.  Raises
    ValueError if the grid would exceed ``max_cells`` cells.
    """
    _check_rho(rho)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if lipschitz <= 0:
        raise ValueError("lipschitz must be positive")
    center = p.mean
    d = p.dim
    budget = epsilon**rho / (2.0 * lipschitz**rho)
    if tail_moment(p, 0.0, rho) <= budget:
        return QuantizationOperator(BoxPartition.trivial(d), center[None, :])
    hi = float(np.max(np.sqrt(p.var)))
    while tail_moment(p, hi, rho) > budget:
        hi *= 2.0
    lo = 0.0
    while hi - lo > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if tail_moment(p, mid, rho) > budget:
            lo = mid
        else:
            hi = mid
    h = hi
    n = uniform_cells_per_axis(epsilon, lipschitz, d, h, rho)
    if (n + 2) ** d > max_cells:
        raise ValueError(f"uniform grid needs {n + 2}^{d} cells (max_cells = {max_cells})")
    bps, locs = [], []
    for m in range(d):
        edges = np.linspace(center[m] - h, center[m] + h, n + 1)
        bps.append(np.concatenate([[-_INF], edges, [_INF]]))
        locs.append(np.concatenate([[center[m]], 0.5 * (edges[1:] + edges[:-1]), [center[m]]]))
    q = _tensor_operator(bps, locs)
    # Exterior cells (any outer index on some axis) map to the mean.
    idx = q.partition.axis_indices()
    outer = np.any((idx == 0) | (idx == n + 1), axis=1)
    locations = np.array(q.locations)
    locations[outer] = center
    return QuantizationOperator(q.partition, locations)


def reduce_discrete(p: DiscreteDistribution, budget: int, seed: int = 0, rho: int = 2):
    """Weighted k-means compression to at most ``budget`` atoms.

    Returns the reduced distribution and the exact transport cost of the
    atom-to-centre assignment, an upper bound on the Wasserstein distance.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    _check_rho(rho)
    p = p.drop_null()
    uniq, inv = np.unique(p.locations, axis=0, return_inverse=True)
    if len(uniq) <= budget:
        w = np.bincount(inv.reshape(-1), weights=p.weights, minlength=len(uniq))
        if len(uniq) == p.size:
            return p, 0.0
        return DiscreteDistribution(uniq, w / w.sum()), 0.0
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=budget, n_init=10, random_state=seed).fit(p.locations, sample_weight=p.weights)
    labels = km.labels_
    w = np.bincount(labels, weights=p.weights, minlength=budget)
    centers = np.zeros((budget, p.dim))
    for m in range(p.dim):
        s = np.bincount(labels, weights=p.weights * p.locations[:, m], minlength=budget)
        centers[:, m] = np.where(w > 0, s / np.where(w > 0, w, 1.0), km.cluster_centers_[:, m])
    cost = float(p.weights @ np.sum(np.abs(p.locations - centers[labels]) ** rho, axis=1))
    keep = w > 0
    reduced = DiscreteDistribution(centers[keep], w[keep] / w[keep].sum())
    return reduced, cost ** (1.0 / rho)


def load(path) -> QuantizationOperator:
    with open(path) as fh:
        return QuantizationOperator.from_dict(json.load(fh))


def dump(q: QuantizationOperator, path) -> None:
    with open(path, "w") as fh:
        json.dump(q.to_dict(), fh)
