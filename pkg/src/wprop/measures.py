"""Continuous product measures, discrete measures and their constrained moments.

Continuous measures are products of independent 1-D components (Gaussian or
uniform).  Everything needed to quantize them reduces to per-axis quantities:
interval probabilities and constrained rho-moments
``int_a^b |x - c|^rho dP_m(x)`` for rho in {1, 2}, which have closed forms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtr

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Interval:
    """Closed interval on the extended real line."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"invalid interval [{self.lo}, {self.hi}]")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def contains(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi


REAL_LINE = Interval(-math.inf, math.inf)


@dataclass(frozen=True)
class Gaussian:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("Gaussian std must be positive")

    @property
    def var(self) -> float:
        return self.std**2

    def to_dict(self) -> dict:
        return {"type": "gaussian", "mean": self.mean, "std": self.std}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("Uniform requires lo < hi")

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def var(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0

    def to_dict(self) -> dict:
        return {"type": "uniform", "lo": self.lo, "hi": self.hi}


Component = Union[Gaussian, Uniform]


def _pdf(z):
    return np.exp(-0.5 * np.square(z)) / _SQRT_2PI


def _gauss_mass(za, zb):
    # Evaluate on the side of the mean that avoids cancellation.
    za, zb = np.broadcast_arrays(np.asarray(za, float), np.asarray(zb, float))
    upper = za > 0
    direct = ndtr(zb) - ndtr(za)
    flipped = ndtr(-za) - ndtr(-zb)
    return np.where(upper, flipped, direct)


def _zphi(z):
    # z * pdf(z), with the limit 0 at +-inf
    with np.errstate(invalid="ignore"):
        out = z * _pdf(z)
    return np.where(np.isfinite(z), out, 0.0)


def interval_probability(comp: Component, lo, hi):
    """P_comp([lo, hi]); vectorized over lo/hi arrays."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if isinstance(comp, Gaussian):
        return _gauss_mass((lo - comp.mean) / comp.std, (hi - comp.mean) / comp.std)
    a = np.clip(lo, comp.lo, comp.hi)
    b = np.clip(hi, comp.lo, comp.hi)
    return (b - a) / (comp.hi - comp.lo)


def _gauss_moment(comp: Gaussian, lo, hi, c, rho):
    s = comp.std
    za = (lo - comp.mean) / s
    zb = (hi - comp.mean) / s
    delta = (c - comp.mean) / s
    if rho == 2:
        # int (z - delta)^2 phi(z) dz over [za, zb]
        m0 = _gauss_mass(za, zb)
        m1 = _pdf(za) - _pdf(zb)
        m2 = m0 + _zphi(za) - _zphi(zb)
        val = m2 - 2.0 * delta * m1 + delta**2 * m0
        return s**2 * np.maximum(val, 0.0)
    # rho == 1: split the interval at delta
    lo_a = np.minimum(za, delta)
    lo_b = np.minimum(zb, delta)
    hi_a = np.maximum(za, delta)
    hi_b = np.maximum(zb, delta)
    below = delta * _gauss_mass(lo_a, lo_b) - (_pdf(lo_a) - _pdf(lo_b))
    above = (_pdf(hi_a) - _pdf(hi_b)) - delta * _gauss_mass(hi_a, hi_b)
    return s * np.maximum(below + above, 0.0)


def _uniform_moment(comp: Uniform, lo, hi, c, rho):
    a = np.clip(lo, comp.lo, comp.hi) - c
    b = np.clip(hi, comp.lo, comp.hi) - c

    def antideriv(u):
        return np.sign(u) * np.abs(u) ** (rho + 1) / (rho + 1)

    return np.maximum(antideriv(b) - antideriv(a), 0.0) / (comp.hi - comp.lo)


def moment(comp: Component, lo, hi, c, rho: int):
    """Vectorized ``int_[lo,hi] |x - c|^rho d comp(x)``; arguments broadcast."""
    if rho not in (1, 2):
        raise ValueError(f"closed-form moments only for rho in {{1, 2}}, got {rho}")
    lo, hi, c = np.broadcast_arrays(*(np.asarray(v, float) for v in (lo, hi, c)))
    if np.any(lo > hi):
        raise ValueError("interval with lo > hi")
    if isinstance(comp, Gaussian):
        out = _gauss_moment(comp, lo, hi, c, rho)
    else:
        out = _uniform_moment(comp, lo, hi, c, rho)
    return out if out.ndim else float(out)


def truncated_moment(comp: Component, iv: Interval, c: float, rho: int) -> float:
    """Constrained moment ``int_iv |x - c|^rho d comp(x)`` for rho in {1, 2}.

    Generic rho is only available through the quadrature oracle in
    :mod:`wprop.validate`.
    """
    return float(moment(comp, iv.lo, iv.hi, c, rho))


def conditional_mean(comp: Component, lo, hi):
    """E[X | X in [lo, hi]]; falls back to the clipped midpoint for null cells."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if isinstance(comp, Gaussian):
        za = (lo - comp.mean) / comp.std
        zb = (hi - comp.mean) / comp.std
        m0 = _gauss_mass(za, zb)
        m1 = _pdf(za) - _pdf(zb)
        with np.errstate(divide="ignore", invalid="ignore"):
            mean = comp.mean + comp.std * m1 / m0
        fallback = np.clip(comp.mean, lo, hi)
        fallback = np.where(np.isfinite(fallback), fallback, np.where(np.isfinite(lo), lo, hi))
        return np.where(m0 > 1e-300, np.clip(mean, lo, hi), fallback)
    a = np.clip(lo, comp.lo, comp.hi)
    b = np.clip(hi, comp.lo, comp.hi)
    return 0.5 * (a + b)


def quantile(comp: Component, q):
    from scipy.special import ndtri

    q = np.asarray(q, float)
    if isinstance(comp, Gaussian):
        return comp.mean + comp.std * ndtri(q)
    return comp.lo + q * (comp.hi - comp.lo)


@dataclass(frozen=True)
class ProductDistribution:
    """Independent product of 1-D components."""

    components: tuple

    def __init__(self, components: Sequence[Component]):
        comps = tuple(components)
        if not comps:
            raise ValueError("ProductDistribution needs at least one component")
        for comp in comps:
            if not isinstance(comp, (Gaussian, Uniform)):
                raise TypeError(f"unsupported component {comp!r}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def gaussian(cls, mean, var) -> "ProductDistribution":
        """Diagonal Gaussian from a mean vector and per-axis *variances*."""
        mean = np.atleast_1d(np.asarray(mean, float))
        var = np.broadcast_to(np.asarray(var, float), mean.shape)
        return cls([Gaussian(float(m), math.sqrt(float(v))) for m, v in zip(mean, var)])

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def mean(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def var(self) -> np.ndarray:
        return np.array([c.var for c in self.components])

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = _rng(seed)
        cols = []
        for comp in self.components:
            if isinstance(comp, Gaussian):
                cols.append(comp.mean + comp.std * rng.standard_normal(n))
            else:
                cols.append(rng.uniform(comp.lo, comp.hi, n))
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        return {"kind": "product", "components": [c.to_dict() for c in self.components]}


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finitely supported measure ``sum_i w_i delta_{x_i}``."""

    locations: np.ndarray
    weights: np.ndarray

    def __init__(self, locations, weights, normalize: bool = False):
        locs = np.asarray(locations, float)
        if locs.ndim == 1:
            locs = locs[:, None]
        w = np.asarray(weights, float).reshape(-1)
        if locs.shape[0] != w.shape[0]:
            raise ValueError("locations and weights disagree in length")
        if np.any(w < 0):
            raise ValueError("negative weights")
        if normalize:
            w = w / w.sum()
        elif abs(w.sum() - 1.0) > 1e-12 * max(1, len(w)):
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        locs.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", w)

    @classmethod
    def dirac(cls, point) -> "DiscreteDistribution":
        return cls(np.atleast_2d(np.asarray(point, float)), [1.0])

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def size(self) -> int:
        return self.locations.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.locations

    def drop_null(self) -> "DiscreteDistribution":
        keep = self.weights > 0
        if keep.all():
            return self
        w = self.weights[keep]
        return DiscreteDistribution(self.locations[keep], w / w.sum())

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = _rng(seed)
        idx = rng.choice(self.size, size=n, p=self.weights)
        return self.locations[idx]

    def to_dict(self) -> dict:
        return {
            "kind": "discrete",
            "atoms": [{"loc": loc.tolist(), "w": float(w)} for loc, w in zip(self.locations, self.weights)],
        }


Distribution = Union[ProductDistribution, DiscreteDistribution]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def region_probability(p: ProductDistribution, cell: Sequence[Interval]) -> float:
    if len(cell) != p.dim:
        raise ValueError(f"cell has {len(cell)} intervals, distribution has dim {p.dim}")
    prob = 1.0
    for comp, iv in zip(p.components, cell):
        prob *= float(interval_probability(comp, iv.lo, iv.hi))
    return prob


def sample(p: Distribution, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return p.sample(n, seed)


def product(a: Distribution, b: Distribution) -> Distribution:
    """Independent product measure a x b (state-noise joint)."""
    if isinstance(a, ProductDistribution) and isinstance(b, ProductDistribution):
        return ProductDistribution(a.components + b.components)
    if isinstance(a, DiscreteDistribution) and isinstance(b, DiscreteDistribution):
        na, nb = a.size, b.size
        locs = np.hstack([np.repeat(a.locations, nb, axis=0), np.tile(b.locations, (na, 1))])
        w = np.outer(a.weights, b.weights).reshape(-1)
        return DiscreteDistribution(locs, w / w.sum())
    raise TypeError("product of mixed discrete/continuous measures is not supported")


def component_from_dict(d: dict) -> Component:
    kind = d["type"].lower()
    if kind == "gaussian":
        if "std" in d:
            return Gaussian(float(d["mean"]), float(d["std"]))
        return Gaussian(float(d["mean"]), math.sqrt(float(d["var"])))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    raise ValueError(f"unknown component type {d['type']!r}")


def from_dict(d: dict) -> Distribution:
    if d["kind"] == "product":
        return ProductDistribution([component_from_dict(c) for c in d["components"]])
    if d["kind"] == "discrete":
        locs = [a["loc"] if isinstance(a["loc"], list) else [a["loc"]] for a in d["atoms"]]
        return DiscreteDistribution(locs, [a["w"] for a in d["atoms"]], normalize=True)
    raise ValueError(f"unknown distribution kind {d['kind']!r}")


def load(path) -> Distribution:
    with open(path) as fh:
        return from_dict(json.load(fh))


def dump(p: Distribution, path) -> None:
    with open(path, "w") as fh:
        json.dump(p.to_dict(), fh, indent=1)
