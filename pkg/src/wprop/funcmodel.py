"""Maps f built from a small set of primitives, with sound range and slope bounds.

A :class:`FunctionModel` is a DAG of primitive nodes.  Besides plain
evaluation it supports three batched analyses over axis-aligned boxes:

* interval ranges of every node;
* secant-slope intervals anchored at a point ``c``: for every ``x`` in the box
  ``f(x) - f(c) = G (x - c)`` for some matrix ``G`` inside ``[Jl, Ju]``;
* linear enclosures derived from the two.

Boxes may be unbounded, in which case slope bounds fall back to the
primitive's global derivative range.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .measures import Interval

_HALF_PI = 0.5 * math.pi
_TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# interval helpers


def _mul(a, b):
    # elementwise product with 0 * inf := 0
    with np.errstate(invalid="ignore"):
        out = a * b
    return np.where(np.isnan(out), 0.0, out)


def _imul(al, au, bl, bu):
    """Interval product [al, au] * [bl, bu], broadcasting."""
    p = np.stack(np.broadcast_arrays(_mul(al, bl), _mul(al, bu), _mul(au, bl), _mul(au, bu)))
    return p.min(axis=0), p.max(axis=0)


def _lin_lower(lo, hi, A):
    """Lower bound of ``x @ A.T`` over the box [lo, hi] (rows of lo/hi)."""
    pos = np.maximum(A, 0.0)
    neg = np.minimum(A, 0.0)
    lo_f = np.where(np.isfinite(lo), lo, 0.0)
    hi_f = np.where(np.isfinite(hi), hi, 0.0)
    val = lo_f @ pos.T + hi_f @ neg.T
    to_inf = (np.isneginf(lo).astype(float) @ (pos > 0).T.astype(float)) + (
        np.isposinf(hi).astype(float) @ (neg < 0).T.astype(float)
    )
    return np.where(to_inf > 0, -np.inf, val)


def _lin_range(lo, hi, A):
    return _lin_lower(lo, hi, A), -_lin_lower(lo, hi, -A)


def _sin_range(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    with np.errstate(invalid="ignore"):
        width = b - a
        full = ~np.isfinite(width) | (width >= _TWO_PI)
        a_f = np.where(full, 0.0, a)
        b_f = np.where(full, 0.0, b)
        va, vb = np.sin(a_f), np.sin(b_f)
        k_max = np.ceil((a_f - _HALF_PI) / _TWO_PI)
        k_min = np.ceil((a_f + _HALF_PI) / _TWO_PI)
        has_max = _HALF_PI + _TWO_PI * k_max <= b_f
        has_min = -_HALF_PI + _TWO_PI * k_min <= b_f
    lo = np.where(has_min, -1.0, np.minimum(va, vb))
    hi = np.where(has_max, 1.0, np.maximum(va, vb))
    return np.where(full, -1.0, lo), np.where(full, 1.0, hi)


# fixed pieces of the half offset h on [-pi, pi] for trig secants
_H_EDGES = np.linspace(-math.pi, math.pi, 17)


def _sinc_range(a, b):
    """Range of sin(h)/h over [a, b] inside [-pi, pi], where it is even and unimodal."""
    near = np.where((a <= 0) & (b >= 0), 0.0, np.minimum(np.abs(a), np.abs(b)))
    far = np.maximum(np.abs(a), np.abs(b))
    return np.sinc(far / math.pi), np.sinc(near / math.pi)


def _trig_secant(phase, yc, l, u):
    """Range of the secant of ``sin(y + phase)`` anchored at ``yc`` over y in [l, u].

    The secant equals ``cos(yc + phase + h) * sinc(h)`` with ``h = (y - yc) / 2``;
    it is bounded piecewise in h, and by 1/|h| once |h| exceeds pi.
    """
    with np.errstate(invalid="ignore"):
        hl, hu = 0.5 * (l - yc), 0.5 * (u - yc)
    lo = np.full(np.shape(yc), np.inf)
    hi = np.full(np.shape(yc), -np.inf)
    centre = yc + phase + _HALF_PI
    for a, b in zip(_H_EDGES[:-1], _H_EDGES[1:]):
        pa, pb = np.maximum(hl, a), np.minimum(hu, b)
        hit = pa <= pb
        if not np.any(hit):
            continue
        pa, pb = np.where(hit, pa, a), np.where(hit, pb, a)
        cl, cu = _sin_range(centre + pa, centre + pb)
        kl, ku = _sinc_range(pa, pb)
        ql, qu = _imul(cl, cu, kl, ku)
        lo = np.where(hit, np.minimum(lo, ql), lo)
        hi = np.where(hit, np.maximum(hi, qu), hi)
    beyond = (hl < -math.pi) | (hu > math.pi)
    lo = np.where(beyond, np.minimum(lo, -1.0 / math.pi), lo)
    hi = np.where(beyond, np.maximum(hi, 1.0 / math.pi), hi)
    return lo, hi


def _dsigmoid(y):
    s = expit(y)
    return s * (1.0 - s)


# ---------------------------------------------------------------------------
# primitives


class Primitive:
    op: str = ""
    arity: int = 1  # -1: variadic, 0: nullary

    def out_dim(self, in_dims: Sequence[int]) -> int:
        return in_dims[0]

    def params(self) -> dict:
        return {}

    def lipschitz(self, in_lips: Sequence[float], rho: int) -> float:
        raise NotImplementedError


class Elementwise(Primitive):
    """Unary elementwise map with known value and derivative ranges."""

    slope_bound = 1.0

    def fn(self, y):
        raise NotImplementedError

    def value_range(self, l, u):
        raise NotImplementedError

    def deriv_range(self, l, u):
        raise NotImplementedError

    def secant_range(self, yc, l, u):
        """Anchor-specific secant range, or None when only the derivative hull is known."""
        return None

    def lipschitz(self, in_lips, rho):
        return float(np.max(self.slope_bound)) * in_lips[0]


class Sigmoid(Elementwise):
    op = "sigmoid"
    slope_bound = 0.25

    def fn(self, y):
        return expit(y)

    def value_range(self, l, u):
        return expit(l), expit(u)

    def deriv_range(self, l, u):
        peak = _dsigmoid(np.clip(0.0, l, u))
        return np.minimum(_dsigmoid(l), _dsigmoid(u)), peak


class Sin(Elementwise):
    op = "sin"

    def fn(self, y):
        return np.sin(y)

    def value_range(self, l, u):
        return _sin_range(l, u)

    def deriv_range(self, l, u):
        return _sin_range(l + _HALF_PI, u + _HALF_PI)

    def secant_range(self, yc, l, u):
        return _trig_secant(0.0, yc, l, u)


class Cos(Elementwise):
    op = "cos"

    def fn(self, y):
        return np.cos(y)

    def value_range(self, l, u):
        return _sin_range(l + _HALF_PI, u + _HALF_PI)

    def deriv_range(self, l, u):
        lo, hi = _sin_range(l, u)
        return -hi, -lo

    def secant_range(self, yc, l, u):
        return _trig_secant(_HALF_PI, yc, l, u)


class Clamp(Elementwise):
    op = "clamp"

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, float))
        self.hi = np.atleast_1d(np.asarray(hi, float))
        if np.any(self.lo >= self.hi):
            raise ValueError("clamp requires lo < hi")

    def params(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def fn(self, y):
        return np.clip(y, self.lo, self.hi)

    def value_range(self, l, u):
        return np.clip(l, self.lo, self.hi), np.clip(u, self.lo, self.hi)

    def deriv_range(self, l, u):
        inside = (l >= self.lo) & (u <= self.hi)
        flat = (u <= self.lo) | (l >= self.hi)
        lo = np.where(inside, 1.0, 0.0)
        hi = np.where(flat, 0.0, 1.0)
        return lo, hi


class Affine(Primitive):
    op = "affine"

    def __init__(self, A, b=None):
        A = np.asarray(A, float)
        if A.ndim == 1:
            A = A[None, :]
        self.A = A
        self.b = np.zeros(A.shape[0]) if b is None else np.atleast_1d(np.asarray(b, float))
        if self.b.shape != (A.shape[0],):
            raise ValueError("affine offset has the wrong length")

    def out_dim(self, in_dims):
        if in_dims[0] != self.A.shape[1]:
            raise ValueError(f"affine expects input dim {self.A.shape[1]}, got {in_dims[0]}")
        return self.A.shape[0]

    def params(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}

    def lipschitz(self, in_lips, rho):
        return induced_norm(self.A, rho) * in_lips[0]


class Scale(Affine):
    op = "scale"

    def __init__(self, s):
        self.s = np.atleast_1d(np.asarray(s, float))
        super().__init__(np.diag(self.s))

    def params(self):
        return {"s": self.s.tolist()}


class Select(Affine):
    op = "select"

    def __init__(self, indices, in_dim):
        self.indices = [int(i) for i in indices]
        self.in_dim = int(in_dim)
        super().__init__(np.eye(self.in_dim)[self.indices])

    def params(self):
        return {"indices": self.indices, "in_dim": self.in_dim}


class Const(Primitive):
    op = "const"
    arity = 0

    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, float))

    def out_dim(self, in_dims):
        return self.value.size

    def params(self):
        return {"value": self.value.tolist()}

    def lipschitz(self, in_lips, rho):
        return 0.0


class Sum(Primitive):
    op = "sum"
    arity = -1

    def out_dim(self, in_dims):
        if len(set(in_dims)) != 1:
            raise ValueError(f"sum branches disagree in dimension: {in_dims}")
        return in_dims[0]

    def lipschitz(self, in_lips, rho):
        return float(sum(in_lips))


class Concat(Primitive):
    op = "concat"
    arity = -1

    def out_dim(self, in_dims):
        return int(sum(in_dims))

    def lipschitz(self, in_lips, rho):
        if rho == 1:
            return float(sum(in_lips))
        return math.sqrt(sum(l * l for l in in_lips))


_REGISTRY = {
    "sigmoid": lambda p: Sigmoid(),
    "sin": lambda p: Sin(),
    "cos": lambda p: Cos(),
    "clamp": lambda p: Clamp(p["lo"], p["hi"]),
    "affine": lambda p: Affine(p["A"], p.get("b")),
    "scale": lambda p: Scale(p["s"]),
    "select": lambda p: Select(p["indices"], p["in_dim"]),
    "const": lambda p: Const(p["value"]),
    "sum": lambda p: Sum(),
    "concat": lambda p: Concat(),
}


# ---------------------------------------------------------------------------
# model


INPUT = -1


@dataclass(frozen=True)
class Node:
    prim: Primitive
    inputs: tuple


@dataclass
class _Slope:
    val: np.ndarray  # (B, k) value at the anchor
    lo: np.ndarray  # (B, k) range over the box
    hi: np.ndarray
    jl: np.ndarray  # (B, k, d) secant slope interval
    ju: np.ndarray


@dataclass(frozen=True)
class SlopeBounds:
    """Batched result of :meth:`FunctionModel.slopes`."""

    value: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    jl: np.ndarray
    ju: np.ndarray


class FunctionModel:
    """Immutable DAG of primitives; the last node is the output."""

    def __init__(self, input_dim: int, nodes: Sequence[Node], name: str = "custom"):
        self.input_dim = int(input_dim)
        self.nodes = tuple(nodes)
        self.name = name
        if not self.nodes:
            raise ValueError("model needs at least one node")
        dims = []
        for i, node in enumerate(self.nodes):
            for j in node.inputs:
                if not (j == INPUT or 0 <= j < i):
                    raise ValueError(f"node {i} references invalid input {j}")
            in_dims = [self.input_dim if j == INPUT else dims[j] for j in node.inputs]
            if node.prim.arity == 1 and len(in_dims) != 1:
                raise ValueError(f"node {i} ({node.prim.op}) takes one input")
            if node.prim.arity == 0 and in_dims:
                raise ValueError(f"node {i} ({node.prim.op}) takes no inputs")
            if node.prim.arity == -1 and not in_dims:
                raise ValueError(f"node {i} ({node.prim.op}) needs inputs")
            dim = node.prim.out_dim(in_dims)
            if isinstance(node.prim, Clamp) and node.prim.lo.size not in (1, dim):
                raise ValueError("clamp bounds do not match input dim")
            dims.append(dim)
        self._dims = tuple(dims)
        self.output_dim = dims[-1]

    # -- construction -----------------------------------------------------

    @classmethod
    def chain(cls, input_dim: int, *prims: Primitive, name: str = "custom") -> "FunctionModel":
        nodes = [Node(p, (INPUT if i == 0 else i - 1,)) for i, p in enumerate(prims)]
        return cls(input_dim, nodes, name)

    @property
    def is_affine(self) -> bool:
        return all(isinstance(n.prim, (Affine, Const, Sum, Concat)) for n in self.nodes)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_dim": self.input_dim,
            "nodes": [{"op": n.prim.op, "inputs": list(n.inputs), **n.prim.params()} for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FunctionModel":
        if "builtin" in d:
            return builtin(d["builtin"], d.get("params"))
        nodes = []
        for nd in d["nodes"]:
            op = nd["op"]
            if op not in _REGISTRY:
                raise ValueError(f"unknown primitive {op!r}")
            nodes.append(Node(_REGISTRY[op](nd), tuple(int(i) for i in nd.get("inputs", [INPUT]))))
        return cls(d["input_dim"], nodes, d.get("name", "custom"))

    # -- evaluation -------------------------------------------------------

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        """Forward evaluation; accepts a point (d,) or a batch (n, d)."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        if xs.shape[1] != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {xs.shape[1]}")
        vals = []
        for node in self.nodes:
            args = [xs if j == INPUT else vals[j] for j in node.inputs]
            p = node.prim
            if isinstance(p, Affine):
                out = args[0] @ p.A.T + p.b
            elif isinstance(p, Elementwise):
                out = p.fn(args[0])
            elif isinstance(p, Const):
                out = np.broadcast_to(p.value, (xs.shape[0], p.value.size)).copy()
            elif isinstance(p, Sum):
                out = sum(args[1:], args[0].copy())
            elif isinstance(p, Concat):
                out = np.concatenate(args, axis=1)
            else:
                raise TypeError(p)
            vals.append(out)
        return vals[-1][0] if single else vals[-1]

    # -- interval ranges --------------------------------------------------

    def interval_bounds_batch(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Output ranges for a batch of boxes, each (B, d) -> (B, q)."""
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        ranges = []
        for node in self.nodes:
            args = [(lo, hi) if j == INPUT else ranges[j] for j in node.inputs]
            p = node.prim
            if isinstance(p, Affine):
                l, u = _lin_range(args[0][0], args[0][1], p.A)
                out = (l + p.b, u + p.b)
            elif isinstance(p, Elementwise):
                out = p.value_range(*args[0])
            elif isinstance(p, Const):
                v = np.broadcast_to(p.value, (lo.shape[0], p.value.size))
                out = (v.copy(), v.copy())
            elif isinstance(p, Sum):
                out = (sum(a[0] for a in args), sum(a[1] for a in args))
            elif isinstance(p, Concat):
                out = (np.concatenate([a[0] for a in args], 1), np.concatenate([a[1] for a in args], 1))
            else:
                raise TypeError(p)
            ranges.append(out)
        return ranges[-1]

    def interval_bounds(self, region: Sequence[Interval]) -> list[Interval]:
        lo = np.array([[iv.lo for iv in region]])
        hi = np.array([[iv.hi for iv in region]])
        l, u = self.interval_bounds_batch(lo, hi)
        return [Interval(float(a), float(b)) for a, b in zip(l[0], u[0])]

    # -- slope intervals --------------------------------------------------

    def slopes(self, lo, hi, anchors, anchored: bool = True) -> SlopeBounds:
        """Secant-slope intervals of ``f`` on boxes ``[lo, hi]`` anchored at ``anchors``.

        All arrays are (B, d).  The anchor need not lie in its box.  With
        ``anchored=False`` the slopes hold for every pair of points in the box,
        not just pairs that include the anchor.
        """
        lo = np.atleast_2d(np.asarray(lo, float))
        hi = np.atleast_2d(np.asarray(hi, float))
        c = np.atleast_2d(np.asarray(anchors, float))
        lo, hi, c = np.broadcast_arrays(lo, hi, c)
        B, d = lo.shape
        dx_lo, dx_hi = lo - c, hi - c
        eye = np.broadcast_to(np.eye(d), (B, d, d))
        root = _Slope(c, lo, hi, eye, eye)
        states: list[_Slope] = []
        for node in self.nodes:
            args = [root if j == INPUT else states[j] for j in node.inputs]
            st = self._slope_node(node.prim, args, B, d, anchored)
            # Tighten the range with the slope form where that helps.
            sl, su = _imul(st.jl, st.ju, dx_lo[:, None, :], dx_hi[:, None, :])
            with np.errstate(invalid="ignore"):
                alt_lo = st.val + sl.sum(axis=2)
                alt_hi = st.val + su.sum(axis=2)
            new_lo = np.maximum(st.lo, np.where(np.isnan(alt_lo), -np.inf, alt_lo))
            new_hi = np.minimum(st.hi, np.where(np.isnan(alt_hi), np.inf, alt_hi))
            bad = new_lo > new_hi
            st.lo = np.where(bad, np.minimum(new_lo, new_hi), new_lo)
            st.hi = np.where(bad, np.maximum(new_lo, new_hi), new_hi)
            states.append(st)
        out = states[-1]
        return SlopeBounds(out.val, out.lo, out.hi, out.jl, out.ju)

    @staticmethod
    def _slope_node(p: Primitive, args: list, B: int, d: int, anchored: bool = True) -> _Slope:
        if isinstance(p, Affine):
            a = args[0]
            pos, neg = np.maximum(p.A, 0.0), np.minimum(p.A, 0.0)
            jl = np.einsum("qk,bkd->bqd", pos, a.jl) + np.einsum("qk,bkd->bqd", neg, a.ju)
            ju = np.einsum("qk,bkd->bqd", pos, a.ju) + np.einsum("qk,bkd->bqd", neg, a.jl)
            l, u = _lin_range(a.lo, a.hi, p.A)
            return _Slope(a.val @ p.A.T + p.b, l + p.b, u + p.b, jl, ju)
        if isinstance(p, Elementwise):
            a = args[0]
            yc, l, u = a.val, a.lo, a.hi
            fc = p.fn(yc)
            vl, vu = p.value_range(l, u)
            sl, su = p.deriv_range(np.minimum(l, yc), np.maximum(u, yc))
            sec = p.secant_range(yc, l, u) if anchored else None
            if sec is not None:
                sl, su = np.maximum(sl, sec[0]), np.minimum(su, sec[1])
                su = np.maximum(sl, su)
            # Anchor outside the input range: the secant quotient is bounded by
            # the output range divided by the (one-signed) input offset.
            below, above = yc < l, yc > u
            outside = below | above
            if anchored and np.any(outside):
                with np.errstate(divide="ignore", invalid="ignore"):
                    nl, nu = vl - fc, vu - fc
                    # for yc > u flip both numerator and denominator signs
                    num_l = np.where(above, -nu, nl)
                    num_u = np.where(above, -nl, nu)
                    den_l = np.where(above, yc - u, l - yc)
                    den_u = np.where(above, yc - l, u - yc)
                    q_lo = np.where(num_l < 0, num_l / den_l, num_l / den_u)
                    q_hi = np.where(num_u > 0, num_u / den_l, num_u / den_u)
                finite = outside & np.isfinite(num_l) & np.isfinite(num_u)
                q_lo = np.where(np.isnan(q_lo), 0.0, q_lo)
                q_hi = np.where(np.isnan(q_hi), 0.0, q_hi)
                sl = np.where(finite, np.maximum(sl, q_lo), sl)
                su = np.where(finite, np.minimum(su, q_hi), su)
                su = np.maximum(sl, su)
            jl, ju = _imul(sl[:, :, None], su[:, :, None], a.jl, a.ju)
            return _Slope(fc, vl, vu, jl, ju)
        if isinstance(p, Const):
            v = np.broadcast_to(p.value, (B, p.value.size)).copy()
            z = np.zeros((B, p.value.size, d))
            return _Slope(v, v.copy(), v.copy(), z, z.copy())
        if isinstance(p, Sum):
            return _Slope(
                sum(a.val for a in args),
                sum(a.lo for a in args),
                sum(a.hi for a in args),
                sum(a.jl for a in args),
                sum(a.ju for a in args),
            )
        if isinstance(p, Concat):
            cat = lambda attr, ax: np.concatenate([getattr(a, attr) for a in args], axis=ax)  # noqa: E731
            return _Slope(cat("val", 1), cat("lo", 1), cat("hi", 1), cat("jl", 1), cat("ju", 1))
        raise TypeError(p)

    # -- enclosures and Lipschitz ------------------------------------------

    def linear_enclosure(self, region: Sequence[Interval], anchor) -> "LinearEnclosure":
        return linear_enclosure(self, region, anchor)

    def global_slopes(self) -> tuple[np.ndarray, np.ndarray]:
        """Slope interval valid for every pair of points in R^d."""
        d = self.input_dim
        res = self.slopes(np.full((1, d), -np.inf), np.full((1, d), np.inf), np.zeros((1, d)), anchored=False)
        return res.jl[0], res.ju[0]

    def node_dims(self) -> tuple:
        return self._dims


# ---------------------------------------------------------------------------
# norms


def induced_norm(A, rho: int = 2, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Operator norm of ``A`` between L_rho spaces (rho in {1, 2})."""
    A = np.atleast_2d(np.asarray(A, float))
    if rho == 1:
        return float(np.max(np.sum(np.abs(A), axis=0)))
    if rho != 2:
        raise ValueError(f"rho must be 1 or 2, got {rho}")
    if not np.any(A):
        return 0.0
    if max(A.shape) <= 64:
        return float(np.linalg.norm(A, 2))
    # power iteration on A^T A for large matrices
    rng = np.random.Generator(np.random.Philox(0))
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = math.sqrt(nw)
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
    return sigma


def interval_matrix_norm(jl, ju, rho: int = 2) -> np.ndarray:
    """Upper bound on sup ||G|| over G in [jl, ju], batched over a leading axis."""
    jl = np.asarray(jl, float)
    ju = np.asarray(ju, float)
    single = jl.ndim == 2
    if single:
        jl, ju = jl[None], ju[None]
    mag = np.maximum(np.abs(jl), np.abs(ju))
    if rho == 1:
        out = mag.sum(axis=1).max(axis=1)
    elif rho == 2:
        B, q, d = mag.shape
        off = mag.copy()
        if q == d:
            off[:, np.arange(d), np.arange(d)] = 0.0
        if q == d and not np.any(off):
            out = mag[:, np.arange(d), np.arange(d)].max(axis=1)
        else:
            mid = 0.5 * (jl + ju)
            rad = 0.5 * (ju - jl)
            out = np.minimum(_spec(mag), _spec(mid) + _spec(rad))
    else:
        raise ValueError(f"rho must be 1 or 2, got {rho}")
    return out[0] if single else out


def _spec(M):
    if M.shape[1] == 1 or M.shape[2] == 1:
        return np.sqrt(np.sum(M * M, axis=(1, 2)))
    return np.linalg.norm(M, ord=2, axis=(1, 2))


def global_lipschitz(f: FunctionModel, rho: int = 2) -> float:
    """Sound Lipschitz constant: min of layer composition and global slope norm."""
    if rho not in (1, 2):
        raise ValueError(f"rho must be 1 or 2, got {rho}")
    lips = []
    for node in f.nodes:
        ins = [1.0 if j == INPUT else lips[j] for j in node.inputs]
        lips.append(node.prim.lipschitz(ins, rho))
    jl, ju = f.global_slopes()
    return float(min(lips[-1], interval_matrix_norm(jl, ju, rho)))


# ---------------------------------------------------------------------------
# linear enclosures


@dataclass(frozen=True)
class LinearEnclosure:
    """``lower_A (x - c) + lower_b <= f(x) - f(c) <= upper_A (x - c) + upper_b`` on ``region``."""

    lower_A: np.ndarray
    lower_b: np.ndarray
    upper_A: np.ndarray
    upper_b: np.ndarray
    anchor: np.ndarray
    f_anchor: np.ndarray
    region: tuple
    slope_lo: np.ndarray = field(repr=False)
    slope_hi: np.ndarray = field(repr=False)

    def bounds(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Bounds on f(x) (not f(x) - f(c)) for a batch of points."""
        dx = np.atleast_2d(x) - self.anchor
        return (
            self.f_anchor + dx @ self.lower_A.T + self.lower_b,
            self.f_anchor + dx @ self.upper_A.T + self.upper_b,
        )


def linear_enclosure(f: FunctionModel, region: Sequence[Interval], anchor) -> LinearEnclosure:
    """Linear bounds on ``f(x) - f(c)`` over a box, per output row.

    Each row takes the narrower of two sound forms: the mid-slope map with a
    radius correction, or a constant band from the output range.
    """
    lo = np.array([[iv.lo for iv in region]])
    hi = np.array([[iv.hi for iv in region]])
    if np.any(lo > hi):
        raise ValueError("empty region")
    c = np.atleast_2d(np.asarray(anchor, float))
    res = f.slopes(lo, hi, c)
    jl, ju, fc = res.jl[0], res.ju[0], res.value[0]
    mid = 0.5 * (jl + ju)
    rad = 0.5 * (ju - jl)
    reach = np.maximum(np.abs(lo[0] - c[0]), np.abs(hi[0] - c[0]))
    slack = _mul(rad, reach[None, :]).sum(axis=1)
    const_lo = res.lo[0] - fc
    const_hi = res.hi[0] - fc
    const_gap = const_hi - const_lo
    slope_gap = 2.0 * slack
    use_const = np.isfinite(const_gap) & ~(slope_gap < const_gap)
    q, d = mid.shape
    zeros = np.zeros((q, d))
    lower_A = np.where(use_const[:, None], zeros, mid)
    upper_A = lower_A.copy()
    lower_b = np.where(use_const, const_lo, -slack)
    upper_b = np.where(use_const, const_hi, slack)
    return LinearEnclosure(
        lower_A, lower_b, upper_A, upper_b, c[0], fc, tuple(region), jl, ju
    )


# ---------------------------------------------------------------------------
# benchmarks


def _dag(input_dim: int, spec: list, name: str) -> FunctionModel:
    return FunctionModel(input_dim, [Node(p, tuple(ins)) for p, ins in spec], name)


MOUNTAIN_CAR_M = np.array([[1.0, 0.0], [1.0, 1.0]])
QUADRUPLE_TANK_A = np.array(
    [[0.721, 0.0, 0.041, 0.0], [0.0, 0.718, 0.0, 0.033], [0.0, 0.0, 0.724, 0.0], [0.0, 0.0, 0.0, 0.737]]
)
NN_LAYER_DIAG = np.array([3.0, 1e-3, 5e-3, 7e-3, 3e-2, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3])
NN3D_A = np.diag([3.0, 1.5, 1.2])
NN3D_B = np.diag([0.5, 1.0, 0.9])
BOUNDED_LINEAR_A = np.array([[0.0, 0.4], [0.3, 0.8]])
# diagonal gains and clamp level of the dimension ladder
BOUNDED_LINEAR_LADDER = {
    1: ([3.0], 1.0),
    2: ([3.0, 1e-3], 2.0),
    3: ([3.0, 1e-3, 1.1], 2.0),
    4: ([3.0, 1e-3, 1.1, 2.2], 2.0),
}


def builtin(name: str, params: dict | None = None) -> FunctionModel:
    """Benchmark maps by name.

    ``bounded_linear`` takes ``{"d": 1..4}`` for the diagonal dimension ladder
    (default: the 2-D coupled matrix).  ``nn_layer`` takes
    ``{"variant": "3d"}`` for the 3-D state/noise layer ``sigmoid(Ax + Bw)``.
    """
    params = dict(params or {})
    if name == "sigmoid":
        return FunctionModel.chain(1, Sigmoid(), name=name)
    if name == "bounded_linear":
        if "d" in params:
            gains, level = BOUNDED_LINEAR_LADDER[int(params["d"])]
            A = np.diag(gains)
        else:
            A = np.asarray(params.get("A", BOUNDED_LINEAR_A), float)
            level = float(params.get("level", 2.0))
        n = A.shape[0]
        return FunctionModel.chain(A.shape[1], Affine(A), Clamp([-level] * n, [level] * n), name=name)
    if name == "quadruple_tank":
        return FunctionModel.chain(4, Affine(QUADRUPLE_TANK_A), name=name)
    if name == "nn_layer":
        if params.get("variant") == "3d":
            return FunctionModel.chain(6, Affine(np.hstack([NN3D_A, NN3D_B])), Sigmoid(), name="nn_layer_3d")
        return FunctionModel.chain(10, Scale(NN_LAYER_DIAG), Sigmoid(), name=name)
    if name == "mountain_car":
        spec = [
            (Affine(MOUNTAIN_CAR_M, [1e-3, 0.0]), [INPUT]),
            (Clamp([-0.5, -0.5], [1.2, 1.2]), [0]),
            (Affine([[0.0, 3.0]]), [INPUT]),
            (Cos(), [2]),
            (Affine([[-2.5e-3], [0.0]]), [3]),
            (Sum(), [1, 4]),
        ]
        return _dag(2, spec, name)
    if name == "dubins_car":
        spec = [
            (Affine(np.eye(3), [0.0, 0.0, 0.6]), [INPUT]),
            (Select([2], 3), [INPUT]),
            (Sin(), [1]),
            (Affine([[1.5], [0.0], [0.0]]), [2]),
            (Cos(), [1]),
            (Affine([[0.0], [1.5], [0.0]]), [4]),
            (Sum(), [0, 3, 5]),
        ]
        return _dag(3, spec, name)
    raise ValueError(f"unknown builtin {name!r}")


BUILTINS = ("sigmoid", "bounded_linear", "quadruple_tank", "nn_layer", "mountain_car", "dubins_car")


def with_additive_noise(g: FunctionModel) -> FunctionModel:
    """Joint map ``(x, w) -> g(x) + w`` over R^(d + d)."""
    d = g.input_dim
    if g.output_dim != d:
        raise ValueError("additive noise needs a map R^d -> R^d")
    nodes = [Node(Select(range(d), 2 * d), (INPUT,))]
    offset = 1
    for node in g.nodes:
        ins = tuple(0 if j == INPUT else j + offset for j in node.inputs)
        nodes.append(Node(node.prim, ins))
    out = len(nodes) - 1
    nodes.append(Node(Select(range(d, 2 * d), 2 * d), (INPUT,)))
    nodes.append(Node(Sum(), (out, len(nodes) - 1)))
    return FunctionModel(2 * d, nodes, f"{g.name}+noise")


def load(path) -> FunctionModel:
    with open(path) as fh:
        return FunctionModel.from_dict(json.load(fh))


def dump(f: FunctionModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(f.to_dict(), fh, indent=1)
