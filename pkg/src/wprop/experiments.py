"""Desk-scale experiment runners: tables, figure data, soundness checks.

Every runner returns an :class:`ExperimentResult`; ``write_result`` turns it
into one CSV per table (6 significant digits) plus a JSON sidecar holding the
full-precision rows, the config and the outcome of each embedded assertion.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bounds import bound_thm4, bound_thm6, lipschitz_report
from .dynamics import (
    PropagationConfig,
    builtin_system,
    empirical_errors,
    propagate_horizon,
    simulate,
    static_distribution,
    system_from_dict,
)
from .funcmodel import FunctionModel, builtin
from .measures import DiscreteDistribution, ProductDistribution
from .measures import from_dict as dist_from_dict
from .quantize import apply, equispaced_grid, optimized_grid
from .validate import mc_lower_bound, mc_wasserstein

EXPERIMENTS = ("table1", "fig3", "fig4", "fig5", "table2", "fig6", "custom")
BENCHMARKS = ("sigmoid", "bounded_linear", "quadruple_tank", "nn_layer", "mountain_car", "dubins_car")

# Gaussian inputs of the bounded-linear dimension ladder (means, variances)
TABLE1_INPUTS = {
    1: ([0.0], [1.0]),
    2: ([3.0, 1.0], [0.02, 0.5]),
    3: ([3.0, 1.0, -0.9], [0.02, 0.5, 0.001]),
    4: ([3.0, 1.0, -0.9, 0.4], [0.02, 0.5, 0.001, 0.2]),
}

_DEFAULTS = {
    "table1": {"budgets": [5, 10, 100, 1000], "dims": [1, 2, 3, 4]},
    "fig3": {"budgets": [2, 5, 10, 20, 50, 100]},
    "fig4": {"budgets": [10, 100, 1000], "thetas": [0.0, 0.1]},
    "fig5": {"budgets": [100], "thetas": [0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0]},
    "table2": {
        "systems": ["nn_layer_3d", "mountain_car", "quadruple_tank"],
        "horizon": 50,
        "times": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 50],
    },
    "fig6": {"systems": ["mountain_car"], "horizon": 10},
    "custom": {"budgets": [10, 100], "thetas": [0.0]},
}


@dataclass
class ExperimentConfig:
    id: str
    seed: int = 0
    rho: int = 2
    budgets: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    dims: list = field(default_factory=list)
    benchmarks: list = field(default_factory=lambda: list(BENCHMARKS))
    systems: list = field(default_factory=list)
    horizon: int | None = None
    times: list = field(default_factory=list)
    state_budget: int = 100
    noise_budget: int = 25
    epsilon: float = math.inf
    mc_samples: int = 5000  # trajectories / pushforward samples
    mc_subsample: int = 2000  # points per transport solve against large supports
    mc_repeats: int = 5
    check_samples: int = 2000
    check_repeats: int = 3
    models: list = field(default_factory=list)  # custom: [{"name", "model", "dist"}]
    system: dict | None = None  # custom: system description for a propagation run

    def __post_init__(self):
        if self.id not in EXPERIMENTS:
            raise ValueError(f"unknown experiment id {self.id!r}; expected one of {EXPERIMENTS}")
        for key, val in _DEFAULTS[self.id].items():
            if getattr(self, key) in (None, []):
                setattr(self, key, list(val) if isinstance(val, list) else val)
        if self.horizon is None:
            self.horizon = 1
        if any(b < 1 for b in self.budgets) or list(self.budgets) != sorted(set(self.budgets)):
            raise ValueError("budgets must be positive and strictly ascending")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if any(t < 0 for t in self.thetas):
            raise ValueError("thetas must be non-negative")
        if not self.times:
            self.times = list(range(1, self.horizon + 1))
        if max(self.times) > self.horizon:
            raise ValueError("times beyond the horizon")

    @classmethod
    def from_dict(cls, d: dict, id: str | None = None) -> "ExperimentConfig":
        d = dict(d)
        if id is not None:
            d["id"] = id
        known = cls.__dataclass_fields__
        extra = set(d) - set(known)
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        if "epsilon" in d:
            d["epsilon"] = float(d["epsilon"])
        return cls(**d)


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    tables: dict = field(default_factory=dict)  # stem -> (columns, rows)
    assertions: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.assertions.append(Assertion(name, bool(ok), detail))


# -- output -----------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_result(res: ExperimentResult, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for stem, (columns, rows) in res.tables.items():
        path = out / f"{stem}.csv"
        path.write_text(csv_text(columns, rows))
        paths.append(path)
    side = {
        "experiment": res.config.id,
        "config": _jsonable(asdict(res.config)),
        "passed": res.passed,
        "assertions": [asdict(a) for a in res.assertions],
        "summary": _jsonable(res.summary),
        "tables": {stem: {"columns": cols, "rows": _jsonable(rows)} for stem, (cols, rows) in res.tables.items()},
    }
    path = out / f"{res.config.id}.json"
    path.write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")
    paths.append(path)
    return paths


# -- shared pieces ----------------------------------------------------------


@dataclass(frozen=True)
class Pushforward:
    """Samplable image measure f#p."""

    f: FunctionModel
    p: object

    def sample(self, n: int, seed: int) -> np.ndarray:
        return self.f(self.p.sample(n, seed))


def pushforward_check(f: FunctionModel, p, q, n: int, repeats: int, rho: int = 2, seed: int = 0):
    """Sampled W_rho(f#p, f#(q#p)) as (estimate, stderr), fresh samples per repeat."""
    atoms = apply(q, p)
    target = DiscreteDistribution(f(atoms.locations), atoms.weights)
    return mc_wasserstein(Pushforward(f, p), target, n=n, repeats=repeats, rho=rho, seed=seed)


def pushforward_lower(f: FunctionModel, p, q, n: int, repeats: int, rho: int = 2, seed: int = 0):
    """Conservative sampled estimate of W_rho(f#p, f#(q#p))**rho as (mean, stderr)."""
    atoms = apply(q, p)
    target = DiscreteDistribution(f(atoms.locations), atoms.weights)
    return mc_lower_bound(Pushforward(f, p), target, n=n, repeats=repeats, rho=rho, seed=seed)


def benchmark(name: str) -> tuple[FunctionModel, ProductDistribution]:
    return builtin(name), static_distribution(name)


def _sound(res: ExperimentResult, label: str, est: float, se: float, bound: float) -> None:
    res.check(f"sound {label}", est <= bound + 3 * se, f"mc {est:.6g} +- {se:.3g} vs bound {bound:.6g}")


def _sound_lower(res: ExperimentResult, label: str, low: float, se: float, bound: float, rho: int) -> None:
    # low estimates a lower bound on W**rho; compare in cost units
    res.check(f"sound {label}", low <= bound**rho + 3 * se, f"dual {low:.6g} +- {se:.3g} vs bound**rho {bound**rho:.6g}")


# -- runners ----------------------------------------------------------------


def run_table1(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg)
    rows = []
    for d in cfg.dims:
        f = builtin("bounded_linear", {"d": d})
        p = ProductDistribution.gaussian(*TABLE1_INPUTS[d])
        for N in cfg.budgets:
            q = optimized_grid(p, N)
            qu = equispaced_grid(q)
            ro, ru = bound_thm6(q, p, f, cfg.rho), bound_thm6(qu, p, f, cfg.rho)
            counts = "x".join(str(len(b) - 1) for b in q.partition.breakpoints)
            rows.append(
                {
                    "d": d,
                    "N": N,
                    "counts": counts,
                    "optimized": ro.value,
                    "uniform": ru.value,
                    "theta_d_optimized": ro.theta_d,
                    "theta_d_uniform": ru.theta_d,
                    "alpha_max_optimized": ro.alpha_max,
                    "beta_sum_optimized": ro.beta_sum,
                    "slope_sum_optimized": ro.slope_sum,
                    "alpha_max_uniform": ru.alpha_max,
                    "beta_sum_uniform": ru.beta_sum,
                    "slope_sum_uniform": ru.slope_sum,
                }
            )
            for tag, qq, r in (("optimized", q, ro), ("uniform", qu, ru)):
                low, se = pushforward_lower(f, p, qq, cfg.check_samples, cfg.check_repeats, cfg.rho, cfg.seed + N)
                _sound_lower(res, f"d={d} N={N} {tag}", low, se, r.value, cfg.rho)
    cols = list(rows[0])
    res.tables["table1"] = (cols, rows)
    return res


def run_fig3(cfg: ExperimentConfig) -> ExperimentResult:
    """Sigmoid example: per-cell bound and sampled error vs number of locations."""
    res = ExperimentResult(cfg)
    f, p = benchmark("sigmoid")
    rows = []
    for N in cfg.budgets:
        q = optimized_grid(p, N)
        r = bound_thm6(q, p, f, cfg.rho)
        est, se = pushforward_check(f, p, q, cfg.mc_samples, cfg.mc_repeats, cfg.rho, cfg.seed + N)
        low, lse = pushforward_lower(f, p, q, cfg.check_samples, cfg.check_repeats, cfg.rho, cfg.seed + N)
        lip = lipschitz_report(q, p, 0.0, f, cfg.rho).value
        rows.append(
            {
                "N": N,
                "thm6": r.value,
                "lipschitz": lip,
                "mc_estimate": est,
                "mc_stderr": se,
                "mc_lower_cost": low,
                "mc_lower_stderr": lse,
                "theta_d": r.theta_d,
                "alpha_max": r.alpha_max,
                "beta_sum": r.beta_sum,
                "slope_sum": r.slope_sum,
                "n_beta": int(r.uses_beta.sum()),
            }
        )
        _sound_lower(res, f"sigmoid N={N}", low, lse, r.value, cfg.rho)
    res.tables["fig3"] = (list(rows[0]), rows)
    return res


def _static_models(cfg: ExperimentConfig):
    if cfg.id == "custom":
        for m in cfg.models:
            yield m.get("name", "custom"), FunctionModel.from_dict(m["model"]), dist_from_dict(m["dist"])
    else:
        for name in cfg.benchmarks:
            yield (name, *benchmark(name))


def run_fig4(cfg: ExperimentConfig) -> ExperimentResult:
    """Bound vs number of locations at each radius (per-cell bound at zero radius)."""
    res = ExperimentResult(cfg)
    rows = []
    for name, f, p in _static_models(cfg):
        for N in cfg.budgets:
            q = optimized_grid(p, N)
            for theta in cfg.thetas:
                r = bound_thm6(q, p, f, cfg.rho) if theta == 0 else bound_thm4(q, p, theta, f, cfg.rho)
                row = {
                    "benchmark": name,
                    "N": N,
                    "theta": theta,
                    "bound": r.value,
                    "method": r.method,
                    "theta_d": r.theta_d,
                    "alpha_max": r.alpha_max,
                    "beta_sum": r.beta_sum,
                    "slope_sum": r.slope_sum,
                    "mc_lower_cost": math.nan,
                    "mc_lower_stderr": math.nan,
                }
                if theta == 0:
                    low, se = pushforward_lower(f, p, q, cfg.check_samples, cfg.check_repeats, cfg.rho, cfg.seed + N)
                    row["mc_lower_cost"], row["mc_lower_stderr"] = low, se
                    _sound_lower(res, f"{name} N={N}", low, se, r.value, cfg.rho)
                rows.append(row)
    res.tables[cfg.id if cfg.id != "custom" else "custom_bounds"] = (list(rows[0]), rows)
    return res


def run_fig5(cfg: ExperimentConfig) -> ExperimentResult:
    """Bound vs ball radius, optimized coefficients against Lipschitz ones."""
    res = ExperimentResult(cfg)
    rows = []
    for name, f, p in _static_models(cfg):
        for N in cfg.budgets:
            q = optimized_grid(p, N)
            for theta in cfg.thetas:
                r = bound_thm6(q, p, f, cfg.rho) if theta == 0 else bound_thm4(q, p, theta, f, cfg.rho)
                lip = lipschitz_report(q, p, theta, f, cfg.rho)
                gap = lip.value - r.value
                rows.append(
                    {
                        "benchmark": name,
                        "N": N,
                        "theta": theta,
                        "optimized": r.value,
                        "lipschitz": lip.value,
                        "gap": gap,
                        "theta_d": r.theta_d,
                        "alpha_max": r.alpha_max,
                        "beta_sum": r.beta_sum,
                        "slope_sum": r.slope_sum,
                        "lipschitz_constant": lip.lipschitz,
                    }
                )
                res.check(f"gap {name} N={N} theta={theta}", gap >= -1e-12 * max(1.0, lip.value), f"gap {gap:.3g}")
    res.tables["fig5"] = (list(rows[0]), rows)
    return res


def _propagation_rows(cfg, sys, res, label):
    pcfg = PropagationConfig(
        state_budget=cfg.state_budget, noise_budget=cfg.noise_budget, rho=cfg.rho, epsilon=cfg.epsilon, seed=cfg.seed
    )
    trace, dists = propagate_horizon(sys, cfg.horizon, cfg.epsilon, pcfg)
    emp = empirical_errors(sys, dists, cfg.times, cfg.mc_samples, cfg.mc_repeats, cfg.rho, cfg.seed, cfg.mc_subsample)
    rows = []
    for t in cfg.times:
        est, se = emp[t]
        rows.append(
            {
                "system": label,
                "t": t,
                "emp": est,
                "emp_stderr": se,
                "rmk1": trace.lipschitz[t],
                "thm4": trace.theta[t],
                "theta_d": trace.theta_d[t - 1],
                "alpha_max": trace.alpha_max[t - 1],
                "beta_sum": trace.beta_sum[t - 1],
                "slope_sum": trace.slope_sum[t - 1],
                "noise_part": trace.noise_part[t - 1],
                "support": trace.support[t - 1],
            }
        )
        _sound(res, f"{label} t={t}", est, se, trace.theta[t])
    res.check(f"{label} finite", not trace.diverged, "certified trace stayed finite")
    return rows, trace, dists


def run_table2(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg)
    rows = []
    for name in cfg.systems:
        r, trace, _ = _propagation_rows(cfg, builtin_system(name), res, name)
        rows += r
        res.summary[name] = {"theta": trace.theta, "lipschitz": trace.lipschitz}
    res.tables["table2"] = (list(rows[0]), rows)
    return res


def bimodal_split(points, weights=None, coord: int = 0, min_mass: float = 0.1):
    """Weighted two-means split of one coordinate, each side >= ``min_mass``.

    The cut maximises the between-cluster variance (exact in 1-D).  Returns a
    dict with the cut, the distance between the cluster means, both masses and
    both means, or None when no admissible cut exists.
    """
    x = np.asarray(points, float)[:, coord]
    w = np.full(x.size, 1.0 / x.size) if weights is None else np.asarray(weights, float) / np.sum(weights)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    left = np.cumsum(w)[:-1]
    first = np.cumsum(w * x)[:-1]
    total = float(w @ x)
    distinct = np.diff(x) > 0
    ok = (left >= min_mass) & (1 - left >= min_mass) & distinct
    if not ok.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        ml = first / left
        mr = (total - first) / (1 - left)
        score = np.where(ok, left * (1 - left) * (mr - ml) ** 2, -np.inf)
    k = int(np.argmax(score))
    return {
        "separation": float(mr[k] - ml[k]),
        "cut": float(0.5 * (x[k] + x[k + 1])),
        "left_mass": float(left[k]),
        "right_mass": float(1 - left[k]),
        "left_mean": float(ml[k]),
        "right_mean": float(mr[k]),
    }


def cluster_masses(points, weights, cut: float, coord: int = 0):
    x = np.asarray(points, float)[:, coord]
    w = np.asarray(weights, float)
    lo = x < cut
    return {
        "left_mass": float(w[lo].sum()),
        "right_mass": float(w[~lo].sum()),
        "left_mean": float(w[lo] @ x[lo] / max(w[lo].sum(), 1e-300)),
        "right_mean": float(w[~lo] @ x[~lo] / max(w[~lo].sum(), 1e-300)),
    }


def run_fig6(cfg: ExperimentConfig) -> ExperimentResult:
    """Atom and sample dumps for the multi-step Mountain Car picture."""
    res = ExperimentResult(cfg)
    name = cfg.systems[0]
    sys = builtin_system(name)
    pcfg = PropagationConfig(cfg.state_budget, cfg.noise_budget, cfg.rho, cfg.epsilon, seed=cfg.seed)
    trace, dists = propagate_horizon(sys, cfg.horizon, cfg.epsilon, pcfg)
    paths = simulate(sys, cfg.mc_samples, cfg.horizon, cfg.seed)
    d = sys.state_dim
    atom_rows, sample_rows = [], []
    for t in range(1, cfg.horizon + 1):
        for loc, w in zip(dists[t].locations, dists[t].weights):
            atom_rows.append({"t": t, **{f"x{m + 1}": loc[m] for m in range(d)}, "weight": w})
        for x in paths[t]:
            sample_rows.append({"t": t, **{f"x{m + 1}": x[m] for m in range(d)}})
    T = cfg.horizon
    final = dists[T]
    # the two modes separate in velocity, the second state coordinate
    split = bimodal_split(final.locations, final.weights, coord=1)
    res.summary["atoms"] = split
    if split is not None:
        res.summary["samples"] = cluster_masses(paths[T], np.full(len(paths[T]), 1.0 / len(paths[T])), split["cut"], coord=1)
    res.summary["theta"] = trace.theta
    est, se = empirical_errors(sys, dists, [T], cfg.mc_samples, cfg.mc_repeats, cfg.rho, cfg.seed, cfg.mc_subsample)[T]
    res.summary["emp_final"] = [est, se]
    _sound(res, f"{name} t={T}", est, se, trace.theta[T])
    cols = ["t", *[f"x{m + 1}" for m in range(d)]]
    res.tables["fig6_atoms"] = (cols + ["weight"], atom_rows)
    res.tables["fig6_samples"] = (cols, sample_rows)
    return res


def run_custom(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.system is not None:
        res = ExperimentResult(cfg)
        sys = system_from_dict(cfg.system)
        rows, trace, _ = _propagation_rows(cfg, sys, res, sys.name)
        res.tables["custom_trace"] = (list(rows[0]), rows)
        return res
    if not cfg.models:
        raise ValueError("custom experiment needs 'models' or 'system'")
    return run_fig4(cfg)


RUNNERS = {
    "table1": run_table1,
    "fig3": run_fig3,
    "fig4": run_fig4,
    "fig5": run_fig5,
    "table2": run_table2,
    "fig6": run_fig6,
    "custom": run_custom,
}


def run(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.id](cfg)
