"""Command line entry point: ``wprop <command> ...``."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

from . import __version__
from . import funcmodel, measures, quantize
from .bounds import bound_thm4, bound_thm6, lipschitz_report
from .dynamics import BudgetExceeded, PropagationConfig, empirical_errors, load_system, propagate_horizon
from .experiments import EXPERIMENTS, ExperimentConfig, csv_text, run, write_result
from .validate import mc_wasserstein


def _cmd_quantize(args) -> int:
    p = measures.load(args.dist)
    if not isinstance(p, measures.ProductDistribution):
        raise SystemExit("quantize needs a product distribution")
    q = quantize.optimized_grid(p, args.budget)
    quantize.dump(q, args.out)
    print(repr(quantize.theta_d(q, p, args.rho)))
    return 0


def _cmd_bound(args) -> int:
    f = funcmodel.load(args.f)
    p = measures.load(args.dist)
    q = quantize.load(args.quant)
    if args.method == "lipschitz":
        rep = lipschitz_report(q, p, args.theta, f, args.rho)
    elif args.method == "thm6":
        if args.theta != 0:
            raise SystemExit("thm6 bounds the zero-radius case; use --method thm4 for theta > 0")
        rep = bound_thm6(q, p, f, args.rho)
    else:
        rep = bound_thm4(q, p, args.theta, f, args.rho)
    json.dump(rep.to_dict(), sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


def _cmd_propagate(args) -> int:
    sys_ = load_system(args.system)
    eps = None if args.epsilon is None else float(args.epsilon)
    cfg = PropagationConfig(
        state_budget=args.state_budget, noise_budget=args.noise_budget, rho=args.rho, epsilon=eps, seed=args.seed
    )
    try:
        trace, dists = propagate_horizon(sys_, args.horizon, eps, cfg)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = list(trace.rows())
    cols = ["t", "theta_t", "theta_d_t", "support", "seconds"]
    if args.mc:
        t0 = time.perf_counter()
        emp = empirical_errors(sys_, dists, range(1, args.horizon + 1), args.mc, args.mc_repeats, args.rho, args.seed, args.mc_subsample)
        for row in rows:
            row["mc_estimate"], row["mc_stderr"] = emp.get(row["t"], (math.nan, math.nan))
        cols[4:4] = ["mc_estimate", "mc_stderr"]
        print(f"mc estimates took {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    text = csv_text(cols, rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.dump_dists:
        out = Path(args.dump_dists)
        out.mkdir(parents=True, exist_ok=True)
        for t, d in enumerate(dists):
            measures.dump(d, out / f"t{t:03d}.json")
    if trace.diverged:
        print("warning: certified bound diverged", file=sys.stderr)
    return 0


def _cmd_validate(args) -> int:
    p = measures.load(args.p)
    q = measures.load(args.q)
    est, se = mc_wasserstein(p, q, n=args.n, repeats=args.repeats, rho=args.rho, seed=args.seed)
    print(json.dumps({"estimate": est, "stderr": se}))
    return 0


def _cmd_experiment(args) -> int:
    raw = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
    cfg = ExperimentConfig.from_dict(raw, id=args.id)
    res = run(cfg)
    for path in write_result(res, args.out_dir):
        print(path)
    for a in res.assertions:
        if not a.passed:
            print(f"FAILED {a.name}: {a.detail}", file=sys.stderr)
    print(f"{sum(a.passed for a in res.assertions)}/{len(res.assertions)} assertions passed", file=sys.stderr)
    return 0 if res.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wprop", description="Discrete Wasserstein uncertainty propagation.")
    ap.add_argument("--version", action="version", version=f"wprop {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="optimized grid quantizer; prints its quantization error")
    q.add_argument("--dist", required=True)
    q.add_argument("--budget", type=int, required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--rho", type=int, default=2, choices=(1, 2))
    q.set_defaults(func=_cmd_quantize)

    b = sub.add_parser("bound", help="Wasserstein bound for a pushforward; JSON report on stdout")
    b.add_argument("--f", required=True)
    b.add_argument("--dist", required=True)
    b.add_argument("--quant", required=True)
    b.add_argument("--theta", type=float, default=0.0)
    b.add_argument("--rho", type=int, default=2, choices=(1, 2))
    b.add_argument("--method", choices=("thm4", "thm6", "lipschitz"), default="thm4")
    b.set_defaults(func=_cmd_bound)

    pr = sub.add_parser("propagate", help="multi-step propagation of a stochastic system")
    pr.add_argument("--system", required=True)
    pr.add_argument("--horizon", type=int, required=True)
    pr.add_argument("--epsilon", default=None, help="per-step quantization target ('inf' disables growth)")
    pr.add_argument("--out")
    pr.add_argument("--dump-dists")
    pr.add_argument("--state-budget", type=int, default=100)
    pr.add_argument("--noise-budget", type=int, default=25)
    pr.add_argument("--rho", type=int, default=2, choices=(1, 2))
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--mc", type=int, default=0, help="trajectories for sampled errors (0: skip)")
    pr.add_argument("--mc-repeats", type=int, default=5)
    pr.add_argument("--mc-subsample", type=int, default=2000)
    pr.set_defaults(func=_cmd_propagate)

    v = sub.add_parser("validate", help="sampled Wasserstein distance between two distributions")
    v.add_argument("--p", required=True)
    v.add_argument("--q", required=True)
    v.add_argument("--n", type=int, default=2000)
    v.add_argument("--repeats", type=int, default=10)
    v.add_argument("--rho", type=int, default=2, choices=(1, 2))
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_cmd_validate)

    e = sub.add_parser("experiment", help="reproduce a table or figure's data")
    e.add_argument("--id", required=True, choices=EXPERIMENTS)
    e.add_argument("--config")
    e.add_argument("--out-dir", default="results")
    e.set_defaults(func=_cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
