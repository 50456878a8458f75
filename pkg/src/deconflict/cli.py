"""Command-line front end: ``deconflict gen | solve | bench | verify | plot``.

Angles on the command line are in degrees; everything below the CLI works in radians.
Exit codes: 0 success, 2 bad arguments or unreadable files, 3 infeasible, 4 time limit,
5 audit failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .controls import ControlSpec, UncertaintySpec
from .errors import DeconflictError, SchemaError, UnauditedResult
from .instances import CPConfig, gen_cp, load_instance, regenerate_from_manifest, \
    save_instance, write_rcp_batch
from .model import build_deterministic, build_robust

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_TIMEOUT, EXIT_AUDIT = 0, 2, 3, 4, 5

log = logging.getLogger("deconflict")


class UsageError(Exception):
    """Bad argument value; reported with exit code 2."""


def _sizes(text: str) -> list[int]:
    """``7``, ``4..10`` or ``4,6,8``."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N, A..B or A,B,C, got {text!r}") from None
    if not out or min(out) < 2:
        raise argparse.ArgumentTypeError("sizes must be >= 2")
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _control(args) -> ControlSpec:
    try:
        return ControlSpec(q_lo=args.q_lo, q_hi=args.q_hi, th_lo=math.radians(args.heading_lo_deg),
                           th_hi=math.radians(args.heading_hi_deg), w=args.w)
    except ValueError as exc:
        raise UsageError(f"--q-lo/--q-hi/--heading-*-deg/--w: {exc}") from None


def _uncertainty(args) -> UncertaintySpec:
    try:
        return UncertaintySpec.uniform(args.eps, args.gamma)
    except ValueError as exc:
        raise UsageError(f"--gamma/--eps: {exc}") from None


def _add_control_flags(p):
    p.add_argument("--w", type=float, default=0.5, help="speed/heading weight in (0, 1)")
    p.add_argument("--q-lo", type=float, default=0.94, help="lowest speed ratio")
    p.add_argument("--q-hi", type=float, default=1.03, help="highest speed ratio")
    p.add_argument("--heading-lo-deg", type=float, default=-30.0, help="lowest heading change (degrees)")
    p.add_argument("--heading-hi-deg", type=float, default=30.0, help="highest heading change (degrees)")


def _add_uncertainty_flags(p):
    p.add_argument("--gamma", type=float, default=0.0, help="budget of uncertainty in [0, 4]")
    p.add_argument("--eps", type=float, default=0.0, help="maximum relative velocity perturbation")


def _solve_params(args):
    from .solver import SolveParams
    try:
        return SolveParams(rel_gap=args.gap, time_limit=args.time_limit, certify=args.certify)
    except ValueError as exc:
        raise UsageError(f"--gap/--time-limit: {exc}") from None


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.family == "cp":
        for n in args.n:
            path = save_instance(gen_cp(CPConfig(n, radius=args.radius)), out / f"CP-{n}.json")
            print(path)
        return EXIT_OK
    if args.manifest:
        for inst in regenerate_from_manifest(args.manifest):
            print(save_instance(inst, out / f"{inst.id}.json"))
        return EXIT_OK
    if len(args.n) != 1:
        raise UsageError("--n: rcp generation takes a single size")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    mpath = write_rcp_batch(out, args.n[0], args.count, args.seed_base, radius=args.radius,
                            placement=args.placement)
    print(mpath)
    return EXIT_OK


# ---------------------------------------------------------------- solve

def cmd_solve(args) -> int:
    from .solver import save_solution, solve
    from .verification import verify_deterministic, verify_robust

    inst = load_instance(args.instance)
    c = _control(args)
    u = _uncertainty(args)
    params = _solve_params(args)
    robust = u.gamma > 0 and not u.is_zero(inst.n)
    ir = build_robust(inst, c, u) if robust else build_deterministic(inst, c)
    sol, rep = solve(ir, params)
    result = {"instance": inst.id, "status": rep.status, "ub": rep.ub if math.isfinite(rep.ub) else None,
              "gap": rep.gap if math.isfinite(rep.gap) else None, "time_sec": rep.time_sec,
              "nodes": rep.nodes, "n_cut_rounds": rep.n_cut_rounds}
    passed = True
    if sol.has_point:
        det = verify_deterministic(inst, sol)
        result["audit_deterministic"] = det.to_dict()
        passed = det.passed
        if robust:
            rob = verify_robust(inst, sol, u)
            result["audit_robust"] = rob.to_dict()
            passed = passed and rob.passed
    out = Path(args.out) if args.out else Path(f"{inst.id}.solution.json")
    save_solution(out, sol, rep, ir)
    result["solution_file"] = str(out)
    print(json.dumps(result, indent=2))
    if rep.status == "Infeasible":
        return EXIT_INFEASIBLE
    if rep.status == "TimeOut" and not sol.has_point:
        return EXIT_TIMEOUT
    if not passed:
        return EXIT_AUDIT
    return EXIT_TIMEOUT if rep.status == "TimeOut" else EXIT_OK


# ---------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    from .bench import BenchConfig, run_bench
    from .solver import SolveParams
    if args.config:
        cfg = BenchConfig.load(args.config)
        if args.out:
            cfg = BenchConfig.from_dict({**cfg.to_dict(), "out_dir": args.out})
    else:
        try:
            cfg = BenchConfig(cp_sizes=tuple(args.cp or ()), rcp_sizes=tuple(args.rcp or ()),
                              rcp_count=args.count, rcp_seed_base=args.seed_base,
                              control=_control(args), gammas=tuple(args.gammas),
                              eps_list=tuple(args.eps_list),
                              params=SolveParams(rel_gap=args.gap, time_limit=args.time_limit,
                                                 certify=args.certify),
                              out_dir=args.out or "bench-out")
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    res, summ = run_bench(cfg, threads=args.threads)
    print(res)
    print(summ)
    return EXIT_OK


# ---------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    from .verification import monte_carlo, verify_deterministic, verify_robust, write_monte_carlo_csv

    inst = load_instance(args.instance)
    sol = _load_solution(args.solution, inst.n)
    u = _uncertainty(args)
    det = verify_deterministic(inst, sol, tol=args.tol)
    out = {"deterministic": det.to_dict()}
    passed = det.passed
    if u.gamma > 0 and not u.is_zero(inst.n):
        rob = verify_robust(inst, sol, u, tol=args.tol)
        out["robust"] = rob.to_dict()
        passed = passed and rob.passed
    if args.samples:
        mc = monte_carlo(inst, sol, u, samples=args.samples, seed=args.seed, tol=args.tol)
        out["monte_carlo"] = {"seed": mc.seed, "samples": mc.samples, "rate": mc.rate,
                              "violations": mc.violations}
        if args.mc_csv:
            write_monte_carlo_csv(args.mc_csv, [mc])
    out["passed"] = passed
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if passed else EXIT_AUDIT


def _load_solution(path, n: int):
    from .solver import load_solution
    try:
        sol = load_solution(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"unreadable solution file {path}: {exc}") from None
    if not sol.has_point:
        raise UsageError(f"--solution: {path} holds no solution (status {sol.status})")
    if len(sol.controls) != n:
        raise UsageError(f"--solution: {len(sol.controls)} aircraft, instance has {n}")
    return sol


# ---------------------------------------------------------------- plot

def cmd_plot(args) -> int:
    from . import plots
    from .verification import verify_deterministic, verify_robust

    if args.kind == "trajectories":
        inst = load_instance(_need(args, "instance"))
        overlays = []
        if args.det:
            sol = _load_solution(args.det, inst.n)
            overlays.append(plots.Overlay("deterministic", sol.controls,
                                          verify_deterministic(inst, sol), "deterministic"))
        if args.robust:
            sol = _load_solution(args.robust, inst.n)
            u = _uncertainty(args)
            det = verify_deterministic(inst, sol)
            rob = verify_robust(inst, sol, u)
            rep = rob if det.passed else det
            overlays.append(plots.Overlay("robust", sol.controls, rep, f"robust G={u.gamma:g}"))
        info = plots.plot_trajectories(inst, overlays, args.out)
    elif args.kind == "strip":
        info = _plot_strip(args)
    elif args.kind == "hist":
        files = _need(args, "instances")
        vals = []
        for f in files:
            vals += plots.pairwise_dmin(load_instance(f))
        info = plots.plot_dmin_histogram(vals, args.out)
    else:
        from .bench import family_size, read_results
        rows = [r for r in read_results(_need(args, "results"))
                if (args.gamma_filter is None or r.gamma == args.gamma_filter)
                and (args.eps_filter is None or r.eps_bar == args.eps_filter)
                and (args.family is None or family_size(r.instance_id)[0] == args.family)
                and (args.size is None or family_size(r.instance_id)[1] == args.size)]
        if not rows:
            raise UsageError("--results: no rows match the filters")
        info = plots.plot_feasibility_scatter(rows, args.out)
    print(info.path)
    return EXIT_OK


def _plot_strip(args):
    from . import plots
    bench = Path(_need(args, "bench_dir"))
    inst = load_instance(_need(args, "instance"))
    manifest = json.loads((bench / "manifest.json").read_text())
    groups = {}
    for key in manifest["cells"]:
        rec_path = bench / "cells" / f"{key}.json"
        if not rec_path.exists():
            continue
        rec = json.loads(rec_path.read_text())
        if rec["instance"] != inst.id:
            continue
        if args.by == "gamma" and args.eps_filter is not None and rec["eps"] != args.eps_filter:
            continue
        if args.by == "eps" and args.gamma_filter is not None and rec["gamma"] != args.gamma_filter:
            continue
        row = rec["row"]
        if row["status"] not in ("Optimal", "Feasible"):
            continue
        if row["audit_passed"] is not True:
            raise UnauditedResult(f"cell {key} did not pass its audit; refusing to plot")
        sol = _load_solution(bench / "solutions" / f"{key}.json", inst.n)
        groups[rec[args.by]] = plots.pairwise_dmin(inst, sol.controls)
    if not groups:
        raise UsageError("--bench-dir: no solved cells for this instance")
    label = "Gamma" if args.by == "gamma" else "eps_bar"
    return plots.plot_dmin_strip(dict(sorted(groups.items())), args.out, label, d=inst.d,
                                 title=inst.id)


def _need(args, name):
    v = getattr(args, name)
    if not v:
        raise UsageError(f"--{name.replace('_', '-')} is required for this plot kind")
    return v


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deconflict", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="write benchmark instances")
    g.add_argument("family", choices=("cp", "rcp"))
    g.add_argument("--n", type=_sizes, default=None, help="aircraft count: N, A..B or A,B,C")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed-base", type=int, default=1)
    g.add_argument("--radius", type=float, default=200.0)
    g.add_argument("--placement", choices=("random", "uniform"), default="uniform")
    g.add_argument("--manifest", help="regenerate the files listed in an RCP manifest")
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve one instance and audit the result")
    s.add_argument("--instance", required=True)
    _add_uncertainty_flags(s)
    _add_control_flags(s)
    s.add_argument("--gap", type=float, default=0.01)
    s.add_argument("--time-limit", type=float, default=600.0)
    s.add_argument("--certify", action="store_true", help="valid lower bounds by heading branching")
    s.add_argument("--out", help="solution JSON path")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a gamma/eps sweep")
    b.add_argument("--config", help="JSON BenchConfig; replaces the sweep flags")
    b.add_argument("--cp", type=_sizes)
    b.add_argument("--rcp", type=_sizes)
    b.add_argument("--count", type=int, default=10, help="RCP seeds per size (100 for full groups)")
    b.add_argument("--seed-base", type=int, default=1)
    b.add_argument("--gammas", type=_floats, default=[0.0, 1.0, 2.0, 3.0, 4.0])
    b.add_argument("--eps-list", type=_floats, default=[0.0, 0.025, 0.05, 0.075, 0.10])
    _add_control_flags(b)
    b.add_argument("--gap", type=float, default=0.01)
    b.add_argument("--time-limit", type=float, default=600.0)
    b.add_argument("--certify", action="store_true")
    b.add_argument("--threads", type=int, default=None, help="defaults to DECONFLICT_THREADS or 1")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="audit a solution file")
    v.add_argument("--instance", required=True)
    v.add_argument("--solution", required=True)
    _add_uncertainty_flags(v)
    v.add_argument("--samples", type=int, default=0, help="Monte Carlo draws (0 skips)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tol", type=float, default=1e-6, help="NM")
    v.add_argument("--mc-csv", help="write the Monte Carlo rate as CSV")
    v.add_argument("--out", help="write the report JSON here too")
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="render an SVG figure")
    pl.add_argument("kind", choices=("trajectories", "strip", "hist", "scatter"))
    pl.add_argument("--out", required=True)
    pl.add_argument("--instance")
    pl.add_argument("--instances", nargs="+")
    pl.add_argument("--det", help="deterministic solution file")
    pl.add_argument("--robust", help="robust solution file")
    _add_uncertainty_flags(pl)
    pl.add_argument("--bench-dir")
    pl.add_argument("--by", choices=("gamma", "eps"), default="gamma")
    pl.add_argument("--results")
    pl.add_argument("--gamma-filter", type=float)
    pl.add_argument("--eps-filter", type=float)
    pl.add_argument("--family")
    pl.add_argument("--size", type=int)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "gen" and args.n is None and not (args.family == "rcp" and args.manifest):
        parser.error("gen: --n is required")
    try:
        return args.func(args)
    except (UsageError, SchemaError, UnauditedResult, FileNotFoundError, IsADirectoryError,
            PermissionError, json.JSONDecodeError) as exc:
        print(f"deconflict {args.cmd}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DeconflictError as exc:
        print(f"deconflict {args.cmd}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
