"""Command line entry point: ``pulsesync run|sweep|solve-timeouts|describe|recompute``.

Exit codes: 0 all enabled assertions hold, 1 an assertion failed, 2 the
configuration is malformed or its parameters are infeasible.
"""
from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence

from .scenario import Scenario, ScenarioError, load_scenario, run
from .sim import SimulationError
from .st_pulser import InfeasibleTimeouts
from .timebase import dec, fmt, q

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _scenario(args) -> Scenario:
    if not args.scenario:
        raise ScenarioError("--scenario is required")
    scn = load_scenario(args.scenario)
    data = scn.to_dict()
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        data["duration"] = args.duration
    if getattr(args, "asserts", None):
        data["asserts"] = [a.strip() for a in args.asserts.split(",") if a.strip()]
    return Scenario.from_dict({k: v for k, v in data.items() if v is not None})


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    from .report import summary, write_run
    scn = _scenario(args)
    result = run(scn)
    if args.dump_machine:
        print(result.machines)
        print()
    print(summary(result))
    if args.out:
        paths = write_run(result, args.out)
        print(f"wrote {', '.join(sorted(os.path.basename(p) for p in paths.values()))} to {args.out}")
    return result.exit_code


def cmd_recompute(args) -> int:
    from .report import recompute
    with open(os.path.join(args.out, "metrics.json")) as fh:
        stored = json.load(fh)
    again = recompute(args.out)
    if again == stored:
        print(f"metrics recomputed from {os.path.join(args.out, 'trace.csv')} match metrics.json")
        return EXIT_OK
    diff = sorted(k for k in set(stored) | set(again) if stored.get(k) != again.get(k))
    print(f"recomputed metrics differ in: {', '.join(diff)}")
    return EXIT_FAIL


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _parse_value(raw: str):
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    try:
        return int(raw)
    except ValueError:
        return raw


def parse_grid(items: Sequence[str]) -> Dict[str, List[object]]:
    grid: Dict[str, List[object]] = {}
    for item in items or ():
        key, sep, values = item.partition("=")
        if not sep or not key.strip():
            raise ScenarioError(f"grid axis must look like key=v1,v2: {item!r}")
        grid[key.strip()] = [_parse_value(v) for v in values.split(",") if v.strip()]
    return grid


def parse_seeds(spec: str) -> List[int]:
    """``"0:100"`` (half-open range), ``"3,5,8"`` or a single seed."""
    spec = spec.strip()
    if not spec:
        return []
    if ":" in spec:
        a, b = spec.split(":", 1)
        return list(range(int(a), int(b)))
    return [int(s) for s in spec.split(",") if s.strip()]


def grid_cells(base: dict, grid: Dict[str, List[object]]) -> List[dict]:
    """Scenario dicts, one per grid point; ``options.x``-style keys set nested values."""
    if any(not vals for vals in grid.values()):
        return []
    keys = list(grid)
    cells = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        data = json.loads(json.dumps(base))
        for key, value in zip(keys, combo):
            target = data
            *path, last = key.split(".")
            for p in path:
                target = target.setdefault(p, {})
            target[last] = value
        data["label"] = ", ".join(f"{k}={v}" for k, v in zip(keys, combo)) or data.get("label", "")
        cells.append(data)
    return cells


def _sweep_cell(job):
    data, seeds = job
    scn = Scenario.from_dict(data)
    stabs, violations, runs, errors = [], 0, 0, 0
    for s in seeds:
        try:
            res = run(scn.with_seed(s))
        except (SimulationError, InfeasibleTimeouts, ScenarioError):
            errors += 1
            continue
        runs += 1
        violations += sum(1 for c in res.checks if not c.ok)
        st = res.metrics.get("stabilisation")
        if st and st.get("time") is not None:
            stabs.append(q(st["time"]))
    return {
        "cell": data.get("label") or scn.system,
        "runs": runs,
        "errors": errors,
        "violations": violations,
        "max_stab": dec(max(stabs), 3) if stabs else "-",
        "mean_stab": dec(sum(stabs) / len(stabs), 3) if stabs else "-",
    }


def sweep(base: dict, grid: Dict[str, List[object]], seeds: Sequence[int], jobs: int = 1) -> List[dict]:
    """Aggregate rows in grid order; the result does not depend on ``jobs``."""
    cells = grid_cells(base, grid)
    if not seeds:
        return []
    for c in cells:
        Scenario.from_dict(c)      # fail early on a bad cell
    work = [(c, list(seeds)) for c in cells]
    if jobs <= 1 or len(work) <= 1:
        return [_sweep_cell(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_cell, work))


SWEEP_COLUMNS = ("cell", "runs", "errors", "violations", "max_stab", "mean_stab")


def cmd_sweep(args) -> int:
    from .report import format_table
    scn = _scenario(args)
    base = {k: v for k, v in scn.to_dict().items() if v is not None}
    jobs = args.jobs if args.jobs is not None else (os.cpu_count() or 1)
    rows = sweep(base, parse_grid(args.grid), parse_seeds(args.seeds), jobs)
    print(format_table(rows, SWEEP_COLUMNS))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "sweep.json"), "w") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
    return EXIT_FAIL if any(r["violations"] or r["errors"] for r in rows) else EXIT_OK


# ---------------------------------------------------------------------------
# solvers and the recursion tree
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    from .consensus import get_routine
    from .main_pulser import solve_main_timeouts
    from .resync import solve_resync_timeouts
    from .st_pulser import solve_st_timeouts
    scn = _scenario(args) if args.scenario else None
    theta = q(args.theta) if args.theta else (scn.theta if scn else q("1.004"))
    d = q(args.d) if args.d else (scn.d if scn else q(1))
    phi = q(args.phi) if args.phi else (scn.phi if scn else q("1.03"))
    tau = q(args.tau) if args.tau else (scn.tau if scn else q(10))
    n = args.n or (scn.n if scn else 4)
    f = args.f if args.f is not None else (scn.f if scn else 1)
    routine = scn.routine if scn else "phase-king-silent"
    system = args.system or (scn.system if scn else "main-pulser")
    sigma = scn.sigma if scn else 2 * d
    if system == "st-pulser":
        rep = solve_st_timeouts(theta, d, tau).report()
    elif system == "main-pulser":
        rho = q(args.rho) if args.rho else (scn.rho if scn and scn.rho is not None else 4 * d)
        rep = solve_main_timeouts(theta, d, get_routine(routine, n, f).rounds, rho).report()
    elif system == "resync":
        rep = solve_resync_timeouts(theta, phi, sigma, d).report()
    elif system == "full-recursion":
        from .recursion import build_pulser
        rep = build_pulser(n, f, theta, d, phi, sigma, routine).report()
    else:
        raise ScenarioError(f"no timeout solver for {system!r}")
    print(json.dumps(rep, indent=2, default=str))
    return EXIT_OK


def cmd_describe(args) -> int:
    from .recursion import build_pulser
    scn = _scenario(args) if args.scenario else None
    theta = q(args.theta) if args.theta else (scn.theta if scn else q("1.001"))
    d = q(args.d) if args.d else (scn.d if scn else q(1))
    phi = q(args.phi) if args.phi else (scn.phi if scn else q("1.03"))
    n = args.n or (scn.n if scn else 7)
    f = args.f if args.f is not None else (scn.f if scn else 2)
    tree = build_pulser(n, f, theta, d, phi, scn.sigma if scn else None, scn.routine if scn else "phase-king-silent")
    print(tree.describe())
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulsesync", description="Byzantine pulse synchronisation simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, seed=True):
        sp.add_argument("--scenario", help="YAML scenario file")
        if seed:
            sp.add_argument("--seed", type=int)
        sp.add_argument("--duration", help="simulated time horizon (rational)")
        sp.add_argument("--assert", dest="asserts", metavar="SET",
                        help="comma-separated check-name prefixes, 'all' or 'none'")

    r = sub.add_parser("run", help="simulate one scenario")
    common(r)
    r.add_argument("--out", help="directory for trace.csv, metrics.json, machines.txt")
    r.add_argument("--dump-machine", action="store_true", help="print the guard tables")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="seeds x parameter grid summary")
    common(s, seed=False)
    s.add_argument("--seeds", default="0:10", help="'a:b' range or comma list")
    s.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                   help="grid axis; dotted keys reach into options/init")
    s.add_argument("--jobs", type=int, help="worker processes (default: CPU count)")
    s.add_argument("--out", help="directory for sweep.json")
    s.set_defaults(fn=cmd_sweep)

    for name, fn, helptext in (("solve-timeouts", cmd_solve, "print solved timeouts"),
                               ("describe", cmd_describe, "print the recursion tree")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--scenario")
        sp.add_argument("--theta")
        sp.add_argument("--d")
        sp.add_argument("--phi")
        sp.add_argument("--n", type=int)
        sp.add_argument("--f", type=int)
        if name == "solve-timeouts":
            sp.add_argument("--system", choices=["st-pulser", "main-pulser", "resync", "full-recursion"])
            sp.add_argument("--tau")
            sp.add_argument("--rho")
        sp.set_defaults(fn=fn)

    rc = sub.add_parser("recompute", help="recompute metrics offline from a run directory")
    rc.add_argument("--out", required=True)
    rc.set_defaults(fn=cmd_recompute)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InfeasibleTimeouts as exc:
        print(f"infeasible parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
