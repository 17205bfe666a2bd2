"""Run artefacts: trace CSV, metrics JSON, machine dumps and the stdout summary."""
from __future__ import annotations

import csv
import json
import os
from typing import Dict, List, Sequence

from .scenario import RunResult, Scenario, metrics_from_trace
from .timebase import dec, fmt, q

TRACE_COLUMNS = ("t", "node", "kind", "scope", "detail")


def write_trace_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t, node, kind, scope, detail in records:
            w.writerow((fmt(t), node, kind, scope, detail))


def read_trace_csv(path) -> List[tuple]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if tuple(header or ()) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(q(t), int(node), kind, scope, detail) for t, node, kind, scope, detail in rd]


def trace_bytes(records) -> bytes:
    """Canonical serialisation, used to compare traces of repeated runs."""
    return "\n".join(f"{fmt(t)},{n},{k},{s},{d}" for t, n, k, s, d in records).encode()


def write_run(result: RunResult, out_dir) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name)
             for name in ("trace.csv", "metrics.json", "machines.txt", "run.json")}
    write_trace_csv(paths["trace.csv"], result.trace.records)
    with open(paths["metrics.json"], "w") as fh:
        json.dump(result.metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(paths["machines.txt"], "w") as fh:
        fh.write(result.machines.rstrip() + "\n")
    run_info = {
        "scenario": result.scenario.to_dict(),
        "correct": list(result.correct),
        "events": result.events,
        "exit_code": result.exit_code,
        "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail, "t": fmt(c.t) if c.t is not None else None}
                   for c in result.checks],
        "params": result.params,
    }
    with open(paths["run.json"], "w") as fh:
        json.dump(run_info, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return paths


def recompute(out_dir) -> Dict[str, object]:
    """Metrics recomputed from ``trace.csv`` and ``run.json`` alone."""
    with open(os.path.join(out_dir, "run.json")) as fh:
        info = json.load(fh)
    scn = Scenario.from_dict({k: v for k, v in info["scenario"].items() if v is not None})
    records = read_trace_csv(os.path.join(out_dir, "trace.csv"))
    return json.loads(json.dumps(metrics_from_trace(scn, records, info["correct"]), sort_keys=True))


def summary(result: RunResult, max_lines: int = 18) -> str:
    scn = result.scenario
    head = (f"{scn.label or scn.system}: n={scn.n} f={scn.f} theta={dec(scn.theta)} seed={scn.seed} "
            f"faulty={sorted(scn.faulty)} events={result.events}")
    lines = [head]
    st = result.metrics.get("stabilisation")
    if st and st.get("time") is not None:
        parts = [f"stabilised at {dec(q(st['time']))}"]
        for key in ("max_skew", "min_gap", "max_gap"):
            if st.get(key) is not None:
                parts.append(f"{key}={dec(q(st[key]))}")
        lines.append("  " + ", ".join(parts))
    bits = result.metrics.get("max_bits_per_window") or {}
    if bits:
        lines.append(f"  max bits per d-window: {max(bits.values())}")
    failed = [c for c in result.checks if not c.ok]
    passed = [c for c in result.checks if c.ok]
    shown = failed + passed[:max(0, max_lines - len(failed))]
    lines += ["  " + c.line() for c in shown]
    if len(shown) < len(result.checks):
        lines.append(f"  ... {len(result.checks) - len(shown)} more checks passed")
    lines.append(f"{'OK' if result.ok else 'FAILED'}: {len(passed)}/{len(result.checks)} checks passed")
    if failed:
        c = failed[0]
        at = f" at t={dec(c.t)}" if c.t is not None else ""
        lines.append(f"first violation: {c.name}{at}")
    return "\n".join(lines)


def format_table(rows: Sequence[Dict[str, object]], columns: Sequence[str]) -> str:
    if not rows:
        return "(empty grid)"
    cells = [[str(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    out = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    out += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(out)
