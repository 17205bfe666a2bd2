"""End-to-end acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) and
asserts. Runs of the main pulser, the resynchroniser and the full recursion
are cached so the lemma criterion can aggregate their trace assertions.
"""
import itertools
import random
import re
import time
from fractions import Fraction as F

import pytest

from conftest import ACCEPTANCE_LINES
from pulsesync.consensus import PhaseKing, get_routine, make_silent, run_lockstep, wilson_lower
from pulsesync.main_pulser import THETA_BOUND, solve_main_timeouts
from pulsesync.report import trace_bytes
from pulsesync.resync import WINDOW_BOUND, solve_resync_timeouts
from pulsesync.scenario import Scenario, run
from pulsesync.st_pulser import InfeasibleTimeouts, solve_st_timeouts
from pulsesync.timebase import q

CACHE = {}
LEMMA_PREFIXES = ("lemma.input-wait", "lemma.separation", "lemma.consistent-init", "lemma.grouping",
                  "lemma.repetition", "lemma.window-algebra")


def record(key, title, ok, detail, elapsed=None, limit=None):
    timing = f" ({elapsed:.1f} s < {limit} s)" if limit is not None else ""
    ACCEPTANCE_LINES[key] = f"[{'PASS' if ok else 'FAIL'}] {key} {title}: {detail}{timing}"
    print(ACCEPTANCE_LINES[key])


def failures(results):
    out = []
    for res in results:
        for c in res.checks:
            if not c.ok and not c.name.startswith("lemma."):
                out.append(f"seed {res.scenario.seed}: {c.line()}")
    return out


def keep(res):
    """Drop the trace; the lemma criterion only needs the checks."""
    return type("Kept", (), {"scenario": res.scenario, "checks": res.checks, "ok": res.ok})()


# ---------------------------------------------------------------------------

def test_c1_st_pulser():
    t0 = time.time()
    results = []
    for seed in range(100):
        for adv in ({"kind": "random", "seed": seed, "period": "1"},
                    {"kind": "equivocator", "seed": seed, "react": {"propose": 0.5}}):
            scn = Scenario("st-pulser", 4, 1, theta=q("1.1"), d=q(1), tau=q(10), seed=seed,
                           faulty={seed % 4: adv}, init={"spread": 10})
            results.append(run(scn))
    elapsed = time.time() - t0
    bad = failures(results)
    ok = not bad and elapsed < 10
    record("C1", "st pulser n=4 f=1 theta=1.1, 100 seeds x 2 adversaries", ok,
           f"{len(results) - len(bad)}/{len(results)} runs meet first-window, skew < 2d and gap bounds"
           + (f"; {bad[0]}" if bad else ""), elapsed, 10)
    assert ok, bad[:3]


def scripted_adversaries(count, rounds, seed=0):
    rng = random.Random(seed)
    symbols = (None, b"\x00", b"\x01", b"\x02", b"\x07", b"")
    for _ in range(count):
        table = {(r, v): rng.choice(symbols) for r in range(1, rounds + 1) for v in range(4)}
        yield lambda r, u, v, sent, table=table: table[(r, v)]


def test_c2_consensus():
    t0 = time.time()
    pk = PhaseKing(4, 1)
    silent = make_silent(pk)
    faulty, correct = [3], [0, 1, 2]
    rng = random.Random(1)
    runs = valid = agree = quiet = zeros = 0
    for routine in (pk, silent):
        for adv in scripted_adversaries(1000, routine.rounds, seed=routine.rounds):
            for inputs in ({v: 0 for v in correct}, {v: 1 for v in correct},
                           {v: rng.randint(0, 1) for v in correct}):
                res = run_lockstep(routine, inputs, faulty, adv)
                runs += 1
                agree += res.agreement
                xs = set(inputs.values())
                valid += len(xs) > 1 or set(res.outputs.values()) == xs
                if routine is silent and xs == {0}:
                    zeros += 1
                    quiet += res.correct_messages == 0
    elapsed = time.time() - t0
    ok = (valid == runs and agree == runs and quiet == zeros and silent.rounds == pk.rounds + 2
          and elapsed < 30)
    record("C2", "phase king and silent wrapper n=4 f=1, 1000 scripted adversaries", ok,
           f"validity {valid}/{runs}, agreement {agree}/{runs}, silent all-0 runs {quiet}/{zeros}, "
           f"R'={silent.rounds}=R+2", elapsed, 30)
    assert ok


def test_c3_mock_wrapper():
    t0 = time.time()
    trials, agree = 10 ** 4, 0
    for seed in range(trials):
        rng = random.Random(seed)
        routine = get_routine("mock-expected", 4, 1, seed=seed)
        # mixed inputs: the hard case, agreement then rests on termination
        inputs = {0: 0, 1: 1, 2: rng.randint(0, 1)}
        res = run_lockstep(routine, inputs, [3], lambda r, u, v, s: bytes([rng.randint(0, 2)]))
        agree += res.agreement
    elapsed = time.time() - t0
    rate, lower = agree / trials, wilson_lower(agree, trials)
    ok = rate >= 0.5 and lower >= 0.48 and elapsed < 30
    record("C3", "probabilistic wrapper over a mock routine, 10^4 seeds", ok,
           f"agreement {agree}/{trials} = {rate:.4f}, 99% Wilson lower bound {lower:.4f}", elapsed, 30)
    assert ok


# ---------------------------------------------------------------------------

def oracle_rows(theta, phi):
    """Independent Fraction re-evaluation of the timeout tables from the
    solvers' reported values."""
    th, d, tau = F(theta), F(1), F(10)
    st = {k: F(v) for k, v in solve_st_timeouts(theta, 1, 10).report().items()}
    rows = [st["T0"] / th >= tau + d, st["T1"] / th >= (1 - 1 / th) * st["T0"] + tau,
            st["T2"] / th >= 3 * d, st["T3"] / th >= (1 - 1 / th) * st["T2"] + 2 * d]
    m = {k: F(v) for k, v in solve_main_timeouts(theta, 1, 8, 4).report().items() if k != "rounds"}
    T1, Tl, T2, Tc, Tw, Ta = m["T1"], m["T_listen"], m["T2"], m["T_consensus"], m["T_wait"], m["T_active"]
    rho = m["rho"]
    x = 7 * th - 2
    rows += [th > 1 and x * x < 32, T1 == 3 * th * d, Tl == (th - 1) * T1 + 3 * th * d,
             T2 > th * (Tl + 3 * T1 + 3 * d), (2 / th - 1) * T2 > 2 * Tl + Tc + 5 * T1 + 4 * d,
             Tw == T2 + Tc,
             Ta >= 4 * T2 + Tl + th * (Tl + Tw - 5 * T1 - 4 * d + rho),
             Ta >= 2 * T2 + Tc + th * (2 * Tl + T1 + Tw + 3 * d + 2 * T2 + 2 * Tc),
             m["tau"] >= (1 - 1 / th) * Ta + rho]
    r = {k: F(v) for k, v in solve_resync_timeouts(theta, phi, 2, 1).report().items()}
    rows += [th * th * F(phi) < F(31, 30), r["C0"] == 4, r["C1"] == 5, r["T_cool"] / th > 15 * r["beta"],
             r["T_vote"] == th * (2 * d + 2 * d), r["rho"] == r["T_vote"]]
    for h in (0, 1):
        C = (4, 5)[h]
        pm, pp = r[f"phi_minus_{h}"], r[f"phi_plus_{h}"]
        lm, lp = r[f"lam_minus_{h}"], r[f"lam_plus_{h}"]
        rows += [pm > r["Psi"] + 2 * r["rho"], r[f"T_min_{h}"] / th > r["Psi"] + r["rho"],
                 r[f"T_min_{h}"] < r["T_cool"], pp <= F(phi) * pm]
        rows += [r["beta"] * C * j <= j * lm < j * lp + r["rho"] <= r["beta"] * (C * j + 1) for j in range(4)]
    return rows


def test_c4_solvers():
    failed = []
    counted = 0
    for theta, phi in ((q("1.001"), q("1.03")), (q("1.004"), q("1.021"))):
        tables = [solve_st_timeouts(theta, 1, 10).constraints(), solve_main_timeouts(theta, 1, 8, 4).constraints(),
                  solve_resync_timeouts(theta, phi, 2, 1).constraints()]
        for rows in tables:
            for name, _, _, ok in rows:
                counted += 1
                if not ok:
                    failed.append(f"theta={theta}: {name}")
        oracle = oracle_rows(theta, phi)
        counted += len(oracle)
        failed += [f"theta={theta}: oracle row {i}" for i, ok in enumerate(oracle) if not ok]
    named = False
    try:
        solve_main_timeouts(q("1.1"), 1, 8, 4)
    except InfeasibleTimeouts as exc:
        named = exc.constraint == THETA_BOUND and "(2+sqrt(32))/7" in str(exc)
    window = False
    th = q("1.004")
    try:
        solve_resync_timeouts(th, F(31, 30) / (th * th), 2, 1)
    except InfeasibleTimeouts as exc:
        window = exc.constraint == WINDOW_BOUND
    product = q("1.004") ** 2 * q("1.021")
    accepted = product < F(31, 30) and solve_resync_timeouts(q("1.004"), q("1.021"), 2, 1).phi == q("1.021")
    ok = not failed and named and window and accepted
    record("C4", "timeout solvers at theta in {1.001, 1.004}", ok,
           f"{counted - len(failed)}/{counted} rows hold exactly; theta=1.1 rejected naming (2+sqrt(32))/7: {named}; "
           f"theta^2 phi >= 31/30 rejected: {window}; 1.004^2 * 1.021 = {float(product):.6f} < 31/30 accepted: "
           f"{accepted}")
    assert ok, failed


# ---------------------------------------------------------------------------

MP_KINDS = (lambda s: {"kind": "random", "seed": s, "period": "10"},
            lambda s: {"kind": "equivocator", "seed": s, "react": {"pulse": 0.5, "wait": 0.5, "propose": 0.5}},
            lambda s: {"kind": "state-mimic", "seed": s})


def test_c5_main_pulser():
    t0 = time.time()
    results = []
    for seed in range(200):
        scn = Scenario("main-pulser", 4, 1, theta=q("1.004"), seed=seed,
                       faulty={seed % 4: MP_KINDS[seed % 3](seed)})
        results.append(keep(run(scn)))
    elapsed = time.time() - t0
    CACHE["c5"] = results
    bad = failures(results)
    ok = not bad and elapsed < 120
    record("C5", "main pulser with oracle resync n=4 f=1 theta=1.004, 200 seeds", ok,
           f"{len(results) - len(bad)}/{len(results)} runs stabilise within T_active+rho+T_consensus/theta of the "
           f"good resync with skew <= 2d and gaps in [T2/theta, (T2+T_consensus)/theta)"
           + (f"; {bad[0]}" if bad else ""), elapsed, 120)
    assert ok, bad[:3]


def test_c6_resync():
    t0 = time.time()
    results = []
    for seed in range(200):
        results.append(keep(run(Scenario("resync", 7, 2, theta=q("1.001"), phi=q("1.03"), seed=seed))))
    elapsed = time.time() - t0
    CACHE["c6"] = results
    bad = failures(results)
    spacing = [c for r in results for c in r.checks if c.name == "lemma.resync-spacing" and not c.ok]
    ok = not bad and not spacing and elapsed < 120
    record("C6", "resynchroniser n=7 f=2 split 3/4, 200 seeds", ok,
           f"{len(results) - len(bad)}/{len(results)} runs produce a good pulse by the I(11) bound; "
           f"RESYNC spacing violations: {len(spacing)}" + (f"; {bad[0]}" if bad else ""), elapsed, 120)
    assert ok, (bad + [c.line() for c in spacing])[:3]


def test_c7_full_recursion():
    t0 = time.time()
    results = []
    for placement in ("same", "split"):
        for seed in range(100):
            # every tenth seed keeps running long after stabilisation so the
            # top level's lemma checks see many post-resync transitions
            opts = {"placement": placement}
            if seed % 10 == 0:
                opts["tail"] = 2000000
            results.append(keep(run(Scenario("full-recursion", 7, 2, theta=q("1.001"), phi=q("1.03"), seed=seed,
                                             options=opts))))
    elapsed = time.time() - t0
    CACHE["c7"] = results
    bad = failures(results)
    ok = not bad and elapsed < 300
    record("C7", "full recursion n=7 f=2, placements same and split, 100 seeds each", ok,
           f"{len(results) - len(bad)}/{len(results)} runs stabilise with skew <= 2d and bits within 2x budget"
           + (f"; {bad[0]}" if bad else ""), elapsed, 300)
    assert ok, bad[:3]


def test_c8_determinism():
    scenarios = [
        Scenario("st-pulser", 4, 1, theta=q("1.1"), seed=5, faulty={1: {"kind": "random", "seed": 5}}),
        Scenario("main-pulser", 4, 1, seed=5, faulty={2: MP_KINDS[1](5)}),
        Scenario("resync", 7, 2, theta=q("1.001"), seed=5),
        Scenario("full-recursion", 7, 2, theta=q("1.001"), seed=5, options={"placement": "split"}),
        Scenario("consensus-only", 4, 1, seed=5, options={"runs": 50}),
    ]
    same = [trace_bytes(run(s).trace.records) == trace_bytes(run(s).trace.records) for s in scenarios]
    ok = all(same)
    record("C8", "determinism", ok, f"{sum(same)}/{len(same)} systems give byte-identical traces for a repeated seed")
    assert ok


def _count(detail):
    m = re.match(r"(?:(\d+)/)?(\d+) ", detail)
    return int(m.group(2)) if m else 0


def test_c9_lemmas():
    missing = [k for k in ("c5", "c6", "c7") if k not in CACHE]
    if missing:
        pytest.skip(f"needs the runs of {missing}")
    totals = {p: 0 for p in LEMMA_PREFIXES}
    violations = {p: 0 for p in LEMMA_PREFIXES}
    first = None
    for key in ("c5", "c6", "c7"):
        for res in CACHE[key]:
            for c in res.checks:
                for p in LEMMA_PREFIXES:
                    if c.name == p or c.name.startswith(p + "."):
                        totals[p] += _count(c.detail)
                        if not c.ok:
                            violations[p] += 1
                            first = first or f"seed {res.scenario.seed}: {c.line()}"
    ok = not any(violations.values()) and all(totals.values())
    record("C9", "lemma trace assertions on every end-to-end run", ok,
           ", ".join(f"{p.split('.')[1]} {totals[p]} checked/{violations[p]} failed" for p in LEMMA_PREFIXES)
           + (f"; {first}" if first else ""))
    assert ok, (totals, violations, first)
