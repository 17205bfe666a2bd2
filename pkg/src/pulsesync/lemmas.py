"""Trace-level interval assertions for the main pulser and the resynchroniser.

Each check reads only ``tr`` records (``detail = "SRC>DST"``) and returns a
:class:`~pulsesync.scenario.Check` carrying the first violating time, if any.
Premises that reach past the end of the trace are skipped, not failed.
"""
from __future__ import annotations

from bisect import bisect_left
from typing import Dict, List, Optional, Sequence, Tuple

from .timebase import Q, dec


def transitions(records, scope: str, nodes: Sequence[int]) -> Dict[int, List[Tuple[Q, str, str]]]:
    """``{node: [(t, src, dst), ...]}`` for one machine scope."""
    out: Dict[int, list] = {v: [] for v in nodes}
    for t, node, kind, sc, detail in records:
        if kind == "tr" and sc == scope and node in out:
            src, _, dst = detail.partition(">")
            out[node].append((t, src, dst))
    return out


def entries(trs, states) -> Dict[int, List[Q]]:
    states = set(states)
    return {v: [t for t, _, d in lst if d in states] for v, lst in trs.items()}


def _any_in(ts: List[Q], lo, hi) -> bool:
    """Some element of sorted ``ts`` lies in [lo, hi)."""
    i = bisect_left(ts, lo)
    return i < len(ts) and ts[i] < hi


def _check(name, violations, total, what):
    from .scenario import Check
    if violations:
        t, why = violations[0]
        return Check(name, False, f"{len(violations)}/{total} {what} violated; first: {why}", t)
    return Check(name, True, f"{total} {what} checked")


def _end(records):
    return max((r[0] for r in records), default=Q(0))


# ---------------------------------------------------------------------------
# main pulser; an origin is the start of a good resynchronisation pulse, by
# which message buffers are valid and from which T_active has been reset
# ---------------------------------------------------------------------------

def _input1_from_read(aux):
    return [(t, v) for v, lst in aux.items() for t, s, d in lst if d == "INPUT1" and s == "READ"]


def lemma_input_wait(records, correct, mt, scope: str, origins, f: int):
    """INPUT1 entered from READ at t >= origin + T_listen + d implies at least
    f+1 correct nodes entered WAIT in (t - T_listen - d, t]."""
    origin = min(origins)
    aux = transitions(records, f"{scope}.aux", correct)
    wait = entries(transitions(records, f"{scope}.main", correct), ["WAIT"])
    viol, total = [], 0
    for t, v in _input1_from_read(aux):
        if t < origin + mt.T_listen + mt.d:
            continue
        total += 1
        lo = t - mt.T_listen - mt.d
        a = [u for u in correct if any(lo < x <= t for x in wait[u])]
        if len(a) < f + 1:
            viol.append((t, f"node {v} entered INPUT1 with only {len(a)} correct WAIT entries before"))
    return _check("lemma.input-wait", viol, total, "INPUT1 entries")


def lemma_separation(records, correct, mt, scope: str, origins):
    """A correct WAIT entry at t in [origin, origin + (T_active - T2)/theta] is
    followed by no correct WAIT entry in [t + 3T1 + d, t + T2/theta - 2T1 - d)."""
    wait = entries(transitions(records, f"{scope}.main", correct), ["WAIT"])
    allw = sorted(x for ts in wait.values() for x in ts)
    span = (mt.T_active - mt.T2) / mt.theta
    viol, total = [], 0
    for v, ts in wait.items():
        for t in ts:
            if not any(o <= t <= o + span for o in origins):
                continue
            total += 1
            a, b = t + 3 * mt.T1 + mt.d, t + mt.T2 / mt.theta - 2 * mt.T1 - mt.d
            if _any_in(allw, a, b):
                x = allw[bisect_left(allw, a)]
                viol.append((x, f"WAIT at {dec(x)} inside [{dec(a)}, {dec(b)}) after node {v}"))
    return _check("lemma.separation", viol, total, "WAIT entries")


def lemma_consistent_init(records, correct, mt, scope: str, origins):
    """INPUT1 entered from READ at t in [origin + T_listen + d, origin +
    (T_active - T2)/theta] implies every correct node enters RUN0 or RUN1 in
    [t0, t0 + tau) with t0 = t - T_listen - d + T2/theta."""
    aux = transitions(records, f"{scope}.aux", correct)
    runs = {v: sorted(ts) for v, ts in entries(aux, ["RUN0", "RUN1"]).items()}
    lo, hi = mt.T_listen + mt.d, (mt.T_active - mt.T2) / mt.theta
    end = _end(records)
    viol, total = [], 0
    for t, v in _input1_from_read(aux):
        t0 = t - mt.T_listen - mt.d + mt.T2 / mt.theta
        if not any(o + lo <= t <= o + hi for o in origins) or t0 + mt.tau > end:
            continue
        total += 1
        missing = [u for u in correct if not _any_in(runs[u], t0, t0 + mt.tau)]
        if missing:
            viol.append((t, f"node {v} INPUT1 at {dec(t)}: nodes {missing} enter no RUN state in "
                            f"[{dec(t0)}, {dec(t0 + mt.tau)})"))
    return _check("lemma.consistent-init", viol, total, "INPUT1 entries")


def main_lemmas(records, correct, mt, scope: str, good, f: int) -> list:
    """``good``: start times of good resynchronisation pulses seen by this pulser."""
    good = sorted(good)
    if not good:
        from .scenario import Check
        return [Check(name, True, "no good resynchronisation pulse, premise void")
                for name in ("lemma.input-wait", "lemma.separation", "lemma.consistent-init")]
    return [
        lemma_input_wait(records, correct, mt, scope, good, f),
        lemma_separation(records, correct, mt, scope, good),
        lemma_consistent_init(records, correct, mt, scope, good),
    ]


# ---------------------------------------------------------------------------
# resynchroniser
# ---------------------------------------------------------------------------

def block_resyncs(records, correct, scope: str, h: int) -> Dict[int, List[Q]]:
    trs = transitions(records, f"{scope}.validator{h}", correct)
    return {v: sorted(ts) for v, ts in entries(trs, ["RESYNC"]).items()}


def lemma_resync_spacing(records, correct, rt, scope: str):
    """Consecutive RESYNC entries of one node for one block are Lambda-spaced
    or at least T_cool/theta apart."""
    viol, total = [], 0
    for h in (0, 1):
        lam_lo, lam_hi = rt.lam_minus[h], rt.lam_plus[h]
        cool = rt.T_cool / rt.theta
        for v, ts in block_resyncs(records, correct, scope, h).items():
            for a, b in zip(ts, ts[1:]):
                total += 1
                g = b - a
                if not (lam_lo <= g <= lam_hi or g >= cool):
                    viol.append((b, f"node {v} block {h} gap {dec(g)} outside "
                                    f"[{dec(lam_lo)}, {dec(lam_hi)}] u [{dec(cool)}, inf)"))
    return _check("lemma.resync-spacing", viol, total, "RESYNC gaps")


def lemma_grouping(records, correct, rt, scope: str, origin=0):
    """A RESYNC at t >= T* has some t* in (t - 2T_vote - d, t] such that every
    correct node enters RESYNC or IGNORE in [t*, t* + 2(T_vote + d))."""
    end = _end(records)
    span = 2 * (rt.T_vote + rt.d)
    viol, total = [], 0
    for h in (0, 1):
        trs = transitions(records, f"{scope}.validator{h}", correct)
        hits = {v: sorted(ts) for v, ts in entries(trs, ["RESYNC", "IGNORE"]).items()}
        every = sorted(x for ts in hits.values() for x in ts)
        for v, lst in trs.items():
            for t, _, d in lst:
                if d != "RESYNC" or t < origin + rt.T_star or t + span > end:
                    continue
                total += 1
                lo = t - 2 * rt.T_vote - rt.d
                cands = [x for x in every if lo < x <= t]
                if not any(all(_any_in(hits[u], c, c + span) for u in correct) for c in cands):
                    viol.append((t, f"node {v} block {h} RESYNC at {dec(t)} not grouped"))
    return _check("lemma.grouping", viol, total, "RESYNC entries")


def _group_start(ts_by_node, after, rho) -> Optional[Q]:
    allt = sorted(x for ts in ts_by_node.values() for x in ts)
    for i, t in enumerate(allt):
        if t >= after and (i == 0 or allt[i - 1] <= t - rho):
            return t
    return None


def lemma_repetition(records, correct, rt, scope: str, correct_block, origin=0, require_group=True):
    """Resynchronisation frequency and the C_h window algebra.

    r_{k,0} is the first group of RESYNC entries of the correct block k at or
    after T*. For each block h, r_{h,0} is the first correct RESYNC of h after
    r_{k,0} - 2(T_vote + d) and r_{h,i}(v) the i-th entry of v from there. Every
    index lies in [r_{h,0} - 2(T_vote+d) + i Lambda-_h, r_{h,0} + 2(T_vote+d) +
    i Lambda+_h) u D_h(v); when the other block interferes before r_{k,0} +
    rho + Psi, indices i <= 3 also lie in I(i C_h, i C_h + 1) u D_h(v).
    """
    from .resync import C0, C1
    end = _end(records)
    slack = 2 * (rt.T_vote + rt.d)
    per = {h: block_resyncs(records, correct, scope, h) for h in (0, 1)}
    good = {correct_block} if isinstance(correct_block, int) else set(correct_block)
    if not good:
        from .scenario import Check
        return [Check(name, True, "no correct block, premise void")
                for name in ("lemma.repetition", "lemma.window-algebra")]
    k = min(good)
    rk0 = _group_start(per[k], origin + rt.T_star, rt.rho)
    if rk0 is None:
        from .scenario import Check
        if not require_group:
            return [Check(name, True, "no RESYNC of a correct block after T* in the trace, premise void")
                    for name in ("lemma.repetition", "lemma.window-algebra")]
        return [Check("lemma.repetition", False, "correct block produced no RESYNC after T*"),
                Check("lemma.window-algebra", False, "correct block produced no RESYNC after T*")]
    C = (C0, C1)
    viol_rep, viol_win, n_rep, n_win = [], [], 0, 0
    for h in (0, 1):
        firsts = [x for ts in per[h].values() for x in ts if x > rk0 - slack]
        if not firsts:
            continue
        rh0 = min(firsts)
        interferes = h in good or rh0 < rk0 + rt.rho + rt.Psi
        lam_lo, lam_hi = rt.lam_minus[h], rt.lam_plus[h]
        for v, ts in per[h].items():
            seq = [x for x in ts if x >= rh0]
            if not seq:
                continue
            cool_from = None if h in good else seq[0] + rt.T_cool / rt.theta
            for i, x in enumerate(seq):
                in_d = cool_from is not None and x >= cool_from
                hi = rh0 + slack + i * lam_hi
                if hi > end:
                    break
                n_rep += 1
                if not (rh0 - slack + i * lam_lo <= x < hi or in_d):
                    viol_rep.append((x, f"node {v} block {h} index {i} at {dec(x)}"))
                if interferes and i <= 3:
                    a = rk0 - slack + i * C[h] * rt.beta
                    b = rk0 + slack + rt.Psi + (i * C[h] + 1) * rt.beta
                    n_win += 1
                    if not (a <= x < b or in_d):
                        viol_win.append((x, f"node {v} block {h} index {i} at {dec(x)} outside "
                                            f"[{dec(a)}, {dec(b)})"))
    return [_check("lemma.repetition", viol_rep, n_rep, "RESYNC indices"),
            _check("lemma.window-algebra", viol_win, n_win, "RESYNC indices")]


def resync_lemmas(records, correct, rt, scope: str, correct_block, origin=0, require_group=True) -> list:
    """``correct_block``: index or collection of blocks whose pulsers are
    correct; ``origin`` shifts T* to the time the resynchroniser was started."""
    return [
        lemma_resync_spacing(records, correct, rt, scope),
        lemma_grouping(records, correct, rt, scope, origin),
        *lemma_repetition(records, correct, rt, scope, correct_block, origin, require_group),
    ]
