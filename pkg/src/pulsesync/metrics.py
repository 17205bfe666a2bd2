"""Measurements computed purely from trace records.

Every function here takes the record list of a :class:`~pulsesync.sim.Trace`
(or rows parsed back from ``trace.csv``), so metrics can be recomputed
offline and compared with the in-run values.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

from .timebase import Q, fmt, q


def pulse_times(records, scope: str, nodes: Iterable[int], kind: str = "pulse") -> Dict[int, List[Q]]:
    per = {v: [] for v in nodes}
    for t, node, k, sc, _ in records:
        if k == kind and sc == scope and node in per:
            per[node].append(t)
    return per


@dataclass
class Stabilisation:
    """A stable suffix of pulse groups (one pulse per correct node each)."""

    time: Q                      # start of the first group of the stable suffix
    groups: List[List[Q]]        # groups[k][i]: k-th pulse of the i-th correct node
    skews: List[Q]
    gaps: List[Q]                # p_{k+1}(v) - min_u p_k(u), over all v and k

    @property
    def max_skew(self) -> Q:
        return max(self.skews)

    @property
    def min_gap(self) -> Optional[Q]:
        return min(self.gaps) if self.gaps else None

    @property
    def max_gap(self) -> Optional[Q]:
        return max(self.gaps) if self.gaps else None

    def summary(self) -> Dict[str, object]:
        return {
            "time": fmt(self.time),
            "groups": len(self.groups),
            "max_skew": fmt(self.max_skew),
            "min_gap": fmt(self.min_gap) if self.gaps else None,
            "max_gap": fmt(self.max_gap) if self.gaps else None,
        }


def detect_stabilisation(pulses: Dict[int, List[Q]], sigma, phi_minus, phi_plus,
                         min_groups: int = 2) -> Optional[Stabilisation]:
    """Earliest time from which the pulse sequence is stabilised.

    Pulses are aligned by index from the end of the run (an incomplete trailing
    group is dropped), then the chain of groups with skew below ``sigma`` and
    every ``p_{k+1}(v) - min p_k`` within ``[phi_minus, phi_plus]`` is followed
    backwards. The first group of the chain must also be the first pulse of
    every node at or after its start. Returns None when fewer than
    ``min_groups`` groups qualify.
    """
    sigma, lo, hi = q(sigma), q(phi_minus), q(phi_plus)
    nodes = sorted(pulses)
    seqs = [sorted(pulses[v]) for v in nodes]
    if not nodes or any(not s for s in seqs):
        return None
    cut = min(s[-1] for s in seqs) + sigma
    seqs = [[t for t in s if t < cut] for s in seqs]
    k_max = min(len(s) for s in seqs)
    if k_max == 0:
        return None
    groups = [[s[len(s) - k_max + i] for s in seqs] for i in range(k_max)]

    def ok_group(g):
        return max(g) - min(g) < sigma

    def ok_step(a, b):
        base = min(a)
        return all(lo <= x - base <= hi for x in b)

    if not ok_group(groups[-1]):
        return None
    first = k_max - 1
    while first > 0 and ok_group(groups[first - 1]) and ok_step(groups[first - 1], groups[first]):
        first -= 1
    # the first group must not be preceded by another pulse inside it
    while first < k_max:
        start = min(groups[first])
        clean = True
        for s in seqs:
            idx = len(s) - k_max + first
            if idx > 0 and s[idx - 1] >= start:
                clean = False
        if clean:
            break
        first += 1
    chain = groups[first:]
    if len(chain) < min_groups:
        return None
    skews = [max(g) - min(g) for g in chain]
    gaps = [x - min(a) for a, b in zip(chain, chain[1:]) for x in b]
    return Stabilisation(min(chain[0]), chain, skews, gaps)


@dataclass
class GoodResync:
    t: Q               # earliest resync pulse of the group
    times: List[Q]     # per correct node


def good_resyncs(records, scope: str, correct: Sequence[int], rho, psi) -> List[GoodResync]:
    """All good resynchronisation pulses on ``scope``.

    ``t`` qualifies if every correct node has exactly one resync pulse in
    ``[t, t+rho)`` and none in ``[t+rho, t+rho+psi)``. ``t`` is taken as the
    earliest pulse of such a group; groups whose silence window extends past
    the end of the trace are not reported.
    """
    rho, psi = q(rho), q(psi)
    per = pulse_times(records, scope, correct, kind="resync")
    if not per or any(not p for p in per.values()):
        return []
    end = max((r[0] for r in records), default=Q(0))
    allp = sorted(t for p in per.values() for t in p)
    found = []
    for t in allp:
        if t + rho + psi > end:
            break
        if found and t < found[-1].t + rho:
            continue
        times = []
        good = True
        for v in correct:
            inside = [x for x in per[v] if t <= x < t + rho]
            after = [x for x in per[v] if t + rho <= x < t + rho + psi]
            if len(inside) != 1 or after:
                good = False
                break
            times.append(inside[0])
        if good:
            found.append(GoodResync(t, times))
    return found


def bit_rates(records, window, nodes: Iterable[int], start=None, end=None, prefix: Optional[str] = None):
    """Maximum bits any node sent on one channel in a window of length ``window``.

    A broadcast counts once per channel; ``send`` records carry the per-channel
    bit count. Returns ``{node: max bits per window}``.
    """
    window = q(window)
    per = defaultdict(list)
    wanted = set(nodes)
    for t, node, kind, sc, detail in records:
        if kind != "send" or node not in wanted:
            continue
        if prefix is not None and not sc.startswith(prefix):
            continue
        if start is not None and t < start:
            continue
        if end is not None and t > end:
            continue
        per[node].append((t, int(detail)))
    out = {}
    for v in wanted:
        evs = per.get(v, [])
        best = 0
        acc = 0
        j = 0
        for i, (t, b) in enumerate(evs):
            acc += b
            while evs[j][0] <= t - window:
                acc -= evs[j][1]
                j += 1
            best = max(best, acc)
        out[v] = best
    return out


def count_kind(records, kind: str, scope_prefix: str = "") -> int:
    return sum(1 for r in records if r[2] == kind and r[3].startswith(scope_prefix))


@dataclass
class Metrics:
    """Run summary; every field is reproducible from the trace alone."""

    stabilisation: Optional[Dict[str, object]] = None
    max_bits: Dict[str, int] = field(default_factory=dict)
    verdicts: Dict[str, int] = field(default_factory=dict)
    late_drops: int = 0
    aborts: int = 0
    good_resyncs: List[str] = field(default_factory=list)
    extra: Dict[str, object] = field(default_factory=dict)

    def as_dict(self):
        return {
            "stabilisation": self.stabilisation,
            "max_bits_per_window": self.max_bits,
            "consensus_verdicts": self.verdicts,
            "late_frame_drops": self.late_drops,
            "consensus_aborts": self.aborts,
            "good_resync_times": self.good_resyncs,
            **self.extra,
        }


def verdicts(records, scope_prefix: str = "") -> Dict[str, int]:
    out: Dict[str, int] = defaultdict(int)
    for t, node, kind, sc, detail in records:
        if kind == "decide" and sc.startswith(scope_prefix):
            out[detail] += 1
    return dict(sorted(out.items()))
