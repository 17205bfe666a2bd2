"""Non-self-stabilising Byzantine pulse synchroniser started by init signals.

Nodes receive an initialisation signal within a window of length ``tau`` and
then pulse with skew below 2d. States RESET, START, READY, PROPOSE, PULSE;
entering PROPOSE broadcasts ``propose``; propose flags are cleared on entering
START and READY.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from .runtime import AtLeast, MachineInstance, MachineSpec, Node, Signal, Timeout
from .timebase import Q, fmt, q


class InfeasibleTimeouts(ValueError):
    """A timeout system has no solution; ``constraint`` names the culprit."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(f"{constraint} violated" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class StTimeouts:
    theta: Q
    d: Q
    tau: Q
    T0: Q
    T1: Q
    T2: Q
    T3: Q

    def constraints(self):
        th, d, tau = self.theta, self.d, self.tau
        return [
            ("T0/theta >= tau + d", self.T0 / th, tau + d, self.T0 / th >= tau + d),
            ("T1/theta >= (1 - 1/theta) T0 + tau", self.T1 / th, (1 - 1 / th) * self.T0 + tau,
             self.T1 / th >= (1 - 1 / th) * self.T0 + tau),
            ("T2/theta >= 3d", self.T2 / th, 3 * d, self.T2 / th >= 3 * d),
            ("T3/theta >= (1 - 1/theta) T2 + 2d", self.T3 / th, (1 - 1 / th) * self.T2 + 2 * d,
             self.T3 / th >= (1 - 1 / th) * self.T2 + 2 * d),
        ]

    def verify(self):
        for name, lhs, rhs, ok in self.constraints():
            if not ok:
                raise InfeasibleTimeouts(name)
        return True

    def report(self) -> Dict[str, str]:
        out = {k: fmt(getattr(self, k)) for k in ("theta", "d", "tau", "T0", "T1", "T2", "T3")}
        for k in ("first_window_bound", "min_gap", "max_gap"):
            out[k] = fmt(getattr(self, k))
        return out

    # bounds used by tests and by the main pulser
    @property
    def first_window_bound(self) -> Q:
        """All correct nodes pulse in [t0, t0+2d) for some t0 below this (init at 0)."""
        return self.tau + self.T0 + self.T1 + self.d

    @property
    def min_gap(self) -> Q:
        return (self.T2 + self.T3) / self.theta

    @property
    def max_gap(self) -> Q:
        return self.T2 + self.T3 + 3 * self.d

    def round_time(self, rounds: int) -> Q:
        """Reference time from the earliest init signal until every correct node
        has generated pulse number ``rounds + 1`` (the output pulse)."""
        return self.first_window_bound + rounds * self.max_gap + 2 * self.d


def solve_st_timeouts(theta, d, tau) -> StTimeouts:
    th, d, tau = q(theta), q(d), q(tau)
    if not th > 1:
        raise InfeasibleTimeouts("theta > 1")
    if not (d > 0 and tau > 0):
        raise InfeasibleTimeouts("d > 0 and tau > 0")
    to = StTimeouts(
        theta=th, d=d, tau=tau,
        T0=th * (tau + d),
        # each row of the constraint table met with equality
        T1=th * th * (1 - 1 / th) * (tau + d) + th * tau,
        T2=3 * th * d,
        T3=th * th * (1 - 1 / th) * 3 * d + 2 * th * d,
    )
    to.verify()
    return to


def st_machine(n: int, f: int, to: StTimeouts) -> MachineSpec:
    if n < 1 or f < 0 or 3 * f >= n:
        raise ValueError(f"st pulser needs n > 3f (got n={n}, f={f})")
    m = MachineSpec("st", ["RESET", "START", "PROPOSE", "PULSE", "READY"], pulse_states=["PULSE"])
    m.timer("T0", to.T0, ["RESET"])
    m.timer("T1", to.T1, ["START"])
    m.timer("T2", to.T2, ["PULSE"])
    m.timer("T3", to.T3, ["READY"])
    m.flags("propose", clears=["START", "READY"])
    m.broadcast("PROPOSE", "propose")
    m.emit("START", "start")
    m.edge("*", "RESET", Signal("init"), "init")
    m.edge("RESET", "START", Timeout("T0"), "G1")
    m.edge("START", "PROPOSE", Timeout("T1") | AtLeast("propose", f + 1), "G2")
    m.edge("PROPOSE", "PULSE", AtLeast("propose", n - f), "G3")
    m.edge("PULSE", "READY", Timeout("T2"), "G4")
    m.edge("READY", "PROPOSE", Timeout("T3") | AtLeast("propose", f + 1), "G5")
    m.note("an init signal moves the node to RESET from any state")
    return m.validate()


def attach_st(node: Node, spec: MachineSpec, scope: str = "st", active: bool = True) -> MachineInstance:
    return MachineInstance(spec, node, scope, active=active)


@dataclass
class StMeasurement:
    first_pulses: Dict[int, Q]
    indexed: List[List[Q]]        # indexed[i] = pulse times of index i, per correct node order
    window_starts: List[Q]
    skews: List[Q]
    gaps: List[Q]

    @property
    def max_skew(self):
        return max(self.skews) if self.skews else None


def measure_st(records, correct: Sequence[int], scope: str = "st", after=None) -> StMeasurement:
    """Index pulses per node (only those after ``after[v]``) and measure skew/gaps."""
    per: Dict[int, List[Q]] = {v: [] for v in correct}
    for t, node, kind, sc, _ in records:
        if kind == "pulse" and sc == scope and node in per:
            # pulses before a node's init signal (or without one) are not counted
            if after is None or (node in after and t >= after[node]):
                per[node].append(t)
    k = min((len(p) for p in per.values()), default=0)
    indexed = [[per[v][i] for v in correct] for i in range(k)]
    starts = [min(row) for row in indexed]
    skews = [max(row) - min(row) for row in indexed]
    gaps = [b - a for a, b in zip(starts, starts[1:])]
    first = {v: (per[v][0] if per[v] else None) for v in correct}
    return StMeasurement(first, indexed, starts, skews, gaps)
