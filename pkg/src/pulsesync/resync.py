"""Resynchronisation from two pulse-synchronised blocks.

The node set is split into blocks V0 and V1, each running a smaller pulser.
Every node runs, for each block h, a *voter* machine (threshold vote on the
block's pulses) and a *validator* machine (frequency filter with a cooldown).
A node outputs a resynchronisation pulse whenever either validator enters
RESYNC. Block periods are coprime multiples (C0 = 4, C1 = 5) of a common unit
beta, so eventually one block's pulse is followed by a long silence.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .metrics import good_resyncs
from .runtime import AtLeast, Always, Component, MachineInstance, MachineSpec, Node, Signal, Timeout
from .st_pulser import InfeasibleTimeouts
from .timebase import Q, ceil_to_grid, fmt, q

C0, C1 = 4, 5
WINDOW_BOUND = "theta^2 phi < 31/30"


class PsiTooSmall(InfeasibleTimeouts):
    """The requested separation window is below what the constraints allow."""

    def __init__(self, psi, psi0):
        self.psi = q(psi)
        self.psi0 = q(psi0)
        super().__init__("Psi > Psi_0", f"Psi = {fmt(self.psi)}, need at least {fmt(self.psi0)}")


@dataclass(frozen=True)
class ResyncTimeouts:
    theta: Q
    phi: Q
    sigma: Q
    d: Q
    X: Q
    a: Q
    b: Q
    c: Q
    r: Q
    Psi: Q
    beta: Q
    T_cool: Q
    T_vote: Q
    T_idle: Q
    T_att: Q
    rho: Q
    phi_minus: Tuple[Q, Q]
    phi_plus: Tuple[Q, Q]
    T_min: Tuple[Q, Q]
    T_max: Tuple[Q, Q]
    lam_minus: Tuple[Q, Q]
    lam_plus: Tuple[Q, Q]
    T_A: Tuple[Q, Q]
    T_star: Q
    C: Tuple[int, int] = (C0, C1)

    def constraints(self):
        th, d, sg, rho = self.theta, self.d, self.sigma, self.rho
        rows = [
            (WINDOW_BOUND, th * th * self.phi, Q(31, 30), th * th * self.phi < Q(31, 30)),
            ("1 < theta < phi", th, self.phi, 1 < th < self.phi),
            ("T_vote = theta (sigma + 2d)", self.T_vote, th * (sg + 2 * d), self.T_vote == th * (sg + 2 * d)),
            ("T_idle = theta (sigma + d)", self.T_idle, th * (sg + d), self.T_idle == th * (sg + d)),
            ("T_att = theta (T_vote + 2d)", self.T_att, th * (self.T_vote + 2 * d),
             self.T_att == th * (self.T_vote + 2 * d)),
            ("rho = T_vote", rho, self.T_vote, rho == self.T_vote),
            ("T_cool/theta > 15 beta", self.T_cool / th, 15 * self.beta, self.T_cool / th > 15 * self.beta),
            ("beta > 2 Psi + 4 (T_vote + d) + rho", self.beta, 2 * self.Psi + 4 * (self.T_vote + d) + rho,
             self.beta > 2 * self.Psi + 4 * (self.T_vote + d) + rho),
            ("C0 = 4, C1 = 5", None, None, self.C == (4, 5)),
        ]
        T_star = max(self.T_A[h] + 2 * self.phi_plus[h] for h in (0, 1)) + self.T_cool + sg + 2 * d + rho
        rows.append(("T* = max_h {T(A_h) + 2 Phi+_h} + T_cool + sigma + 2d + rho", self.T_star, T_star,
                     self.T_star == T_star))
        for h in (0, 1):
            pm, pp, tmin, tmax = self.phi_minus[h], self.phi_plus[h], self.T_min[h], self.T_max[h]
            lm, lp, C = self.lam_minus[h], self.lam_plus[h], self.C[h]
            rows += [
                (f"T_min_{h} = Phi-_{h} - rho", tmin, pm - rho, tmin == pm - rho),
                (f"T_max_{h} = theta (Phi+_{h} + T_vote)", tmax, th * (pp + self.T_vote),
                 tmax == th * (pp + self.T_vote)),
                (f"Phi-_{h} > Psi + 2 rho", pm, self.Psi + 2 * rho, pm > self.Psi + 2 * rho),
                (f"Phi-_{h} >= T_vote + T_idle + T_att + sigma + 2d", pm,
                 self.T_vote + self.T_idle + self.T_att + sg + 2 * d,
                 pm >= self.T_vote + self.T_idle + self.T_att + sg + 2 * d),
                (f"T_min_{h} < T_cool", tmin, self.T_cool, tmin < self.T_cool),
                (f"T_min_{h}/theta > Psi + rho", tmin / th, self.Psi + rho, tmin / th > self.Psi + rho),
                (f"Lambda+_{h} = T_max_{h} + T_vote", lp, tmax + self.T_vote, lp == tmax + self.T_vote),
                (f"Lambda-_{h} = T_min_{h}/theta", lm, tmin / th, lm == tmin / th),
                (f"Phi+_{h} / Phi-_{h} <= phi", pp / pm, self.phi, pp <= self.phi * pm),
            ]
            for j in range(4):
                lhs, mid_l, mid_r, rhs = self.beta * C * j, j * lm, j * lp + rho, self.beta * (C * j + 1)
                rows.append((f"beta C_{h} j <= j Lambda-_{h} < j Lambda+_{h} + rho <= beta (C_{h} j + 1), j={j}",
                             None, None, lhs <= mid_l < mid_r <= rhs))
        return rows

    def verify(self):
        for name, lhs, rhs, ok in self.constraints():
            if not ok:
                detail = f"{fmt(lhs)} vs {fmt(rhs)}" if lhs is not None else ""
                raise InfeasibleTimeouts(name, detail)
        return True

    def good_pulse_bound(self, k: int) -> Q:
        """Latest start of the good pulse when block ``k`` is correct: the end
        of window I(11, .) measured from the latest admissible r_{k,0}."""
        r_k0 = self.T_star + self.phi_plus[k] + self.rho
        return r_k0 + 2 * (self.T_vote + self.d) + self.Psi + 11 * self.beta

    @property
    def stabilisation_bound(self) -> Q:
        return max(self.good_pulse_bound(0), self.good_pulse_bound(1))

    def report(self) -> Dict[str, str]:
        out = {}
        for k in ("theta", "phi", "sigma", "d", "X", "a", "b", "c", "r", "Psi", "beta", "T_cool", "T_vote",
                  "T_idle", "T_att", "rho", "T_star"):
            out[k] = fmt(getattr(self, k))
        for k in ("phi_minus", "phi_plus", "T_min", "T_max", "lam_minus", "lam_plus", "T_A"):
            for h in (0, 1):
                out[f"{k}_{h}"] = fmt(getattr(self, k)[h])
        out["C0"], out["C1"] = str(self.C[0]), str(self.C[1])
        return out


def _assemble(th, phi, sigma, d, X, T_A) -> ResyncTimeouts:
    b = Q(6, 25) * th * phi
    a = b / 3
    c = 16 * th * b
    r = Q(31, 25)
    T_vote = th * (sigma + 2 * d)
    T_idle = th * (sigma + d)
    T_att = th * (T_vote + 2 * d)
    rho = T_vote
    pm = (X, r * X)
    pp = (phi * X, r * phi * X)
    T_min = tuple(p - rho for p in pm)
    T_max = tuple(th * (p + T_vote) for p in pp)
    T_cool = c * X
    T_star = max(T_A[h] + 2 * pp[h] for h in (0, 1)) + T_cool + sigma + 2 * d + rho
    return ResyncTimeouts(
        theta=th, phi=phi, sigma=sigma, d=d, X=X, a=a, b=b, c=c, r=r, Psi=a * X, beta=b * X, T_cool=T_cool,
        T_vote=T_vote, T_idle=T_idle, T_att=T_att, rho=rho, phi_minus=pm, phi_plus=pp, T_min=T_min,
        T_max=T_max, lam_minus=tuple(t / th for t in T_min), lam_plus=tuple(t + T_vote for t in T_max),
        T_A=T_A, T_star=T_star)


def _first_violation(rt: ResyncTimeouts) -> Optional[str]:
    for name, _, _, ok in rt.constraints():
        if not ok:
            return name
    return None


def min_X(theta, phi, sigma, d, T_A=(0, 0)) -> Q:
    """Least multiple of d/100 for which every row holds."""
    th, phi, sigma, d = q(theta), q(phi), q(sigma), q(d)
    T_A = (q(T_A[0]), q(T_A[1]))
    step = d / 100
    k_hi = 1
    for _ in range(80):
        if _first_violation(_assemble(th, phi, sigma, d, k_hi * step, T_A)) is None:
            break
        k_hi *= 2
    else:
        raise InfeasibleTimeouts("no admissible X", f"theta = {fmt(th)}, phi = {fmt(phi)}")
    k_lo = k_hi // 2 + 1 if k_hi > 1 else 1
    while k_lo < k_hi:
        mid = (k_lo + k_hi) // 2
        if _first_violation(_assemble(th, phi, sigma, d, mid * step, T_A)) is None:
            k_hi = mid
        else:
            k_lo = mid + 1
    return k_hi * step


def solve_resync_timeouts(theta, phi, sigma, d, psi=None, T_A=(0, 0)) -> ResyncTimeouts:
    """Timeouts of the voter/validator machines.

    With ``psi`` the unit is ``X = psi / a`` (so the separation window is
    exactly ``psi``); without it the least admissible grid value is used.
    ``T_A`` are the stabilisation times of the two block pulsers (only T*
    depends on them).
    """
    th, phi, sigma, d = q(theta), q(phi), q(sigma), q(d)
    T_A = (q(T_A[0]), q(T_A[1]))
    if not th > 1:
        raise InfeasibleTimeouts("theta > 1", f"theta = {fmt(th)}")
    if not th * th * phi < Q(31, 30):
        raise InfeasibleTimeouts(WINDOW_BOUND, f"theta^2 phi = {fmt(th * th * phi)} >= 31/30")
    if not phi > th:
        raise InfeasibleTimeouts("1 < theta < phi", f"phi = {fmt(phi)}")
    if psi is None:
        rt = _assemble(th, phi, sigma, d, min_X(th, phi, sigma, d, T_A), T_A)
    else:
        psi = q(psi)
        a = Q(6, 25) * th * phi / 3
        rt = _assemble(th, phi, sigma, d, psi / a, T_A)
        if _first_violation(rt) is not None:
            raise PsiTooSmall(psi, a * min_X(th, phi, sigma, d, T_A))
    rt.verify()
    return rt


@dataclass(frozen=True)
class Partition:
    n0: int
    f0: int
    n1: int
    f1: int
    blocks: Tuple[Tuple[int, ...], Tuple[int, ...]]

    def block_of(self, v: int) -> int:
        return 0 if v in self.blocks[0] else 1

    def faulty_blocks(self, faulty) -> List[int]:
        """Blocks whose fault count exceeds their resilience."""
        out = []
        for h, fh in ((0, self.f0), (1, self.f1)):
            if sum(1 for v in self.blocks[h] if v in faulty) > fh:
                out.append(h)
        return out


def partition_blocks(n: int, f: int, members: Optional[Sequence[int]] = None) -> Partition:
    if f < 1:
        raise ValueError("resynchronisation needs f >= 1; f = 0 is the base case")
    if n < 2:
        raise ValueError("need at least two nodes to form two blocks")
    members = list(members) if members is not None else list(range(n))
    if len(members) != n:
        raise ValueError("member list does not match n")
    n0, n1 = n // 2, n - n // 2
    f0, f1 = (f - 1) // 2, f - 1 - (f - 1) // 2
    return Partition(n0, f0, n1, f1, (tuple(members[:n0]), tuple(members[n0:])))


# ---------------------------------------------------------------------------
# machines
# ---------------------------------------------------------------------------

def voter_machine(h: int, n: int, f: int, n_h: int, f_h: int, rt: ResyncTimeouts) -> MachineSpec:
    m = MachineSpec(f"voter{h}", ["IDLE", "LISTEN", "VOTE", "PASS", "GO", "FAIL"])
    m.timer("T_max", rt.T_max[h], ["IDLE"])
    m.timer("T_vote", rt.T_vote, [])
    m.window("bp", rt.T_idle, clears=["IDLE"])
    m.window("vote_att", rt.T_att, clears=["IDLE"])
    m.window("vote", rt.T_vote, clears=["IDLE"])
    m.broadcast("VOTE", "vote")
    # a node that passes straight from LISTEN still contributes its vote
    m.broadcast("PASS", "vote")
    m.emit("GO", "go")
    m.emit("FAIL", "fail")
    m.edge("IDLE", "VOTE", AtLeast("bp", n_h - f_h), "pulses seen")
    m.edge("IDLE", "LISTEN", AtLeast("vote_att", f + 1), "votes seen")
    m.edge("IDLE", "FAIL", Timeout("T_max"), "block late")
    for s in ("LISTEN", "VOTE"):
        m.edge(s, "PASS", AtLeast("vote", n - f), "accept")
        m.edge(s, "FAIL", Timeout("T_vote"), "no quorum")
    m.edge("LISTEN", "VOTE", AtLeast("bp", n_h - f_h), "pulses seen")
    m.edge("PASS", "GO", Timeout("T_vote"), "")
    m.edge("GO", "IDLE", Always(), "")
    m.edge("FAIL", "IDLE", Always(), "")
    m.note("T_vote is reset when leaving IDLE (see attach_resync)")
    m.note("entering IDLE clears the pulse and vote windows")
    return m.validate()


def validator_machine(h: int, rt: ResyncTimeouts) -> MachineSpec:
    m = MachineSpec(f"validator{h}", ["WAIT", "HOLD", "IGNORE", "RESYNC"])
    m.timer("T_min", rt.T_min[h], ["HOLD"])
    m.timer("T_cool", rt.T_cool, ["IGNORE"])
    m.emit("RESYNC", "resync")
    m.edge("WAIT", "RESYNC", Signal("go"), "trigger")
    m.edge("WAIT", "IGNORE", Signal("fail"), "suspect")
    m.edge("RESYNC", "HOLD", Always(), "")
    m.edge("HOLD", "IGNORE", Signal("go") | Signal("fail"), "too early")
    m.edge("HOLD", "WAIT", Timeout("T_min"), "")
    m.edge("IGNORE", "IGNORE", Signal("fail"), "cooldown")
    m.edge("IGNORE", "WAIT", Timeout("T_cool"), "")
    return m.validate()


class PulseForwarder(Component):
    """Broadcasts a block pulse message for each local child pulse, dropping
    pulses closer than ``theta * d`` local time to the previous one."""

    def __init__(self, node: Node, source_key: str, tag: str, members, gap, bits: int = 1):
        self.node = node
        self.tag = tag
        self.members = list(members)
        self.gap = q(gap)
        self.bits = bits
        self.last = None
        self.active = True
        node.listen(source_key, self)

    def on_signal(self, ctx, key):
        if not self.active:
            return
        if self.last is not None and ctx.local - self.last < self.gap:
            return
        self.last = ctx.local
        self.node.world.broadcast(self.node.id, self.tag, None, self.bits, self.members)


@dataclass
class ResyncSpec:
    scope: str
    members: List[int]
    f: int
    partition: Partition
    timeouts: ResyncTimeouts
    sources: Tuple[str, str]          # signal keys of the local child pulses
    voters: Tuple[MachineSpec, MachineSpec] = field(init=False)
    validators: Tuple[MachineSpec, MachineSpec] = field(init=False)

    def __post_init__(self):
        n, p, rt = len(self.members), self.partition, self.timeouts
        self.voters = (voter_machine(0, n, self.f, p.n0, p.f0, rt), voter_machine(1, n, self.f, p.n1, p.f1, rt))
        self.validators = (validator_machine(0, rt), validator_machine(1, rt))

    @property
    def output_key(self) -> str:
        return f"{self.scope}.resync"

    def bp_tag(self, h: int) -> str:
        return f"{self.scope}.bp{h}"

    def machines(self) -> List[MachineSpec]:
        return [*self.voters, *self.validators]


@dataclass
class ResyncNode:
    voters: List[MachineInstance]
    validators: List[MachineInstance]
    forwarder: Optional[PulseForwarder]

    def instances(self):
        return [*self.voters, *self.validators]


def attach_resync(node: Node, spec: ResyncSpec, active: bool = True) -> ResyncNode:
    sc = spec.scope
    voters, validators = [], []
    out_key = spec.output_key
    world = node.world
    for h in (0, 1):
        vsc = f"{sc}.voter{h}"
        voter = MachineInstance(spec.voters[h], node, vsc, members=spec.members, active=active,
                                wires={"bp": spec.bp_tag(h), "vote": f"{vsc}.vote", "vote_att": f"{vsc}.vote"},
                                accept={"bp": spec.partition.blocks[h]})

        def leave_idle(inst, ctx):
            inst.reset_timer("T_vote", ctx.local)
        voter.on_exit("IDLE", leave_idle)
        val = MachineInstance(spec.validators[h], node, f"{sc}.validator{h}", active=active,
                              signals={"go": voter.sig_key["go"], "fail": voter.sig_key["fail"],
                                       "resync": out_key})

        def mark(inst, ctx, h=h):
            recs = world.trace.records
            # one output pulse per instant even if both validators fire
            if not (recs and recs[-1][0] == ctx.t and recs[-1][1] == node.id and recs[-1][2] == "resync"):
                recs.append((ctx.t, node.id, "resync", sc, str(h)))
        val.on_enter("RESYNC", mark)
        voters.append(voter)
        validators.append(val)
    fw = None
    h = spec.partition.block_of(node.id) if node.id in spec.members else None
    if h is not None:
        fw = PulseForwarder(node, spec.sources[h], spec.bp_tag(h), spec.members, spec.timeouts.theta * world.d)
        fw.active = active
    return ResyncNode(voters, validators, fw)


def randomize_resync(rn: ResyncNode, rng: random.Random, n_global: int):
    for inst in rn.instances():
        inst.randomize(rng, n_global)
        inst.active = True
    if rn.forwarder is not None:
        fw = rn.forwarder
        fw.active = True
        local = fw.node.clock.read(fw.node.world.now)
        fw.last = local - fw.gap * Q(rng.randint(0, 64), 64) if rng.random() < 0.5 else None


def resync_output(records, v: int, t, scope: str) -> int:
    """1 iff node ``v`` generates a resynchronisation pulse at time ``t``."""
    return int(any(r[0] == t and r[1] == v and r[2] == "resync" and r[3] == scope for r in records))


def check_good_resync(records, scope: str, correct: Sequence[int], rho, psi):
    """Start times of every good resynchronisation pulse in the trace."""
    return good_resyncs(records, scope, correct, rho, psi)
