"""Recursive assembly of an f-resilient pulser.

A node set with f > 0 faults runs a main pulser whose resynchronisation
signal comes from two smaller pulsers on the halves of the node set, each
built the same way; f = 0 blocks run a leader-driven base pulser.

Parameters flow from the top: the top main pulser takes the least admissible
T2, its required silence fixes the resynchroniser's unit X, and each child is
then configured with the accuracy bounds the resynchroniser expects from it.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from .consensus import get_routine
from .main_pulser import MainPulserSpec, MainTimeouts, attach_main_pulser, randomize_main_pulser, \
    solve_main_timeouts
from .metrics import Metrics, bit_rates, count_kind, detect_stabilisation, good_resyncs, pulse_times, verdicts
from .resync import (WINDOW_BOUND, Partition, ResyncSpec, ResyncTimeouts, attach_resync, partition_blocks, randomize_resync,
                     solve_resync_timeouts)
from .runtime import Always, Component, MachineInstance, MachineSpec, Node, OnReceipt, Timeout
from .st_pulser import InfeasibleTimeouts
from .timebase import Q, ceil_to_grid, dec, floor_to_grid, fmt, q

BEAT_BITS = 1
PULSER_BITS = 3      # pulse, wait and propose messages of a main pulser
RESYNC_BITS = 5      # two votes per voter plus the forwarded block pulse


# ---------------------------------------------------------------------------
# f = 0 base case
# ---------------------------------------------------------------------------

def base_leader_machine(P) -> MachineSpec:
    m = MachineSpec("base-leader", ["WAIT", "PULSE"], pulse_states=["PULSE"])
    m.timer("T_P", q(P), ["WAIT"])
    m.broadcast("PULSE", "beat")
    m.edge("WAIT", "PULSE", Timeout("T_P"), "period")
    m.edge("PULSE", "WAIT", Always(), "")
    return m.validate()


def base_follower_machine() -> MachineSpec:
    m = MachineSpec("base-follower", ["WAIT", "PULSE"], pulse_states=["PULSE"])
    m.flags("beat", clears=["WAIT"])
    m.edge("WAIT", "PULSE", OnReceipt("beat", 1), "leader beat")
    m.edge("PULSE", "WAIT", Always(), "")
    return m.validate()


# ---------------------------------------------------------------------------
# pulser tree
# ---------------------------------------------------------------------------

@dataclass
class Level:
    """One pulser of the tree, with its solved parameters."""

    scope: str
    members: List[int]
    f: int
    theta: Q
    d: Q
    sigma: Q
    phi_minus: Q
    phi_plus: Q
    stab: Q                                  # stabilisation bound from arbitrary states
    P: Optional[Q] = None                    # base case period
    mt: Optional[MainTimeouts] = None
    routine: object = None
    rt: Optional[ResyncTimeouts] = None      # with the children's stabilisation times
    rt_rel: Optional[ResyncTimeouts] = None  # children already stable at time 0
    partition: Optional[Partition] = None
    children: List["Level"] = field(default_factory=list)

    @property
    def is_base(self) -> bool:
        return self.f == 0

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def pulse_key(self) -> str:
        return f"{self.scope}.pulse" if self.is_base else f"{self.scope}.main.pulse"

    @property
    def pulse_scope(self) -> str:
        return self.scope if self.is_base else f"{self.scope}.main"

    @property
    def rs_scope(self) -> str:
        return f"{self.scope}.rs"

    @property
    def stab_rel(self) -> Q:
        """Stabilisation bound when all children are already stable."""
        if self.is_base:
            return self.stab
        rt = self.rt_rel
        return max(rt.good_pulse_bound(0), rt.good_pulse_bound(1)) + self.mt.stabilisation_after_resync

    def staged_bound(self, groups: int) -> Q:
        """Stabilisation bound under staged start-up: a level starts once its
        children have shown ``groups`` stable pulses."""
        if self.is_base:
            return self.stab
        ready = max(c.staged_bound(groups) + (groups + 1) * c.phi_plus for c in self.children)
        return ready + self.stab_rel

    def own_bits(self, v: int) -> int:
        """Bits per d-window this level's own messages may cost node ``v``."""
        if self.is_base:
            return BEAT_BITS if v == self.members[0] else 0
        frame = self.routine.msg_bits + 8
        return PULSER_BITS + 2 * frame + RESYNC_BITS

    def budget(self, v: int) -> int:
        total = self.own_bits(v)
        for c in self.children:
            if v in c.members:
                total += c.budget(v)
        return total

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def tags(self) -> List[str]:
        sc = self.scope
        if self.is_base:
            return [f"{sc}.beat"]
        return [f"{sc}.main.pulse", f"{sc}.main.wait", f"{sc}.st.propose", f"{sc}.cons.frame",
                f"{sc}.rs.bp0", f"{sc}.rs.bp1", f"{sc}.rs.voter0.vote", f"{sc}.rs.voter1.vote"]

    def describe(self, indent: int = 0) -> str:
        pad = "  " * indent
        head = (f"{pad}{self.scope}: n={self.n} f={self.f} nodes={self.members} "
                f"Phi-={dec(self.phi_minus, 2)} Phi+={dec(self.phi_plus, 2)} T<={dec(self.stab, 2)}")
        lines = [head]
        if self.is_base:
            lines.append(f"{pad}  base pulser, leader {self.members[0]}, period P={dec(self.P, 2)}; "
                         f"bits/d: leader {BEAT_BITS}")
        else:
            mt, rt = self.mt, self.rt
            lines.append(f"{pad}  main pulser {self.routine.describe()}: T2={dec(mt.T2, 2)} "
                         f"T_active={dec(mt.T_active, 2)} T_consensus={dec(mt.T_consensus, 2)} "
                         f"Psi={dec(rt.Psi, 2)}")
            lines.append(f"{pad}  resync X={dec(rt.X, 2)} beta={dec(rt.beta, 2)} T_cool={dec(rt.T_cool, 2)} "
                         f"T*={dec(rt.T_star, 2)} blocks {list(self.partition.blocks[0])}/f0="
                         f"{self.partition.f0}, {list(self.partition.blocks[1])}/f1={self.partition.f1}")
            lines.append(f"{pad}  bits/d per node: {self.own_bits(self.members[0])} "
                         f"(pulser {PULSER_BITS} + frames {2 * (self.routine.msg_bits + 8)} + resync {RESYNC_BITS})")
        for c in self.children:
            lines.append(c.describe(indent + 1))
        return "\n".join(lines)

    def report(self) -> Dict[str, object]:
        out = {"scope": self.scope, "n": self.n, "f": self.f, "members": list(self.members),
               "phi_minus": fmt(self.phi_minus), "phi_plus": fmt(self.phi_plus), "stabilisation": fmt(self.stab),
               "bits_per_d": {str(v): self.budget(v) for v in self.members}}
        if self.is_base:
            out["P"] = fmt(self.P)
        else:
            out["main"] = self.mt.report()
            out["resync"] = self.rt.report()
            out["children"] = [c.report() for c in self.children]
        return out


# Psi > Psi_0 fails close to the ceiling, where the resync unit outgrows
# the separation the main pulser asks for
PHI_CONSTRAINTS = (WINDOW_BOUND, "1 < theta < phi", "Phi+ <= phi Phi-", "Psi > Psi_0")


def phi_window(n: int, f: int, theta, d, sigma=None, routine: str = "phase-king-silent"):
    """``(lo, up, hi)``: the tree builds for phi in ``(lo, up)``; ``hi`` is
    31/(30 theta^2), the hard ceiling. Children must fit their block's
    accuracy ratio (which bounds phi below), and close to ``hi`` the resync
    unit grows past the separation the main pulser asks for (which bounds phi
    above). Both edges are located by bisection on a 1e-6 grid. When no phi
    works, ``lo`` is the main pulser's own accuracy ratio and ``up = lo``."""
    th, d = q(theta), q(d)
    sigma = 2 * d if sigma is None else q(sigma)
    hi = Q(31, 30) / (th * th)
    if f == 0:
        return th, hi, hi

    def feasible(phi):
        try:
            _build(n, f, th, d, phi, sigma, routine, None, "L", None, None)
        except InfeasibleTimeouts:
            return False
        return True

    probe = [th + (hi - th) * Q(k, 64) for k in range(1, 64)] if hi > th else []
    good = next((p for p in probe if feasible(p)), None)
    if good is None:
        mt = solve_main_timeouts(th, d, get_routine(routine, n, f).rounds, th * (sigma + 2 * d))
        lo = max(th, mt.phi_plus / mt.phi_minus)
        return lo, lo, hi

    def edge(bad, ok):
        while abs(ok - bad) > Q(1, 10 ** 7):
            mid = (bad + ok) / 2
            if feasible(mid):
                ok = mid
            else:
                bad = mid
        return bad

    lo = ceil_to_grid(edge(th, good), Q(1, 10 ** 6))
    up = floor_to_grid(edge(hi, good), Q(1, 10 ** 6))
    return lo, up, hi


def build_pulser(n: int, f: int, theta, d, phi, sigma=None, routine: str = "phase-king-silent",
                 members: Optional[Sequence[int]] = None, scope: str = "L", base_period=None) -> Level:
    """Solve the parameters of the whole tree.

    A phi outside the admissible window is reported with both of its bounds.
    """
    try:
        return _build(n, f, theta, d, phi, sigma, routine, members, scope, None, base_period)
    except InfeasibleTimeouts as exc:
        if exc.constraint not in PHI_CONSTRAINTS:
            raise
        lo, up, hi = phi_window(n, f, theta, d, sigma, routine)
        detail = str(exc).partition(": ")[2]
        if lo >= up:
            why = (f"phi must exceed the accuracy ratio {dec(lo)} and stay below 31/(30 theta^2) = {dec(hi)}: "
                   f"no phi exists for this theta")
        else:
            why = (f"phi must exceed {dec(lo)} and stay below {dec(up)} (31/(30 theta^2) = {dec(hi)}): "
                   f"choose phi in ({dec(lo)}, {dec(up)})")
        raise InfeasibleTimeouts(exc.constraint, f"{detail}; {why}") from None


def _build(n, f, theta, d, phi, sigma, routine, members, scope, phi_minus, base_period) -> Level:
    """``phi_minus`` prescribes the minimum accuracy (children are configured
    by their parent); the produced maximum accuracy must not exceed
    ``phi * phi_minus``."""
    th, d, phi = q(theta), q(d), q(phi)
    sigma = 2 * d if sigma is None else q(sigma)
    members = list(range(n)) if members is None else list(members)
    if len(members) != n:
        raise ValueError("member list does not match n")
    if 3 * f >= n and f > 0:
        raise InfeasibleTimeouts("f < n/3", f"n = {n}, f = {f}")
    if f == 0:
        if phi_minus is not None:
            P = th * q(phi_minus)
        else:
            P = q(base_period) if base_period is not None else 10 * d
        lo, hi = P / th, P + d
        if phi_minus is not None and hi > phi * q(phi_minus):
            raise InfeasibleTimeouts("Phi+ <= phi Phi-", f"base pulser: {dec(hi)} > {dec(phi * q(phi_minus))}")
        return Level(scope, members, 0, th, d, sigma, lo, hi, P + d, P=P)
    cons = get_routine(routine, n, f)
    rho = th * (sigma + 2 * d)
    T2 = th * q(phi_minus) if phi_minus is not None else None
    mt = solve_main_timeouts(th, d, cons.rounds, rho, T2=T2)
    if phi_minus is not None and mt.phi_plus > phi * q(phi_minus):
        raise InfeasibleTimeouts(
            "Phi+ <= phi Phi-",
            f"{scope}: main pulser accuracy ratio {dec(mt.phi_plus / mt.phi_minus)} exceeds phi = {dec(phi)}")
    psi = mt.psi_required
    rt0 = solve_resync_timeouts(th, phi, sigma, d, psi=psi)
    part = partition_blocks(n, f, members)
    children = []
    for h in (0, 1):
        c = _build(len(part.blocks[h]), (part.f0, part.f1)[h], th, d, phi, sigma, routine,
                   part.blocks[h], f"{scope}.c{h}", rt0.phi_minus[h], None)
        if c.phi_plus > rt0.phi_plus[h] or c.phi_minus < rt0.phi_minus[h]:
            raise InfeasibleTimeouts("child accuracy", f"{c.scope} does not meet the block accuracy bounds")
        if c.sigma > sigma:
            raise InfeasibleTimeouts("child skew", f"{c.scope}")
        children.append(c)
    rt = solve_resync_timeouts(th, phi, sigma, d, psi=psi, T_A=(children[0].stab, children[1].stab))
    stab = max(rt.good_pulse_bound(0), rt.good_pulse_bound(1)) + mt.stabilisation_after_resync
    return Level(scope, members, f, th, d, sigma, mt.phi_minus, mt.phi_plus, stab, mt=mt, routine=cons, rt=rt,
                 rt_rel=rt0, partition=part, children=children)


# ---------------------------------------------------------------------------
# installation on a world
# ---------------------------------------------------------------------------

class PulseMonitor(Component):
    """Collects one level's pulses at its correct members and reports the
    first time K consecutive groups look stabilised."""

    def __init__(self, level: Level, nodes: Dict[int, Node], correct: Sequence[int], groups: int,
                 on_stable: Callable[[Q], None]):
        self.level = level
        self.correct = [v for v in level.members if v in correct]
        self.pulses = {v: [] for v in self.correct}
        self.groups = groups
        self.on_stable = on_stable
        self.stable_at: Optional[Q] = None
        for v in self.correct:
            nodes[v].listen(level.pulse_key, self)

    def on_signal(self, ctx, key):
        self.pulses[ctx.node.id].append(ctx.t)
        if self.stable_at is not None:
            return
        if min(len(p) for p in self.pulses.values()) < self.groups:
            return
        lv = self.level
        st = detect_stabilisation(self.pulses, lv.sigma, lv.phi_minus, lv.phi_plus, min_groups=self.groups)
        if st is not None:
            self.stable_at = ctx.t
            self.on_stable(ctx.t)


@dataclass
class Installed:
    level: Level
    pulsers: Dict[int, object] = field(default_factory=dict)
    resyncs: Dict[int, object] = field(default_factory=dict)
    children: List["Installed"] = field(default_factory=list)
    activated_at: Optional[Q] = None
    monitor: Optional[PulseMonitor] = None
    faulty_blocks: List[int] = field(default_factory=list)
    correct_member: bool = True


def install(level: Level, world, nodes: Dict[int, Node], correct: Sequence[int], rng: random.Random,
            groups: int, on_top_stable: Optional[Callable[[Q], None]] = None, top: bool = True) -> Installed:
    """Install the tree on the hosting nodes. Leaves start at time 0 from
    arbitrary states; a main level is started (again from arbitrary states)
    once each of its children that has few enough faults looks stabilised."""
    inst = Installed(level)
    faulty = set(range(world.n)) - set(correct)
    inst.correct_member = sum(1 for v in level.members if v in faulty) <= level.f
    hosts = [v for v in level.members if v in nodes]
    if level.is_base:
        lead = level.members[0]
        leader, follower = base_leader_machine(level.P), base_follower_machine()
        for v in hosts:
            spec = leader if v == lead else follower
            mi = MachineInstance(spec, nodes[v], level.scope, members=level.members,
                                 wires={"beat": f"{level.scope}.beat"}, accept={"beat": [lead]})
            mi.randomize(rng, world.n)
            inst.pulsers[v] = mi
        inst.activated_at = Q(0)
    else:
        rs_spec = ResyncSpec(level.rs_scope, level.members, level.f, level.partition, level.rt,
                             (level.children[0].pulse_key, level.children[1].pulse_key))
        mp_spec = MainPulserSpec(level.scope, level.members, level.f, level.mt, level.routine,
                                 rs_spec.output_key)
        for v in hosts:
            pn = attach_main_pulser(nodes[v], mp_spec)
            pn.main.active = pn.aux.active = False
            inst.pulsers[v] = pn
            inst.resyncs[v] = attach_resync(nodes[v], rs_spec, active=False)
        inst.faulty_blocks = level.partition.faulty_blocks(faulty)
        waiting = set()

        def activate(t):
            if inst.activated_at is not None:
                return
            inst.activated_at = t
            for v in hosts:
                world.trace.add(t, v, "start", level.scope)
                randomize_main_pulser(inst.pulsers[v], rng, world.n)
                pn = inst.pulsers[v]
                pn.main.active = pn.aux.active = True
                randomize_resync(inst.resyncs[v], rng, world.n)

        def child_stable(h):
            def cb(t):
                waiting.discard(h)
                if not waiting:
                    world.call_at(t, activate)
            return cb

        for h, child in enumerate(level.children):
            ci = install(child, world, nodes, correct, rng, groups, top=False)
            inst.children.append(ci)
            if h not in inst.faulty_blocks:
                waiting.add(h)
                ci.monitor = PulseMonitor(child, nodes, correct, groups, child_stable(h))
        if not waiting:
            world.call_at(Q(0), activate)
    if top and on_top_stable is not None:
        inst.monitor = PulseMonitor(level, nodes, correct, groups, on_top_stable)
    return inst


# ---------------------------------------------------------------------------
# end-to-end run
# ---------------------------------------------------------------------------

FAULT_KINDS = ("equivocator", "vote-spoiler", "state-mimic", "silent", "random")


def default_faults(tree: Level, placement: str, seed: int, d) -> Dict[int, dict]:
    """f faulty nodes of the top level, either all in one block ("same") or
    spread over both blocks ("split"). Behaviours are cheap to simulate at
    long time scales: random spam is confined to an initial transient."""
    rng = random.Random(seed * 1009 + 7)
    blocks = tree.partition.blocks
    if placement == "same":
        block = list(blocks[seed % 2])
        chosen = rng.sample(block, min(tree.f, len(block)))
    elif placement == "split":
        chosen = [rng.choice(list(blocks[0]))]
        rest = [v for v in tree.members if v not in chosen and v in blocks[1]]
        chosen += rng.sample(rest, tree.f - 1)
    else:
        raise ValueError(f"unknown placement {placement!r}")
    out = {}
    for i, v in enumerate(sorted(chosen)):
        kind = FAULT_KINDS[(seed + i) % len(FAULT_KINDS)]
        spec = {"kind": kind, "seed": seed * 31 + i}
        if kind == "equivocator":
            spec["react"] = {"pulse": 0.5, "wait": 0.5, "propose": 0.5, "vote": 0.5, "beat": 0.5}
        elif kind == "random":
            spec["period"] = fmt(4 * q(d))
            spec["until"] = fmt(400 * q(d))
        out[v] = spec
    return out


def run_recursion(scn):
    from .scenario import Env, RunResult, ScenarioError, _filter_checks
    try:
        tree = _tree_for(scn)
    except InfeasibleTimeouts as exc:
        raise ScenarioError(f"infeasible parameters: {exc}") from None
    groups = int(scn.options.get("groups", 3))
    if not scn.faulty and scn.f > 0:
        scn = scn.with_seed(scn.seed)
        scn.faulty = default_faults(tree, scn.options.get("placement", "split"), scn.seed, scn.d)
    horizon = scn.duration or (tree.staged_bound(groups) + (groups + 1) * tree.phi_plus
                               + q(scn.options.get("tail", 0)))
    env = Env(scn, horizon)
    w, rng = env.world, env.rng
    tags = [t for lv in tree.walk() for t in lv.tags()]
    frame_junk = {t: (lambda r: (r.randint(1, 4), bytes([r.randint(0, 2)]))) for t in tags if t.endswith(".frame")}
    env.add_catalog(tags, frame_junk)
    nodes = {v: Node(v, w) for v in env.hosts}
    done = {}

    def top_stable(t):
        done["t"] = t
    install(tree, w, nodes, env.correct, rng, groups, on_top_stable=top_stable)
    # keep running for ``tail`` time units after the top looks stable
    tail = q(scn.options.get("tail", 0))
    w.stop_when = lambda world: "t" in done and world.now >= done["t"] + tail
    env.inflight(int(scn.init.get("inflight", 2)))
    env.adv.start()
    w.advance(horizon)
    rec = w.trace.records
    checks = recursion_checks(tree, rec, env.correct, groups)
    metrics = recursion_metrics(scn, rec, env.correct, tree)
    return RunResult(scn, w.trace, metrics, _filter_checks(checks, scn.asserts), tree.report(),
                     _machines_text(tree), env.correct, w.processed)


def _tree_for(scn) -> Level:
    return build_pulser(scn.n, scn.f, scn.theta, scn.d, scn.phi, scn.sigma, scn.routine,
                        base_period=scn.options.get("base_period"))


@dataclass
class LevelView:
    """What the trace says about one level: when it was started and whether
    its fault budget holds."""

    level: Level
    started: Optional[Q]
    within_budget: bool
    faulty_blocks: List[int]
    correct: List[int]


def level_views(tree: Level, records, correct: Sequence[int]) -> List[LevelView]:
    starts: Dict[str, Q] = {}
    for t, node, kind, sc, _ in records:
        if kind == "start" and sc not in starts:
            starts[sc] = t
    faulty = {v for v in tree.members if v not in correct}
    out = []
    for lv in tree.walk():
        within = sum(1 for v in lv.members if v in faulty) <= lv.f
        blocks = [] if lv.is_base else lv.partition.faulty_blocks(faulty)
        started = Q(0) if lv.is_base else starts.get(lv.scope)
        out.append(LevelView(lv, started, within, blocks, [v for v in lv.members if v in correct]))
    return out


def recursion_checks(tree: Level, rec, correct: Sequence[int], groups: int) -> list:
    from .lemmas import main_lemmas, resync_lemmas
    from .scenario import Check
    d = tree.d
    checks = []
    views = level_views(tree, rec, correct)
    st = detect_stabilisation(pulse_times(rec, tree.pulse_scope, correct), tree.sigma, tree.phi_minus,
                              tree.phi_plus, min_groups=groups)
    act = views[0].started
    if st is None:
        checks.append(Check("recursion.stabilisation", False,
                            f"no stable suffix of the top pulser by t={dec(_end(rec))}"))
    else:
        bound = act + tree.stab_rel if act is not None else tree.stab
        checks.append(Check("recursion.stabilisation", st.time <= bound,
                            f"stable from {dec(st.time)}, top started at {dec(act)}, bound {dec(bound)}", st.time))
        checks.append(Check("recursion.skew", st.max_skew <= 2 * d, f"max skew {dec(st.max_skew)} <= 2d"))
        ok = bool(st.gaps) and tree.phi_minus <= st.min_gap and st.max_gap <= tree.phi_plus
        checks.append(Check("recursion.gaps", ok, (f"gaps in [{dec(st.min_gap)}, {dec(st.max_gap)}] within "
                                                   f"[{dec(tree.phi_minus)}, {dec(tree.phi_plus)}]")
                            if st.gaps else "no gaps"))
    rates = bit_rates(rec, d, correct)
    over = {v: (b, tree.budget(v)) for v, b in rates.items() if b > 2 * tree.budget(v)}
    worst = max(rates, key=lambda v: rates[v] / tree.budget(v)) if rates else None
    checks.append(Check("recursion.bits", not over,
                        (f"node {worst}: {rates[worst]} bits per d, budget {tree.budget(worst)} (x2 slack)"
                         if worst is not None else "no sends") + (f"; over budget: {over}" if over else "")))
    for view in views:
        lv = view.level
        if lv.is_base:
            continue
        # a level within its fault budget has at most one block over budget
        checks.append(Check(f"recursion.dichotomy.{lv.scope}", len(view.faulty_blocks) < 2 or not view.within_budget,
                            f"blocks over their fault budget: {view.faulty_blocks}"))
        if not view.within_budget or view.started is None:
            continue
        t0, rt = view.started, lv.rt_rel
        good = [g.t for g in good_resyncs(rec, lv.rs_scope, view.correct, rt.rho, rt.Psi)
                if g.t >= t0 + lv.mt.cleanup]
        ok_blocks = [h for h in (0, 1) if h not in view.faulty_blocks]
        for c in main_lemmas(rec, view.correct, lv.mt, lv.scope, good, lv.f) + \
                resync_lemmas(rec, view.correct, rt, lv.rs_scope, ok_blocks, origin=t0, require_group=False):
            c.name = f"{c.name}.{lv.scope}"
            checks.append(c)
    return checks


def _end(rec) -> Q:
    return max((r[0] for r in rec), default=Q(0))


def recursion_metrics(scn, rec, correct: Sequence[int], tree: Optional[Level] = None) -> Dict[str, object]:
    tree = tree or _tree_for(scn)
    groups = int(scn.options.get("groups", 3))
    levels = []
    for view in level_views(tree, rec, correct):
        lv = view.level
        st = detect_stabilisation(pulse_times(rec, lv.pulse_scope, view.correct), lv.sigma, lv.phi_minus,
                                  lv.phi_plus, min_groups=groups) if view.correct else None
        info = {"scope": lv.scope, "n": lv.n, "f": lv.f, "started": fmt(view.started) if view.started is not None
                else None, "within_budget": view.within_budget, "stabilised": fmt(st.time) if st else None}
        if not lv.is_base:
            info["faulty_blocks"] = view.faulty_blocks
            if view.started is not None:
                info["good_resyncs"] = [fmt(g.t) for g in good_resyncs(rec, lv.rs_scope, view.correct,
                                                                       lv.rt_rel.rho, lv.rt_rel.Psi)][:5]
        levels.append(info)
    st = detect_stabilisation(pulse_times(rec, tree.pulse_scope, correct), tree.sigma, tree.phi_minus,
                              tree.phi_plus, min_groups=groups)
    return Metrics(
        stabilisation=st.summary() if st else None,
        max_bits={str(v): b for v, b in sorted(bit_rates(rec, tree.d, correct).items())},
        verdicts=verdicts(rec), late_drops=count_kind(rec, "late"), aborts=count_kind(rec, "abort"),
        extra={"levels": levels, "budget": {str(v): tree.budget(v) for v in correct}, "end": fmt(_end(rec))},
    ).as_dict()


def _machines_text(tree: Level) -> str:
    out, seen = [], set()
    for lv in tree.walk():
        if lv.is_base:
            specs = [base_leader_machine(lv.P), base_follower_machine()]
        else:
            rs = ResyncSpec(lv.rs_scope, lv.members, lv.f, lv.partition, lv.rt, ("a", "b"))
            mp = MainPulserSpec(lv.scope, lv.members, lv.f, lv.mt, lv.routine, rs.output_key)
            specs = mp.machines() + rs.machines()
        out.append(f"## {lv.scope}")
        out.extend(s.dump() for s in specs)
    return "\n\n".join(out)
