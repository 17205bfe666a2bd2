"""Guarded logical state machines and the per-node runtime that executes them.

A :class:`MachineSpec` is declarative data: states, timers (reset on entry to
designated states), memory flags and sliding-window buffers, guard tables in
priority order, and broadcast/signal actions on state entry. A
:class:`MachineInstance` is one copy of a spec hosted on a :class:`Node`.

Stimuli (message receipt, timer expiry, external signal) start a *cascade*:
affected instances re-evaluate their guards until nothing changes. Internal
signals (for example a consensus output, or a voter entering GO) are visible
to every instance during the cascade that raised them. Edge-type inputs (the
triggering receipt, the firing timer, each signal) can cause at most one
transition per instance, and an instance entering the same state twice in one
cascade is reported as a zero-delay cycle.
"""
from __future__ import annotations

import random
from collections import deque
from typing import Callable, Dict, Iterable, List, Optional, Sequence

from .sim import TIMER, SimulationError, ZeroDelayCycle, World
from .timebase import ZERO, fmt, q


# ---------------------------------------------------------------------------
# guard expressions
# ---------------------------------------------------------------------------

class Guard:
    def compile(self, spec: "MachineSpec") -> Callable:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError

    def __or__(self, other):
        return Any(self, other)

    def __and__(self, other):
        return All(self, other)

    def __invert__(self):
        return Not(self)


class Timeout(Guard):
    """Level guard: the named timer has expired (remaining value is 0)."""

    def __init__(self, timer: str):
        self.timer = timer

    def compile(self, spec):
        ti = spec.timer_index(self.timer)

        def fn(inst, ctx):
            e = inst.exp[ti]
            return e is not None and e <= ctx.local
        return fn

    def describe(self):
        return f"<{self.timer}>"


class TimeoutFires(Guard):
    """Edge guard: this stimulus is the expiry of the named timer."""

    def __init__(self, timer: str):
        self.timer = timer

    def compile(self, spec):
        ti = spec.timer_index(self.timer)

        def fn(inst, ctx):
            return ctx.fired is inst and ctx.fired_ti == ti and inst.used != ctx.cid
        return fn

    def describe(self):
        return f"<{self.timer}> fires"


class AtLeast(Guard):
    """Level guard: at least ``k`` distinct senders recorded in an input."""

    def __init__(self, inp: str, k: int):
        self.inp = inp
        self.k = k

    def compile(self, spec):
        ii = spec.input_index(self.inp)
        k = self.k
        kind, length = spec.inputs[ii][1], spec.inputs[ii][2]
        if kind == "flags":
            def fn(inst, ctx):
                return len(inst.buf[ii]) >= k
        else:
            def fn(inst, ctx):
                buf = inst.buf[ii]
                if len(buf) < k:
                    return False
                lo = ctx.local - length
                c = 0
                for x in buf.values():
                    if x > lo:
                        c += 1
                return c >= k
        return fn

    def describe(self):
        return f"|{self.inp}| >= {self.k}"


class OnReceipt(Guard):
    """Edge guard: this stimulus is a receipt on ``inp`` and ``|inp| >= k``."""

    def __init__(self, inp: str, k: int):
        self.inp = inp
        self.k = k

    def compile(self, spec):
        ii = spec.input_index(self.inp)
        level = AtLeast(self.inp, self.k).compile(spec)

        def fn(inst, ctx):
            return (inst, ii) in ctx.recv and inst.used != ctx.cid and level(inst, ctx)
        return fn

    def describe(self):
        return f"receipt on {self.inp} with |{self.inp}| >= {self.k}"


class Signal(Guard):
    """Edge guard: the named internal/external signal was raised in this cascade."""

    def __init__(self, name: str):
        self.name = name

    def compile(self, spec):
        si = spec.signal_index(self.name)

        def fn(inst, ctx):
            key = inst.sig_in[si]
            if key not in ctx.signals:
                return False
            return not (inst.used == ctx.cid and key in inst.used_signals)
        return fn

    def describe(self):
        return f"signal {self.name}"


class InState(Guard):
    """Level guard on a peer machine hosted on the same node."""

    def __init__(self, peer: str, *states: str):
        self.peer = peer
        self.states = states

    def compile(self, spec):
        peer = self.peer
        names = self.states

        def fn(inst, ctx):
            other = inst.peers[peer]
            return other.spec.names[other.state] in names
        return fn

    def describe(self):
        return f"{self.peer} in {{{', '.join(self.states)}}}"


class Always(Guard):
    def compile(self, spec):
        return lambda inst, ctx: True

    def describe(self):
        return "immediately"


class Any(Guard):
    def __init__(self, *parts: Guard):
        self.parts = parts

    def compile(self, spec):
        fns = [p.compile(spec) for p in self.parts]

        def fn(inst, ctx):
            for f in fns:
                if f(inst, ctx):
                    return True
            return False
        return fn

    def describe(self):
        return "(" + " or ".join(p.describe() for p in self.parts) + ")"


class All(Guard):
    def __init__(self, *parts: Guard):
        self.parts = parts

    def compile(self, spec):
        fns = [p.compile(spec) for p in self.parts]

        def fn(inst, ctx):
            for f in fns:
                if not f(inst, ctx):
                    return False
            return True
        return fn

    def describe(self):
        return "(" + " and ".join(p.describe() for p in self.parts) + ")"


class Not(Guard):
    def __init__(self, part: Guard):
        self.part = part

    def compile(self, spec):
        f = self.part.compile(spec)
        return lambda inst, ctx: not f(inst, ctx)

    def describe(self):
        return f"not {self.part.describe()}"


def threshold(flags: Iterable[int], k: int, strict: bool = False) -> bool:
    """``|H| >= k`` (or ``> k`` when ``strict``) over distinct senders."""
    size = len(set(flags))
    return size > k if strict else size >= k


# ---------------------------------------------------------------------------
# machine specification
# ---------------------------------------------------------------------------

class MachineSpec:
    """Declarative guarded state machine."""

    def __init__(self, name: str, states: Sequence[str], pulse_states: Sequence[str] = ()):
        if len(set(states)) != len(states):
            raise ValueError("duplicate state names")
        self.name = name
        self.names = list(states)
        self.index = {s: i for i, s in enumerate(states)}
        unknown = set(pulse_states) - set(states)
        if unknown:
            raise ValueError(f"pulse states {sorted(unknown)} are not states")
        self.pulse_states = frozenset(self.index[s] for s in pulse_states)
        self.timers: List[list] = []          # [name, duration, reset_states]
        self.inputs: List[list] = []          # [name, kind, length, clear_states]
        self.signals: List[str] = []
        self.broadcasts: Dict[int, str] = {}
        self.enter_signals: Dict[int, List[str]] = {}
        self.signal_resets: Dict[str, List[str]] = {}
        self.edges: List[tuple] = []          # (src, dst, guard, label, priority)
        self.notes: List[str] = []
        self._table = None

    # -- declarations -----------------------------------------------------
    def timer(self, name: str, duration, resets: Iterable[str] = ()):
        self._check_states(resets)
        self.timers.append([name, q(duration), frozenset(self.index[s] for s in resets)])
        return self

    def flags(self, name: str, clears: Iterable[str] = ()):
        self._check_states(clears)
        self.inputs.append([name, "flags", None, frozenset(self.index[s] for s in clears)])
        return self

    def window(self, name: str, length, clears: Iterable[str] = ()):
        self._check_states(clears)
        self.inputs.append([name, "window", q(length), frozenset(self.index[s] for s in clears)])
        return self

    def broadcast(self, state: str, tag: str):
        self._check_states([state])
        self.broadcasts[self.index[state]] = tag
        return self

    def emit(self, state: str, signal: str):
        self._check_states([state])
        self.enter_signals.setdefault(self.index[state], []).append(signal)
        self._declare_signal(signal)
        return self

    def reset_on_signal(self, signal: str, timer: str):
        self.timer_index(timer)
        self.signal_resets.setdefault(signal, []).append(timer)
        self._declare_signal(signal)
        return self

    def edge(self, src: str, dst: str, guard: Guard, label: str = "", priority: Optional[int] = None):
        if src != "*":
            self._check_states([src])
        self._check_states([dst])
        prio = len(self.edges) if priority is None else priority
        self.edges.append((src, dst, guard, label, prio))
        self._table = None
        return self

    def note(self, text: str):
        self.notes.append(text)
        return self

    # -- lookups ----------------------------------------------------------
    def _check_states(self, states):
        for s in states:
            if s not in self.index:
                raise ValueError(f"{self.name}: unknown state {s!r}")

    def _declare_signal(self, name):
        if name not in self.signals:
            self.signals.append(name)

    def timer_index(self, name: str) -> int:
        for i, t in enumerate(self.timers):
            if t[0] == name:
                return i
        raise ValueError(f"{self.name}: guard references undeclared timer {name!r}")

    def input_index(self, name: str) -> int:
        for i, t in enumerate(self.inputs):
            if t[0] == name:
                return i
        raise ValueError(f"{self.name}: guard references undeclared input {name!r}")

    def signal_index(self, name: str) -> int:
        self._declare_signal(name)
        return self.signals.index(name)

    def duration(self, timer: str):
        return self.timers[self.timer_index(timer)][1]

    # -- compilation ------------------------------------------------------
    def table(self):
        """Per-state ordered list of ``(dst, fn, detail, self_loop)``."""
        if self._table is not None:
            return self._table
        per_state: List[list] = [[] for _ in self.names]
        for src, dst, guard, label, prio in self.edges:
            fn = guard.compile(self)
            srcs = range(len(self.names)) if src == "*" else [self.index[src]]
            for s in srcs:
                d = self.index[dst]
                per_state[s].append((prio, d, fn, label, s == d))
        table = []
        for s, lst in enumerate(per_state):
            prios = [p for p, *_ in lst]
            if len(prios) != len(set(prios)):
                raise ValueError(f"{self.name}: guards leaving {self.names[s]} share a priority")
            lst.sort(key=lambda e: e[0])
            table.append([(d, fn, f"{self.names[s]}>{self.names[d]}", loop, label)
                          for _, d, fn, label, loop in lst])
        self._table = table
        return table

    def validate(self):
        self.table()
        return self

    def dump(self) -> str:
        out = [f"machine {self.name}"]
        out.append("  states: " + ", ".join(
            s + (" (pulse)" if self.index[s] in self.pulse_states else "") for s in self.names))
        for name, dur, resets in self.timers:
            rs = ", ".join(self.names[i] for i in sorted(resets)) or "signal only"
            out.append(f"  timer {name} = {fmt(dur)} (reset on entering {rs})")
        for sig, timers in self.signal_resets.items():
            out.append(f"  signal {sig} resets {', '.join(timers)}")
        for name, kind, length, clears in self.inputs:
            what = "memory flags" if kind == "flags" else f"sliding window of length {fmt(length)}"
            cl = ", ".join(self.names[i] for i in sorted(clears))
            out.append(f"  input {name}: {what}" + (f"; cleared on entering {cl}" if cl else ""))
        for st, tag in sorted(self.broadcasts.items()):
            out.append(f"  entering {self.names[st]} broadcasts {tag}")
        for st, sigs in sorted(self.enter_signals.items()):
            out.append(f"  entering {self.names[st]} raises {', '.join(sigs)}")
        out.append("  transitions (priority order):")
        for src, dst, guard, label, prio in sorted(self.edges, key=lambda e: e[4]):
            tag = f"[{label}] " if label else ""
            out.append(f"    {tag}{src} -> {dst} if {guard.describe()}")
        for n in self.notes:
            out.append(f"  note: {n}")
        return "\n".join(out)


# ---------------------------------------------------------------------------
# runtime
# ---------------------------------------------------------------------------

class Ctx:
    """Per-cascade evaluation context."""

    __slots__ = ("cid", "t", "local", "node", "fired", "fired_ti", "recv", "signals",
                 "queue", "entries")

    def __init__(self, cid, t, local, node):
        self.cid = cid
        self.t = t
        self.local = local
        self.node = node
        self.fired = None
        self.fired_ti = -1
        self.recv = set()
        self.signals = set()
        self.queue = deque()
        self.entries = {}

    def mark(self, inst):
        if inst.queued != self.cid:
            inst.queued = self.cid
            self.queue.append(inst)


class MachineInstance:
    """One running copy of a :class:`MachineSpec` on a node."""

    def __init__(self, spec: MachineSpec, node: "Node", scope: str, *,
                 wires: Optional[Dict[str, str]] = None,
                 accept: Optional[Dict[str, Iterable[int]]] = None,
                 out_tags: Optional[Dict[str, str]] = None,
                 signals: Optional[Dict[str, str]] = None,
                 members: Optional[Sequence[int]] = None,
                 active: bool = True):
        self.spec = spec
        self.node = node
        self.scope = scope
        self.table = spec.table()
        self.state = 0
        self.active = active
        self.members = list(members) if members is not None else None
        self.exp: List = [None] * len(spec.timers)
        self.gen: List[int] = [0] * len(spec.timers)
        self.buf: List = [set() if kind == "flags" else {} for _, kind, _, _ in spec.inputs]
        self.queued = -1
        self.used = -1
        self.used_signals: set = set()
        self.loop_cid = -1
        self.peers: Dict[str, "MachineInstance"] = {}
        self.watchers: List["MachineInstance"] = []
        self.enter_hooks: Dict[int, List[Callable]] = {}
        self.exit_hooks: Dict[int, List[Callable]] = {}
        wires = wires or {}
        signals = signals or {}
        out_tags = out_tags or {}
        accept = accept or {}
        self.sig_in = [signals.get(s, f"{scope}.{s}") for s in spec.signals]
        self.sig_key = dict(zip(spec.signals, self.sig_in))
        self.pulse_key = f"{scope}.pulse"
        self.out_tag = {st: out_tags.get(tag, f"{scope}.{tag}") for st, tag in spec.broadcasts.items()}
        self.enter_keys = {st: [self.sig_key[s] for s in sigs] for st, sigs in spec.enter_signals.items()}
        self.wire = {}
        for ii, (name, _, _, _) in enumerate(spec.inputs):
            tag = wires.get(name, f"{scope}.{name}")
            acc = accept.get(name, members)
            self.wire[name] = tag
            node.route(tag, self, ii, frozenset(acc) if acc is not None else None)
        for sig, timers in spec.signal_resets.items():
            node.listen(self.sig_key[sig], self)
        self._sig_resets = {self.sig_key[s]: [spec.timer_index(t) for t in ts]
                            for s, ts in spec.signal_resets.items()}
        for s in spec.signals:
            node.listen(self.sig_key[s], self)
        node.instances.append(self)

    # -- wiring -----------------------------------------------------------
    def link(self, alias: str, other: "MachineInstance"):
        """Allow this machine's guards to read ``other``'s state."""
        self.peers[alias] = other
        other.watchers.append(self)

    def on_enter(self, state: str, hook: Callable):
        self.enter_hooks.setdefault(self.spec.index[state], []).append(hook)

    def on_exit(self, state: str, hook: Callable):
        self.exit_hooks.setdefault(self.spec.index[state], []).append(hook)

    @property
    def state_name(self) -> str:
        return self.spec.names[self.state]

    # -- initial configuration -------------------------------------------
    def setup(self, state: str, *, timers: Optional[Dict[str, object]] = None,
              flags: Optional[Dict[str, Iterable[int]]] = None,
              windows: Optional[Dict[str, Dict[int, object]]] = None):
        """Install an arbitrary configuration at the current engine time.

        ``timers`` gives remaining local time per timer (missing timers are
        expired), ``windows`` gives per-sender ages (local time since receipt).
        """
        world = self.node.world
        local = self.node.clock.read(world.now)
        self.state = self.spec.index[state]
        timers = timers or {}
        for ti, (name, dur, _) in enumerate(self.spec.timers):
            rem = q(timers.get(name, 0))
            if rem < 0 or rem > dur:
                raise ValueError(f"remaining {fmt(rem)} of {name} outside [0, {fmt(dur)}]")
            self._arm(ti, local + rem)
        for name, senders in (flags or {}).items():
            ii = self.spec.input_index(name)
            self.buf[ii] = set(senders)
        for name, ages in (windows or {}).items():
            ii = self.spec.input_index(name)
            self.buf[ii] = {u: local - q(a) for u, a in ages.items()}

    def randomize(self, rng: random.Random, n: int, states: Optional[Sequence[str]] = None):
        """Seeded arbitrary configuration: state, timers, flags and windows."""
        names = list(states) if states else self.spec.names
        st = rng.choice(names)
        timers = {}
        for name, dur, _ in self.spec.timers:
            timers[name] = dur * rng.randint(0, 64) / 64
        flags, windows = {}, {}
        for name, kind, length, _ in self.spec.inputs:
            senders = [u for u in range(n) if rng.random() < 0.5]
            if kind == "flags":
                flags[name] = senders
            else:
                windows[name] = {u: length * rng.randint(0, 64) / 64 for u in senders}
        self.setup(st, timers=timers, flags=flags, windows=windows)

    def _arm(self, ti, expiry_local):
        self.exp[ti] = expiry_local
        self.gen[ti] += 1
        node = self.node
        node.world.push(node.clock.inverse(expiry_local), TIMER, self, ti, self.gen[ti])

    def reset_timer(self, name_or_index, local):
        ti = name_or_index if isinstance(name_or_index, int) else self.spec.timer_index(name_or_index)
        self._arm(ti, local + self.spec.timers[ti][1])

    def remaining(self, name: str, local=None):
        ti = self.spec.timer_index(name)
        if local is None:
            local = self.node.clock.read(self.node.world.now)
        e = self.exp[ti]
        return ZERO if e is None else max(ZERO, e - local)

    def count(self, name: str, local=None) -> int:
        ii = self.spec.input_index(name)
        _, kind, length, _ = self.spec.inputs[ii]
        if kind == "flags":
            return len(self.buf[ii])
        if local is None:
            local = self.node.clock.read(self.node.world.now)
        return sum(1 for x in self.buf[ii].values() if x > local - length)

    # -- execution --------------------------------------------------------
    def step(self, ctx: Ctx) -> bool:
        for dst, fn, detail, loop, label in self.table[self.state]:
            if loop and self.loop_cid == ctx.cid:
                continue
            if fn(self, ctx):
                if self.used != ctx.cid:
                    self.used = ctx.cid
                    self.used_signals = set(ctx.signals)
                else:
                    self.used_signals |= ctx.signals
                if loop:
                    self.loop_cid = ctx.cid
                self.enter(dst, ctx, detail)
                return True
        return False

    def force(self, state: str, ctx: Ctx, why: str = "forced"):
        """Enter ``state`` regardless of guards (initialisation signals)."""
        self.active = True
        self.enter(self.spec.index[state], ctx, f"{self.spec.names[self.state]}>{state}")

    def halt(self):
        self.active = False
        for ti in range(len(self.exp)):
            self.gen[ti] += 1
            self.exp[ti] = None

    def enter(self, dst: int, ctx: Ctx, detail: str):
        key = (id(self), dst)
        if key in ctx.entries:
            raise ZeroDelayCycle(
                f"node {self.node.id} {self.scope}: state {self.spec.names[dst]} revisited at t={fmt(ctx.t)}")
        ctx.entries[key] = True
        node = self.node
        world = node.world
        src = self.state
        t = ctx.t
        rec = world.trace.records
        rec.append((t, node.id, "tr", self.scope, detail))
        hooks = self.exit_hooks.get(src)
        if hooks and src != dst:
            for h in hooks:
                h(self, ctx)
        self.state = dst
        spec = self.spec
        for ii, (_, kind, _, clears) in enumerate(spec.inputs):
            if dst in clears:
                self.buf[ii] = set() if kind == "flags" else {}
        for ti, (_, dur, resets) in enumerate(spec.timers):
            if dst in resets:
                self._arm(ti, ctx.local + dur)
        if dst in spec.pulse_states:
            rec.append((t, node.id, "pulse", self.scope, ""))
            node.emit(self.pulse_key, ctx)
        tag = self.out_tag.get(dst)
        if tag is not None:
            world.broadcast(node.id, tag, None, 1, self.members)
        for k in self.enter_keys.get(dst, ()):
            node.emit(k, ctx)
        hooks = self.enter_hooks.get(dst)
        if hooks:
            for h in hooks:
                h(self, ctx)
        ctx.mark(self)
        for w in self.watchers:
            ctx.mark(w)

    def receive(self, ii, sender, ctx):
        buf = self.buf[ii]
        if type(buf) is set:
            buf.add(sender)
        else:
            buf[sender] = ctx.local
        ctx.recv.add((self, ii))
        ctx.mark(self)

    def signal(self, key, ctx):
        for ti in self._sig_resets.get(key, ()):
            self._arm(ti, ctx.local + self.spec.timers[ti][1])
        ctx.mark(self)

    def __hash__(self):
        return id(self)

    def __repr__(self):
        return f"<{self.scope}@{self.node.id}:{self.state_name}>"


class Component:
    """Base for non-declarative node components (consensus simulation...)."""

    def on_message(self, ctx: Ctx, sender: int, tag: str, payload):
        pass

    def on_signal(self, ctx: Ctx, key: str):
        pass


class Node:
    """A correct node hosting a stack of machine instances and components."""

    def __init__(self, vid: int, world: World):
        self.id = vid
        self.world = world
        self.clock = world.clocks[vid]
        self.instances: List[MachineInstance] = []
        self.routes: Dict[str, list] = {}
        self.sig_routes: Dict[str, list] = {}
        self.faulty = False
        world.nodes[vid] = self

    # -- wiring -----------------------------------------------------------
    def route(self, tag: str, target, ii=None, accept=None):
        self.routes.setdefault(tag, []).append((target, ii, accept))

    def listen(self, key: str, target):
        lst = self.sig_routes.setdefault(key, [])
        if target not in lst:
            lst.append(target)

    def send_broadcast(self, tag: str, payload=None, bits: int = 1):
        self.world.broadcast(self.id, tag, payload, bits)

    # -- stimuli ----------------------------------------------------------
    def _ctx(self, t) -> Ctx:
        w = self.world
        w._cid += 1
        return Ctx(w._cid, t, self.clock.read(t), self)

    def deliver(self, t, sender, tag, payload):
        routes = self.routes.get(tag)
        if not routes:
            return
        ctx = self._ctx(t)
        for target, ii, accept in routes:
            if ii is None:
                target.on_message(ctx, sender, tag, payload)
            elif target.active and (accept is None or sender in accept):
                target.receive(ii, sender, ctx)
        self._cascade(ctx)

    def timer(self, t, inst, ti, gen):
        if inst.gen[ti] != gen or not inst.active:
            return
        ctx = self._ctx(t)
        ctx.fired = inst
        ctx.fired_ti = ti
        ctx.mark(inst)
        self._cascade(ctx)

    def external(self, t, key):
        ctx = self._ctx(t)
        self.world.trace.records.append((t, self.id, "ext", key, ""))
        self.emit(key, ctx)
        self._cascade(ctx)

    def run_in_cascade(self, t, fn):
        """Run ``fn(ctx)`` as a stimulus at time ``t`` (used by components)."""
        ctx = self._ctx(t)
        fn(ctx)
        self._cascade(ctx)

    def emit(self, key: str, ctx: Ctx):
        ctx.signals.add(key)
        for target in self.sig_routes.get(key, ()):
            if isinstance(target, MachineInstance):
                if target.active:
                    target.signal(key, ctx)
            else:
                target.on_signal(ctx, key)

    def _cascade(self, ctx: Ctx):
        queue = ctx.queue
        while queue:
            inst = queue.popleft()
            inst.queued = -1
            if inst.active:
                inst.step(ctx)


def check_guard_refs(spec: MachineSpec):
    """Compile every guard, raising if any references an undeclared name."""
    spec.table()
    return True


class SimulationAbort(SimulationError):
    pass
