"""Synchronous binary consensus routines and their pulse-driven simulation.

A routine is a factory: ``routine.instance(v, x)`` returns the per-node state
object with ``send(r) -> {receiver: bytes}``, ``recv(r, {sender: bytes})`` and
``output()``. Rounds are numbered from 1 to ``routine.rounds``.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set

from .runtime import Component, Ctx, MachineInstance, Node

MAX_FRAME = 16   # bytes; longer frames are garbage


class ConsensusRoutine:
    name = "abstract"
    rounds: int
    msg_bits: int = 8

    def __init__(self, n: int, f: int):
        self.n = n
        self.f = f

    def instance(self, v: int, x: int):
        raise NotImplementedError

    def describe(self) -> str:
        return f"{self.name}(n={self.n}, f={self.f}, R={self.rounds})"


def _bit(b) -> Optional[int]:
    if isinstance(b, (bytes, bytearray)) and len(b) == 1 and b[0] in (0, 1, 2):
        return b[0]
    return None


BOT = 2
_ENC = (b"\x00", b"\x01", b"\x02")


class PhaseKing(ConsensusRoutine):
    """Phase king with three rounds per phase and f+1 phases (needs n > 3f).

    Round 1 of a phase: broadcast the current value; adopt ``b`` as the
    preference if at least n-f copies of ``b`` arrived, else no preference.
    Round 2: broadcast the preference; a value with more than f supporters
    becomes the current value, and n-f supporters make it strong. Round 3:
    the phase king broadcasts its value, which non-strong nodes adopt.
    """

    name = "phase-king"

    def __init__(self, n: int, f: int):
        if n <= 3 * f or f < 0:
            raise ValueError(f"phase king needs n > 3f (got n={n}, f={f})")
        super().__init__(n, f)
        self.rounds = 3 * (f + 1)

    def king(self, phase: int) -> int:
        return phase % self.n

    def instance(self, v, x):
        return _PhaseKingNode(self, v, x)


class _PhaseKingNode:
    __slots__ = ("rt", "v", "x", "y", "strong")

    def __init__(self, rt: PhaseKing, v: int, x: int):
        self.rt = rt
        self.v = v
        self.x = 1 if x else 0
        self.y = BOT
        self.strong = False

    def send(self, r: int) -> Dict[int, bytes]:
        step = (r - 1) % 3
        n = self.rt.n
        if step == 0:
            return dict.fromkeys(range(n), _ENC[self.x])
        if step == 1:
            return dict.fromkeys(range(n), _ENC[self.y])
        if self.rt.king((r - 1) // 3) == self.v:
            return dict.fromkeys(range(n), _ENC[self.x])
        return {}

    def recv(self, r: int, msgs: Dict[int, bytes]):
        rt = self.rt
        step = (r - 1) % 3
        if step == 0:
            c = [0, 0, 0]
            for b in msgs.values():
                val = _bit(b)
                if val is not None:
                    c[val] += 1
            if c[0] >= rt.n - rt.f:
                self.y = 0
            elif c[1] >= rt.n - rt.f:
                self.y = 1
            else:
                self.y = BOT
        elif step == 1:
            c = [0, 0, 0]
            for b in msgs.values():
                val = _bit(b)
                if val is not None:
                    c[val] += 1
            b = 1 if c[1] > c[0] else 0
            if c[b] > rt.f:
                self.x = b
            self.strong = c[b] >= rt.n - rt.f
        else:
            if not self.strong:
                k = rt.king((r - 1) // 3)
                val = _bit(msgs.get(k))
                if val in (0, 1):
                    self.x = val

    def output(self) -> int:
        return self.x


class SilentConsensus(ConsensusRoutine):
    """Silent wrapper: no correct node sends anything when all inputs are 0.

    Round 1: nodes with input 1 broadcast WAKE. Round 2: nodes that saw more
    than f WAKEs broadcast CONFIRM. Nodes that saw more than f CONFIRMs run the
    inner routine, with input 1 iff they saw at least n-f WAKEs; the others
    stay silent and output 0.

    Inside the inner routine, a message equal to what the sender would send in
    the fault-free all-zero execution is not transmitted, and a missing message
    is read as exactly that value. For inner routines whose correct nodes send
    those all-zero messages whenever all correct inputs are 0 (phase king does),
    a silent non-participant is indistinguishable from a participant with
    input 0, so agreement holds even if only some correct nodes participate.
    """

    def __init__(self, inner: ConsensusRoutine):
        super().__init__(inner.n, inner.f)
        self.inner = inner
        self.name = inner.name + "-silent"
        self.rounds = inner.rounds + 2
        self.zero = self._zero_run()

    def _zero_run(self):
        inner = self.inner
        nodes = [inner.instance(v, 0) for v in range(inner.n)]
        table = {}
        for r in range(1, inner.rounds + 1):
            out = {v: nodes[v].send(r) for v in range(inner.n)}
            for v in range(inner.n):
                table[(r, v)] = out[v]
            for u in range(inner.n):
                nodes[u].recv(r, {v: out[v][u] for v in range(inner.n) if u in out[v]})
        return table

    def instance(self, v, x):
        return _SilentNode(self, v, x)


WAKE = b"\x01"
CONFIRM = b"\x01"


class _SilentNode:
    __slots__ = ("rt", "v", "x", "evidence", "xprime", "inner")

    def __init__(self, rt: SilentConsensus, v: int, x: int):
        self.rt = rt
        self.v = v
        self.x = 1 if x else 0
        self.evidence = False
        self.xprime = 0
        self.inner = None

    def send(self, r):
        n = self.rt.n
        if r == 1:
            return dict.fromkeys(range(n), WAKE) if self.x else {}
        if r == 2:
            return dict.fromkeys(range(n), CONFIRM) if self.evidence else {}
        if self.inner is None:
            return {}
        msgs = self.inner.send(r - 2)
        zero = self.rt.zero[(r - 2, self.v)]
        return {u: b for u, b in msgs.items() if zero.get(u) != b}

    def recv(self, r, msgs):
        rt = self.rt
        if r == 1:
            wakes = sum(1 for b in msgs.values() if b == WAKE)
            self.evidence = wakes > rt.f
            self.xprime = 1 if wakes >= rt.n - rt.f else 0
        elif r == 2:
            confirms = sum(1 for b in msgs.values() if b == CONFIRM)
            if confirms > rt.f:
                self.inner = rt.inner.instance(self.v, self.xprime)
        elif self.inner is not None:
            full = {}
            for u in range(rt.n):
                b = msgs.get(u)
                if b is None:
                    b = rt.zero[(r - 2, u)].get(self.v)
                if b is not None:
                    full[u] = b
            self.inner.recv(r - 2, full)

    @property
    def participating(self):
        return self.inner is not None

    def output(self):
        return self.inner.output() if self.inner is not None else 0


def make_silent(routine: ConsensusRoutine) -> SilentConsensus:
    return SilentConsensus(routine)


class MockExpected(ConsensusRoutine):
    """Stand-in for a randomised routine with expected round complexity.

    All nodes terminate together after a geometric(1/2) number of phases
    (drawn from ``seed``, which the adversary cannot see) and decide a common
    value: the common correct input if inputs agree, else a seeded coin. It
    therefore has deterministic agreement and validity and expected running
    time ``rounds = 2 * phase_len``.
    """

    name = "mock-expected"

    def __init__(self, n: int, f: int, seed: int = 0, phase_len: int = 2, max_phases: int = 64):
        super().__init__(n, f)
        rng = random.Random(seed)
        k = 1
        while k < max_phases and rng.random() >= 0.5:
            k += 1
        self.phase_len = phase_len
        self.term_round = k * phase_len
        self.coin = rng.randint(0, 1)
        self.rounds = 2 * phase_len
        self.inputs: Dict[int, int] = {}

    def instance(self, v, x):
        self.inputs[v] = 1 if x else 0
        return _MockNode(self, v, x)


class _MockNode:
    def __init__(self, rt: MockExpected, v: int, x: int):
        self.rt = rt
        self.v = v
        self.x = 1 if x else 0
        self.round = 0

    def send(self, r):
        return dict.fromkeys(range(self.rt.n), _ENC[self.x]) if r == 1 else {}

    def recv(self, r, msgs):
        self.round = r

    @property
    def terminated(self) -> bool:
        return self.round >= self.rt.term_round

    def output(self):
        vals = set(self.rt.inputs.values())
        return vals.pop() if len(vals) == 1 else self.rt.coin


class ProbabilisticWrap(ConsensusRoutine):
    """Runs an expected-R routine for exactly 2R rounds.

    Nodes whose inner instance terminated output its decision, the others
    output their own input. Validity is deterministic; agreement holds with
    probability at least 1/2 by Markov's inequality.
    """

    def __init__(self, inner: ConsensusRoutine):
        super().__init__(inner.n, inner.f)
        self.inner = inner
        self.name = inner.name + "-wrapped"
        self.rounds = 2 * inner.rounds

    def instance(self, v, x):
        return _WrapNode(self, v, x)


class _WrapNode:
    def __init__(self, rt: ProbabilisticWrap, v, x):
        self.rt = rt
        self.x = 1 if x else 0
        self.inner = rt.inner.instance(v, x)

    def send(self, r):
        return self.inner.send(r)

    def recv(self, r, msgs):
        self.inner.recv(r, msgs)

    def output(self):
        return self.inner.output() if getattr(self.inner, "terminated", True) else self.x


def probabilistic_wrap(routine: ConsensusRoutine) -> ProbabilisticWrap:
    return ProbabilisticWrap(routine)


REGISTRY: Dict[str, Callable[..., ConsensusRoutine]] = {
    "phase-king": lambda n, f, **kw: PhaseKing(n, f),
    "phase-king-silent": lambda n, f, **kw: SilentConsensus(PhaseKing(n, f)),
    "mock-expected": lambda n, f, seed=0, **kw: ProbabilisticWrap(MockExpected(n, f, seed=seed)),
}


def get_routine(name: str, n: int, f: int, **kw) -> ConsensusRoutine:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown consensus routine {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(n, f, **kw)


# ---------------------------------------------------------------------------
# lockstep execution (ideal synchronous rounds)
# ---------------------------------------------------------------------------

@dataclass
class LockstepResult:
    outputs: Dict[int, int]
    correct_messages: int
    rounds: int
    participants: Set[int] = field(default_factory=set)

    @property
    def agreement(self) -> bool:
        return len(set(self.outputs.values())) <= 1


Adversary = Callable[[int, int, int, Dict[int, Dict[int, bytes]]], Optional[bytes]]


def run_lockstep(routine: ConsensusRoutine, inputs: Dict[int, int], faulty: Iterable[int] = (),
                 adversary: Optional[Adversary] = None) -> LockstepResult:
    """Execute ``routine`` in lockstep rounds.

    ``inputs`` covers the correct nodes. ``adversary(r, u, v, sent)`` returns
    the bytes faulty ``u`` sends to ``v`` in round ``r`` (or None); ``sent``
    holds the correct nodes' round-``r`` messages (a rushing adversary).
    """
    faulty = set(faulty)
    correct = [v for v in range(routine.n) if v not in faulty]
    nodes = {v: routine.instance(v, inputs[v]) for v in correct}
    count = 0
    for r in range(1, routine.rounds + 1):
        sent = {v: nodes[v].send(r) for v in correct}
        for v in correct:
            count += len(sent[v])
        for v in correct:
            inbox = {u: sent[u][v] for u in correct if v in sent[u]}
            if adversary is not None:
                for u in faulty:
                    b = adversary(r, u, v, sent)
                    if b is not None:
                        inbox[u] = b
            nodes[v].recv(r, inbox)
    parts = {v for v in correct if getattr(nodes[v], "participating", True)}
    return LockstepResult({v: nodes[v].output() for v in correct}, count, routine.rounds, parts)


# ---------------------------------------------------------------------------
# simulation over pulses
# ---------------------------------------------------------------------------

class RoundSimulation(Component):
    """Runs a consensus routine on one node, one round per pulse of a
    (non-self-stabilising) pulser instance.

    Round ``r`` messages are sent at pulse ``r`` and consumed at pulse
    ``r + 1``; the output is declared at pulse ``R + 1`` by raising the signal
    ``<scope>.out1`` or ``<scope>.out0``. Frames arriving after their round was
    consumed are dropped and recorded as ``late`` trace entries.
    """

    def __init__(self, node: Node, routine: ConsensusRoutine, pulser: MachineInstance, scope: str,
                 routine_factory: Optional[Callable[[], ConsensusRoutine]] = None,
                 members: Optional[Sequence[int]] = None):
        self.node = node
        self.members = list(members) if members is not None else list(range(routine.n))
        if len(self.members) != routine.n:
            raise ValueError("routine size does not match the member list")
        self.local = {g: i for i, g in enumerate(self.members)}
        self.decided = False
        self.routine = routine
        self.factory = routine_factory
        self.pulser = pulser
        self.scope = scope
        self.tag = f"{scope}.frame"
        self.out_keys = (f"{scope}.out0", f"{scope}.out1")
        self.running = False
        self.k = 0
        self.inbox: Dict[int, Dict[int, bytes]] = {}
        self.rnode = None
        self.input = 0
        node.route(self.tag, self)
        node.listen(pulser.pulse_key, self)
        node.listen(pulser.sig_key["start"], self)

    def start(self, x: int, ctx: Ctx):
        self.running = True
        self.k = 0
        self.inbox = {}
        self.input = x
        if self.factory is not None:
            self.routine = self.factory()
        self.decided = False
        self.rnode = self.routine.instance(self.local[self.node.id], x)
        self.pulser.force("RESET", ctx)

    def stop(self):
        self.running = False
        self.rnode = None
        self.pulser.halt()

    def on_signal(self, ctx, key):
        if not self.running:
            return
        if key == self.pulser.pulse_key:
            self._pulse(ctx)
        else:
            self.inbox = {}

    def _pulse(self, ctx):
        self.k += 1
        k = self.k
        R = self.routine.rounds
        node = self.node
        world = node.world
        if k >= 2 and k - 1 <= R:
            self.rnode.recv(k - 1, self.inbox.pop(k - 1, {}))
        if k <= R:
            out = self.rnode.send(k)
            if out:
                bits = 0
                members = self.members
                for u in sorted(out):
                    b = out[u]
                    bits = max(bits, 8 * (len(b) + 1))
                    world.send(node.id, members[u], self.tag, (k, b))
                world.trace.records.append((ctx.t, node.id, "send", self.tag, bits))
        elif k == R + 1:
            y = 1 if self.rnode.output() else 0
            self.decided = True
            world.trace.records.append((ctx.t, node.id, "decide", self.scope, f"{self.input}>{y}"))
            node.emit(self.out_keys[y], ctx)

    def on_message(self, ctx, sender, tag, payload):
        if not self.running:
            return
        src = self.local.get(sender)
        if src is None or not (isinstance(payload, tuple) and len(payload) == 2):
            return
        r, b = payload
        if not isinstance(r, int) or not isinstance(b, (bytes, bytearray)) or len(b) > MAX_FRAME:
            return
        if r < 1 or r > self.routine.rounds:
            return
        if r < self.k:
            self.node.world.trace.records.append((ctx.t, self.node.id, "late", self.scope, f"{sender}:{r}"))
            return
        self.inbox.setdefault(r, {}).setdefault(src, bytes(b))


def wilson_lower(successes: int, trials: int, z: float = 2.5758293035489) -> float:
    """Lower end of the Wilson score interval (default z for 99%)."""
    if trials == 0:
        return 0.0
    p = successes / trials
    den = 1 + z * z / trials
    centre = p + z * z / (2 * trials)
    margin = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return (centre - margin) / den
