"""Faulty-node behaviours.

Faulty nodes are driven by an :class:`Adversary` that sees every message sent
to a faulty node at the instant it is sent and may inject messages from faulty
senders with any delivery time. Sender identities cannot be forged: injected
messages always carry the faulty node's own id.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .sim import World
from .timebase import Q, q


class Behaviour:
    """Base class: a silent faulty node."""

    kind = "silent"
    hosts_protocol = False

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)
        self.node: int = -1
        self.adv: Optional["Adversary"] = None

    def start(self, world: World):
        pass

    def observe(self, world: World, t, sender: int, tag: str, payload):
        pass

    def filter_outgoing(self, world: World, receiver: int, tag: str, payload):
        return payload

    # helpers
    def targets(self, world: World) -> List[int]:
        return self.adv.correct

    def send(self, world: World, receiver: int, tag: str, payload=None, delay=None):
        d = world.d
        if delay is None:
            delay = d * Q(self.rng.randint(1, 63), 64)
        world.inject(self.node, receiver, tag, payload, world.now + q(delay))

    def describe(self) -> str:
        return self.kind


class Silent(Behaviour):
    kind = "silent"


class CrashAt(Behaviour):
    """Runs the protocol correctly and stops sending at time ``at``."""

    kind = "crash"
    hosts_protocol = True

    def __init__(self, at, seed: int = 0):
        super().__init__(seed)
        self.at = q(at)

    def filter_outgoing(self, world, receiver, tag, payload):
        return None if world.now >= self.at else payload

    def describe(self):
        return f"crash-at({self.at})"


class RandomSpam(Behaviour):
    """Sends randomly chosen known message tags to random receivers."""

    kind = "random"

    def __init__(self, seed: int = 0, period=None, tags: Optional[Sequence[str]] = None,
                 until=None):
        super().__init__(seed)
        self.period = q(period) if period is not None else None
        self.tags = list(tags) if tags else None
        self.until = q(until) if until is not None else None

    def start(self, world):
        self.period = self.period or world.d
        world.call_at(world.now + self.period * Q(self.rng.randint(1, 64), 64), self._tick)

    def _tick(self, t):
        world = self.adv.world
        if self.until is not None and t > self.until:
            return
        tags = self.tags or sorted(self.adv.catalog)
        if tags:
            tag = self.rng.choice(tags)
            for v in self.targets(world):
                if self.rng.random() < 0.5:
                    self.send(world, v, tag, self.adv.junk(tag, self.rng))
        world.call_at(t + self.period * Q(self.rng.randint(1, 128), 64), self._tick)


class Equivocator(Behaviour):
    """Scripted equivocation.

    ``script`` entries ``(t, tag, receivers)`` send ``tag`` to the given
    receivers only. ``react`` maps a tag suffix to a fraction of correct nodes:
    whenever a correct node's message with that suffix is observed, the same
    tag is echoed to a random subset of that size (at most once per d).
    Without a script or react table every observed tag is echoed to half.
    """

    kind = "equivocator"

    def __init__(self, seed: int = 0, script: Sequence[Tuple] = (), react: Optional[Dict[str, float]] = None):
        super().__init__(seed)
        self.script = [(q(t), tag, list(rs)) for t, tag, rs in script]
        self.react = dict(react) if react is not None else ({} if script else {"": 0.5})
        self._last: Dict[str, Q] = {}

    def start(self, world):
        for t, tag, rs in self.script:
            world.call_at(max(t, world.now), lambda now, tag=tag, rs=rs: self._fire(tag, rs))

    def _fire(self, tag, receivers):
        world = self.adv.world
        for v in receivers:
            if v not in world.faulty:
                self.send(world, v, tag, self.adv.junk(tag, self.rng))

    def observe(self, world, t, sender, tag, payload):
        if sender in world.faulty:
            return
        for suffix, frac in self.react.items():
            if tag.endswith(suffix):
                last = self._last.get(tag)
                if last is not None and t - last < world.d:
                    return
                self._last[tag] = t
                correct = self.targets(world)
                k = max(1, int(round(frac * len(correct))))
                for v in sorted(self.rng.sample(correct, min(k, len(correct)))):
                    self.send(world, v, tag, payload)
                return


class StateMimic(Behaviour):
    """Runs the protocol but perturbs its outgoing traffic.

    ``perturbation``: ``"drop"`` drops each message with probability ``p``;
    ``"split"`` only talks to a fixed random half of the correct nodes.
    """

    kind = "state-mimic"
    hosts_protocol = True

    def __init__(self, seed: int = 0, perturbation: str = "drop", p: float = 0.5):
        super().__init__(seed)
        if perturbation not in ("drop", "split"):
            raise ValueError(f"unknown perturbation {perturbation!r}")
        self.perturbation = perturbation
        self.p = p
        self._half = None

    def filter_outgoing(self, world, receiver, tag, payload):
        if self.perturbation == "drop":
            return None if self.rng.random() < self.p else payload
        if self._half is None:
            c = list(self.adv.correct)
            self._half = set(self.rng.sample(c, len(c) // 2))
        return payload if receiver in self._half else None


class VoteSpoiler(Behaviour):
    """Whenever a correct node broadcasts a vote, send that vote to exactly f+1
    correct nodes, trying to split the voters between PASS and FAIL."""

    kind = "vote-spoiler"

    def __init__(self, seed: int = 0, suffix: str = "vote", count: Optional[int] = None):
        super().__init__(seed)
        self.suffix = suffix
        self.count = count
        self._last: Dict[str, Q] = {}

    def observe(self, world, t, sender, tag, payload):
        if sender in world.faulty or not tag.endswith(self.suffix):
            return
        last = self._last.get(tag)
        if last is not None and t - last < world.d:
            return
        self._last[tag] = t
        correct = self.targets(world)
        k = self.count if self.count is not None else self.adv.f + 1
        k = min(k, len(correct))
        for v in sorted(self.rng.sample(correct, k)):
            self.send(world, v, tag, payload, delay=world.d * Q(1, 64))


class Burst(Behaviour):
    """Every ``period`` (jittered) sends each listed tag to a random subset of
    ``fraction`` of the correct nodes: a coordinated spoiler for pulses or votes."""

    kind = "burst"

    def __init__(self, seed: int = 0, tags: Sequence[str] = (), period=None, fraction: float = 0.5,
                 start_at=0, until=None):
        super().__init__(seed)
        self.tags = list(tags)
        self.period = q(period) if period is not None else None
        self.fraction = fraction
        self.start_at = q(start_at)
        self.until = q(until) if until is not None else None

    def start(self, world):
        self.period = self.period or 4 * world.d
        world.call_at(max(world.now, self.start_at) + self.period * Q(self.rng.randint(1, 64), 64), self._tick)

    def _tick(self, t):
        world = self.adv.world
        if self.until is not None and t > self.until:
            return
        correct = self.targets(world)
        k = max(1, int(round(self.fraction * len(correct))))
        for tag in self.tags:
            for v in sorted(self.rng.sample(correct, min(k, len(correct)))):
                self.send(world, v, tag, self.adv.junk(tag, self.rng))
        world.call_at(t + self.period * Q(self.rng.randint(32, 96), 64), self._tick)


BEHAVIOURS = {
    "burst": Burst,
    "silent": Silent,
    "crash": CrashAt,
    "random": RandomSpam,
    "equivocator": Equivocator,
    "state-mimic": StateMimic,
    "vote-spoiler": VoteSpoiler,
}


def make_behaviour(spec) -> Behaviour:
    """Build a behaviour from a config mapping such as ``{"kind": "random", "seed": 3}``."""
    if isinstance(spec, Behaviour):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind", "silent")
    cls = BEHAVIOURS.get(kind)
    if cls is None:
        raise ValueError(f"unknown behaviour {kind!r}")
    return cls(**spec)


@dataclass
class FaultPlan:
    faulty: Dict[int, object] = field(default_factory=dict)

    def validate(self, n: int, f: int):
        if len(self.faulty) > f:
            raise ValueError(f"{len(self.faulty)} faulty nodes exceed the resilience f={f}")
        for v in self.faulty:
            if not 0 <= v < n:
                raise ValueError(f"faulty node id {v} out of range")
        return self


class Adversary:
    """Coordinates all faulty nodes of one run (they may collude)."""

    def __init__(self, world: World, plan: FaultPlan, f: int):
        self.world = world
        self.f = f
        plan.validate(world.n, f)
        self.behaviours: Dict[int, Behaviour] = {}
        for v, spec in sorted(plan.faulty.items()):
            b = make_behaviour(spec)
            b.node = v
            b.adv = self
            self.behaviours[v] = b
        self.correct = [v for v in range(world.n) if v not in self.behaviours]
        self.catalog: set = set()
        self.junk_payloads: Dict[str, object] = {}
        self.history: List[Tuple] = []
        self.record_history = False
        world.faulty = dict(self.behaviours)
        world.adversary = self

    def start(self):
        for b in self.behaviours.values():
            b.start(self.world)

    def junk(self, tag: str, rng: random.Random):
        make = self.junk_payloads.get(tag)
        return make(rng) if callable(make) else make

    def observe(self, world, t, sender, receiver, tag, payload):
        if self.record_history:
            self.history.append((t, sender, receiver, tag))
        b = self.behaviours.get(receiver)
        if b is not None:
            b.observe(world, t, sender, tag, payload)

    def filter_outgoing(self, world, sender, receiver, tag, payload):
        return self.behaviours[sender].filter_outgoing(world, receiver, tag, payload)


def emit(behaviour: Behaviour, world: World, t, observed: Iterable[Tuple]) -> None:
    """Replay observed traffic ``(t, sender, tag, payload)`` into a behaviour."""
    for item in observed:
        behaviour.observe(world, *item)
