"""Deterministic discrete-event engine with drifting clocks and bounded delays."""
from __future__ import annotations

import heapq
import random
from bisect import bisect_right
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .timebase import Q, ZERO, fmt, q

DELIVER = 0
TIMER = 1
SIGNAL = 2
CALL = 3


class SimulationError(RuntimeError):
    """Raised when a run leaves the model (invalid schedule, zero-delay cycle...)."""


class InvalidSchedule(SimulationError):
    pass


class ZeroDelayCycle(SimulationError):
    pass


class ClockFn:
    """Piecewise-linear hardware clock.

    ``segments`` is a sequence of ``(start, rate)`` pairs; the first start must
    be 0 and every rate must lie in ``[1, theta]``. ``offset`` is the clock
    value at reference time 0.
    """

    def __init__(self, segments: Sequence[Tuple] = ((0, 1),), offset=0, theta=None):
        if not segments:
            raise ValueError("clock needs at least one segment")
        starts = [q(s) for s, _ in segments]
        rates = [q(r) for _, r in segments]
        if starts[0] != 0:
            raise ValueError("first clock segment must start at 0")
        for a, b in zip(starts, starts[1:]):
            if not a < b:
                raise ValueError("segment starts must be strictly increasing")
        hi = q(theta) if theta is not None else None
        for r in rates:
            if r < 1 or (hi is not None and r > hi):
                raise ValueError(f"clock rate {fmt(r)} outside [1, theta]")
        self.offset = q(offset)
        if self.offset < 0:
            raise ValueError("clock offset must be non-negative")
        self.starts = starts
        self.rates = rates
        base = [self.offset]
        for i in range(1, len(starts)):
            base.append(base[-1] + rates[i - 1] * (starts[i] - starts[i - 1]))
        self.base = base

    @classmethod
    def identity(cls) -> "ClockFn":
        return cls()

    @classmethod
    def drifting(cls, rng: random.Random, theta, horizon, step, offset=0, levels: int = 4) -> "ClockFn":
        """Random piecewise-linear clock with rates on a grid in [1, theta]."""
        theta, horizon, step = q(theta), q(horizon), q(step)
        segs = []
        t = ZERO
        while True:
            k = rng.randint(0, levels)
            segs.append((t, 1 + (theta - 1) * Q(k, levels)))
            t = t + step * rng.randint(1, 4)
            if t >= horizon:
                break
        return cls(segs, offset=offset, theta=theta)

    def read(self, t) -> Q:
        i = bisect_right(self.starts, t) - 1
        if i < 0:
            raise ValueError("negative reference time")
        return self.base[i] + self.rates[i] * (t - self.starts[i])

    def inverse(self, c) -> Q:
        """Reference time at which the clock shows ``c``."""
        if c < self.offset:
            raise ValueError("clock value precedes time 0")
        i = bisect_right(self.base, c) - 1
        return self.starts[i] + (c - self.base[i]) / self.rates[i]

    def describe(self) -> str:
        parts = [f"[{fmt(s)}: x{fmt(r)}]" for s, r in zip(self.starts, self.rates)]
        return f"offset={fmt(self.offset)} " + " ".join(parts)


class DelaySchedule:
    """Produces delivery times for messages on each ordered channel.

    Strategies: ``constant`` (fixed delay), ``table`` (per-edge delays with a
    default), ``random`` (seeded, uniform on a grid of d/grid), ``extreme``
    (seeded, mostly near 0 or near d) and ``callback`` (adversary function
    ``fn(sender, receiver, t_send) -> delay``). Delays are checked, never
    clamped: an out-of-range or FIFO-breaking callback raises
    :class:`InvalidSchedule`.
    """

    STRATEGIES = ("constant", "table", "random", "extreme", "callback")

    def __init__(self, d, strategy: str = "random", *, seed: int = 0, delay=None,
                 table: Optional[Dict[Tuple[int, int], object]] = None,
                 callback: Optional[Callable] = None, grid: int = 64):
        if strategy not in self.STRATEGIES:
            raise ValueError(f"unknown delay strategy {strategy!r}")
        self.d = q(d)
        self.strategy = strategy
        self.grid = grid
        self.rng = random.Random(seed)
        self.delay = q(delay) if delay is not None else self.d / 2
        self.table = {k: q(v) for k, v in (table or {}).items()}
        self.callback = callback
        if strategy == "constant" and not (0 < self.delay < self.d):
            raise InvalidSchedule("constant delay must lie in (0, d)")
        for v in self.table.values():
            if not 0 < v < self.d:
                raise InvalidSchedule("table delay must lie in (0, d)")
        self._last: Dict[Tuple[int, int], Tuple[Q, Q]] = {}

    def _sample(self, sender, receiver, t):
        s = self.strategy
        if s == "constant":
            return self.delay
        if s == "table":
            return self.table.get((sender, receiver), self.delay)
        if s == "random":
            return self.d * Q(self.rng.randint(1, self.grid - 1), self.grid)
        if s == "extreme":
            r = self.rng.random()
            if r < 0.4:
                k = self.rng.randint(1, 2)
            elif r < 0.8:
                k = self.rng.randint(self.grid - 2, self.grid - 1)
            else:
                k = self.rng.randint(1, self.grid - 1)
            return self.d * Q(k, self.grid)
        return q(self.callback(sender, receiver, t))

    def deliver(self, sender: int, receiver: int, t_send) -> Q:
        key = (sender, receiver)
        last = self._last.get(key)
        if last is not None:
            if t_send == last[0]:
                return last[1]
            if t_send < last[0]:
                raise SimulationError("sends on a channel must be in time order")
        delta = self._sample(sender, receiver, t_send)
        if not 0 < delta < self.d:
            raise InvalidSchedule(
                f"delay {fmt(delta)} on channel {sender}->{receiver} at t={fmt(t_send)} outside (0, d)")
        at = t_send + delta
        if last is not None and at <= last[1]:
            if self.strategy == "callback":
                raise InvalidSchedule(
                    f"callback delay breaks FIFO on channel {sender}->{receiver} at t={fmt(t_send)}")
            lo, hi = last[1], t_send + self.d
            at = lo + (hi - lo) * Q(self.rng.randint(1, self.grid - 1), self.grid)
        self._last[key] = (t_send, at)
        return at


class Trace:
    """Append-only record list: ``(t, node, kind, scope, detail)`` tuples."""

    def __init__(self, run_id: str = "run"):
        self.run_id = run_id
        self.records: List[Tuple] = []

    def add(self, t, node, kind, scope, detail=""):
        self.records.append((t, node, kind, scope, detail))

    def __len__(self):
        return len(self.records)

    def of_kind(self, kind):
        return [r for r in self.records if r[2] == kind]


class World:
    """Global event queue, network and clocks of one simulation run."""

    def __init__(self, n: int, d, clocks: Sequence[ClockFn], delays: DelaySchedule,
                 trace: Optional[Trace] = None, theta=None):
        if len(clocks) != n:
            raise ValueError("one clock per node required")
        self.n = n
        self.d = q(d)
        self.theta = q(theta) if theta is not None else None
        self.clocks = list(clocks)
        self.delays = delays
        self.trace = trace if trace is not None else Trace()
        self.queue: list = []
        self._seq = 0
        self.now = ZERO
        self.nodes: list = [None] * n
        self.faulty: Dict[int, object] = {}
        self.adversary = None
        self.stop_when: Optional[Callable[["World"], bool]] = None
        self.processed = 0
        self._cid = 0

    # -- scheduling -------------------------------------------------------
    def push(self, at, kind, a=None, b=None, c=None, e=None):
        if at < self.now:
            raise SimulationError(f"event scheduled in the past ({fmt(at)} < {fmt(self.now)})")
        self._seq += 1
        heapq.heappush(self.queue, (at, self._seq, kind, a, b, c, e))

    def call_at(self, at, fn):
        self.push(q(at), CALL, fn)

    def signal_at(self, at, node: int, key: str):
        self.push(q(at), SIGNAL, node, key)

    # -- network ----------------------------------------------------------
    def broadcast(self, sender: int, tag: str, payload=None, bits: int = 1, receivers=None):
        """Send ``(tag, payload)`` from a node to every node (itself included)."""
        t = self.now
        self.trace.records.append((t, sender, "send", tag, bits))
        targets = range(self.n) if receivers is None else receivers
        adv = self.adversary
        sender_is_faulty = sender in self.faulty
        for v in targets:
            msg = payload
            if sender_is_faulty:
                msg = adv.filter_outgoing(self, sender, v, tag, payload)
                if msg is None:
                    continue
            if adv is not None and v in self.faulty:
                adv.observe(self, t, sender, v, tag, msg)
            at = self.delays.deliver(sender, v, t)
            self.push(at, DELIVER, v, sender, tag, msg)

    def send(self, sender: int, receiver: int, tag: str, payload=None):
        t = self.now
        msg = payload
        adv = self.adversary
        if sender in self.faulty:
            msg = adv.filter_outgoing(self, sender, receiver, tag, payload)
            if msg is None:
                return
        if adv is not None and receiver in self.faulty:
            adv.observe(self, t, sender, receiver, tag, msg)
        at = self.delays.deliver(sender, receiver, t)
        self.push(at, DELIVER, receiver, sender, tag, msg)

    def inject(self, sender: int, receiver: int, tag: str, payload, at):
        """Message from a faulty node, delivered at an adversary-chosen time."""
        if sender not in self.faulty:
            raise SimulationError("only faulty nodes may inject messages")
        at = q(at)
        if at <= self.now:
            raise InvalidSchedule("injected message must arrive strictly in the future")
        self.push(at, DELIVER, receiver, sender, tag, payload)

    # -- main loop --------------------------------------------------------
    def advance(self, until) -> Trace:
        until = q(until)
        queue = self.queue
        nodes = self.nodes
        pop = heapq.heappop
        last = (self.now, -1)
        stop = self.stop_when
        while queue and queue[0][0] <= until:
            at, seq, kind, a, b, c, e = pop(queue)
            if (at, seq) < last:
                raise SimulationError("event processed out of order")
            last = (at, seq)
            self.now = at
            self.processed += 1
            if kind == DELIVER:
                node = nodes[a]
                if node is not None:
                    node.deliver(at, b, c, e)
            elif kind == TIMER:
                a.node.timer(at, a, b, c)
            elif kind == SIGNAL:
                node = nodes[a]
                if node is not None:
                    node.external(at, b)
            else:
                a(at)
            if stop is not None and stop(self):
                return self.trace
        if self.now < until:
            self.now = until
        return self.trace
