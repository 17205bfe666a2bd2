import random

import pytest
from hypothesis import given, strategies as st

from pulsesync.report import trace_bytes
from pulsesync.scenario import Scenario, run
from pulsesync.sim import (ClockFn, DelaySchedule, InvalidSchedule, SimulationError, World)
from pulsesync.timebase import q


def make_world(n=2, d=1, delays=None):
    return World(n, d, [ClockFn.identity() for _ in range(n)], delays or DelaySchedule(d, "constant"))


class Inbox:
    def __init__(self, vid, world):
        self.id = vid
        self.got = []
        world.nodes[vid] = self

    def deliver(self, t, sender, tag, payload):
        self.got.append((t, sender, tag))


def test_empty_queue_gives_empty_trace():
    w = make_world()
    assert len(w.advance(10)) == 0
    assert w.now == 10


def test_delivery_boundary():
    w = make_world()
    box = Inbox(1, w)
    Inbox(0, w)
    w.call_at(q("5/2"), lambda t: w.send(0, 1, "x"))   # constant d/2 delay: arrives at 3
    w.advance(2)
    assert box.got == []
    w.advance(4)
    assert box.got == [(3, 0, "x")]


def test_identity_clock():
    assert ClockFn.identity().read(q(5)) == 5


def test_single_segment_clock():
    c = ClockFn([(0, q("1.004"))])
    assert c.read(q(100)) == q("100.4")


def test_two_segment_clock():
    c = ClockFn([(0, 1), (10, q("1.004"))])
    assert c.read(q(20)) == q("20.04")


def test_clock_rejects_bad_rates():
    with pytest.raises(ValueError):
        ClockFn([(0, q("0.9"))])
    with pytest.raises(ValueError):
        ClockFn([(0, 2)], theta=q("1.5"))
    with pytest.raises(ValueError):
        ClockFn([(1, 1)])


@given(st.integers(0, 2 ** 32), st.integers(0, 5000))
def test_drifting_clock_inverse_and_rate(seed, t):
    theta = q("1.004")
    c = ClockFn.drifting(random.Random(seed), theta, 5000, 7, offset=3)
    t = q(t)
    assert c.inverse(c.read(t)) == t
    a, b = c.read(t), c.read(t + 1)
    assert 1 <= b - a <= theta


def test_constant_delay():
    ds = DelaySchedule(1, "constant")
    assert ds.deliver(0, 1, q(7)) == q("7.5")


def test_random_delays_in_range():
    ds = DelaySchedule(1, "random", seed=11)
    for i in range(10 ** 4):
        at = ds.deliver(i % 3, (i + 1) % 3, q(i))
        assert 0 < at - i < 1


def test_same_channel_is_fifo():
    ds = DelaySchedule(1, "random", seed=5)
    assert ds.deliver(0, 1, q(1)) < ds.deliver(0, 1, q(2))


@given(st.integers(0, 2 ** 32), st.lists(st.integers(0, 40), min_size=1, max_size=60))
def test_fifo_property(seed, steps):
    ds = DelaySchedule(1, "extreme", seed=seed)
    t, last = q(0), None
    for s in steps:
        t += q(s) / 16
        at = ds.deliver(2, 3, t)
        assert t < at < t + 1
        if last is not None and t > last[0]:
            assert at > last[1]
        last = (t, at)


def test_callback_out_of_range_rejected():
    ds = DelaySchedule(1, "callback", callback=lambda s, r, t: q(1))
    with pytest.raises(InvalidSchedule):
        ds.deliver(0, 1, q(0))


def test_callback_fifo_violation_rejected():
    ds = DelaySchedule(1, "callback", callback=lambda s, r, t: q("0.9") if t == 0 else q("0.1"))
    ds.deliver(0, 1, q(0))
    with pytest.raises(InvalidSchedule):
        ds.deliver(0, 1, q("1/2"))


def test_events_in_past_rejected():
    w = make_world()
    w.advance(5)
    with pytest.raises(SimulationError):
        w.call_at(3, lambda t: None)


@given(st.lists(st.tuples(st.integers(0, 200), st.integers(0, 5)), max_size=40))
def test_events_processed_in_order(items):
    w = make_world()
    seen = []
    for at, tag in items:
        w.call_at(q(at) / 4, lambda t, tag=tag: seen.append(t))
    w.advance(100)
    assert seen == sorted(seen)
    assert len(seen) == len(items)


def test_same_seed_same_trace():
    scn = Scenario("st-pulser", 4, 1, theta=q("1.1"), seed=9, faulty={3: {"kind": "random", "seed": 1}})
    assert trace_bytes(run(scn).trace.records) == trace_bytes(run(scn).trace.records)
