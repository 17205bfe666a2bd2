import math
import random

import pytest
from hypothesis import example, given, settings, strategies as st

from pulsesync.main_pulser import phi0
from pulsesync.metrics import pulse_times
from pulsesync.recursion import (BEAT_BITS, PULSER_BITS, RESYNC_BITS, build_pulser, install, phi_window)
from pulsesync.runtime import Node
from pulsesync.scenario import Scenario, run
from pulsesync.sim import ClockFn, DelaySchedule, World
from pulsesync.st_pulser import InfeasibleTimeouts
from pulsesync.timebase import Q, q

TH, PHI = q("1.001"), q("1.03")


def shape(level):
    return (tuple(level.members), level.f, tuple(shape(c) for c in level.children))


def test_tree_for_seven_nodes():
    tree = build_pulser(7, 2, TH, 1, PHI)
    base = lambda *m: (m, 0, ())
    assert shape(tree) == ((0, 1, 2, 3, 4, 5, 6), 2,
                           (base(0, 1, 2), ((3, 4, 5, 6), 1, (base(3, 4), base(5, 6)))))


def test_f_zero_is_depth_zero():
    for n in (1, 2, 5):
        tree = build_pulser(n, 0, TH, 1, PHI)
        assert tree.is_base and not tree.children


def test_children_meet_block_accuracy():
    for lv in build_pulser(7, 2, TH, 1, PHI).walk():
        for h, c in enumerate(lv.children):
            assert lv.rt.phi_minus[h] <= c.phi_minus and c.phi_plus <= lv.rt.phi_plus[h]
            assert c.phi_plus <= PHI * c.phi_minus
            assert c.sigma <= lv.sigma


def budget_oracle(tree, v):
    frame = tree.routine.msg_bits + 8
    total = 0
    for lv in tree.walk():
        if v not in lv.members:
            continue
        if lv.is_base:
            total += BEAT_BITS if lv.members[0] == v else 0
        else:
            total += PULSER_BITS + 2 * frame + RESYNC_BITS
    return total


def test_budgets():
    tree = build_pulser(7, 2, TH, 1, PHI)
    assert {v: tree.budget(v) for v in range(7)} == {0: 41, 1: 40, 2: 40, 3: 81, 4: 80, 5: 81, 6: 80}
    for v in range(7):
        assert tree.budget(v) == budget_oracle(tree, v)


@pytest.mark.parametrize("f", [1, 2, 3, 4])
def test_participation_is_logarithmic(f):
    n = 3 * f + 1
    tree = build_pulser(n, f, TH, 1, PHI)
    bound = math.ceil(math.log2(f)) + 1 if f > 1 else 1
    for v in range(n):
        depth = sum(1 for lv in tree.walk() if not lv.is_base and v in lv.members)
        assert 1 <= depth <= bound


def test_phi_window_and_messages():
    lo, up, hi = phi_window(7, 2, TH, 1)
    assert hi == Q(31, 30) / (TH * TH)
    assert phi0(TH) < lo < PHI < up < hi
    # both edges are real: just inside builds, just outside does not
    step = Q(1, 10 ** 6)
    build_pulser(7, 2, TH, 1, lo + step)
    build_pulser(7, 2, TH, 1, up - step)
    for bad in (lo - 2 * step, up + 2 * step):
        with pytest.raises(InfeasibleTimeouts) as exc:
            build_pulser(7, 2, TH, 1, bad)
        assert "choose phi in" in str(exc.value) and "31/(30 theta^2)" in str(exc.value)


def test_no_phi_at_larger_drift():
    th = q("1.004")
    lo, up, hi = phi_window(7, 2, th, 1)
    assert lo >= hi
    with pytest.raises(InfeasibleTimeouts) as exc:
        build_pulser(7, 2, th, 1, q("1.021"))
    text = str(exc.value)
    assert "no phi exists" in text and "31/(30 theta^2)" in text


def test_theta_out_of_range_named():
    with pytest.raises(InfeasibleTimeouts) as exc:
        build_pulser(7, 2, q("1.2"), 1, PHI)
    assert "(2+sqrt(32))/7" in str(exc.value)


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32))
@example(134217727)     # last beat still in flight at the horizon
def test_base_pulser_three_nodes(seed):
    rng = random.Random(seed)
    tree = build_pulser(3, 0, TH, 1, PHI, base_period=20)
    horizon = q(400)
    clocks = [ClockFn.drifting(rng, TH, horizon, 3, offset=rng.randint(0, 50)) for _ in range(3)]
    w = World(3, 1, clocks, DelaySchedule(1, "random", seed=seed))
    nodes = {v: Node(v, w) for v in range(3)}
    install(tree, w, nodes, [0, 1, 2], rng, groups=3)
    w.advance(horizon)
    pulses = pulse_times(w.trace.records, tree.pulse_scope, [0, 1, 2])
    lead = pulses[0][1:]          # the first pulse may come from the arbitrary state
    assert len(lead) >= 10
    gaps = [b - a for a, b in zip(lead, lead[1:])]
    assert all(tree.P / TH <= g <= tree.P for g in gaps)
    for v in (1, 2):
        for t in lead:
            if t + 1 > horizon:
                continue          # the beat may still be in flight at the horizon
            follow = [x for x in pulses[v] if t <= x < t + 1]
            assert len(follow) == 1      # follower lags the leader by less than d


@pytest.mark.parametrize("placement", ["same", "split"])
def test_cascade(placement):
    res = run(Scenario("full-recursion", 7, 2, theta=TH, phi=PHI, seed=4, options={"placement": placement}))
    assert res.ok, [c.line() for c in res.checks if not c.ok]
    levels = {lv["scope"]: lv for lv in res.metrics["levels"]}
    top = levels["L"]
    assert top["started"] is not None and top["stabilised"] is not None
    # every child within its budget was stable before the top level started
    for scope in ("L.c0", "L.c1"):
        lv = levels[scope]
        if lv["within_budget"]:
            assert lv["stabilised"] is not None and q(lv["stabilised"]) <= q(top["started"])
    assert q(top["stabilised"]) >= q(top["started"])


def test_describe_mentions_every_level():
    text = build_pulser(7, 2, TH, 1, PHI).describe()
    for scope in ("L:", "L.c0:", "L.c1:", "L.c1.c0:", "L.c1.c1:"):
        assert scope in text
