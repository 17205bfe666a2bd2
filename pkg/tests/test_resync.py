import itertools

import pytest
from hypothesis import given, strategies as st

from pulsesync.resync import (WINDOW_BOUND, PsiTooSmall, PulseForwarder, partition_blocks,
                              solve_resync_timeouts, validator_machine, voter_machine)
from pulsesync.runtime import MachineInstance, Node
from pulsesync.scenario import Scenario, run
from pulsesync.sim import ClockFn, DelaySchedule, World
from pulsesync.st_pulser import InfeasibleTimeouts
from pulsesync.timebase import Q, q

TH, PHI = q("1.001"), q("1.03")


def rt_default():
    return solve_resync_timeouts(TH, PHI, 2, 1)


def world(n=1):
    return World(n, 1, [ClockFn.identity() for _ in range(n)], DelaySchedule(1, "constant"))


def test_constants_and_cooldown():
    rt = rt_default()
    assert rt.C == (4, 5)
    assert rt.T_cool / rt.theta > 15 * rt.beta
    for name, lhs, rhs, ok in rt.constraints():
        assert ok, name


def test_product_check_at_1_004():
    th, phi = q("1.004"), q("1.021")
    assert th * th * phi < Q(31, 30)
    rt = solve_resync_timeouts(th, phi, 2, 1)
    assert rt.phi == phi


def test_window_bound_named():
    th = q("1.004")
    phi = Q(31, 30) / (th * th)          # product exactly 31/30
    with pytest.raises(InfeasibleTimeouts) as exc:
        solve_resync_timeouts(th, phi, 2, 1)
    assert exc.value.constraint == WINDOW_BOUND


def test_psi_too_small_reports_minimum():
    rt = rt_default()
    with pytest.raises(PsiTooSmall) as exc:
        solve_resync_timeouts(TH, PHI, 2, 1, psi=rt.Psi / 2)
    assert exc.value.psi0 == rt.Psi
    assert solve_resync_timeouts(TH, PHI, 2, 1, psi=rt.Psi * 3).Psi == rt.Psi * 3


@pytest.mark.parametrize("n,f,expect", [(7, 2, (3, 0, 4, 1)), (4, 1, (2, 0, 2, 0)), (2, 1, (1, 0, 1, 0))])
def test_partition_sizes(n, f, expect):
    p = partition_blocks(n, f)
    assert (p.n0, p.f0, p.n1, p.f1) == expect
    assert sorted(p.blocks[0] + p.blocks[1]) == list(range(n))


def test_partition_rejects_base_case():
    with pytest.raises(ValueError):
        partition_blocks(3, 0)


@given(st.integers(1, 20).flatmap(lambda f: st.tuples(st.just(f), st.integers(3 * f + 1, 3 * f + 8))),
       st.data())
def test_dichotomy(fn, data):
    f, n = fn
    p = partition_blocks(n, f)
    faulty = data.draw(st.sets(st.integers(0, n - 1), max_size=f))
    assert len(p.faulty_blocks(faulty)) <= 1
    assert p.n0 > 3 * p.f0 and p.n1 > 3 * p.f1


def validator(h=0):
    rt = rt_default()
    w = world()
    inst = MachineInstance(validator_machine(h, rt), Node(0, w), "val",
                           signals={"go": "x.go", "fail": "x.fail", "resync": "x.resync"})
    inst.setup("WAIT", timers={})
    return rt, w, inst


def resyncs(w):
    return [r[0] for r in w.trace.records if r[2] == "tr" and r[4].endswith(">RESYNC")]


def test_validator_go_then_hold():
    rt, w, inst = validator()
    w.signal_at(10, 0, "x.go")
    w.advance(11)
    assert resyncs(w) == [10]
    assert inst.state_name == "HOLD"
    w.advance(10 + rt.T_min[0] + 1)
    assert inst.state_name == "WAIT"


def test_validator_early_go_cools_down():
    rt, w, inst = validator()
    w.signal_at(10, 0, "x.go")
    w.signal_at(20, 0, "x.go")          # well before T_min
    w.advance(21)
    assert inst.state_name == "IGNORE"
    # keep poking it: no resync during the cooldown
    for k in range(1, 10):
        w.signal_at(20 + k * rt.T_cool / 20, 0, "x.go")
    w.advance(20 + rt.T_cool / rt.theta - 1)
    assert resyncs(w) == [10]


def test_validator_fail_resets_cooldown():
    rt, w, inst = validator()
    w.signal_at(5, 0, "x.fail")
    w.signal_at(5 + rt.T_cool / 2, 0, "x.fail")
    w.advance(5 + rt.T_cool + 1)
    assert inst.state_name == "IGNORE"
    w.advance(5 + rt.T_cool * 2)
    assert inst.state_name == "WAIT"


def test_voter_without_block_pulses_fails_periodically():
    rt = rt_default()
    w = world(7)
    inst = MachineInstance(voter_machine(0, 7, 2, 3, 0, rt), Node(0, w), "v0")
    inst.setup("IDLE", timers={"T_max": rt.T_max[0]})
    w.advance(3 * rt.T_max[0] + 1)
    fails = [r for r in w.trace.records if r[2] == "tr" and r[4] == "IDLE>FAIL"]
    assert len(fails) == 3


@given(st.lists(st.integers(1, 300), min_size=1, max_size=40))
def test_forwarder_dedup(gaps):
    w = world(2)
    node = Node(0, w)
    fw = PulseForwarder(node, "blk.pulse", "rs.bp0", [0, 1], q("1.001"))
    t = q(0)
    for g in gaps:
        t += Q(g, 100)
        w.signal_at(t, 0, "blk.pulse")
    w.advance(t + 1)
    sends = [r[0] for r in w.trace.records if r[2] == "send"]
    assert sends and sends[0] == Q(gaps[0], 100)
    assert all(b - a >= q("1.001") for a, b in zip(sends, sends[1:]))


@pytest.mark.parametrize("seed", range(3))
def test_spoiler_at_half_beta(seed):
    scn = Scenario("resync", 7, 2, theta=TH, phi=PHI, seed=seed,
                   options={"faulty_block": "spoil", "correct_block": 0})
    res = run(scn)
    assert res.ok, [c.line() for c in res.checks if not c.ok]
