from fractions import Fraction as F

import pytest
from hypothesis import given, strategies as st

from pulsesync.scenario import Scenario, run
from pulsesync.st_pulser import InfeasibleTimeouts, solve_st_timeouts, st_machine
from pulsesync.timebase import q


def oracle(theta, d, tau):
    # every constraint row met with equality, solved by hand
    T0 = theta * (tau + d)
    T1 = theta * ((1 - 1 / theta) * T0 + tau)
    T2 = 3 * theta * d
    T3 = theta * ((1 - 1 / theta) * T2 + 2 * d)
    return T0, T1, T2, T3


def test_frozen_values():
    to = solve_st_timeouts(q("1.1"), 1, 10)
    assert (to.T0, to.T1, to.T2, to.T3) == (q("12.1"), q("12.21"), q("3.3"), q("2.53"))
    assert (to.T0, to.T1, to.T2, to.T3) == oracle(F("1.1"), F(1), F(10))


@given(st.fractions(min_value=F(1001, 1000), max_value=2), st.fractions(min_value=F(1, 10), max_value=10),
       st.fractions(min_value=F(1, 10), max_value=100))
def test_matches_oracle_and_rows_hold_with_equality(theta, d, tau):
    to = solve_st_timeouts(theta, d, tau)
    assert (to.T0, to.T1, to.T2, to.T3) == oracle(theta, d, tau)
    for name, lhs, rhs, ok in to.constraints():
        assert ok and lhs == rhs, name


def test_limit_theta_to_one():
    to = solve_st_timeouts(F(10 ** 9 + 1, 10 ** 9), 1, 10)
    assert abs(to.T1 - 10) < F(1, 10 ** 6)
    assert abs(to.T3 - 2) < F(1, 10 ** 6)


def test_rejects_theta_one():
    with pytest.raises(InfeasibleTimeouts):
        solve_st_timeouts(1, 1, 10)


def test_rejects_bad_resilience():
    with pytest.raises(ValueError):
        st_machine(3, 1, solve_st_timeouts(q("1.1"), 1, 10))


@pytest.mark.parametrize("seed", range(4))
def test_run_and_propose_rate(seed):
    scn = Scenario("st-pulser", 4, 1, theta=q("1.1"), seed=seed, faulty={seed % 4: {"kind": "random", "seed": seed}})
    res = run(scn)
    assert res.ok, [c.line() for c in res.checks]
    rec = res.trace.records
    for v in res.correct:
        pulses = sum(1 for r in rec if r[2] == "pulse" and r[1] == v)
        proposes = sum(1 for r in rec if r[2] == "send" and r[1] == v and r[3] == "st.propose")
        # at most one proposal per pulse, plus one left over from the arbitrary start
        assert proposes <= pulses + 2
