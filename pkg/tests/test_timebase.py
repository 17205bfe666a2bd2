from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from pulsesync.timebase import ceil_to_grid, floor_to_grid, fmt, q


def test_parse_forms():
    assert q("3/7") == Fraction(3, 7)
    assert q("1.004") == Fraction(251, 250)
    assert q(12) == 12
    assert q(Fraction(1, 3)) == q("1/3")


def test_rejects_floats_and_garbage():
    with pytest.raises(TypeError):
        q(1.5)
    with pytest.raises(TypeError):
        q(True)
    with pytest.raises(ValueError):
        q("abc")
    with pytest.raises(ValueError):
        q("")


def test_fmt():
    assert fmt(q("6/4")) == "3/2"
    assert fmt(q(5)) == "5"


@given(st.fractions(), st.fractions(min_value=Fraction(1, 1000), max_value=100))
def test_grid_rounding(x, step):
    lo, hi = floor_to_grid(x, step), ceil_to_grid(x, step)
    assert lo <= q(x) <= hi
    assert hi - lo in (0, q(step))
    assert (hi / q(step)).denominator == 1


@given(st.fractions())
def test_fmt_roundtrip(x):
    assert q(fmt(x)) == q(x)
