"""Exact rational time values.

All simulated time, clock readings and timeout durations are ``gmpy2.mpq``
rationals. Helpers here parse user input ("p/q", decimals, ints) and format
values for traces.
"""
from __future__ import annotations

from fractions import Fraction

from gmpy2 import mpq

Q = mpq
ZERO = mpq(0)
ONE = mpq(1)


def q(value) -> mpq:
    """Coerce ``value`` to an exact rational.

    Accepts ints, ``Fraction``/``mpq`` instances and strings such as ``"3/7"``,
    ``"1.004"`` or ``"12"``. Floats are rejected because their binary
    expansion is almost never what the caller meant.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not time values")
    if isinstance(value, type(ZERO)):
        return value
    if isinstance(value, int):
        return mpq(value)
    if isinstance(value, Fraction):
        return mpq(value.numerator, value.denominator)
    if isinstance(value, str):
        text = value.strip()
        if not text:
            raise ValueError("empty rational")
        try:
            return mpq(Fraction(text))
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a rational: {value!r}") from exc
    if isinstance(value, float):
        raise TypeError(f"float {value!r} is not exact; pass a string such as '1.004'")
    try:
        return mpq(value)
    except Exception as exc:  # pragma: no cover - defensive
        raise TypeError(f"cannot convert {value!r} to a rational") from exc


def fmt(value) -> str:
    """Render a rational as ``p/q`` (or ``p`` for integers)."""
    x = q(value)
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"


def dec(value, places: int = 6) -> str:
    """Decimal rendering used next to the exact form in traces."""
    return f"{float(value):.{places}f}"


def ceil_to_grid(value, step) -> mpq:
    """Smallest multiple of ``step`` that is >= ``value``."""
    v, s = q(value), q(step)
    k = -((-v) // s)
    return mpq(int(k)) * s


def floor_to_grid(value, step) -> mpq:
    v, s = q(value), q(step)
    return mpq(int(v // s)) * s
