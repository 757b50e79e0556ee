# util.py
import warnings
from decimal import Decimal, ROUND_HALF_UP, ROUND_FLOOR
from typing import List, Union

TICKS_PER_SECOND = 1_000_000
MICROSECONDS_PER_SECOND = 1_000_000

Seconds = Union[str, int, float, Decimal]


class __config_flags:
    """Internal class for defining diagnostic and compatibility flags"""

    _all_names: List[str] = []
    _fixed_names: List[str] = []
    _type_desc = "configuration"

    @classmethod
    def _set(cls, dname, value):
        if dname in cls._fixed_names:
            warnings.warn(
                f"{cls.__name__}.{dname} {cls._type_desc} is {str(getattr(cls, dname)).upper()}"
                f" and cannot be overridden"
            )
            return
        if dname in cls._all_names:
            setattr(cls, dname, value)
        else:
            raise ValueError(f"no such {cls._type_desc} {dname!r}")

    enable = classmethod(lambda cls, name: cls._set(name, True))
    disable = classmethod(lambda cls, name: cls._set(name, False))


def _as_decimal(value: Seconds) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        # repr gives the shortest string that round-trips, so 2.75 stays 2.75
        return Decimal(repr(value))
    return Decimal(str(value).strip())


def seconds_to_ticks(value: Seconds, ticks_per_second: int = TICKS_PER_SECOND) -> int:
    """
    Convert a duration or timestamp in seconds to integer ticks.

    Conversion is exact decimal arithmetic followed by rounding half up
    (toward +infinity on exact halves), so ``"0.0000005"`` becomes 1 tick
    and ``"-0.0000005"`` becomes 0 ticks. Strings are preferred for values
    read from files, since they avoid binary float representation.

    Example::

        seconds_to_ticks("2.75")        # -> 2750000
        seconds_to_ticks(0.725)         # -> 725000
        seconds_to_ticks("1.5", 10)     # -> 15
    """
    if ticks_per_second <= 0:
        raise ValueError("ticks_per_second must be positive")
    scaled = _as_decimal(value) * ticks_per_second
    if not scaled.is_finite():
        raise ValueError(f"cannot convert {value!r} to ticks")
    return int((scaled + Decimal("0.5")).to_integral_value(rounding=ROUND_FLOOR))


def milliseconds_to_ticks(value: Seconds, ticks_per_second: int = TICKS_PER_SECOND) -> int:
    return seconds_to_ticks(_as_decimal(value) / 1000, ticks_per_second)


def ticks_to_seconds(ticks: int, ticks_per_second: int = TICKS_PER_SECOND) -> float:
    return ticks / ticks_per_second


def ticks_to_microseconds(ticks: int, ticks_per_second: int = TICKS_PER_SECOND) -> int:
    """
    Whole microseconds for a tick count, as the file formats store times.
    Exact when a tick is a whole number of microseconds, rounded half up
    for finer resolutions.
    """
    if ticks_per_second == MICROSECONDS_PER_SECOND:
        return int(ticks)
    return seconds_to_ticks(Decimal(int(ticks)) / ticks_per_second, MICROSECONDS_PER_SECOND)


def microseconds_to_ticks(microseconds: int, ticks_per_second: int = TICKS_PER_SECOND) -> int:
    if ticks_per_second == MICROSECONDS_PER_SECOND:
        return int(microseconds)
    return seconds_to_ticks(Decimal(int(microseconds)) / MICROSECONDS_PER_SECOND, ticks_per_second)


def floor_product(a: Seconds, b: Seconds) -> int:
    """floor(a * b) computed on decimal values, immune to float noise near integers"""
    return int((_as_decimal(a) * _as_decimal(b)).to_integral_value(rounding=ROUND_FLOOR))


def round_half_up(value: Seconds, places: int = 2) -> Decimal:
    return _as_decimal(value).quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP)


def format_seconds(ticks: int, ticks_per_second: int = TICKS_PER_SECOND) -> str:
    """
    Decimal text for a tick count, precise enough that
    ``seconds_to_ticks(format_seconds(t))`` gives back ``t``.

    Example::

        format_seconds(2750000)  # -> '2.75'
    """
    value = Decimal(ticks) / Decimal(ticks_per_second)
    return format(value.normalize(), "f")
