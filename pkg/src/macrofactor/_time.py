"""Monthly period stamps ("YYYY-MM"); quarters are stored as their first month."""

import re

from .errors import UnparseableDate

_MONTH = re.compile(r"^\s*(\d{4})[-/:]?M?(\d{1,2})(?:-\d{1,2})?\s*$")
_QUARTER = re.compile(r"^\s*(\d{4})[-:]?Q([1-4])\s*$", re.IGNORECASE)


def parse_period(text: str) -> str:
    """Canonicalize ``YYYY-MM`` (optionally ``-DD``), ``YYYY:MM``, ``YYYY-Qn``."""
    s = str(text)
    m = _QUARTER.match(s)
    if m:
        return f"{int(m.group(1)):04d}-{3 * (int(m.group(2)) - 1) + 1:02d}"
    m = _MONTH.match(s)
    if m and 1 <= int(m.group(2)) <= 12:
        return f"{int(m.group(1)):04d}-{int(m.group(2)):02d}"
    raise UnparseableDate(f"cannot parse period {text!r}")


def month_index(period: str) -> int:
    y, m = period.split("-")
    return int(y) * 12 + int(m) - 1


def from_index(idx: int) -> str:
    return f"{idx // 12:04d}-{idx % 12 + 1:02d}"


def month_range(start: str, stop: str, step: int = 1) -> list[str]:
    """Inclusive range of stamps from ``start`` to ``stop``."""
    a, b = month_index(start), month_index(stop)
    return [from_index(i) for i in range(a, b + 1, step)]


def quarter_start(period: str) -> str:
    i = month_index(period)
    return from_index(i - i % 3)


def is_quarter_start(period: str) -> bool:
    return month_index(period) % 3 == 0


def season(period: str, frequency: str) -> int:
    """Month-of-year (0-11) or quarter-of-year (0-3)."""
    i = month_index(period) % 12
    return i if frequency == "Monthly" else i // 3


def in_window(periods, window) -> "list[bool]":
    if window is None:
        return [False] * len(periods)
    lo, hi = (parse_period(w) if w is not None else None for w in window)
    return [(lo is None or p >= lo) and (hi is None or p <= hi) for p in periods]
