"""Calendar helpers shared by the point-in-time code."""

from __future__ import annotations

import datetime as dt
from typing import Optional

__all__ = ["parse_date", "format_date", "add_months", "month_range", "add_years"]


def parse_date(text: str) -> Optional[dt.date]:
    """Parse an ISO ``YYYY-MM-DD`` cell; empty cells give ``None``.

    Anything else raises ``ValueError`` so the caller can quarantine the row.
    """
    text = text.strip()
    if not text:
        return None
    if len(text) != 10 or text[4] != "-" or text[7] != "-":
        raise ValueError(f"not an ISO date: {text!r}")
    return dt.date.fromisoformat(text)


def format_date(value: Optional[dt.date]) -> str:
    return "" if value is None else value.isoformat()


def add_months(day: dt.date, months: int) -> dt.date:
    """Shift by whole months, pinned to the first of the month."""
    index = day.year * 12 + (day.month - 1) + months
    return dt.date(index // 12, index % 12 + 1, 1)


def add_years(day: dt.date, years: int) -> dt.date:
    try:
        return day.replace(year=day.year + years)
    except ValueError:  # Feb 29
        return day.replace(year=day.year + years, day=28)


def month_range(start: dt.date, end: dt.date, step: int = 1) -> list[dt.date]:
    """Month-first dates ``start, start+step, ...`` strictly before ``end``."""
    if step < 1:
        raise ValueError("step must be at least one month")
    out = []
    current = dt.date(start.year, start.month, 1)
    while current < end:
        out.append(current)
        current = add_months(current, step)
    return out
