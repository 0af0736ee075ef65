"""Business-day calendar, date rolling and ACT/360 schedules."""

from __future__ import annotations

import calendar as _cal
from dataclasses import dataclass
from datetime import date, timedelta
from importlib import resources
from pathlib import Path

from .errors import DataError

DAYS_PER_YEAR = 360.0


def act360(start: date, end: date) -> float:
    return (end - start).days / DAYS_PER_YEAR


def add_months(d: date, months: int) -> date:
    """Calendar month arithmetic, clamping the day to the target month's length."""
    m = d.month - 1 + months
    y = d.year + m // 12
    m = m % 12 + 1
    return date(y, m, min(d.day, _cal.monthrange(y, m)[1]))


def third_wednesday(year: int, month: int) -> date:
    first = date(year, month, 1)
    return first + timedelta(days=(2 - first.weekday()) % 7 + 14)


def parse_holiday_lines(lines) -> frozenset[date]:
    out = set()
    for lineno, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            out.add(date.fromisoformat(text))
        except ValueError as exc:
            raise DataError(f"bad calendar date {text!r}", line=lineno) from exc
    return frozenset(out)


@dataclass(frozen=True)
class Calendar:
    holidays: frozenset[date] = frozenset()
    name: str = "custom"

    @classmethod
    def usny(cls) -> "Calendar":
        text = resources.files("sofrcurve").joinpath("data/usny_holidays.txt").read_text()
        return cls(parse_holiday_lines(text.splitlines()), name="USNY")

    @classmethod
    def from_file(cls, path: str | Path) -> "Calendar":
        p = Path(path)
        return cls(parse_holiday_lines(p.read_text().splitlines()), name=p.stem)

    def is_business_day(self, d: date) -> bool:
        return d.weekday() < 5 and d not in self.holidays

    def following(self, d: date) -> date:
        while not self.is_business_day(d):
            d += timedelta(days=1)
        return d

    def preceding(self, d: date) -> date:
        while not self.is_business_day(d):
            d -= timedelta(days=1)
        return d

    def modified_following(self, d: date) -> date:
        f = self.following(d)
        return f if f.month == d.month else self.preceding(d)

    def next_business_day(self, d: date) -> date:
        return self.following(d + timedelta(days=1))

    def previous_business_day(self, d: date) -> date:
        return self.preceding(d - timedelta(days=1))

    def business_days(self, start: date, end: date) -> list[date]:
        """Business days in ``[start, end)``."""
        out = []
        d = start
        while d < end:
            if self.is_business_day(d):
                out.append(d)
            d += timedelta(days=1)
        return out


@dataclass(frozen=True)
class Schedule:
    """Overnight fixing schedule of an accrual period ``[start, end)``.

    ``rate_days[i]`` is the number of calendar days the fixing on
    ``fixing_dates[i]`` applies to (3 on a regular Friday); ``covered_days[i]``
    is how many of those days fall inside the period. A period starting on a
    non-business day begins with the last preceding fixing.
    """

    start: date
    end: date
    fixing_dates: tuple[date, ...]
    rate_days: tuple[int, ...]
    covered_days: tuple[int, ...]

    @property
    def day_weights(self) -> list[float]:
        return [n / DAYS_PER_YEAR for n in self.rate_days]

    @property
    def coverage(self) -> list[float]:
        return [n / DAYS_PER_YEAR for n in self.covered_days]

    @property
    def year_fraction(self) -> float:
        return act360(self.start, self.end)


def fixing_schedule(start: date, end: date, cal: Calendar) -> Schedule:
    if end <= start:
        raise DataError(f"empty accrual period {start}..{end}")
    fixings = cal.business_days(start, end)
    if not cal.is_business_day(start):
        fixings.insert(0, cal.previous_business_day(start))
    rate_days, covered = [], []
    for d in fixings:
        nxt = cal.next_business_day(d)
        rate_days.append((nxt - d).days)
        covered.append((min(nxt, end) - max(d, start)).days)
    return Schedule(start, end, tuple(fixings), tuple(rate_days), tuple(covered))


def make_schedule(start: date, tenor_months: int, cal: Calendar) -> Schedule:
    """Term period starting at ``start``; the end is rolled modified-following."""
    end = cal.modified_following(add_months(start, tenor_months))
    return fixing_schedule(start, end, cal)
