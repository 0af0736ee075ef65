"""Empirical diagnostics: fit errors, term-rate comparisons, FOMC surprises, risk premia.

Rates are decimals on input; every reported statistic is in basis points.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass
from datetime import date, timedelta

import numpy as np

from .calendar import add_months
from .errors import DataError, DomainError
from .estimation import ObservationPanel, gaussian_measurement, shadow_measurement
from .models import ModelParams

BP = 1e4
QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


# ---------------------------------------------------------------------------
# in-sample fit


def fitted_rates(params: ModelParams, panel: ObservationPanel, states, quad=None) -> np.ndarray:
    """Model futures rate of every panel observation at the per-row ``states`` (rows, n)."""
    states = np.asarray(states, dtype=float)
    if states.shape != (panel.n_rows, params.n):
        raise DomainError(f"need one state per panel row, shape ({panel.n_rows}, {params.n})")
    out = np.empty(panel.n_obs)
    if not params.spec.is_shadow:
        co = gaussian_measurement(params, panel)
        for r in range(panel.n_rows):
            sl = panel.row_slice(r)
            out[sl] = co.subset(sl).value(states[r])
        return out
    for r in range(panel.n_rows):
        sl = panel.row_slice(r)
        out[sl] = shadow_measurement(params, panel, sl, states[r], quad)
    return out


def slot_labels(panel: ObservationPanel) -> list[str]:
    """Per observation ``1M<i>``/``3M<i>``: its rank among the row's contracts of that kind."""
    out = []
    for r in range(panel.n_rows):
        seen = {"1M": 0, "3M": 0}
        sl = panel.row_slice(r)
        for k in range(sl.start, sl.stop):
            kind = "3M" if panel.is3m[k] else "1M"
            seen[kind] += 1
            out.append(f"{kind}{seen[kind]}")
    return out


def slot_matrix(panel: ObservationPanel, values) -> tuple[list[str], np.ndarray]:
    """Rows x contract slots of per-observation ``values``; NaN where a slot is absent."""
    values = np.asarray(values, dtype=float)
    if values.shape != (panel.n_obs,):
        raise DomainError("need one value per panel observation")
    labels = slot_labels(panel)
    cols = sorted(set(labels), key=lambda s: (s[:2], int(s[2:])))
    pos = {c: i for i, c in enumerate(cols)}
    out = np.full((panel.n_rows, len(cols)), np.nan)
    for r in range(panel.n_rows):
        sl = panel.row_slice(r)
        for k in range(sl.start, sl.stop):
            out[r, pos[labels[k]]] = values[k]
    return cols, out


def fit_rmse(observed, fitted) -> np.ndarray:
    """Root mean square of ``observed - fitted`` per column, in bp.

    Both inputs are (dates, contracts); a pair enters a column's average only
    when both entries are finite.
    """
    obs = np.atleast_2d(np.asarray(observed, dtype=float))
    fit = np.atleast_2d(np.asarray(fitted, dtype=float))
    if obs.shape != fit.shape:
        raise DomainError("observed and fitted shapes differ")
    ok = np.isfinite(obs) & np.isfinite(fit)
    n = ok.sum(axis=0)
    if np.any(n == 0):
        raise DataError(f"no matched observations for column(s) {np.flatnonzero(n == 0).tolist()}")
    sq = np.where(ok, (obs - fit) ** 2, 0.0)
    return np.sqrt(sq.sum(axis=0) / n) * BP


# ---------------------------------------------------------------------------
# term-rate comparison


@dataclass(frozen=True)
class ComparisonStats:
    """Summary of a difference series in bp; quantiles use linear interpolation."""

    n: int
    rmse: float
    mean: float
    sd: float
    q05: float
    q25: float
    median: float
    q75: float
    q95: float

    @classmethod
    def from_differences(cls, diff_bp) -> "ComparisonStats":
        d = np.sort(np.asarray(diff_bp, dtype=float))
        if d.size == 0:
            raise DataError("empty difference series")
        sd = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
        q = np.quantile(d, QUANTILE_LEVELS, method="linear")
        return cls(int(d.size), float(np.sqrt(np.mean(d * d))), float(np.mean(d)), sd,
                   *(float(v) for v in q))

    def to_dict(self) -> dict:
        return asdict(self)


TermSeries = Mapping[tuple[date, str], float]


def compare_term_rates(model: TermSeries, benchmark: TermSeries) -> dict[str, ComparisonStats]:
    """Statistics of ``model - benchmark`` per tenor over the common (date, tenor) keys."""
    common = sorted(set(model) & set(benchmark))
    if not common:
        raise DataError("model and benchmark series share no (date, tenor) keys")
    by_tenor: dict[str, list[float]] = {}
    for key in common:
        by_tenor.setdefault(key[1], []).append((model[key] - benchmark[key]) * BP)
    return {t: ComparisonStats.from_differences(v) for t, v in sorted(by_tenor.items())}


# ---------------------------------------------------------------------------
# FOMC surprises


def _days_in_month(d: date) -> int:
    return (add_months(date(d.year, d.month, 1), 1) - date(d.year, d.month, 1)).days


def _prior_quote(quotes: Mapping[date, float], before: date, what: str) -> float:
    earlier = [d for d in quotes if d < before]
    if not earlier:
        raise DataError(f"no {what} quote before {before.isoformat()}", missing=[before])
    return quotes[max(earlier)]


def _quote_on(quotes: Mapping[date, float], day: date, what: str) -> float:
    if day not in quotes:
        raise DataError(f"missing {what} quote on {day.isoformat()}", missing=[day])
    return quotes[day]


def fomc_surprise(spot: Mapping[date, float], meeting: date,
                  next_month: Mapping[date, float] | None = None) -> float:
    """Unexpected target change ``N/(N - tau) (f_tau - f_{tau-1})`` in rate units.

    ``spot`` holds the rates of the one-month contract for the meeting's month
    keyed by trade date and ``f_{tau-1}`` is its last quote before the meeting.
    On the first day of a month that quote must come from the last day of the
    preceding month. A meeting on the last day of the month uses the change in
    the following month's contract, unscaled.
    """
    N = _days_in_month(meeting)
    tau = meeting.day
    if tau == N:
        if next_month is None:
            raise DataError(f"meeting on {meeting.isoformat()} needs the next month's contract")
        return _quote_on(next_month, meeting, "next-month") - _prior_quote(next_month, meeting,
                                                                            "next-month")
    f_now = _quote_on(spot, meeting, "spot")
    if tau == 1:
        prior = [d for d in spot if (d.year, d.month) == _prev_month(meeting)]
        if not prior:
            raise DataError(f"no quote on the last day of the month before {meeting.isoformat()}",
                            missing=[meeting - timedelta(days=1)])
        f_prev = spot[max(prior)]
    else:
        f_prev = _prior_quote(spot, meeting, "spot")
    return N / (N - tau) * (f_now - f_prev)


def _prev_month(d: date) -> tuple[int, int]:
    p = add_months(date(d.year, d.month, 1), -1)
    return p.year, p.month


# ---------------------------------------------------------------------------
# risk premia


@dataclass(frozen=True)
class RegressionResult:
    """Constant-only regression of excess returns: mean and its standard error, in bp."""

    horizon: int
    n: int
    alpha: float
    std_error: float
    alpha_annualized: float
    std_error_annualized: float

    def to_dict(self) -> dict:
        return asdict(self)


def excess_returns(futures: Mapping[date, Mapping[date, float]], realized: Mapping[date, float],
                   horizon: int, stride: int = 1) -> tuple[list[date], np.ndarray]:
    """``rx = f_(n)(t) - R_(t+n)`` at month ends ``t``.

    ``futures[t][m]`` is the end-of-month rate of the one-month contract for
    the month starting on ``m``; ``realized[m]`` is that month's realized
    average. The contract ``n`` months ahead of ``t`` covers the ``n``-th
    month after the one containing ``t``. ``stride`` keeps every
    ``stride``-th month end.
    """
    if horizon < 1 or stride < 1:
        raise DomainError("horizon and stride must be positive")
    ends = sorted(futures)[::stride]
    used, rx = [], []
    for t in ends:
        m = add_months(date(t.year, t.month, 1), horizon)
        if m in futures[t] and m in realized:
            used.append(t)
            rx.append(futures[t][m] - realized[m])
    return used, np.array(rx, dtype=float)


def risk_premium(futures: Mapping[date, Mapping[date, float]], realized: Mapping[date, float],
                 horizons: Sequence[int] = (1, 2, 3, 4, 5, 6), stride: int = 1,
                 periods_per_year: int = 12) -> list[RegressionResult]:
    """Mean excess return per horizon with plain sample standard errors.

    The annualized pair scales each excess return by ``periods_per_year / n``
    before averaging.
    """
    out = []
    for n in horizons:
        _, rx = excess_returns(futures, realized, n, stride)
        if rx.size < 2:
            raise DataError(f"horizon {n}: {rx.size} excess returns, need at least 2")
        rx = rx * BP
        se = float(np.std(rx, ddof=1) / np.sqrt(rx.size))
        scale = periods_per_year / n
        out.append(RegressionResult(n, int(rx.size), float(rx.mean()), se,
                                    float(rx.mean() * scale), se * scale))
    return out
