"""Calendars, fixing schedules and Gaussian futures pricing."""

from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from sofrcurve.calendar import Calendar, act360, add_months, fixing_schedule, make_schedule, parse_holiday_lines
from sofrcurve.errors import DataError, DomainError, UnsupportedVariantError
from sofrcurve.futures import (
    ContractKind,
    FuturesContract,
    FuturesQuote,
    one_month_contract,
    price_1m,
    price_1m_exact,
    price_3m,
    price_3m_exact,
    price_to_rate,
    quote_map,
    rate_to_price,
    realized_fixings,
    three_month_contract,
)
from sofrcurve.models import ModelParams, integrated_rate_moments, q_cov

from conftest import FIXTURE


# ---------------------------------------------------------------------------
# calendar


def test_act360_and_month_arithmetic():
    assert act360(date(2020, 1, 1), date(2020, 7, 1)) == 182 / 360
    assert add_months(date(2020, 1, 31), 1) == date(2020, 2, 29)
    assert add_months(date(2020, 11, 15), 3) == date(2021, 2, 15)


def test_modified_following_stays_in_month(cal):
    # 2021-10-31 is a Sunday: following would cross into November
    assert cal.modified_following(date(2021, 10, 31)) == date(2021, 10, 29)
    assert cal.modified_following(date(2021, 10, 30)) == date(2021, 10, 29)
    assert cal.modified_following(date(2021, 11, 6)) == date(2021, 11, 8)


def test_usny_holidays(cal):
    assert not cal.is_business_day(date(2020, 12, 25))
    assert not cal.is_business_day(date(2019, 11, 11))  # Veterans Day
    assert cal.is_business_day(date(2019, 11, 12))


def test_bad_holiday_line_reports_line():
    with pytest.raises(DataError) as e:
        parse_holiday_lines(["# comment", "2020-01-01", "2020-13-01"])
    assert e.value.line == 3


def test_friday_fixing_covers_weekend(cal):
    s = fixing_schedule(date(2020, 1, 6), date(2020, 1, 13), cal)
    assert s.rate_days == (1, 1, 1, 1, 3)
    assert sum(s.covered_days) == 7


def test_period_starting_on_weekend_uses_prior_fixing(cal):
    s = fixing_schedule(date(2020, 2, 1), date(2020, 3, 1), cal)  # Saturday start
    assert s.fixing_dates[0] == date(2020, 1, 31)
    assert s.covered_days[0] == 2
    assert sum(s.covered_days) == 29


@settings(max_examples=60, deadline=None)
@given(start=st.dates(date(2018, 1, 1), date(2030, 1, 1)), months=st.integers(1, 12))
def test_schedule_coverage_sums_to_period(start, months):
    cal = Calendar.usny()
    s = make_schedule(start, months, cal)
    assert sum(s.covered_days) == (s.end - s.start).days
    assert all(c >= 1 for c in s.covered_days)
    assert all(r >= c for r, c in zip(s.rate_days, s.covered_days))


def test_empty_period_rejected(cal):
    with pytest.raises(DataError):
        fixing_schedule(date(2020, 1, 2), date(2020, 1, 2), cal)


# ---------------------------------------------------------------------------
# contracts and conversions


def test_price_rate_conversion():
    assert price_to_rate(99.7) == pytest.approx(0.003)
    assert rate_to_price(0.003) == pytest.approx(99.7)
    q = FuturesQuote(date(2020, 1, 2), "SR1F20", 0.0155)
    assert q.price == pytest.approx(98.45)
    with pytest.raises(DomainError):
        FuturesQuote(date(2020, 1, 2), "SR1F20", 0.0155, price=98.0)


def test_contract_identifiers_and_dates(cal):
    c = one_month_contract(2020, 3, cal, date(2020, 1, 2))
    assert c.contract_id == "SR1H20" and c.accrual_end == date(2020, 4, 1)
    q = three_month_contract(2020, 3, cal, date(2020, 1, 2))
    assert q.contract_id == "SR3H20"
    assert (q.accrual_start, q.accrual_end) == (date(2020, 3, 18), date(2020, 6, 17))
    assert q.coverage.sum() == pytest.approx(q.length, abs=1e-15)


def test_contract_validation():
    with pytest.raises(DomainError):
        FuturesContract("1M", 1.0, 0.5, [1.0], [0.1], [0.1])
    with pytest.raises(DomainError):
        FuturesContract("1M", 0.0, 0.1, [0.0, 0.05], [0.05, 0.05], [0.05, 0.04])


def test_realized_fixings_missing_dates_named(cal):
    c = one_month_contract(2020, 3, cal, date(2020, 3, 1))
    t = act360(date(2020, 3, 1), date(2020, 3, 10))
    fix = {d: 0.01 for d in c.fixing_dates if d < date(2020, 3, 10)}
    del fix[date(2020, 3, 4)]
    with pytest.raises(DataError) as e:
        realized_fixings(c, t, fix)
    assert e.value.missing == [date(2020, 3, 4)]


# ---------------------------------------------------------------------------
# pricing oracles


def _integrated_moments_between(p, x, S, T, n=40):
    """Mean and variance of int_S^T r under Q.

    The variance is twice the integral of the short-rate covariance over the
    triangle ``S <= a <= b <= T``, where the integrand is smooth, by nested
    Gauss-Legendre rules.
    """
    mS, _ = integrated_rate_moments(p, x, S)
    mT, _ = integrated_rate_moments(p, x, T)
    KQ, rho = p.KQ, p.rho1
    g, w = np.polynomial.legendre.leggauss(n)

    def cov(a, b):  # a <= b
        return rho @ q_cov(p, a) @ expm(-KQ * (b - a)).T @ rho

    var = 0.0
    for ga, wa in zip(g, w):
        a = S + (T - S) * (ga + 1) / 2
        bs = a + (T - a) * (g + 1) / 2
        inner = sum(wb * cov(a, b) for b, wb in zip(bs, w)) * (T - a) / 2
        var += wa * inner * (T - S) / 2
    return mT - mS, 2.0 * var


def test_price_1m_is_mean_integrated_rate(afns3):
    x = np.array([0.01, -0.004, 0.002])
    c = FuturesContract.stylized("1M", 0.5, 30)
    mS, _ = integrated_rate_moments(afns3, x, c.start)
    mT, _ = integrated_rate_moments(afns3, x, c.end)
    assert price_1m(afns3, x, c) == pytest.approx((mT - mS) / c.length, rel=1e-13)


def test_price_3m_matches_lognormal_moment(afns3):
    x = np.array([0.01, -0.004, 0.002])
    c = FuturesContract.stylized("3M", 0.75, 90)
    m, v = _integrated_moments_between(afns3, x, c.start, c.end)
    want = (np.exp(m + 0.5 * v) - 1.0) / c.length
    assert price_3m(afns3, x, c) == pytest.approx(want, rel=1e-9)


def test_quote_map_jacobian(afns3):
    x = np.array([0.01, -0.004, 0.002])
    for kind, days in (("1M", 30), ("3M", 90)):
        m = quote_map(afns3, FuturesContract.stylized(kind, 0.4, days))
        h = 1e-6
        fd = [(m.value(x + h * e) - m.value(x - h * e)) / (2 * h) for e in np.eye(3)]
        np.testing.assert_allclose(m.jacobian(x), fd, rtol=1e-7)


def test_mid_accrual_1m_uses_realized_fixings(afns3, cal):
    epoch = date(2020, 3, 1)
    c = one_month_contract(2020, 3, cal, epoch)
    d = date(2020, 3, 16)
    t = act360(epoch, d)
    fix = {f: 0.015 for f in c.fixing_dates if f < d}
    x = np.array([0.01, -0.004, 0.002])
    got = price_1m(afns3, x, c, t, accrued=fix)
    n0 = len(fix)
    realized = 0.015 * c.coverage[:n0].sum() / c.length
    mT, _ = integrated_rate_moments(afns3, x, c.end - t)
    assert got == pytest.approx(realized + mT / c.length, rel=1e-13)


def test_deterministic_rates_exact_prices(cal):
    """Zero volatility: fixings are the bond-implied overnight rates (e^{r d} - 1)/d."""
    p = ModelParams.afns3(1.0, (0.0, 0.0, 0.0), (0.1, 0.2, 0.3), (0.02, 0.0, 0.0))
    x = np.array([0.02, 0.0, 0.0])
    epoch = date(2021, 1, 4)
    c1 = one_month_contract(2021, 3, cal, epoch)
    assert price_1m(p, x, c1) == pytest.approx(0.02, abs=1e-15)
    fixings = np.expm1(0.02 * c1.day_weights) / c1.day_weights
    assert price_1m_exact(p, x, c1) == pytest.approx(fixings @ c1.coverage / c1.length, abs=1e-15)
    c3 = three_month_contract(2021, 3, cal, epoch)
    fixings = np.expm1(0.02 * c3.day_weights) / c3.day_weights
    discrete = (np.prod(1.0 + fixings * c3.day_weights) - 1.0) / c3.length
    assert price_3m_exact(p, x, c3) == pytest.approx(discrete, abs=1e-12)
    assert price_3m(p, x, c3) == pytest.approx(discrete, abs=1e-12)


def test_exact_pricers_close_to_approximations(afns3, cal):
    epoch = date(2021, 1, 4)
    x = afns3.thetaP
    c1 = one_month_contract(2021, 6, cal, epoch)
    c3 = three_month_contract(2022, 6, cal, epoch)
    assert abs(price_1m(afns3, x, c1) - price_1m_exact(afns3, x, c1)) < 1e-4
    assert abs(price_3m(afns3, x, c3) - price_3m_exact(afns3, x, c3)) < 1e-7


def test_shadow_rejected_by_gaussian_maps(shadow):
    with pytest.raises(UnsupportedVariantError):
        quote_map(shadow, FuturesContract.stylized("1M", 0.1, 30))


def test_valuation_after_end_rejected(afns3):
    with pytest.raises(DomainError):
        quote_map(afns3, FuturesContract.stylized("1M", 0.1, 30), t=1.0)


def test_kind_enum():
    assert ContractKind("3M") is ContractKind.THREE_MONTH
