"""Shared fixtures: model parameters and a small synthetic quote/fixing data set."""

from __future__ import annotations

from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from sofrcurve import dataio
from sofrcurve.calendar import Calendar
from sofrcurve.futures import futures_rate, rate_to_price
from sofrcurve.models import ModelParams

FIXTURE = dict(lam=2.0284, sigma=(0.0054, 0.0062, 0.0088), kP=(0.0980, 0.5153, 2.4486),
               thetaP=(0.0175, -0.0037, -0.0012))
NEAR_BOUND = np.array([0.0015, -0.0013, -0.0010])


@pytest.fixture(scope="session")
def cal() -> Calendar:
    return Calendar.usny()


@pytest.fixture(scope="session")
def afns3() -> ModelParams:
    return ModelParams.afns3(**FIXTURE)


@pytest.fixture(scope="session")
def shadow() -> ModelParams:
    return ModelParams.afns3(**FIXTURE, shadow=True)


def business_days(cal: Calendar, start: date, n: int) -> list[date]:
    out, d = [], start
    while len(out) < n:
        if cal.is_business_day(d):
            out.append(d)
        d += timedelta(days=1)
    return out


def synthetic_market(params: ModelParams, cal: Calendar, start: date, n_days: int,
                     fixing: float = 0.02, seed: int = 1, states=None):
    """Quote rows priced off a simulated state path plus flat overnight fixings.

    Quotes are rounded to 1e-6 index points so that they survive CSV
    round trips unchanged.
    """
    days = business_days(cal, start, n_days)
    fix_days = business_days(cal, start - timedelta(days=200), 400)
    fixings = {d: fixing for d in fix_days if d < days[-1]}
    rng = np.random.default_rng(seed)
    if states is None:
        x = params.thetaP.copy()
        states = []
        for _ in days:
            x = x + 0.0005 * rng.standard_normal(params.n)
            states.append(x.copy())
    quotes = []
    for d, x in zip(days, states):
        for c in dataio.select_universe(d, cal, epoch=d):
            r = futures_rate(params, x, c, 0.0, accrued=fixings)
            price = round(float(rate_to_price(r)), 6)
            quotes.append(dataio.QuoteRow(d, c.contract_id, c.kind, c.accrual_start,
                                          c.accrual_end, price))
    return days, np.array(states), quotes, fixings


def write_market(tmp: Path, quotes, fixings, params: ModelParams | None = None,
                 window: int = 250, extra: str = "") -> Path:
    dataio.write_quotes(tmp / "quotes.csv", quotes)
    dataio.write_fixings(tmp / "fixings.csv", fixings)
    model = ""
    if params is not None:
        dataio.write_params(tmp / "params.json", params)
        model = "[model]\nparams = params.json\n"
    cfg = tmp / "run.ini"
    cfg.write_text(
        f"{model}[data]\nquotes = quotes.csv\nfixings = fixings.csv\n"
        f"[estimation]\nwindow = {window}\nallow_short_window = {'yes' if window < 250 else 'no'}\n"
        f"[output]\ndir = out\n{extra}")
    return cfg
