"""File formats, contract universe, configuration and panel assembly."""

from datetime import date

import numpy as np
import pytest

from sofrcurve import dataio
from sofrcurve.calendar import Calendar
from sofrcurve.errors import DataError, DomainError
from sofrcurve.futures import ContractKind
from sofrcurve.models import ModelParams

from conftest import FIXTURE, business_days, synthetic_market, write_market


def _ids(cs):
    return [c.contract_id for c in cs]


# ---------------------------------------------------------------------------
# quotes and fixings


def test_price_to_rate_conversion(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("date,contract_id,kind,accrual_start,accrual_end,price\n"
                 "2020-01-02,SR1F20,1M,,,99.7\n")
    (q,) = dataio.read_quotes(p)
    assert q.rate == pytest.approx(0.003, abs=1e-15)
    assert q.kind is ContractKind.ONE_MONTH and q.accrual_start is None


def test_quotes_round_trip(tmp_path):
    rows = [dataio.QuoteRow(date(2020, 1, 2), "SR1F20", ContractKind.ONE_MONTH, None, None, 98.4525),
            dataio.QuoteRow(date(2020, 1, 2), "SR3H20", ContractKind.THREE_MONTH,
                            date(2020, 3, 18), date(2020, 6, 17), 98.3 + 1e-9)]
    dataio.write_quotes(tmp_path / "q.csv", rows)
    assert dataio.read_quotes(tmp_path / "q.csv") == rows


def test_fixings_round_trip_and_duplicates(tmp_path):
    fix = {date(2020, 1, 2): 0.0155, date(2020, 1, 3): 0.01549999999}
    dataio.write_fixings(tmp_path / "f.csv", fix)
    assert dataio.read_fixings(tmp_path / "f.csv") == fix
    (tmp_path / "d.csv").write_text("date,rate\n2020-01-02,0.01\n2020-01-02,0.02\n")
    with pytest.raises(DataError) as e:
        dataio.read_fixings(tmp_path / "d.csv")
    assert e.value.line == 3


@pytest.mark.parametrize("row,line_has", [
    ("2020-13-02,SR1F20,1M,,,99.0", "bad date"),
    ("2020-01-02,SR1F20,2M,,,99.0", "kind"),
    ("2020-01-02,SR1F20,1M,,,abc", "bad price"),
    ("2020-01-02,SR1F20,1M,,,120.0", "outside"),
    ("2020-01-02,SR1F20,1M,2020-01-01,,99.0", "both accrual dates"),
    ("2020-01-02,SR1F20,1M,2020-02-01,2020-01-01,99.0", "accrual_end"),
    ("2020-01-02,SR1F20,3M,,,99.0", "changes kind"),
    ("2020-01-02,,1M,,,99.0", "contract_id"),
])
def test_malformed_quote_reports_line(tmp_path, row, line_has):
    p = tmp_path / "q.csv"
    p.write_text("date,contract_id,kind,accrual_start,accrual_end,price\n"
                 "2020-01-02,SR1F20,1M,,,99.0\n" + row + "\n")
    with pytest.raises(DataError) as e:
        dataio.read_quotes(p)
    assert e.value.line == 3
    assert line_has in str(e.value) and ":3:" in str(e.value)


def test_missing_column(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("date,contract_id,price\n2020-01-02,SR1F20,99.0\n")
    with pytest.raises(DataError, match="missing column"):
        dataio.read_quotes(p)


def test_json_output_is_canonical():
    text = dataio.dumps({"b": np.float64(1.5), "a": [np.int64(2), date(2020, 1, 2)],
                         "c": float("nan")})
    assert text == '{\n  "a": [\n    2,\n    "2020-01-02"\n  ],\n  "b": 1.5,\n  "c": null\n}'


# ---------------------------------------------------------------------------
# universe


def test_parse_contract_id():
    assert dataio.parse_contract_id("SR1F20") == (ContractKind.ONE_MONTH, 2020, 1)
    assert dataio.parse_contract_id("sr3z19") == (ContractKind.THREE_MONTH, 2019, 12)
    for bad in ("SR2F20", "SR1A20", "ED1F20", "SR1F2"):
        with pytest.raises(DataError):
            dataio.parse_contract_id(bad)


def test_universe_example(cal):
    cs = dataio.select_universe(date(2019, 9, 3), cal)
    assert _ids(cs) == ["SR1U19", "SR1V19", "SR1X19", "SR1Z19", "SR1F20", "SR1G20", "SR1H20",
                        "SR3M19", "SR3U19", "SR3Z19", "SR3H20", "SR3M20"]
    front = cs[7]
    assert front.accrual_start == date(2019, 6, 19) and front.accrual_end == date(2019, 9, 18)


def test_universe_rollover(cal):
    before = dataio.select_universe(date(2019, 9, 30), cal)
    after = dataio.select_universe(date(2019, 10, 1), cal)
    assert _ids(before)[0] == "SR1U19" and _ids(after)[0] == "SR1V19"
    # the quarterly strip rolls once the front contract's accrual ends
    assert _ids(dataio.select_universe(date(2019, 9, 17), cal))[7] == "SR3M19"
    assert _ids(dataio.select_universe(date(2019, 9, 18), cal))[7] == "SR3U19"


@pytest.mark.parametrize("as_of", business_days(Calendar.usny(), date(2019, 1, 2), 300)[::7])
def test_universe_count(cal, as_of):
    cs = dataio.select_universe(as_of, cal)
    kinds = [c.kind for c in cs]
    assert kinds.count(ContractKind.ONE_MONTH) == 7 and kinds.count(ContractKind.THREE_MONTH) == 5
    assert all(c.accrual_end > as_of for c in cs)


# ---------------------------------------------------------------------------
# configuration


def test_load_config(tmp_path, afns3):
    cfg_path = write_market(tmp_path, [], {}, params=afns3,
                            extra="[universe]\nn_1m = 4\nn_3m = 2\n[mc]\npaths = 1000\nseed = 3\n"
                                  "[custom]\nnote = hi\n")
    cfg = dataio.load_config(cfg_path)
    assert cfg.quotes == tmp_path / "quotes.csv" and cfg.params == tmp_path / "params.json"
    assert (cfg.n_1m, cfg.n_3m, cfg.mc_paths, cfg.seed) == (4, 2, 1000, 3)
    assert cfg.window == 250 and not cfg.allow_short_window
    assert cfg.output_dir == tmp_path / "out"
    assert cfg.extra == {"custom.note": "hi"}


def test_config_window_guard(tmp_path):
    with pytest.raises(DomainError):
        dataio.RunConfig(window=100)
    assert dataio.RunConfig(window=100, allow_short_window=True).window == 100
    (tmp_path / "quotes.csv").write_text("")
    (tmp_path / "run.ini").write_text("[data]\nquotes = quotes.csv\n[estimation]\nwindow = 20\n")
    with pytest.raises(DomainError):
        dataio.load_config(tmp_path / "run.ini")


@pytest.mark.parametrize("text", ["[data]\nquotes = nowhere.csv\n", "[estimation]\nwindow = ten\n",
                                  "no section header\n"])
def test_config_errors(tmp_path, text):
    (tmp_path / "run.ini").write_text(text)
    with pytest.raises(DataError):
        dataio.load_config(tmp_path / "run.ini")


def test_params_round_trip(tmp_path, shadow):
    dataio.write_params(tmp_path / "p.json", shadow)
    back = dataio.read_params(tmp_path / "p.json")
    assert back.variant is shadow.variant and back.lam == shadow.lam
    np.testing.assert_array_equal(back.thetaP, shadow.thetaP)
    dataio.write_json(tmp_path / "nested.json", {"params": shadow.to_dict(), "loglik": 1.0})
    assert dataio.read_params(tmp_path / "nested.json").lam == shadow.lam
    (tmp_path / "bad.json").write_text('{"variant": "AFNS3"}')
    with pytest.raises(DataError):
        dataio.read_params(tmp_path / "bad.json")


# ---------------------------------------------------------------------------
# panel assembly


@pytest.fixture(scope="module")
def market():
    p = ModelParams.afns3(**FIXTURE)
    return synthetic_market(p, Calendar.usny(), date(2020, 3, 2), 12)


def test_load_panel_rates_and_layout(market, cal):
    days, _, quotes, fixings = market
    lp = dataio.load_panel(quotes, fixings, cal)
    assert lp.epoch == days[0] and lp.panel.n_rows == len(days)
    assert np.diff(lp.panel.row_ptr).tolist() == [12] * len(days)
    assert lp.short_rows == ()
    np.testing.assert_allclose(lp.panel.rate, [q.rate for q in quotes], rtol=0, atol=1e-15)
    # the March monthly contract is accruing: realized part present from the second day on
    k = lp.panel.row_slice(3).start
    assert lp.panel.contract_ids[k] == "SR1H20" and lp.panel.realized[k] > 0


def test_panel_round_trip(market, cal, tmp_path):
    _, _, quotes, fixings = market
    lp = dataio.load_panel(quotes, fixings, cal)
    dataio.write_quotes(tmp_path / "q.csv", dataio.panel_quotes(lp.panel, lp.contracts))
    dataio.write_fixings(tmp_path / "f.csv", fixings)
    again = dataio.load_panel(dataio.read_quotes(tmp_path / "q.csv"),
                              dataio.read_fixings(tmp_path / "f.csv"), cal)
    for name in ("times", "row_ptr", "is3m", "start_off", "end_off", "length", "realized", "mult"):
        np.testing.assert_array_equal(getattr(again.panel, name), getattr(lp.panel, name))
    np.testing.assert_allclose(again.panel.rate, lp.panel.rate, rtol=0, atol=1e-15)
    assert again.panel.contract_ids == lp.panel.contract_ids
    assert again.panel.dates == lp.panel.dates


def test_fixing_gap_names_missing_date(market, cal):
    days, _, quotes, fixings = market
    gap = dict(fixings)
    del gap[date(2020, 3, 4)]
    with pytest.raises(DataError) as e:
        dataio.load_panel(quotes, gap, cal)
    assert date(2020, 3, 4) in e.value.missing
    assert "2020-03-04" in str(e.value)


def test_short_rows_flagged(market, cal):
    days, _, quotes, fixings = market
    thinned = [q for q in quotes if not (q.date == days[2] and q.contract_id == "SR3Z20")]
    lp = dataio.load_panel(thinned, fixings, cal)
    assert lp.short_rows == (days[2],)
    assert np.diff(lp.panel.row_ptr)[2] == 11


def test_duplicate_quote_rejected(market, cal):
    _, _, quotes, fixings = market
    with pytest.raises(DataError, match="duplicate"):
        dataio.load_panel(quotes + quotes[:1], fixings, cal)


def test_explicit_accrual_dates_win(cal):
    fix = {}
    q = dataio.QuoteRow(date(2020, 1, 2), "CUSTOM", ContractKind.THREE_MONTH,
                        date(2020, 3, 16), date(2020, 6, 15), 98.5)
    lp = dataio.load_panel([q], fix, cal, n_1m=1, n_3m=1)
    c = lp.contracts["CUSTOM"]
    assert (c.accrual_start, c.accrual_end) == (date(2020, 3, 16), date(2020, 6, 15))
    assert lp.short_rows == (date(2020, 1, 2),)
    bad = dataio.QuoteRow(date(2020, 1, 2), "CUSTOM", ContractKind.THREE_MONTH, None, None, 98.5)
    with pytest.raises(DataError, match="cannot infer"):
        dataio.load_panel([bad], fix, cal)
