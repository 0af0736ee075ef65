"""Quote and fixing files, run configuration, contract universe and report writers."""

from __future__ import annotations

import configparser
import csv
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .calendar import Calendar, act360, add_months
from .errors import DataError, DomainError
from .estimation import DT_DAILY, ObservationPanel, panel_from_contracts
from .futures import (MONTH_CODES, ContractKind, FuturesContract, one_month_contract,
                      price_to_rate, three_month_contract)
from .models import ModelParams

QUOTE_COLUMNS = ("date", "contract_id", "kind", "accrual_start", "accrual_end", "price")
FIXING_COLUMNS = ("date", "rate")
PRICE_BAND = (50.0, 110.0)
MIN_WINDOW = 250


# ---------------------------------------------------------------------------
# generic CSV


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    if isinstance(v, date):
        return v.isoformat()
    if hasattr(v, "value") and isinstance(getattr(v, "value"), str):
        return v.value
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """UTF-8 CSV with a header; floats use their shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path: str | Path, required: Sequence[str]) -> list[tuple[int, dict[str, str]]]:
    """Rows as ``(line number, record)``; missing header columns raise ``DataError``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, header row required", line=1)
        names = [n.strip() for n in reader.fieldnames]
        missing = [c for c in required if c not in names]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}", line=1)
        reader.fieldnames = names
        return [(reader.line_num, {k: (v or "").strip() for k, v in rec.items() if k})
                for rec in reader]


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, date):
        return obj.isoformat()
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def _date(text: str, path, line: int, what: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError as exc:
        raise DataError(f"{path}:{line}: bad {what} {text!r}", line=line) from exc


def _float(text: str, path, line: int, what: str) -> float:
    try:
        v = float(text)
    except ValueError as exc:
        raise DataError(f"{path}:{line}: bad {what} {text!r}", line=line) from exc
    if not math.isfinite(v):
        raise DataError(f"{path}:{line}: non-finite {what}", line=line)
    return v


# ---------------------------------------------------------------------------
# quotes and fixings


@dataclass(frozen=True)
class QuoteRow:
    date: date
    contract_id: str
    kind: ContractKind
    accrual_start: date | None
    accrual_end: date | None
    price: float

    @property
    def rate(self) -> float:
        return price_to_rate(self.price)


def read_quotes(path: str | Path) -> list[QuoteRow]:
    """Futures settlement prices in IMM index points; accrual dates may be blank."""
    out, kinds = [], {}
    for line, rec in read_csv(path, QUOTE_COLUMNS):
        d = _date(rec["date"], path, line, "date")
        cid = rec["contract_id"]
        if not cid:
            raise DataError(f"{path}:{line}: empty contract_id", line=line)
        try:
            kind = ContractKind(rec["kind"].upper())
        except ValueError as exc:
            raise DataError(f"{path}:{line}: kind must be 1M or 3M", line=line) from exc
        if kinds.setdefault(cid, kind) is not kind:
            raise DataError(f"{path}:{line}: contract {cid} changes kind", line=line)
        start = _date(rec["accrual_start"], path, line, "accrual_start") if rec["accrual_start"] else None
        end = _date(rec["accrual_end"], path, line, "accrual_end") if rec["accrual_end"] else None
        if (start is None) != (end is None):
            raise DataError(f"{path}:{line}: give both accrual dates or neither", line=line)
        if start is not None and end <= start:
            raise DataError(f"{path}:{line}: accrual_end must follow accrual_start", line=line)
        price = _float(rec["price"], path, line, "price")
        if not PRICE_BAND[0] < price < PRICE_BAND[1]:
            raise DataError(f"{path}:{line}: price {price} outside {PRICE_BAND}", line=line)
        out.append(QuoteRow(d, cid, kind, start, end, price))
    return out


def write_quotes(path: str | Path, quotes: Iterable[QuoteRow]) -> None:
    write_csv(path, QUOTE_COLUMNS,
              ((q.date, q.contract_id, q.kind, q.accrual_start or "", q.accrual_end or "", q.price)
               for q in quotes))


def read_fixings(path: str | Path) -> dict[date, float]:
    out: dict[date, float] = {}
    for line, rec in read_csv(path, FIXING_COLUMNS):
        d = _date(rec["date"], path, line, "date")
        if d in out:
            raise DataError(f"{path}:{line}: duplicate fixing for {d.isoformat()}", line=line)
        out[d] = _float(rec["rate"], path, line, "rate")
    return out


def write_fixings(path: str | Path, fixings: Mapping[date, float]) -> None:
    write_csv(path, FIXING_COLUMNS, sorted(fixings.items()))


# ---------------------------------------------------------------------------
# contract universe


def parse_contract_id(cid: str) -> tuple[ContractKind, int, int]:
    """``SR1F20`` style identifiers: kind digit, month code, two-digit year (2000s)."""
    text = cid.strip().upper()
    if len(text) != 6 or not text.startswith("SR") or text[2] not in "13" \
            or text[3] not in MONTH_CODES or not text[4:].isdigit():
        raise DataError(f"cannot infer accrual dates from contract id {cid!r}")
    kind = ContractKind.ONE_MONTH if text[2] == "1" else ContractKind.THREE_MONTH
    return kind, 2000 + int(text[4:]), MONTH_CODES.index(text[3]) + 1


def select_universe(as_of: date, cal: Calendar, n_1m: int = 7, n_3m: int = 5,
                    epoch: date | None = None) -> list[FuturesContract]:
    """Nearest monthly contracts from the current month and nearest live quarterlies.

    A quarterly contract is live while ``as_of`` precedes its accrual end, so
    the front one may already be accruing.
    """
    epoch = epoch or as_of
    first = date(as_of.year, as_of.month, 1)
    out = []
    for i in range(n_1m):
        m = add_months(first, i)
        out.append(one_month_contract(m.year, m.month, cal, epoch))
    # start from the quarter before the current one; its contract may still be accruing
    q = add_months(date(as_of.year, 3 * ((as_of.month - 1) // 3) + 1, 1), -1)
    quarterly = []
    while len(quarterly) < n_3m:
        if q.month % 3 == 0:
            c = three_month_contract(q.year, q.month, cal, epoch)
            if c.accrual_end > as_of:
                quarterly.append(c)
        q = add_months(q, 1)
    return out + quarterly


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    """Settings of a pipeline run, read from a sectioned ``key = value`` file."""

    variant: str = "AFNS3"
    quotes: Path | None = None
    fixings: Path | None = None
    calendar: Path | None = None
    params: Path | None = None
    output_dir: Path = Path("out")
    window: int = MIN_WINDOW
    step: int = 1
    expanding: bool = True
    allow_short_window: bool = False
    n_1m: int = 7
    n_3m: int = 5
    grouping: str = "kind"
    restarts: int = 3
    mc_paths: int = 100_000
    mc_dt: float = 1.0 / 3600.0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.window < MIN_WINDOW and not self.allow_short_window:
            raise DomainError(f"estimation window {self.window} below {MIN_WINDOW} rows")
        if self.n_1m < 1 or self.n_3m < 0:
            raise DomainError("need at least one monthly contract")

    def calendar_obj(self) -> Calendar:
        return Calendar.from_file(self.calendar) if self.calendar else Calendar.usny()


_SECTIONS = {
    "model": {"variant": str, "params": Path},
    "data": {"quotes": Path, "fixings": Path, "calendar": Path},
    "estimation": {"window": int, "step": int, "expanding": bool, "allow_short_window": bool,
                   "grouping": str, "restarts": int},
    "universe": {"n_1m": int, "n_3m": int},
    "mc": {"paths": int, "dt": float, "seed": int},
    "output": {"dir": Path},
}
_RENAME = {("mc", "paths"): "mc_paths", ("mc", "dt"): "mc_dt", ("mc", "seed"): "seed",
           ("output", "dir"): "output_dir"}


def load_config(path: str | Path) -> RunConfig:
    """Read a run configuration; relative paths resolve against the file's folder."""
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise DataError(f"{path}: {exc}") from exc
    kw, extra = {}, {}
    for sec in cp.sections():
        known = _SECTIONS.get(sec, {})
        for key, raw in cp.items(sec):
            if key not in known:
                extra[f"{sec}.{key}"] = raw
                continue
            typ = known[key]
            name = _RENAME.get((sec, key), key)
            try:
                if typ is bool:
                    val = cp.getboolean(sec, key)
                elif typ is Path:
                    val = Path(raw) if Path(raw).is_absolute() else path.parent / raw
                    if not val.exists() and not (sec, key) == ("output", "dir"):
                        raise DataError(f"{path}: [{sec}] {key} = {raw}: no such file")
                else:
                    val = typ(raw)
            except ValueError as exc:
                raise DataError(f"{path}: [{sec}] {key} = {raw!r}: {exc}") from exc
            kw[name] = val
    return RunConfig(**kw, extra=extra)


# ---------------------------------------------------------------------------
# panel assembly


@dataclass(frozen=True)
class LoadedPanel:
    panel: ObservationPanel
    epoch: date
    contracts: dict[str, FuturesContract]
    short_rows: tuple[date, ...]


def _resolve(q: QuoteRow, cal: Calendar, epoch: date) -> FuturesContract:
    if q.accrual_start is not None:
        start, end = q.accrual_start, q.accrual_end
    else:
        kind, year, month = parse_contract_id(q.contract_id)
        if kind is not q.kind:
            raise DataError(f"contract id {q.contract_id} does not match kind {q.kind.value}")
        build = one_month_contract if kind is ContractKind.ONE_MONTH else three_month_contract
        ref = build(year, month, cal, epoch)
        start, end = ref.accrual_start, ref.accrual_end
    return FuturesContract.from_dates(q.kind, start, end, cal, epoch, q.contract_id)


def load_panel(quotes: Sequence[QuoteRow], fixings: Mapping[date, float], cal: Calendar,
               n_1m: int = 7, n_3m: int = 5, dt: float = DT_DAILY) -> LoadedPanel:
    """Observation panel of the nearest quoted contracts per date.

    Per date the ``n_1m`` monthly contracts with the earliest accrual start
    among those not yet ended, and likewise ``n_3m`` quarterlies, are kept.
    Dates with fewer quoted contracts are kept and reported in ``short_rows``.
    Time is ACT/360 from the first quote date.
    """
    if not quotes:
        raise DataError("no quotes")
    epoch = min(q.date for q in quotes)
    contracts: dict[str, FuturesContract] = {}
    by_date: dict[date, dict[str, float]] = {}
    for q in quotes:
        c = contracts.get(q.contract_id)
        if c is None:
            c = contracts[q.contract_id] = _resolve(q, cal, epoch)
        day = by_date.setdefault(q.date, {})
        if q.contract_id in day:
            raise DataError(f"duplicate quote for {q.contract_id} on {q.date.isoformat()}")
        day[q.contract_id] = q.rate
    dates = sorted(by_date)
    times, rows, short = [], [], []
    for d in dates:
        live = [contracts[cid] for cid in by_date[d] if contracts[cid].accrual_end > d]
        row = []
        for kind, n in ((ContractKind.ONE_MONTH, n_1m), (ContractKind.THREE_MONTH, n_3m)):
            pick = sorted((c for c in live if c.kind is kind), key=lambda c: c.accrual_start)[:n]
            row.extend((c, by_date[d][c.contract_id]) for c in pick)
            if len(pick) < n:
                short.append(d)
        if not row:
            raise DataError(f"no live contracts quoted on {d.isoformat()}")
        times.append(act360(epoch, d))
        rows.append(row)
    panel = panel_from_contracts(times, rows, accrued=dict(fixings), dates=dates, dt=dt)
    return LoadedPanel(panel, epoch, contracts, tuple(sorted(set(short))))


def panel_quotes(panel: ObservationPanel, contracts: Mapping[str, FuturesContract]) -> list[QuoteRow]:
    """Quote rows reproducing a loaded panel (explicit accrual dates)."""
    if panel.dates is None:
        raise DataError("panel has no dates")
    out = []
    for r, d in enumerate(panel.dates):
        sl = panel.row_slice(r)
        for k in range(sl.start, sl.stop):
            c = contracts[panel.contract_ids[k]]
            out.append(QuoteRow(d, c.contract_id, c.kind, c.accrual_start, c.accrual_end,
                                round(float(100.0 * (1.0 - panel.rate[k])), 10)))
    return out


# ---------------------------------------------------------------------------
# parameters


def read_params(path: str | Path) -> ModelParams:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if "params" in data:
        data = data["params"]
    try:
        return ModelParams.from_dict(data)
    except KeyError as exc:
        raise DataError(f"{path}: missing parameter {exc}") from exc


def write_params(path: str | Path, params: ModelParams) -> None:
    write_json(path, params.to_dict())
