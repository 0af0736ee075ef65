"""One- and three-month SOFR/EFFR futures under the Gaussian variants.

Contract times are ACT/360 year fractions measured from an epoch date that is
shared with the valuation time ``t``. Two pricing routes are provided:

* continuous approximations: the one-month average is replaced by the
  integral of the short rate and daily compounding by continuous compounding;
  these are affine (1m) or exponential-affine (3m) in the state;
* exact discrete formulas for pre-accrual valuation, used to measure the
  approximation error.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .calendar import Calendar, add_months, act360, fixing_schedule, third_wednesday
from .errors import DataError, DomainError, UnsupportedVariantError
from .models import (
    ModelParams,
    drift_loading,
    loading_A,
    loading_B,
    log_zcb,
    q_cov,
    rate_state_cross,
    state_values,
    transition_q,
)


class ContractKind(str, enum.Enum):
    ONE_MONTH = "1M"
    THREE_MONTH = "3M"


@dataclass(frozen=True, eq=False)
class FuturesContract:
    """Accrual schedule of one futures contract.

    ``day_weights[i]`` is the accrual fraction of the overnight rate fixed at
    ``fixing_times[i]`` and ``coverage[i]`` the part of ``[start, end)`` it
    covers; the coverages sum to ``end - start``.
    """

    kind: ContractKind
    start: float
    end: float
    fixing_times: np.ndarray
    day_weights: np.ndarray
    coverage: np.ndarray
    contract_id: str = ""
    fixing_dates: tuple[date, ...] | None = None
    accrual_start: date | None = None
    accrual_end: date | None = None
    epoch: date | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "kind", ContractKind(self.kind))
        for name in ("fixing_times", "day_weights", "coverage"):
            set_(self, name, np.asarray(getattr(self, name), dtype=float))
        if not self.end > self.start:
            raise DomainError("contract end must be after start")
        if np.any(np.diff(self.fixing_times) <= 0):
            raise DomainError("fixing times must be strictly increasing")
        if abs(self.coverage.sum() - (self.end - self.start)) > 1e-12:
            raise DomainError("fixing coverage must sum to the accrual fraction")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def n_fixings(self) -> int:
        return len(self.fixing_times)

    @classmethod
    def stylized(cls, kind, start: float, days: int, contract_id: str = "") -> "FuturesContract":
        """Contract with one fixing per calendar day (no weekends or holidays)."""
        d = 1.0 / 360.0
        times = start + d * np.arange(days)
        w = np.full(days, d)
        return cls(kind, start, start + days * d, times, w, w.copy(), contract_id)

    @classmethod
    def from_dates(cls, kind, accrual_start: date, accrual_end: date, cal: Calendar,
                   epoch: date, contract_id: str = "") -> "FuturesContract":
        sched = fixing_schedule(accrual_start, accrual_end, cal)
        return cls(
            kind,
            act360(epoch, accrual_start),
            act360(epoch, accrual_end),
            np.array([act360(epoch, d) for d in sched.fixing_dates]),
            np.array(sched.day_weights),
            np.array(sched.coverage),
            contract_id,
            fixing_dates=sched.fixing_dates,
            accrual_start=accrual_start,
            accrual_end=accrual_end,
            epoch=epoch,
        )

    def rebased(self, epoch: date, cal: Calendar) -> "FuturesContract":
        if self.accrual_start is None:
            raise DomainError("stylized contracts cannot be rebased")
        return FuturesContract.from_dates(self.kind, self.accrual_start, self.accrual_end,
                                          cal, epoch, self.contract_id)


MONTH_CODES = "FGHJKMNQUVXZ"


def one_month_contract(year: int, month: int, cal: Calendar, epoch: date) -> FuturesContract:
    start = date(year, month, 1)
    cid = f"SR1{MONTH_CODES[month - 1]}{year % 100:02d}"
    return FuturesContract.from_dates(ContractKind.ONE_MONTH, start, add_months(start, 1),
                                      cal, epoch, cid)


def three_month_contract(year: int, month: int, cal: Calendar, epoch: date) -> FuturesContract:
    """IMM quarterly contract: third Wednesday of ``month`` to that of three months later."""
    end_month = add_months(date(year, month, 1), 3)
    start = cal.following(third_wednesday(year, month))
    end = cal.following(third_wednesday(end_month.year, end_month.month))
    cid = f"SR3{MONTH_CODES[month - 1]}{year % 100:02d}"
    return FuturesContract.from_dates(ContractKind.THREE_MONTH, start, end, cal, epoch, cid)


@dataclass(frozen=True)
class FuturesQuote:
    valuation_date: date
    contract_id: str
    rate: float
    price: float = field(default=None)

    def __post_init__(self):
        if self.price is None:
            object.__setattr__(self, "price", rate_to_price(self.rate))
        elif abs(self.price + 100.0 * self.rate - 100.0) > 1e-10:
            raise DomainError("price and rate are inconsistent")


def rate_to_price(rate):
    return 100.0 * (1.0 - np.asarray(rate)) if np.ndim(rate) else 100.0 * (1.0 - rate)


def price_to_rate(price):
    return (100.0 - np.asarray(price)) / 100.0 if np.ndim(price) else (100.0 - price) / 100.0


# ---------------------------------------------------------------------------
# realized fixings

AccruedFixings = Mapping[date, float] | Sequence[float]


def realized_fixings(contract: FuturesContract, t: float, accrued) -> np.ndarray:
    """Rates of the fixings published before valuation time ``t``."""
    n0 = int(np.searchsorted(contract.fixing_times, t - 1e-12, side="left"))
    if n0 == 0:
        return np.zeros(0)
    if accrued is None:
        accrued = {}
    if isinstance(accrued, Mapping):
        if contract.fixing_dates is None:
            raise DataError(f"{contract.contract_id}: realized fixings need dated contracts")
        need = contract.fixing_dates[:n0]
        missing = [d for d in need if d not in accrued]
        if missing:
            raise DataError(
                f"{contract.contract_id}: missing fixings "
                + ", ".join(d.isoformat() for d in missing),
                missing=missing,
            )
        return np.array([accrued[d] for d in need], dtype=float)
    rates = np.asarray(accrued, dtype=float)
    if len(rates) < n0:
        raise DataError(f"{contract.contract_id}: {n0} realized fixings required, got {len(rates)}",
                        missing=list(range(len(rates), n0)))
    return rates[:n0]


# ---------------------------------------------------------------------------
# measurement maps


@dataclass(frozen=True, eq=False)
class QuoteMap:
    """Futures rate as a function of the state.

    Linear: ``a + b'X``. Exponential: ``(mult * exp(c + b'X) - 1) / length``.
    """

    exponential: bool
    b: np.ndarray
    a: float = 0.0
    c: float = 0.0
    mult: float = 1.0
    length: float = 1.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.exponential:
            return (self.mult * np.exp(self.c + x @ self.b) - 1.0) / self.length
        return self.a + x @ self.b

    def jacobian(self, x) -> np.ndarray:
        if not self.exponential:
            return self.b.copy()
        return self.mult * np.exp(self.c + np.asarray(x) @ self.b) / self.length * self.b


def _require_gaussian(params: ModelParams):
    if params.spec.is_shadow:
        raise UnsupportedVariantError("use the shadow pricers for SHADOW_AFNS3")


def quote_map(params: ModelParams, contract: FuturesContract, t: float = 0.0,
              accrued=None) -> QuoteMap:
    """Continuous-approximation futures rate as an (exponential-)affine map of ``X_t``."""
    _require_gaussian(params)
    S, T, L = contract.start, contract.end, contract.length
    if t > T:
        raise DomainError("valuation after contract end")
    if contract.kind is ContractKind.ONE_MONTH:
        if t <= S:
            b = (loading_B(params, S - t) - loading_B(params, T - t)) / L
            a = (drift_loading(params, T - t) - drift_loading(params, S - t)) / L
            return QuoteMap(False, b, a=float(a))
        rates = realized_fixings(contract, t, accrued)
        realized = float(rates @ contract.coverage[: len(rates)]) / L
        b = -loading_B(params, T - t) / L
        return QuoteMap(False, b, a=realized + float(drift_loading(params, T - t)) / L)
    if t <= S:
        h = S - t
        bST = loading_B(params, T - S)
        phi = transition_q(params, h)
        v = q_cov(params, h)
        th = params.thetaQ
        c = (drift_loading(params, T - S) + loading_A(params, T - S)
             + 0.5 * bST @ v @ bST - bST @ (th - phi @ th))
        return QuoteMap(True, -phi.T @ bST, c=float(c), length=L)
    rates = realized_fixings(contract, t, accrued)
    mult = float(np.prod(1.0 + contract.day_weights[: len(rates)] * rates))
    c = drift_loading(params, T - t) + loading_A(params, T - t)
    return QuoteMap(True, -loading_B(params, T - t), c=float(c), mult=mult, length=L)


def price_1m(params: ModelParams, state, contract: FuturesContract, t: float = 0.0,
             accrued=None) -> float:
    if contract.kind is not ContractKind.ONE_MONTH:
        raise DomainError("price_1m needs a one-month contract")
    return float(quote_map(params, contract, t, accrued).value(state_values(state, params.n)))


def price_3m(params: ModelParams, state, contract: FuturesContract, t: float = 0.0,
             accrued=None) -> float:
    if contract.kind is not ContractKind.THREE_MONTH:
        raise DomainError("price_3m needs a three-month contract")
    return float(quote_map(params, contract, t, accrued).value(state_values(state, params.n)))


def futures_rate(params: ModelParams, state, contract: FuturesContract, t: float = 0.0,
                 accrued=None, quad=None) -> float:
    """Model futures rate for any variant and contract kind."""
    if params.spec.is_shadow:
        from .shadow import shadow_price

        return shadow_price(params, state, contract, t, accrued, quad=quad)
    return float(quote_map(params, contract, t, accrued).value(state_values(state, params.n)))


# ---------------------------------------------------------------------------
# exact discrete pricing


def _check_pre_accrual(contract: FuturesContract, t: float):
    if t > contract.fixing_times[0] + 1e-12:
        raise DomainError("exact pricing requires valuation before the first fixing")


def price_1m_exact(params: ModelParams, state, contract: FuturesContract, t: float = 0.0) -> float:
    """Expected coverage-weighted average of simple overnight rates."""
    _require_gaussian(params)
    _check_pre_accrual(contract, t)
    x = state_values(state, params.n)
    h = contract.fixing_times - t
    d = contract.day_weights
    b = loading_B(params, d)
    phi = transition_q(params, h)
    v = q_cov(params, h)
    th = params.thetaQ
    mean = th + np.einsum("kij,j->ki", phi, x - th)
    expo = (-loading_A(params, d) + drift_loading(params, d)
            - np.einsum("ki,ki->k", b, mean) + 0.5 * np.einsum("ki,kij,kj->k", b, v, b))
    overnight = np.expm1(expo) / d
    return float(overnight @ contract.coverage / contract.length)


def _period_boundaries(contract: FuturesContract) -> np.ndarray:
    t = contract.fixing_times
    ends = t + contract.day_weights
    if abs(t[0] - contract.start) > 1e-12 or np.any(np.abs(ends[:-1] - t[1:]) > 1e-12) \
            or abs(ends[-1] - contract.end) > 1e-12:
        raise DomainError("exact three-month pricing needs fixing periods tiling [S, T]")
    return np.append(t, contract.end)


def hjm_gamma_exponents(params: ModelParams, contract: FuturesContract, t: float = 0.0) -> np.ndarray:
    """``log gamma(t_{i-2}, t_{i-1}, t_{i-1}, T)`` for i = 1..n with ``t_{-1} = t``.

    With ``u`` equal to the interval end the bond-volatility integral reduces
    to ``C(h) B_v + B_v' V^Q(h) B_v`` where ``B_v = B(T - t_{i-1})``.
    """
    bounds = _period_boundaries(contract)
    starts = np.concatenate([[t], bounds[:-2]])
    ends = bounds[:-1]
    h = ends - starts
    bv = loading_B(params, contract.end - ends)
    cross = rate_state_cross(params, h)
    v = q_cov(params, h)
    return np.einsum("ki,ki->k", cross, bv) + np.einsum("ki,kij,kj->k", bv, v, bv)


def price_3m_exact(params: ModelParams, state, contract: FuturesContract, t: float = 0.0) -> float:
    """Expected daily-compounded rate, Gaussian HJM representation."""
    _require_gaussian(params)
    _check_pre_accrual(contract, t)
    x = state_values(state, params.n)
    fwd = log_zcb(params, x, contract.start - t) - log_zcb(params, x, contract.end - t)
    g = hjm_gamma_exponents(params, contract, t).sum()
    return float(np.expm1(fwd + g) / contract.length)
