"""Backward- and forward-looking term rates and futures convexity adjustments."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from datetime import date

import numpy as np

from .calendar import Calendar, act360, fixing_schedule, make_schedule
from .errors import ConsistencyError, DataError, DomainError, UnsupportedVariantError
from .futures import ContractKind, FuturesContract, price_1m, price_3m
from .models import ModelParams, loading_A, loading_B, log_zcb, q_cov, state_values, zcb_price

CONSISTENCY_TOL = 1e-10


def backward_rate(fixings: Mapping[date, float], start: date, end: date, cal: Calendar) -> float:
    """Compounded average ``(prod(1 + d_i R_i) - 1) / (T - S)`` over ``[start, end)``."""
    sched = fixing_schedule(start, end, cal)
    missing = [d for d in sched.fixing_dates if d not in fixings]
    if missing:
        raise DataError("missing fixings " + ", ".join(d.isoformat() for d in missing),
                        missing=missing)
    rates = np.array([fixings[d] for d in sched.fixing_dates])
    log_growth = np.log1p(np.asarray(sched.coverage, dtype=float) * rates).sum()
    return float(np.expm1(log_growth) / sched.year_fraction)


def forward_term_rate(params: ModelParams, state, S: float, T: float, t: float = 0.0,
                      quad=None) -> float:
    """Simple rate ``(p(t,S)/p(t,T) - 1)/(T - S)``; spot-starting when ``S == t``."""
    if not (t <= S < T):
        raise DomainError("need t <= S < T")
    if params.spec.is_shadow:
        p_s = 1.0 if S == t else float(zcb_price(params, state, S - t, quad=quad))
        p_t = float(zcb_price(params, state, T - t, quad=quad))
        return (p_s / p_t - 1.0) / (T - S)
    x = state_values(state, params.n)
    diff = log_zcb(params, x, S - t) - log_zcb(params, x, T - t)
    return float(np.expm1(diff) / (T - S))


@dataclass(frozen=True)
class TermPoint:
    tenor: str
    start: date
    end: date
    rate: float


@dataclass(frozen=True)
class TermCurve:
    as_of: date
    points: tuple[TermPoint, ...]

    def rate(self, tenor: str) -> float:
        for p in self.points:
            if p.tenor == tenor:
                return p.rate
        raise KeyError(tenor)


def parse_tenor(label: str) -> int:
    """Tenor label such as ``3M`` or ``1Y`` in months."""
    text = label.strip().upper()
    try:
        n = int(text[:-1])
    except ValueError as exc:
        raise DomainError(f"bad tenor {label!r}") from exc
    if text.endswith("M"):
        months = n
    elif text.endswith("Y"):
        months = 12 * n
    else:
        raise DomainError(f"bad tenor {label!r}")
    if months <= 0:
        raise DomainError(f"bad tenor {label!r}")
    return months


def term_curve(params: ModelParams, state, as_of: date, tenors: Sequence[str], cal: Calendar,
               quad=None) -> TermCurve:
    """Spot-starting model term rates (zero spot lag, modified-following end dates)."""
    pts = []
    for label in tenors:
        sched = make_schedule(as_of, parse_tenor(label), cal)
        tau = act360(as_of, sched.end)
        pts.append(TermPoint(label, as_of, sched.end,
                             forward_term_rate(params, state, 0.0, tau, 0.0, quad=quad)))
    return TermCurve(as_of, tuple(pts))


# ---------------------------------------------------------------------------
# convexity


@dataclass(frozen=True)
class ConvexityRow:
    contract_id: str
    kind: ContractKind
    start: float
    end: float
    futures_rate: float
    forward_rate: float
    adjustment: float
    method: str
    std_error: float = 0.0


@dataclass(frozen=True)
class ConvexityReport:
    as_of: date | None
    rows: tuple[ConvexityRow, ...]


def _gaussian_pre_accrual(params: ModelParams, contract: FuturesContract, t: float):
    if params.spec.is_shadow:
        raise UnsupportedVariantError("closed-form convexity needs a Gaussian variant")
    if t > contract.start:
        raise DomainError("convexity is defined at or before the accrual start")


def convexity_1m_closed(params: ModelParams, contract: FuturesContract, t: float = 0.0) -> float:
    L = contract.length
    return float((loading_A(params, contract.end - t) - loading_A(params, contract.start - t)) / L)


def convexity_3m_closed(params: ModelParams, state, contract: FuturesContract, t: float = 0.0) -> float:
    """``(R^F + 1/(T-S)) (exp(A(t,T) - A(t,S) + A(S,T) + b'V(S-t)b/2) - 1)``."""
    S, T, L = contract.start, contract.end, contract.length
    b = loading_B(params, T - S)
    expo = (loading_A(params, T - t) - loading_A(params, S - t) + loading_A(params, T - S)
            + 0.5 * b @ q_cov(params, S - t) @ b)
    fwd = forward_term_rate(params, state, S, T, t)
    return float((fwd + 1.0 / L) * np.expm1(expo))


def _check(closed: float, direct: float, what: str):
    if abs(closed - direct) > CONSISTENCY_TOL:
        raise ConsistencyError(f"{what}: closed form {closed:.15e} vs direct {direct:.15e}")


def convexity_1m(params: ModelParams, state, contract: FuturesContract, t: float = 0.0) -> float:
    """Futures rate minus the continuously compounded forward rate over ``[S, T]``."""
    _gaussian_pre_accrual(params, contract, t)
    x = state_values(state, params.n)
    fut = price_1m(params, x, contract, t)
    fwd = float((log_zcb(params, x, contract.start - t) - log_zcb(params, x, contract.end - t))
                / contract.length)
    closed = convexity_1m_closed(params, contract, t)
    _check(closed, fut - fwd, "one-month convexity")
    return closed


def convexity_3m(params: ModelParams, state, contract: FuturesContract, t: float = 0.0) -> float:
    """Futures rate minus the simple forward rate over ``[S, T]``."""
    _gaussian_pre_accrual(params, contract, t)
    x = state_values(state, params.n)
    direct = price_3m(params, x, contract, t) - forward_term_rate(params, x, contract.start,
                                                                   contract.end, t)
    _check(convexity_3m_closed(params, x, contract, t), direct, "three-month convexity")
    return direct


def convexity_shadow(params: ModelParams, state, contract: FuturesContract, t: float = 0.0, mc=None):
    """Monte Carlo convexity in the shadow model; returns ``(adjustment, std_error)``.

    Futures and bond prices come from the same paths, so the adjustment's
    standard error is that of the paired difference.
    """
    from .montecarlo import McConfig, mc_convexity

    if not params.spec.is_shadow:
        raise UnsupportedVariantError("convexity_shadow needs the SHADOW_AFNS3 variant")
    if t > contract.start:
        raise DomainError("convexity is defined at or before the accrual start")
    rows = mc_convexity(params, state, [contract], t, mc or McConfig())
    return rows[0].adjustment, rows[0].std_error


def convexity_report(params: ModelParams, state, contracts: Sequence[FuturesContract],
                     t: float = 0.0, as_of: date | None = None, mc=None) -> ConvexityReport:
    if params.spec.is_shadow:
        from .montecarlo import McConfig, mc_convexity

        return ConvexityReport(as_of, tuple(mc_convexity(params, state, contracts, t,
                                                         mc or McConfig())))
    x = state_values(state, params.n)
    rows = []
    for c in contracts:
        if c.kind is ContractKind.ONE_MONTH:
            adj = convexity_1m(params, x, c, t)
            fut = price_1m(params, x, c, t)
        else:
            adj = convexity_3m(params, x, c, t)
            fut = price_3m(params, x, c, t)
        rows.append(ConvexityRow(c.contract_id, c.kind, c.start, c.end, fut, fut - adj, adj,
                                 "closed-form"))
    return ConvexityReport(as_of, tuple(rows))
