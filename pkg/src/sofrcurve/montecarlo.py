"""Simulation engine and validation studies.

Paths are generated in fixed-size blocks, each with its own generator spawned
from the master seed, so results do not depend on how blocks are scheduled
across threads. Gaussian states are sampled from the exact transition by
default; the short rate (floored for the shadow variant) is integrated with
the trapezoid rule on the simulation grid.
"""

from __future__ import annotations

import enum
import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .calendar import Calendar
from .errors import DomainError, UnsupportedVariantError
from .futures import (
    ContractKind,
    FuturesContract,
    futures_rate,
    one_month_contract,
    price_1m,
    price_1m_exact,
    price_3m,
    price_3m_exact,
    quote_map,
    rate_to_price,
    realized_fixings,
    three_month_contract,
)
from .models import ModelParams, log_zcb, q_cov, state_values, transition_q

THREADS_ENV = "CURVE_THREADS"


class Measure(str, enum.Enum):
    P = "P"
    Q = "Q"


class Scheme(str, enum.Enum):
    EXACT = "exact"
    EULER = "euler"


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    dt: float = 1.0 / 3600.0
    seed: int = 0
    antithetic: bool = True
    scheme: Scheme = Scheme.EXACT
    block_size: int = 10_000
    workers: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.n_paths < 2 or self.block_size < 2:
            raise DomainError("need at least two paths per block")
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise DomainError("antithetic sampling needs even path and block counts")
        if not 0 < self.dt <= 1.0 / 360.0:
            raise DomainError("dt must lie in (0, 1/360]")

    @property
    def blocks(self) -> list[int]:
        full, rest = divmod(self.n_paths, self.block_size)
        return [self.block_size] * full + ([rest] if rest else [])


def worker_count(requested: int | None = None) -> int:
    """Thread count: explicit request, else ``CURVE_THREADS``, else the CPU count."""
    cap = os.environ.get(THREADS_ENV)
    n = requested or (int(cap) if cap else os.cpu_count() or 1)
    if cap:
        n = min(n, int(cap))
    return max(1, n)


def _map_ordered(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# transitions


def _sqrt_psd(v: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(0.5 * (v + v.T))
    return u * np.sqrt(np.clip(w, 0.0, None))


def _step_maps(params: ModelParams, measure: Measure, scheme: Scheme, h: float):
    """``(c, A, G)`` with ``X' = c + A X + G Z`` for one step of length ``h``."""
    n = params.n
    if measure is Measure.Q:
        K, theta = params.KQ, params.thetaQ
    else:
        K, theta = params.kP, params.thetaP
    if scheme is Scheme.EULER:
        return K @ theta * h, np.eye(n) - K * h, params.sigma * np.sqrt(h)
    if measure is Measure.Q:
        A = transition_q(params, h)
        V = q_cov(params, h)
    else:
        from .estimation import discretize_P

        A, _, V = discretize_P(params, h)
    return (np.eye(n) - A) @ theta, A, _sqrt_psd(V)


def _short_rate(params: ModelParams, x: np.ndarray) -> np.ndarray:
    s = params.rho0 + x @ params.rho1
    return np.maximum(s, 0.0) if params.spec.is_shadow else s


def _segments(key_times: np.ndarray, dt: float) -> list[tuple[int, float]]:
    out, prev = [], 0.0
    for k in key_times:
        span = k - prev
        m = max(1, int(np.ceil(span / dt - 1e-9))) if span > 0 else 0
        out.append((m, span / m if m else 0.0))
        prev = k
    return out


def _simulate_block(params: ModelParams, x0: np.ndarray, measure: Measure, key_times: np.ndarray,
                    mc: McConfig, n: int, seed_seq, record_states: bool):
    """Integrated short rate and (optionally) states at each key time."""
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    d = params.n
    half = n // 2 if mc.antithetic else n
    x = np.tile(x0, (n, 1))
    r_prev = _short_rate(params, x)
    integral = np.zeros(n)
    I_keys = np.empty((n, len(key_times)))
    X_keys = np.empty((n, len(key_times), d)) if record_states else None
    maps = {}
    for k, (m, h) in enumerate(_segments(key_times, mc.dt)):
        if m:
            key = round(h, 15)
            if key not in maps:
                maps[key] = _step_maps(params, measure, mc.scheme, h)
            c, A, G = maps[key]
            At, Gt = A.T.copy(), G.T.copy()
            for _ in range(m):
                z = rng.standard_normal((half, d))
                if mc.antithetic:
                    z = np.concatenate([z, -z])
                x = c + x @ At + z @ Gt
                r = _short_rate(params, x)
                integral += 0.5 * h * (r_prev + r)
                r_prev = r
        I_keys[:, k] = integral
        if record_states:
            X_keys[:, k] = x
    return I_keys, X_keys


def _run_blocks(params, x0, measure, key_times, mc: McConfig, record_states: bool, reduce):
    """Simulate every block and apply ``reduce(I_keys, X_keys)`` blockwise (in order)."""
    seqs = np.random.SeedSequence(mc.seed).spawn(len(mc.blocks))
    jobs = list(zip(mc.blocks, seqs))

    def one(job):
        n, ss = job
        I_keys, X_keys = _simulate_block(params, x0, measure, key_times, mc, n, ss, record_states)
        return reduce(I_keys, X_keys)

    return _map_ordered(one, jobs, worker_count(mc.workers))


def _pair_average(y: np.ndarray, antithetic: bool) -> np.ndarray:
    """Average antithetic partners (first and second half of a block)."""
    if not antithetic:
        return y
    h = y.shape[0] // 2
    return 0.5 * (y[:h] + y[h:])


def _mean_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


# ---------------------------------------------------------------------------
# path ensembles


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    times: np.ndarray
    states: np.ndarray  # (n_paths, n_times, n)
    integrated_rate: np.ndarray  # (n_paths, n_times)
    measure: Measure


def simulate_paths(params: ModelParams, measure, x0, horizon: float, mc: McConfig,
                   record_every: int = 1) -> PathEnsemble:
    """State paths on the grid ``k * dt * record_every`` up to ``horizon``."""
    measure = Measure(measure)
    x0 = state_values(x0, params.n).astype(float)
    n_steps = max(1, int(np.ceil(horizon / mc.dt - 1e-9)))
    grid = np.arange(record_every, n_steps + 1, record_every) * (horizon / n_steps)
    if len(grid) == 0 or grid[-1] < horizon - 1e-12:
        grid = np.append(grid, horizon)
    fine = McConfig(mc.n_paths, horizon / n_steps, mc.seed, mc.antithetic, mc.scheme,
                    mc.block_size, mc.workers)
    parts = _run_blocks(params, x0, measure, grid, fine, True, lambda I, X: (I, X))
    I = np.concatenate([p[0] for p in parts])
    X = np.concatenate([p[1] for p in parts])
    n = I.shape[0]
    times = np.concatenate([[0.0], grid])
    X = np.concatenate([np.tile(x0, (n, 1, 1)), X], axis=1)
    I = np.concatenate([np.zeros((n, 1)), I], axis=1)
    return PathEnsemble(times, X, I, measure)


# ---------------------------------------------------------------------------
# futures by simulation


class Payoff(str, enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


@dataclass(frozen=True)
class McEstimate:
    contract_id: str
    rate: float
    std_error: float


def _contract_pieces(contract: FuturesContract, t: float, accrued, payoff: Payoff):
    """Realized part, remaining key offsets and fixing indices for one contract."""
    if t > contract.end:
        raise DomainError("valuation after contract end")
    n0 = 0
    realized = np.zeros(0)
    if t > contract.start:
        realized = realized_fixings(contract, t, accrued)
        n0 = len(realized)
    a = max(contract.start - t, 0.0)
    b = contract.end - t
    fix = contract.fixing_times[n0:] - t if payoff is Payoff.DISCRETE else np.zeros(0)
    return realized, n0, a, b, fix


def mc_futures_rates(params: ModelParams, state, contracts: Sequence[FuturesContract], t: float = 0.0,
                     mc: McConfig | None = None, payoff=Payoff.CONTINUOUS, accrued=None,
                     measure=Measure.Q) -> list[McEstimate]:
    """Futures rates by simulation, all contracts on common paths.

    ``continuous``: one-month payoff ``(1/(T-S)) int_S^T r``, three-month
    ``(exp(int_S^T r) - 1)/(T-S)``. ``discrete``: the fixing on ``t_i`` is the
    model overnight rate ``(1/p(t_i, t_i + d_i) - 1)/d_i`` read off the path;
    one-month contracts average them with coverage weights, three-month
    contracts compound them (Gaussian variants only).
    """
    mc = mc or McConfig()
    payoff = Payoff(payoff)
    if payoff is Payoff.DISCRETE and params.spec.is_shadow:
        raise UnsupportedVariantError("discrete payoffs need closed-form overnight bonds")
    x0 = state_values(state, params.n).astype(float)
    pieces = [_contract_pieces(c, t, accrued, payoff) for c in contracts]
    keys = sorted({0.0} | {p[2] for p in pieces} | {p[3] for p in pieces}
                  | {float(f) for p in pieces for f in p[4]})
    key_times = np.array([k for k in keys if k > 0])
    index = {k: i for i, k in enumerate(key_times)}

    def at(I_or_X, k):
        if k == 0.0:
            return np.zeros(I_or_X.shape[0]) if I_or_X.ndim == 2 else np.tile(x0, (I_or_X.shape[0], 1))
        return I_or_X[:, index[k]]

    def reduce(I, X):
        cols = []
        for c, (real, n0, a, b, fix) in zip(contracts, pieces):
            L = c.length
            if payoff is Payoff.CONTINUOUS:
                integ = at(I, b) - at(I, a)
                if c.kind is ContractKind.ONE_MONTH:
                    base = float(real @ c.coverage[:n0]) / L
                    cols.append(base + integ / L)
                else:
                    mult = float(np.prod(1.0 + c.day_weights[:n0] * real))
                    cols.append((mult * np.exp(integ) - 1.0) / L)
                continue
            d = c.day_weights[n0:]
            neg_logp = np.column_stack([-log_zcb(params, at(X, float(f)), w) for f, w in zip(fix, d)])
            if c.kind is ContractKind.ONE_MONTH:
                on = np.expm1(neg_logp) / d
                base = float(real @ c.coverage[:n0])
                cols.append((base + on @ c.coverage[n0:]) / L)
            else:
                mult = float(np.prod(1.0 + c.day_weights[:n0] * real))
                cols.append((mult * np.exp(neg_logp.sum(axis=1)) - 1.0) / L)
        return _pair_average(np.column_stack(cols), mc.antithetic)

    parts = _run_blocks(params, x0, Measure(measure), key_times, mc, payoff is Payoff.DISCRETE, reduce)
    mean, se = _mean_se(np.concatenate(parts))
    return [McEstimate(c.contract_id, float(m), float(s)) for c, m, s in zip(contracts, mean, se)]


def mc_futures_rate(params: ModelParams, state, contract: FuturesContract, t: float = 0.0,
                    mc: McConfig | None = None, payoff=Payoff.CONTINUOUS, accrued=None):
    """``(rate, std_error)`` for one contract."""
    est = mc_futures_rates(params, state, [contract], t, mc, payoff, accrued)[0]
    return est.rate, est.std_error


def mc_zcb(params: ModelParams, state, taus: Sequence[float], mc: McConfig | None = None):
    """``E[exp(-int_0^tau r)]`` and standard errors for each maturity."""
    mc = mc or McConfig()
    x0 = state_values(state, params.n).astype(float)
    key_times = np.array(sorted(set(float(t) for t in taus)))
    if key_times[0] <= 0:
        raise DomainError("maturities must be positive")
    parts = _run_blocks(params, x0, Measure.Q, key_times, mc, False,
                        lambda I, X: _pair_average(np.exp(-I), mc.antithetic))
    mean, se = _mean_se(np.concatenate(parts))
    pos = {k: i for i, k in enumerate(key_times)}
    idx = [pos[float(t)] for t in taus]
    return mean[idx], se[idx]


def mc_convexity(params: ModelParams, state, contracts: Sequence[FuturesContract], t: float = 0.0,
                 mc: McConfig | None = None):
    """Futures minus forward rates with futures and bonds from common paths.

    One-month contracts compare with the continuously compounded forward
    ``log(p_S/p_T)/(T-S)``, three-month contracts with the simple forward
    ``(p_S/p_T - 1)/(T-S)``. Standard errors use the delta method on the
    joint sample of payoffs.
    """
    from .term_structure import ConvexityRow

    mc = mc or McConfig()
    x0 = state_values(state, params.n).astype(float)
    for c in contracts:
        if t > c.start:
            raise DomainError("convexity is defined at or before the accrual start")
    key_times = np.array(sorted({c.start - t for c in contracts} | {c.end - t for c in contracts}
                                - {0.0}))
    pos = {k: i for i, k in enumerate(key_times)}

    def col(I, k):
        return np.zeros(I.shape[0]) if k == 0.0 else I[:, pos[k]]

    def reduce(I, X):
        cols = []
        for c in contracts:
            iS, iT = col(I, c.start - t), col(I, c.end - t)
            integ = iT - iS
            fut = integ / c.length if c.kind is ContractKind.ONE_MONTH else np.expm1(integ) / c.length
            cols += [fut, np.exp(-iS), np.exp(-iT)]
        return _pair_average(np.column_stack(cols), mc.antithetic)

    samples = np.concatenate(_run_blocks(params, x0, Measure.Q, key_times, mc, False, reduce))
    n = samples.shape[0]
    rows = []
    for j, c in enumerate(contracts):
        block = samples[:, 3 * j : 3 * j + 3]
        f, pS, pT = block.mean(axis=0)
        L = c.length
        if c.kind is ContractKind.ONE_MONTH:
            fwd = np.log(pS / pT) / L
            grad = np.array([1.0, -1.0 / (L * pS), 1.0 / (L * pT)])
        else:
            fwd = (pS / pT - 1.0) / L
            grad = np.array([1.0, -1.0 / (L * pT), pS / (L * pT * pT)])
        cov = np.cov(block, rowvar=False) / n if n > 1 else np.zeros((3, 3))
        se = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
        rows.append(ConvexityRow(c.contract_id, c.kind, c.start, c.end, float(f), float(fwd),
                                 float(f - fwd), "monte-carlo", se))
    return rows


# ---------------------------------------------------------------------------
# option on a three-month futures contract


@dataclass(frozen=True)
class OptionPrice:
    model: str
    futures_price: float
    strike: float
    price: float
    std_error: float


@dataclass(frozen=True)
class OptionComparison:
    gaussian: OptionPrice
    shadow: OptionPrice

    @property
    def ratio(self) -> float:
        return self.shadow.price / self.gaussian.price if self.gaussian.price > 0 else float("nan")


def _futures_price_at(params: ModelParams, x: np.ndarray, contract: FuturesContract, t: float,
                      quad=None, chunk: int = 2000) -> np.ndarray:
    if not params.spec.is_shadow:
        return rate_to_price(quote_map(params, contract, t).value(x))
    from .shadow import QuadratureScheme, shadow_price

    quad = quad or QuadratureScheme(self_check=False)

    out = [np.atleast_1d(shadow_price(params, x[i : i + chunk], contract, t, quad=quad))
           for i in range(0, len(x), chunk)]
    return rate_to_price(np.concatenate(out))


def mc_call_price(params: ModelParams, state, contract: FuturesContract, expiry: float,
                  strike: float | None = None, mc: McConfig | None = None, quad=None) -> OptionPrice:
    """``E^Q[exp(-int_0^T r) (P(T) - K)^+]`` in IMM index points.

    ``P(T)`` is the futures price at expiry from the pricing formula evaluated
    at the simulated state. ``strike=None`` is at the money. Shadow prices at
    expiry default to fixed panels without the refinement check, which would
    otherwise dominate the run time.
    """
    mc = mc or McConfig(n_paths=20_000, dt=1.0 / 360.0)
    if not 0 < expiry <= contract.start:
        raise DomainError("option expiry must lie in (0, accrual start]")
    x0 = state_values(state, params.n).astype(float)
    f0 = float(rate_to_price(futures_rate(params, x0, contract, 0.0, quad=quad)))
    K = f0 if strike is None else float(strike)

    def reduce(I, X):
        fut = _futures_price_at(params, X[:, 0], contract, expiry, quad)
        pay = np.exp(-I[:, 0]) * np.maximum(fut - K, 0.0)
        return _pair_average(pay, mc.antithetic)

    parts = _run_blocks(params, x0, Measure.Q, np.array([expiry]), mc, True, reduce)
    mean, se = _mean_se(np.concatenate(parts))
    return OptionPrice(params.variant.value, f0, K, float(mean), float(se))


def mc_option_price(params_gaussian: ModelParams, params_shadow: ModelParams, state,
                    contract: FuturesContract, expiry: float, mc: McConfig | None = None,
                    quad=None) -> OptionComparison:
    """At-the-money calls under both models on common random numbers."""
    if params_gaussian.spec.is_shadow or not params_shadow.spec.is_shadow:
        raise UnsupportedVariantError("need one Gaussian and one shadow parameter set")
    g = mc_call_price(params_gaussian, state, contract, expiry, None, mc)
    s = mc_call_price(params_shadow, state, contract, expiry, None, mc, quad)
    return OptionComparison(g, s)


# ---------------------------------------------------------------------------
# approximation error of the continuous futures formulas


@dataclass(frozen=True)
class ApproxErrorRow:
    contract_id: str
    kind: ContractKind
    start: float
    end: float
    approx: float
    exact: float

    @property
    def error(self) -> float:
        return self.approx - self.exact


@dataclass(frozen=True)
class ApproxErrorReport:
    as_of: date
    rows: tuple[ApproxErrorRow, ...]

    def max_error(self, kind) -> float:
        kind = ContractKind(kind)
        return max(abs(r.error) for r in self.rows if r.kind is kind)


def consecutive_contracts(as_of: date, cal: Calendar, n_1m: int, n_3m: int) -> list[FuturesContract]:
    """Monthly contracts from the month after ``as_of`` and IMM quarterlies starting after it."""
    out = []
    y, m = as_of.year, as_of.month
    for _ in range(n_1m):
        m += 1
        if m > 12:
            y, m = y + 1, 1
        out.append(one_month_contract(y, m, cal, as_of))
    y, m = as_of.year, as_of.month
    quarterly = []
    while len(quarterly) < n_3m:
        if m % 3 == 0:
            c = three_month_contract(y, m, cal, as_of)
            if c.fixing_times[0] > 0:
                quarterly.append(c)
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return out + quarterly


def approximation_error_report(params: ModelParams, state, as_of: date = date(2021, 1, 4),
                               cal: Calendar | None = None, n_1m: int = 13,
                               n_3m: int = 39) -> ApproxErrorReport:
    """Continuous approximations against exact discrete prices, valued at ``as_of``."""
    if params.spec.is_shadow:
        raise UnsupportedVariantError("exact discrete prices need a Gaussian variant")
    cal = cal or Calendar.usny()
    x = state_values(state, params.n)
    rows = []
    for c in consecutive_contracts(as_of, cal, n_1m, n_3m):
        if c.kind is ContractKind.ONE_MONTH:
            approx, exact = price_1m(params, x, c), price_1m_exact(params, x, c)
        else:
            approx, exact = price_3m(params, x, c), price_3m_exact(params, x, c)
        rows.append(ApproxErrorRow(c.contract_id, c.kind, c.start, c.end, approx, exact))
    return ApproxErrorReport(as_of, tuple(rows))


# ---------------------------------------------------------------------------
# shadow pricer accuracy


@dataclass(frozen=True)
class ShadowAccuracyRow:
    label: str
    contract_id: str
    kind: ContractKind
    approx: float
    mc: float
    std_error: float

    @property
    def error(self) -> float:
        return self.approx - self.mc


STUDY_TAU_1M = tuple(i * 30 / 360 for i in range(7))
STUDY_TAU_3M = tuple(i * 90 / 360 for i in range(5))


def study_contracts(tau_1m=STUDY_TAU_1M, tau_3m=STUDY_TAU_3M) -> list[FuturesContract]:
    """Stylized 30/90-day contracts at the given start offsets."""
    return ([FuturesContract.stylized("1M", s, 30, f"1M+{i}") for i, s in enumerate(tau_1m)]
            + [FuturesContract.stylized("3M", s, 90, f"3M+{i}") for i, s in enumerate(tau_3m)])


def shadow_accuracy_report(params: ModelParams, states: dict[str, np.ndarray],
                           contracts: Sequence[FuturesContract] | None = None,
                           mc: McConfig | None = None, quad=None) -> list[ShadowAccuracyRow]:
    """Cumulant-approximation futures rates against simulation of the continuous payoff."""
    from .shadow import shadow_price

    if not params.spec.is_shadow:
        raise UnsupportedVariantError("shadow accuracy needs the SHADOW_AFNS3 variant")
    contracts = list(contracts or study_contracts())
    rows = []
    for label, x in states.items():
        sims = mc_futures_rates(params, x, contracts, 0.0, mc)
        for c, est in zip(contracts, sims):
            rows.append(ShadowAccuracyRow(label, c.contract_id, c.kind,
                                          float(shadow_price(params, x, c, 0.0, quad=quad)),
                                          est.rate, est.std_error))
    return rows


# ---------------------------------------------------------------------------
# parameter-recovery study


@dataclass(frozen=True)
class SimStudyConfig:
    n_replications: int = 1000
    n_obs: int = 500
    dt: float = 1.0 / 250.0
    tick: float = 0.00005
    tau_1m: tuple[float, ...] = STUDY_TAU_1M
    tau_3m: tuple[float, ...] = STUDY_TAU_3M
    seed: int = 0
    workers: int | None = None
    restarts: int = 0
    fatol: float = 0.01
    xatol: float = 1e-4
    max_fev: int = 6000

    def __post_init__(self):
        if self.n_replications < 1 or self.n_obs < 2:
            raise DomainError("need at least one replication and two observations")


@dataclass(frozen=True)
class SummaryStats:
    name: str
    truth: float
    mean: float
    sd: float
    q05: float
    q25: float
    q50: float
    q75: float
    q95: float


@dataclass(frozen=True)
class StateErrorStats:
    factor: str
    rmse_bp: float
    mean_bp: float
    sd_bp: float


@dataclass(frozen=True)
class ReplicationResult:
    index: int
    ok: bool
    estimates: np.ndarray | None = None
    state_error: np.ndarray | None = None
    loglik: float = float("nan")
    n_fev: int = 0
    message: str = ""


@dataclass(frozen=True, eq=False)
class StudyReport:
    params: tuple[SummaryStats, ...]
    states: tuple[StateErrorStats, ...]
    n_ok: int
    n_failed: int
    replications: tuple[ReplicationResult, ...] = field(repr=False, default=())

    def param(self, name: str) -> SummaryStats:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def state(self, factor: str) -> StateErrorStats:
        for s in self.states:
            if s.factor == factor:
                return s
        raise KeyError(factor)


def simulate_state_path(params: ModelParams, n_obs: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Euler scheme under P from the unconditional mean; rows are ``X_1..X_n``."""
    x = params.thetaP.copy()
    K, th, S = params.kP, params.thetaP, params.sigma * np.sqrt(dt)
    z = rng.standard_normal((n_obs, params.n))
    out = np.empty((n_obs, params.n))
    for i in range(n_obs):
        x = x + K @ (th - x) * dt + S @ z[i]
        out[i] = x
    return out


def simulate_study_panel(truth: ModelParams, cfg: SimStudyConfig, rng: np.random.Generator):
    """Simulated states and the panel of rounded, error-free futures rates."""
    from .estimation import gaussian_measurement, stylized_panel

    X = simulate_state_path(truth, cfg.n_obs, cfg.dt, rng)
    m = len(cfg.tau_1m) + len(cfg.tau_3m)
    layout = stylized_panel(np.zeros((1, m)), cfg.tau_1m, cfg.tau_3m, dt=cfg.dt)
    co = gaussian_measurement(truth, layout)
    lin = X @ co.b.T
    rates = np.where(co.is3m, (co.mult * np.exp(co.c + lin) - 1.0) / co.length, co.a + lin)
    rates = np.round(rates / cfg.tick) * cfg.tick
    return X, stylized_panel(rates, cfg.tau_1m, cfg.tau_3m, dt=cfg.dt)


def _replication(truth: ModelParams, cfg: SimStudyConfig, index: int, seed_seq) -> ReplicationResult:
    from .estimation import EstimationOptions, ParamCodec, estimate

    rng = np.random.Generator(np.random.PCG64(seed_seq))
    X, panel = simulate_study_panel(truth, cfg, rng)
    opts = EstimationOptions(restarts=cfg.restarts, fatol=cfg.fatol, xatol=cfg.xatol,
                             max_fev=cfg.max_fev, seed=index)
    try:
        res = estimate(panel, truth, opts, h_sd=cfg.tick / np.sqrt(12.0))
    except Exception as exc:  # recorded and excluded from the aggregates
        return ReplicationResult(index, False, message=f"{type(exc).__name__}: {exc}")
    codec = ParamCodec(truth.spec, 0)
    est = _natural(codec.encode(res.params, []), codec)
    return ReplicationResult(index, True, est, res.final_filter.mean - X[-1], res.loglik,
                             res.n_fev, res.message)


def _natural(v: np.ndarray, codec) -> np.ndarray:
    out = v.copy()
    mask = codec.log_mask[: len(v)]
    out[mask] = np.exp(v[mask])
    out[~mask] = v[~mask] / 100.0
    return out


def type7_quantiles(x: np.ndarray, probs=(0.05, 0.25, 0.5, 0.75, 0.95)) -> np.ndarray:
    return np.quantile(np.asarray(x, dtype=float), probs, method="linear")


def sim_study(truth: ModelParams, cfg: SimStudyConfig | None = None) -> StudyReport:
    """Simulate, estimate from the truth and summarize parameter and state errors."""
    from .estimation import ParamCodec
    from .models import FACTOR_NAMES

    cfg = cfg or SimStudyConfig()
    if truth.spec.is_shadow:
        raise UnsupportedVariantError("the recovery study uses Gaussian variants")
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_replications)
    workers = worker_count(cfg.workers)
    if workers > 1 and cfg.n_replications > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(_replication, [truth] * cfg.n_replications, [cfg] * cfg.n_replications,
                               range(cfg.n_replications), seqs))
    else:
        reps = [_replication(truth, cfg, i, s) for i, s in enumerate(seqs)]
    ok = [r for r in reps if r.ok]
    codec = ParamCodec(truth.spec, 0)
    names = codec.names([])
    truth_v = _natural(codec.encode(truth, []), codec)
    params = []
    if ok:
        est = np.array([r.estimates for r in ok])
        for j, name in enumerate(names):
            q = type7_quantiles(est[:, j])
            params.append(SummaryStats(name, float(truth_v[j]), float(est[:, j].mean()),
                                       float(est[:, j].std(ddof=1)) if len(ok) > 1 else 0.0,
                                       *map(float, q)))
    states = []
    if ok:
        err = np.array([r.state_error for r in ok]) * 1e4
        for j in range(truth.n):
            states.append(StateErrorStats(FACTOR_NAMES[j], float(np.sqrt(np.mean(err[:, j] ** 2))),
                                          float(err[:, j].mean()),
                                          float(err[:, j].std(ddof=1)) if len(ok) > 1 else 0.0))
    return StudyReport(tuple(params), tuple(states), len(ok), len(reps) - len(ok), tuple(reps))
