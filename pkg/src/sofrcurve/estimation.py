"""Extended Kalman filter and maximum-likelihood estimation from futures panels.

The state follows the exact discretization of the P-dynamics over ``dt``
(1/250 by default). Each observation is a futures rate whose model value is
affine (one-month, Gaussian), exponential-affine (three-month, Gaussian) or
evaluated through the shadow-rate pricers with a finite-difference Jacobian.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from datetime import date
from functools import cached_property, lru_cache

import numba
import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .errors import DataError, DomainError, NumericalError
from .futures import ContractKind, FuturesContract, realized_fixings
from .models import (
    ModelParams,
    ModelSpec,
    drift_loading,
    loading_A,
    loading_B,
    q_cov,
    transition_q,
)

DT_DAILY = 1.0 / 250.0
RATE_BAND = (-0.05, 0.30)
FD_STEP = 1e-7
_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# state equation


def discretize_P(params: ModelParams, dt: float = DT_DAILY):
    """``(F, C, Q)`` of ``X_t = C + F X_{t-dt} + xi_t`` under P.

    ``Q_ij = U [G_ij (1 - exp(-(l_i + l_j) dt)) / (l_i + l_j)] U'`` with
    ``K^P = U diag(l) U^-1`` and ``G = U^-1 Sigma Sigma' U^-T``.
    """
    if not dt > 0:
        raise DomainError("dt must be positive")
    K = params.kP
    lam, U = np.linalg.eig(K)
    if np.any(lam.real <= 0) or np.any(np.abs(lam.imag) > 0):
        raise DomainError("K^P must have positive real eigenvalues")
    lam = lam.real
    U = U.real
    if np.linalg.cond(U) > 1e12:
        raise NumericalError("K^P is not diagonalizable")
    Ui = np.linalg.inv(U)
    F = U @ np.diag(np.exp(-lam * dt)) @ Ui
    C = (np.eye(params.n) - F) @ params.thetaP
    G = Ui @ params.sigma @ params.sigma.T @ Ui.T
    s = lam[:, None] + lam[None, :]
    Q = U @ (G * -np.expm1(-s * dt) / s) @ U.T
    return F, C, 0.5 * (Q + Q.T)


# ---------------------------------------------------------------------------
# observations


class HGrouping(str, enum.Enum):
    KIND = "kind"
    CONTRACT = "contract"


@dataclass(frozen=True, eq=False)
class ObservationPanel:
    """Flat storage of a panel of futures-rate observations.

    Observation ``k`` belongs to row ``r`` when ``row_ptr[r] <= k < row_ptr[r+1]``.
    Per observation: the contract kind, offsets ``start_off = max(S - t, 0)``
    and ``end_off = T - t`` from the row time, the accrual length, the already
    realized part (one-month: realized average contribution; three-month:
    compounded growth factor) and the observed rate.
    """

    times: np.ndarray
    row_ptr: np.ndarray
    is3m: np.ndarray
    start_off: np.ndarray
    end_off: np.ndarray
    length: np.ndarray
    realized: np.ndarray
    mult: np.ndarray
    rate: np.ndarray
    contract_ids: tuple[str, ...]
    dates: tuple[date, ...] | None = None
    dt: float = DT_DAILY

    def __post_init__(self):
        set_ = object.__setattr__
        for name in ("times", "start_off", "end_off", "length", "realized", "mult", "rate"):
            set_(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))
        set_(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype=np.int64))
        set_(self, "is3m", np.ascontiguousarray(self.is3m, dtype=np.bool_))
        n_obs = len(self.rate)
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != n_obs or len(self.row_ptr) != len(self.times) + 1:
            raise DataError("inconsistent panel row pointers")
        if len(self.times) == 0:
            raise DataError("panel is empty")
        if np.any(np.diff(self.row_ptr) < 1):
            raise DataError("every panel row needs at least one observation")
        lo, hi = RATE_BAND
        bad = np.flatnonzero((self.rate <= lo) | (self.rate >= hi))
        if len(bad):
            raise DataError(f"rate {self.rate[bad[0]]} of {self.contract_ids[bad[0]]} outside sanity band")
        if np.any(self.end_off <= self.start_off):
            raise DataError("contract already expired at observation time")

    @property
    def n_rows(self) -> int:
        return len(self.times)

    @property
    def n_obs(self) -> int:
        return len(self.rate)

    def row_slice(self, r: int) -> slice:
        return slice(int(self.row_ptr[r]), int(self.row_ptr[r + 1]))

    @cached_property
    def layout(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices of distinct observation layouts and the inverse map.

        Measurement coefficients depend only on the kind, offsets and realized
        parts, which repeat heavily across rows.
        """
        key = np.column_stack([self.is3m, self.start_off, self.end_off, self.length,
                               self.realized, self.mult])
        _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
        return first, inverse.reshape(-1)

    def groups(self, grouping: HGrouping = HGrouping.KIND) -> tuple[np.ndarray, list[str]]:
        """Measurement-error group index per observation and the group labels."""
        return self._groups(HGrouping(grouping))

    @lru_cache(maxsize=4)
    def _groups(self, grouping: HGrouping) -> tuple[np.ndarray, list[str]]:
        if grouping is HGrouping.KIND:
            labels = [k for k, present in (("1M", np.any(~self.is3m)), ("3M", np.any(self.is3m)))
                      if present]
            idx = np.array([labels.index("3M" if f else "1M") for f in self.is3m], dtype=np.int64)
            return idx, labels
        labels = sorted(set(self.contract_ids))
        pos = {c: i for i, c in enumerate(labels)}
        return np.array([pos[c] for c in self.contract_ids], dtype=np.int64), labels

    def head(self, n_rows: int) -> "ObservationPanel":
        return self.window(0, n_rows)

    def window(self, start: int, stop: int) -> "ObservationPanel":
        lo, hi = int(self.row_ptr[start]), int(self.row_ptr[stop])
        sl = slice(lo, hi)
        return ObservationPanel(
            self.times[start:stop], self.row_ptr[start : stop + 1] - lo, self.is3m[sl],
            self.start_off[sl], self.end_off[sl], self.length[sl], self.realized[sl],
            self.mult[sl], self.rate[sl], self.contract_ids[lo:hi],
            None if self.dates is None else self.dates[start:stop], self.dt)


def panel_from_contracts(times: Sequence[float], rows: Sequence[Sequence[tuple[FuturesContract, float]]],
                         accrued=None, dates: Sequence[date] | None = None,
                         dt: float = DT_DAILY) -> ObservationPanel:
    """Build a panel from ``(contract, observed rate)`` pairs per row time."""
    cols = {k: [] for k in ("is3m", "s", "e", "L", "real", "mult", "rate", "ids")}
    ptr = [0]
    for t, row in zip(times, rows):
        for contract, rate in row:
            cols["is3m"].append(contract.kind is ContractKind.THREE_MONTH)
            cols["s"].append(max(contract.start - t, 0.0))
            cols["e"].append(contract.end - t)
            cols["L"].append(contract.length)
            real, mult = 0.0, 1.0
            if t > contract.start:
                fixed = realized_fixings(contract, t, accrued)
                if contract.kind is ContractKind.ONE_MONTH:
                    real = float(fixed @ contract.coverage[: len(fixed)]) / contract.length
                else:
                    mult = float(np.prod(1.0 + contract.day_weights[: len(fixed)] * fixed))
            cols["real"].append(real)
            cols["mult"].append(mult)
            cols["rate"].append(rate)
            cols["ids"].append(contract.contract_id)
        ptr.append(len(cols["rate"]))
    return ObservationPanel(
        np.asarray(times, dtype=float), np.array(ptr), np.array(cols["is3m"], dtype=bool),
        np.array(cols["s"]), np.array(cols["e"]), np.array(cols["L"]), np.array(cols["real"]),
        np.array(cols["mult"]), np.array(cols["rate"]), tuple(cols["ids"]),
        None if dates is None else tuple(dates), dt)


def stylized_panel(rates: np.ndarray, tau_1m: Sequence[float], tau_3m: Sequence[float],
                   days: tuple[int, int] = (30, 90), dt: float = DT_DAILY) -> ObservationPanel:
    """Panel of contracts at fixed start offsets from each row, e.g. a simulation study.

    ``rates`` has one column per entry of ``tau_1m`` followed by ``tau_3m``.
    """
    rates = np.asarray(rates, dtype=float)
    n1, n3 = len(tau_1m), len(tau_3m)
    T = rates.shape[0]
    if rates.shape[1] != n1 + n3:
        raise DataError("rate columns do not match the contract grid")
    starts = np.concatenate([tau_1m, tau_3m])
    lengths = np.concatenate([np.full(n1, days[0] / 360.0), np.full(n3, days[1] / 360.0)])
    ids = [f"1M+{i}" for i in range(n1)] + [f"3M+{i}" for i in range(n3)]
    m = n1 + n3
    return ObservationPanel(
        dt * np.arange(1, T + 1), m * np.arange(T + 1), np.tile(np.arange(m) >= n1, T),
        np.tile(starts, T), np.tile(starts + lengths, T), np.tile(lengths, T), np.zeros(T * m),
        np.ones(T * m), rates.reshape(-1), tuple(ids) * T, None, dt)


@dataclass(frozen=True, eq=False)
class MeasurementCoefs:
    """Rate = ``a + b'x`` (one-month) or ``(mult exp(c + b'x) - 1)/length`` (three-month)."""

    is3m: np.ndarray
    a: np.ndarray
    c: np.ndarray
    mult: np.ndarray
    length: np.ndarray
    b: np.ndarray

    def value(self, x) -> np.ndarray:
        lin = self.b @ np.asarray(x, dtype=float)
        return np.where(self.is3m, (self.mult * np.exp(self.c + lin) - 1.0) / self.length, self.a + lin)

    def jacobian(self, x) -> np.ndarray:
        lin = self.b @ np.asarray(x, dtype=float)
        scale = np.where(self.is3m, self.mult * np.exp(self.c + lin) / self.length, 1.0)
        return scale[:, None] * self.b

    def subset(self, sl) -> "MeasurementCoefs":
        return MeasurementCoefs(self.is3m[sl], self.a[sl], self.c[sl], self.mult[sl],
                                self.length[sl], self.b[sl])


def gaussian_measurement(params: ModelParams, panel: ObservationPanel) -> MeasurementCoefs:
    """Vectorized continuous-approximation maps for every observation of a panel."""
    if params.spec.is_shadow:
        raise DomainError("shadow observations have no affine measurement map")
    first, inverse = panel.layout
    hs, he, L = panel.start_off[first], panel.end_off[first], panel.length[first]
    b1 = (loading_B(params, hs) - loading_B(params, he)) / L[:, None]
    a1 = panel.realized[first] + (drift_loading(params, he) - drift_loading(params, hs)) / L
    w = he - hs
    bw = loading_B(params, w)
    phi = transition_q(params, hs)
    v = q_cov(params, hs)
    th = params.thetaQ
    b3 = -np.einsum("kij,ki->kj", phi, bw)
    c3 = (drift_loading(params, w) + loading_A(params, w)
          + 0.5 * np.einsum("ki,kij,kj->k", bw, v, bw)
          - np.einsum("ki,ki->k", bw, th[None, :] - phi @ th))
    m = panel.is3m[first]
    b = np.where(m[:, None], b3, b1)[inverse]
    return MeasurementCoefs(
        panel.is3m, np.where(m, 0.0, a1)[inverse], np.where(m, c3, 0.0)[inverse], panel.mult,
        panel.length, np.ascontiguousarray(b))


def shadow_measurement(params: ModelParams, panel: ObservationPanel, sl: slice, x, quad=None):
    """Shadow-model futures rates of the observations in ``sl`` for states ``x`` (..., 3)."""
    from .shadow import DEFAULT_QUAD, integrated_positive_mean, integrated_positive_second_moment

    quad = quad or DEFAULT_QUAD
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(sl.start, sl.stop):
        a, b, L = panel.start_off[k], panel.end_off[k], panel.length[k]
        m1 = integrated_positive_mean(params, x, 0.0, b, quad, start=a)
        if panel.is3m[k]:
            m2 = integrated_positive_second_moment(params, x, 0.0, b, quad, start=a)
            out.append((panel.mult[k] * np.exp(m1 + 0.5 * (m2 - m1 * m1)) - 1.0) / L)
        else:
            out.append(panel.realized[k] + m1 / L)
    return np.stack(np.broadcast_arrays(*out), axis=-1)


# ---------------------------------------------------------------------------
# filter


@dataclass(frozen=True, eq=False)
class FilterState:
    mean: np.ndarray
    cov: np.ndarray
    loglik_accum: float = 0.0


@dataclass(frozen=True, eq=False)
class ObservationRow:
    """Measurement model of one date: a value/Jacobian callable plus the data."""

    rate: np.ndarray
    hvar: np.ndarray
    h: callable
    jac: callable
    label: str = ""


def gaussian_row(params: ModelParams, panel: ObservationPanel, r: int, hvar,
                 coefs: MeasurementCoefs | None = None) -> ObservationRow:
    sl = panel.row_slice(r)
    co = (coefs or gaussian_measurement(params, panel)).subset(sl)
    return ObservationRow(panel.rate[sl], np.asarray(hvar, float)[sl], co.value, co.jacobian,
                          _row_label(panel, r))


def shadow_row(params: ModelParams, panel: ObservationPanel, r: int, hvar, quad=None,
               step: float = FD_STEP) -> ObservationRow:
    sl = panel.row_slice(r)

    def h(x):
        return shadow_measurement(params, panel, sl, x, quad)

    def jac(x):
        x = np.asarray(x, dtype=float)
        n = len(x)
        pts = np.vstack([x + step * np.eye(n), x - step * np.eye(n)])
        vals = h(pts)
        return ((vals[:n] - vals[n:]) / (2.0 * step)).T

    return ObservationRow(panel.rate[sl], np.asarray(hvar, float)[sl], h, jac, _row_label(panel, r))


def _row_label(panel: ObservationPanel, r: int) -> str:
    if panel.dates is not None:
        return panel.dates[r].isoformat()
    return f"row {r} (t={panel.times[r]:.6f})"


def ekf_step(prior: FilterState, row: ObservationRow, F, C, Q) -> FilterState:
    """One prediction/update step; the log-likelihood increment is accumulated.

    The update runs in information form: with ``P = Lp Lp'`` (PSD ``P`` is
    allowed) and diagonal
    ``H``, ``A = I + Lp' B' H^-1 B Lp`` gives ``|S| = |H| |A|`` and
    ``P+ = Lp A^-1 Lp'``. ``A`` is well conditioned even when the
    measurement errors are tiny next to the factor-driven variance.
    """
    x = C + F @ prior.mean
    P = F @ prior.cov @ F.T + Q
    B = np.atleast_2d(row.jac(x))
    nu = row.rate - row.h(x)
    try:
        Lp = psd_cholesky(P)
        BL = B @ Lp / np.sqrt(row.hvar)[:, None]
        R = np.linalg.cholesky(np.eye(len(x)) + BL.T @ BL)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"filter covariance not positive semidefinite at {row.label}") from exc
    w = nu / np.sqrt(row.hvar)
    z = solve_triangular(R, BL.T @ w, lower=True)
    G = solve_triangular(R, Lp.T, lower=True).T
    x = x + G @ z
    P = G @ G.T
    logdet = np.log(row.hvar).sum() + 2.0 * np.log(np.diag(R)).sum()
    inc = -0.5 * (len(nu) * _LOG_2PI + logdet + w @ w - z @ z)
    return FilterState(x, 0.5 * (P + P.T), prior.loglik_accum + float(inc))


@numba.njit(cache=True)
def _chol_inplace(A, n, semidefinite=False):
    """Lower Cholesky factor of ``A[:n, :n]`` written over its lower triangle.

    With ``semidefinite`` a pivot at rounding level relative to the largest
    diagonal entry zeroes its column instead of failing, which factors
    singular but PSD matrices such as the zero covariance of a model
    without volatility.
    """
    tol = 0.0
    if semidefinite:
        for j in range(n):
            tol = max(tol, abs(A[j, j]))
        tol *= 4.0 * n * 2.220446049250313e-16
    for j in range(n):
        s = A[j, j]
        for q in range(j):
            s -= A[j, q] * A[j, q]
        if semidefinite and s <= tol and s >= -tol:
            for i in range(j, n):
                A[i, j] = 0.0
            continue
        if not s > 0.0:
            return False
        A[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for q in range(j):
                s -= A[i, q] * A[j, q]
            A[i, j] = s / A[j, j]
    return True


def psd_cholesky(P) -> np.ndarray:
    """Lower triangular ``L`` with ``L L' = P`` for a symmetric PSD ``P``."""
    L = np.array(0.5 * (P + P.T), dtype=float)
    if not _chol_inplace(L, L.shape[0], True):
        raise np.linalg.LinAlgError("matrix is not positive semidefinite")
    return np.tril(L)


@numba.njit(cache=True)
def _kalman_kernel(F, C, Q, x0, P0, row_ptr, is3m, a, c, mult, length, b, y, hvar, keep):
    n = x0.shape[0]
    T = row_ptr.shape[0] - 1
    x = x0.copy()
    P = P0.copy()
    xp = np.empty(n)
    Lp = np.empty((n, n))
    tmp = np.empty((n, n))
    W = np.empty((n, n))
    A = np.empty((n, n))
    G = np.empty((n, n))
    g = np.empty(n)
    z = np.empty(n)
    Bj = np.empty(n)
    xs = np.zeros((T if keep else 0, n))
    Ps = np.zeros((T if keep else 0, n, n))
    ll = 0.0
    for t in range(T):
        # prediction
        for i in range(n):
            s = C[i]
            for j in range(n):
                s += F[i, j] * x[j]
            xp[i] = s
        for i in range(n):
            for j in range(n):
                s = 0.0
                for q in range(n):
                    s += F[i, q] * P[q, j]
                tmp[i, j] = s
        for i in range(n):
            for j in range(n):
                s = Q[i, j]
                for q in range(n):
                    s += tmp[i, q] * F[j, q]
                Lp[i, j] = s
        if not _chol_inplace(Lp, n, True):
            return ll, x, P, xs, Ps, t
        # accumulate W = B' H^-1 B, g = B' H^-1 v over the linearized row
        lo = row_ptr[t]
        m = row_ptr[t + 1] - lo
        for i in range(n):
            g[i] = 0.0
            for j in range(n):
                W[i, j] = 0.0
        vhv = 0.0
        logdet = 0.0
        for j in range(m):
            k = lo + j
            lin = 0.0
            for i in range(n):
                lin += b[k, i] * xp[i]
            if is3m[k]:
                e = mult[k] * math.exp(c[k] + lin)
                v = y[k] - (e - 1.0) / length[k]
                for i in range(n):
                    Bj[i] = e / length[k] * b[k, i]
            else:
                v = y[k] - (a[k] + lin)
                for i in range(n):
                    Bj[i] = b[k, i]
            h = hvar[k]
            logdet += math.log(h)
            vhv += v * v / h
            for i in range(n):
                g[i] += Bj[i] * v / h
                for q in range(i + 1):
                    W[i, q] += Bj[i] * Bj[q] / h
        # A = I + Lp' W Lp, so that |S| = |H| |A| and P+ = Lp A^-1 Lp'
        for i in range(n):
            for j in range(n):
                s = 0.0
                for q in range(i, n):
                    s += Lp[q, i] * W[max(q, j), min(q, j)]
                tmp[i, j] = s
        for i in range(n):
            for j in range(i + 1):
                s = 1.0 if i == j else 0.0
                for q in range(j, n):
                    s += tmp[i, q] * Lp[q, j]
                A[i, j] = s
        if not _chol_inplace(A, n):
            return ll, x, P, xs, Ps, t
        for i in range(n):
            logdet += 2.0 * math.log(A[i, i])
        # z = R^-1 Lp' g, G = Lp R^-T
        for i in range(n):
            s = 0.0
            for q in range(i, n):
                s += Lp[q, i] * g[q]
            for q in range(i):
                s -= A[i, q] * z[q]
            z[i] = s / A[i, i]
        for r in range(n):
            for i in range(n):
                s = Lp[r, i] if r >= i else 0.0
                for q in range(i):
                    s -= G[r, q] * A[i, q]
                G[r, i] = s / A[i, i]
        quad = vhv
        for i in range(n):
            quad -= z[i] * z[i]
        # update: x+ = xp + P+ g = xp + G z, P+ = G G'
        for i in range(n):
            s = xp[i]
            for q in range(n):
                s += G[i, q] * z[q]
            x[i] = s
        for i in range(n):
            for j in range(i + 1):
                s = 0.0
                for q in range(n):
                    s += G[i, q] * G[j, q]
                P[i, j] = s
                P[j, i] = s
        ll += -0.5 * (m * 1.8378770664093453 + logdet + quad)
        if keep:
            xs[t] = x
            Ps[t] = P
    return ll, x, P, xs, Ps, -1


@dataclass(frozen=True, eq=False)
class FilterRun:
    loglik: float
    final: FilterState
    means: np.ndarray | None = None
    covs: np.ndarray | None = None


def initial_filter_state(params: ModelParams) -> FilterState:
    """Unconditional mean and covariance of the stationary P-dynamics."""
    return FilterState(params.thetaP.copy(), params.unconditional_cov(), 0.0)


def expand_h(panel: ObservationPanel, h_var, grouping: HGrouping = HGrouping.KIND) -> np.ndarray:
    """Per-observation measurement variances from per-group values."""
    idx, labels = panel.groups(grouping)
    h = np.atleast_1d(np.asarray(h_var, dtype=float))
    if h.size == 1:
        h = np.full(len(labels), float(h[0]))
    if len(h) != len(labels):
        raise DomainError(f"need {len(labels)} measurement variances ({', '.join(labels)})")
    if np.any(h <= 0):
        raise DomainError("measurement variances must be positive")
    return h[idx]


def run_filter(params: ModelParams, panel: ObservationPanel, h_var,
               grouping: HGrouping = HGrouping.KIND, keep: bool = False, quad=None,
               init: FilterState | None = None) -> FilterRun:
    hv = expand_h(panel, h_var, grouping)
    F, C, Q = discretize_P(params, panel.dt)
    start = init or initial_filter_state(params)
    if not params.spec.is_shadow:
        co = gaussian_measurement(params, panel)
        ll, x, P, xs, Ps, status = _kalman_kernel(
            F, C, Q, start.mean.astype(float), np.ascontiguousarray(start.cov, dtype=float),
            panel.row_ptr, co.is3m, co.a, co.c, co.mult, co.length, co.b, panel.rate, hv, keep)
        if status >= 0:
            raise NumericalError(f"filter covariance not positive semidefinite at "
                                 f"{_row_label(panel, status)}")
        ll += start.loglik_accum
        return FilterRun(ll, FilterState(x, P, ll), xs if keep else None, Ps if keep else None)
    state = start
    means, covs = [], []
    for r in range(panel.n_rows):
        state = ekf_step(state, shadow_row(params, panel, r, hv, quad), F, C, Q)
        if keep:
            means.append(state.mean)
            covs.append(state.cov)
    return FilterRun(state.loglik_accum, state, np.array(means) if keep else None,
                     np.array(covs) if keep else None)


def log_likelihood(params: ModelParams, h_var, panel: ObservationPanel,
                   grouping: HGrouping = HGrouping.KIND, quad=None) -> float:
    return run_filter(params, panel, h_var, grouping, quad=quad).loglik


# ---------------------------------------------------------------------------
# parameter transform


@dataclass(frozen=True)
class ParamCodec:
    """Unconstrained vector <-> (ModelParams, measurement sds).

    Layout: log lambda (or log kappa^Q), log sigma_i, log kP_i, 100 thetaP_i,
    [100 thetaQ for Vasicek], log H sd per group. Entries of ``log_mask`` are
    logarithmic coordinates.
    """

    spec: ModelSpec
    n_groups: int

    @property
    def n(self) -> int:
        return self.spec.n_factors

    @property
    def size(self) -> int:
        return 1 + 3 * self.n + (0 if self.spec.is_afns else 1) + self.n_groups

    @property
    def log_mask(self) -> np.ndarray:
        n = self.n
        m = np.concatenate([[True], np.ones(2 * n, bool), np.zeros(n, bool)])
        if not self.spec.is_afns:
            m = np.append(m, False)
        return np.append(m, np.ones(self.n_groups, bool))

    def names(self, group_labels: Sequence[str] | None = None) -> list[str]:
        n = self.n
        out = ["lambda" if self.spec.is_afns else "kappaQ"]
        out += [f"sigma{i + 1}" for i in range(n)] + [f"kP{i + 1}" for i in range(n)]
        out += [f"thetaP{i + 1}" for i in range(n)]
        if not self.spec.is_afns:
            out.append("thetaQ")
        labels = group_labels or [str(g) for g in range(self.n_groups)]
        return out + [f"h_sd[{g}]" for g in labels]

    def encode(self, params: ModelParams, h_sd) -> np.ndarray:
        first = params.lam if self.spec.is_afns else params.kappa_q
        v = [math.log(first)]
        v += list(np.log(params.sigma_diag)) + list(np.log(params.kP_diag))
        v += list(100.0 * params.thetaP)
        if not self.spec.is_afns:
            v.append(100.0 * float(params.thetaQ[0]))
        v += list(np.log(np.broadcast_to(np.asarray(h_sd, float), (self.n_groups,))))
        return np.array(v)

    def decode(self, v) -> tuple[ModelParams, np.ndarray]:
        v = np.asarray(v, dtype=float)
        n = self.n
        first = math.exp(v[0])
        sigma = np.exp(v[1 : 1 + n])
        kP = np.exp(v[1 + n : 1 + 2 * n])
        thetaP = v[1 + 2 * n : 1 + 3 * n] / 100.0
        pos = 1 + 3 * n
        if self.spec.is_afns:
            params = ModelParams(self.spec, sigma=sigma, kP=kP, thetaP=thetaP, lam=first)
        else:
            params = ModelParams(self.spec, sigma=sigma, kP=kP, thetaP=thetaP, kappa_q=first,
                                 thetaQ=v[pos] / 100.0)
            pos += 1
        return params, np.exp(v[pos:])


# ---------------------------------------------------------------------------
# maximum likelihood


@dataclass(frozen=True)
class EstimationOptions:
    restarts: int = 3
    fatol: float = 0.01
    xatol: float = 1e-4
    max_fev: int = 6000
    initial_step: float = 0.10
    jitter: float = 0.05
    seed: int = 0
    grouping: HGrouping = HGrouping.KIND
    h_sd_init: float = 1e-4


@dataclass(frozen=True, eq=False)
class EstimationResult:
    params: ModelParams
    measurement_error_sd: dict[str, float]
    final_filter: FilterState
    loglik: float
    converged: bool
    n_iter: int
    n_fev: int
    simplex_spread: float
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "measurement_error_sd": dict(self.measurement_error_sd),
            "final_state": self.final_filter.mean.tolist(),
            "final_state_cov": self.final_filter.cov.tolist(),
            "loglik": self.loglik,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "n_fev": self.n_fev,
            "simplex_spread": self.simplex_spread,
            "message": self.message,
        }


_PENALTY = 1e12


def _initial_simplex(v0: np.ndarray, log_mask: np.ndarray, step: float) -> np.ndarray:
    """Vertices displaced by ``step`` relative to each natural coordinate."""
    sim = np.tile(v0, (len(v0) + 1, 1))
    for i in range(len(v0)):
        if log_mask[i]:
            d = math.log1p(step)
        else:
            d = step * abs(v0[i]) if abs(v0[i]) > 1e-3 else step * 0.1
        sim[i + 1, i] += d
    return sim


def estimate(panel: ObservationPanel, init: ModelParams, options: EstimationOptions | None = None,
             h_sd=None, quad=None) -> EstimationResult:
    """Nelder-Mead maximum likelihood over the reparameterized vector.

    The first run starts at ``init``; ``restarts`` further runs start from
    the best point so far with a relative jitter, which helps the simplex
    escape premature collapse. The best result over all runs is returned.
    """
    opts = options or EstimationOptions()
    grouping = HGrouping(opts.grouping)
    _, labels = panel.groups(grouping)
    codec = ParamCodec(init.spec, len(labels))
    h0 = np.broadcast_to(np.asarray(opts.h_sd_init if h_sd is None else h_sd, float),
                         (len(labels),))
    init.unconditional_cov()

    def negll(v):
        try:
            p, hs = codec.decode(v)
            ll = run_filter(p, panel, hs**2, grouping, quad=quad).loglik
        except (DomainError, NumericalError, FloatingPointError, OverflowError):
            return _PENALTY
        return -ll if np.isfinite(ll) else _PENALTY

    rng = np.random.default_rng(opts.seed)
    best_v = codec.encode(init, h0)
    best_f = negll(best_v)
    fev, nit, converged, spread, msg = 0, 0, False, float("nan"), ""
    for run in range(1 + opts.restarts):
        start = best_v.copy()
        if run > 0:
            scale = np.where(codec.log_mask, 1.0, np.maximum(np.abs(start), 0.1))
            start = start + opts.jitter * scale * rng.standard_normal(len(start))
        res = minimize(negll, start, method="Nelder-Mead",
                       options={"initial_simplex": _initial_simplex(start, codec.log_mask,
                                                                    opts.initial_step),
                                "fatol": opts.fatol, "xatol": opts.xatol,
                                "maxfev": max(opts.max_fev - fev, 1)})
        fev += res.nfev
        nit += res.nit
        if res.fun <= best_f:
            best_v, best_f = res.x, res.fun
            converged, msg = bool(res.success), str(res.message)
            sim = res.final_simplex[0]
            spread = float(np.max(np.abs(sim - sim[0])))
        if fev >= opts.max_fev:
            break
    params, hs = codec.decode(best_v)
    run_ = run_filter(params, panel, hs**2, grouping, quad=quad)
    return EstimationResult(params, dict(zip(labels, map(float, hs))), run_.final, run_.loglik,
                            converged, nit, fev, spread, msg)


@dataclass(frozen=True, eq=False)
class RollingEstimate:
    row: int
    date: date | None
    result: EstimationResult


def rolling_estimates(panel: ObservationPanel, init: ModelParams, window: int = 250,
                      step: int = 1, options: EstimationOptions | None = None,
                      min_window: int = 250, expanding: bool = True):
    """Daily re-estimation warm-started at the previous optimum.

    With ``expanding`` each fit uses all rows up to the current one, otherwise
    a rolling block of ``window`` rows. The first fit needs ``min_window``
    rows of history.
    """
    if window < min_window:
        raise DomainError(f"estimation window must be at least {min_window} rows")
    if panel.n_rows < window:
        raise DataError(f"panel has {panel.n_rows} rows, the window needs {window}")
    opts = options or EstimationOptions()
    guess, h_sd = init, None
    out = []
    for end in range(window, panel.n_rows + 1, step):
        sub = panel.window(0 if expanding else end - window, end)
        res = estimate(sub, guess, opts, h_sd=h_sd)
        out.append(RollingEstimate(end - 1, None if panel.dates is None else panel.dates[end - 1], res))
        guess, h_sd = res.params, np.array(list(res.measurement_error_sd.values()))
        opts = replace(opts, restarts=0)
    return out
