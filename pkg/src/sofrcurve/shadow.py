"""Shadow-rate AFNS3 pricing via truncated-Gaussian moments.

The short rate is ``r = max(s, 0)`` with ``s = L + S`` Gaussian. The first two
moments of ``int r`` follow from one- and two-dimensional integrals of
truncated normal moments; futures and bonds use the two-term cumulant
expansion ``E[exp(I)] ~ exp(E[I] + Var[I]/2)``.

Integrals are taken in the variable ``w = sqrt(s - t)`` which removes the
square-root behaviour of ``sigma_{t,s}`` at the valuation time. The inner
integral of the second moment is split at the midpoint and uses
``v = sqrt(s - u)`` on the upper half, where the integrand has a
``(s-u)^{3/2}`` term from the near-comonotone pair.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, NumericalError, UnsupportedVariantError
from .futures import ContractKind, FuturesContract, realized_fixings
from .models import ModelParams, q_cov, state_values, transition_q
from .numerics import bivariate_normal_cdf, gauss_kronrod

_SIGMA_FLOOR = 1e-10
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


class QuadratureRule(str, enum.Enum):
    GAUSS_KRONROD = "GAUSS_KRONROD"


@dataclass(frozen=True)
class QuadratureScheme:
    """Panelled Gauss-Kronrod scheme.

    ``panels=None`` uses one panel per month of integration range. With
    ``self_check`` the panel count is doubled until two successive results
    agree within ``tol``; failing that after ``max_doublings`` raises
    :class:`NumericalError`.
    """

    rule: QuadratureRule = QuadratureRule.GAUSS_KRONROD
    points_per_dim: int = 5
    panels: int | None = None
    self_check: bool = True
    tol: float = 1e-10
    max_doublings: int = 5

    def __post_init__(self):
        object.__setattr__(self, "rule", QuadratureRule(self.rule))
        if self.points_per_dim < 3:
            raise DomainError("points_per_dim must be at least 3")
        if self.panels is not None and self.panels < 1:
            raise DomainError("panels must be positive")
        gauss_kronrod(self.points_per_dim)

    def n_panels(self, length: float) -> int:
        if self.panels is not None:
            return self.panels
        return max(1, int(round(length * 12.0)))


DEFAULT_QUAD = QuadratureScheme()


@dataclass(frozen=True)
class ShadowMomentInputs:
    mu: float
    sigma: float
    cov: float
    corr: float
    zeta: float


def _require_shadow(params: ModelParams):
    if not params.spec.is_shadow:
        raise UnsupportedVariantError("shadow pricers need the SHADOW_AFNS3 variant")


# ---------------------------------------------------------------------------
# moments of the shadow rate


def _mean_coef(params: ModelParams, h) -> np.ndarray:
    """Rows ``rho1' exp(-K^Q h)`` so that ``mu = coef @ x``."""
    return np.einsum("i,...ij->...j", params.rho1, transition_q(params, h))


def _variance(params: ModelParams, h) -> np.ndarray:
    r = params.rho1
    return np.einsum("i,...ij,j->...", r, q_cov(params, h), r)


def _covariance(params: ModelParams, hu, hs) -> np.ndarray:
    """``Cov(s_u, s_s)`` for offsets ``hu <= hs`` from the valuation time."""
    r = params.rho1
    v = q_cov(params, hu)
    phi = transition_q(params, np.asarray(hs) - np.asarray(hu))
    return np.einsum("i,...ij,...kj,k->...", r, v, phi, r)


def shadow_mean_var_cov(params: ModelParams, state, t: float, u, s):
    """Conditional means, variances and covariance of ``s_u`` and ``s_s`` given ``X_t``."""
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(u < t) or np.any(s < t):
        raise DomainError("moment times must not precede the valuation time")
    x = state_values(state, 3)
    hu, hs = u - t, s - t
    lo, hi = np.minimum(hu, hs), np.maximum(hu, hs)
    mu_u = _mean_coef(params, hu) @ x
    mu_s = _mean_coef(params, hs) @ x
    cov = _covariance(params, lo, hi)
    out = (mu_u, mu_s, _variance(params, hu), _variance(params, hs), cov)
    if u.ndim == 0 and s.ndim == 0:
        return tuple(float(v) for v in out)
    return out


def moment_inputs(params: ModelParams, state, t: float, u: float, s: float) -> tuple[
        ShadowMomentInputs, ShadowMomentInputs]:
    mu_u, mu_s, var_u, var_s, cov = shadow_mean_var_cov(params, state, t, u, s)
    su, ss = np.sqrt(var_u), np.sqrt(var_s)
    corr = float(np.clip(cov / (su * ss), -1.0, 1.0)) if su * ss > 0 else 1.0
    return (ShadowMomentInputs(mu_u, su, cov, corr, mu_u / su if su > 0 else np.inf),
            ShadowMomentInputs(mu_s, ss, cov, corr, mu_s / ss if ss > 0 else np.inf))


# ---------------------------------------------------------------------------
# truncated-normal integrands


def positive_mean(mu, sigma):
    """``E[max(Y, 0)]`` for ``Y ~ N(mu, sigma^2)``."""
    mu, sigma = np.broadcast_arrays(np.asarray(mu, float), np.asarray(sigma, float))
    tiny = sigma < _SIGMA_FLOOR
    sd = np.where(tiny, 1.0, sigma)
    z = mu / sd
    out = mu * ndtr(z) + sd * _pdf(z)
    return np.where(tiny, np.maximum(mu, 0.0), out)


def positive_cross_moment(mu_u, mu_s, sig_u, sig_s, cov):
    """``E[max(Y_u,0) max(Y_s,0)]`` for jointly normal ``(Y_u, Y_s)``."""
    mu_u, mu_s, sig_u, sig_s, cov = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (mu_u, mu_s, sig_u, sig_s, cov)))
    tiny_u = sig_u < _SIGMA_FLOOR
    tiny_s = sig_s < _SIGMA_FLOOR
    su = np.where(tiny_u, 1.0, sig_u)
    ss = np.where(tiny_s, 1.0, sig_s)
    chi = np.clip(cov / (su * ss), -1.0, 1.0)
    zu, zs = mu_u / su, mu_s / ss
    rem = 1.0 - chi * chi
    degenerate = rem < 1e-12
    rem_safe = np.where(degenerate, 1.0, rem)
    sq = np.sqrt(rem_safe)

    general = (
        (mu_u * mu_s + cov) * bivariate_normal_cdf(zu, zs, np.where(degenerate, 0.0, chi))
        + ss * mu_u * _pdf(zs) * ndtr((zu - chi * zs) / sq)
        + su * mu_s * _pdf(zu) * ndtr((zs - chi * zu) / sq)
        + su * ss * np.sqrt(rem_safe / (2.0 * np.pi))
        * _pdf(np.sqrt(np.maximum(zu * zu - 2.0 * chi * zu * zs + zs * zs, 0.0) / rem_safe))
    )
    # comonotone limit: both rates are increasing functions of one normal Z
    z0 = np.maximum(-zu, -zs)
    comono = (mu_u * mu_s * ndtr(-z0) + (mu_u * ss + mu_s * su) * _pdf(z0)
              + su * ss * (z0 * _pdf(z0) + ndtr(-z0)))
    out = np.where(degenerate & (chi > 0), comono, general)
    out = np.where(degenerate & (chi < 0), _countermonotone(mu_u, mu_s, su, ss), out)
    pm_u = positive_mean(mu_u, sig_u)
    pm_s = positive_mean(mu_s, sig_s)
    out = np.where(tiny_u, np.maximum(mu_u, 0.0) * pm_s, out)
    out = np.where(tiny_s & ~tiny_u, np.maximum(mu_s, 0.0) * pm_u, out)
    return out


def _countermonotone(mu_u, mu_s, su, ss):
    # Y_u = mu_u + su Z, Y_s = mu_s - ss Z: both positive on -zu < Z < zs
    lo, hi = -mu_u / su, mu_s / ss
    ok = hi > lo
    lo_, hi_ = np.where(ok, lo, 0.0), np.where(ok, hi, 0.0)
    m0 = ndtr(hi_) - ndtr(lo_)
    m1 = _pdf(lo_) - _pdf(hi_)
    m2 = m0 + lo_ * _pdf(lo_) - hi_ * _pdf(hi_)
    val = mu_u * mu_s * m0 + (su * mu_s - ss * mu_u) * m1 - su * ss * m2
    return np.where(ok, val, 0.0)


# ---------------------------------------------------------------------------
# quadrature in w = sqrt(offset)


def _panel_nodes(lo, hi, n_panels: int, points: int):
    """Nodes and weights on ``[lo, hi]`` (arrays broadcast) split in equal panels."""
    x, w, _ = gauss_kronrod(points)
    lo = np.asarray(lo, dtype=float)[..., None, None]
    hi = np.asarray(hi, dtype=float)[..., None, None]
    width = (hi - lo) / n_panels
    left = lo + width * np.arange(n_panels)[:, None]
    nodes = left + width * (x + 1.0) / 2.0
    weights = np.broadcast_to(width / 2.0 * w, nodes.shape)
    shape = nodes.shape[:-2] + (n_panels * points,)
    return nodes.reshape(shape), weights.reshape(shape)


def _first_moment(params, x, a, b, n_panels, points):
    w, wt = _panel_nodes(np.sqrt(a), np.sqrt(b), n_panels, points)
    h = w * w
    mu = x @ _mean_coef(params, h).T
    g = positive_mean(mu, np.sqrt(_variance(params, h)))
    return g @ (2.0 * w * wt)


def _second_moment(params, x, a, b, n_panels, points):
    ws, wts = _panel_nodes(np.sqrt(a), np.sqrt(b), n_panels, points)
    hs = ws * ws
    mid = 0.5 * (a + hs)
    # lower half in w_u = sqrt(u), upper half in v = sqrt(s - u)
    wl, wtl = _panel_nodes(np.sqrt(a), np.sqrt(mid), n_panels, points)
    vu, wtu = _panel_nodes(0.0 * hs, np.sqrt(hs - mid), n_panels, points)
    hu = np.concatenate([wl * wl, hs[:, None] - vu * vu], axis=1)
    jac = np.concatenate([2.0 * wl * wtl, 2.0 * vu * wtu], axis=1)
    hu = np.minimum(hu, hs[:, None])

    mu_s = x @ _mean_coef(params, hs).T
    mu_u = np.einsum("...j,abj->...ab", x, _mean_coef(params, hu))
    sig_s = np.sqrt(_variance(params, hs))
    sig_u = np.sqrt(_variance(params, hu))
    cov = _covariance(params, hu, np.broadcast_to(hs[:, None], hu.shape))
    f = positive_cross_moment(mu_u, mu_s[..., :, None], sig_u, sig_s[:, None], cov)
    inner = np.einsum("...ab,ab->...a", f, jac)
    return 2.0 * inner @ (2.0 * ws * wts)


def _integrate(fn, params, x, a, b, quad: QuadratureScheme, what: str):
    n = quad.n_panels(b - a)
    val = fn(params, x, a, b, n, quad.points_per_dim)
    if not quad.self_check:
        return val
    gap = np.inf
    for _ in range(quad.max_doublings):
        n *= 2
        fine = fn(params, x, a, b, n, quad.points_per_dim)
        gap = float(np.max(np.abs(fine - val)))
        if gap <= quad.tol:
            return fine
        val = fine
    raise NumericalError(
        f"{what}: panel refinement still changes the integral by {gap:.3e} (> {quad.tol:.0e})")


def _offsets(t: float, T: float, start: float | None) -> tuple[float, float]:
    a = 0.0 if start is None else start - t
    b = T - t
    if a < 0:
        raise DomainError("integration must not start before the valuation time")
    if not b > a:
        raise DomainError("integration end must be after its start")
    return a, b


def integrated_positive_mean(params: ModelParams, state, t: float, T: float,
                             quad: QuadratureScheme | None = None, *, start: float | None = None):
    """``E^Q[int_start^T max(s_u, 0) du | X_t]``; ``start`` defaults to ``t``.

    ``state`` may carry leading batch dimensions.
    """
    _require_shadow(params)
    a, b = _offsets(t, T, start)
    x = state_values(state, 3)
    out = _integrate(_first_moment, params, x, a, b, quad or DEFAULT_QUAD, "first moment")
    return out if np.ndim(out) else float(out)


def integrated_positive_second_moment(params: ModelParams, state, t: float, T: float,
                                      quad: QuadratureScheme | None = None, *,
                                      start: float | None = None):
    """``E^Q[(int_start^T max(s_u, 0) du)^2 | X_t]``."""
    _require_shadow(params)
    a, b = _offsets(t, T, start)
    x = state_values(state, 3)
    out = _integrate(_second_moment, params, x, a, b, quad or DEFAULT_QUAD, "second moment")
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# pricing


def shadow_price_1m(params: ModelParams, state, contract: FuturesContract, t: float = 0.0,
                    accrued=None, quad: QuadratureScheme | None = None):
    _require_shadow(params)
    if contract.kind is not ContractKind.ONE_MONTH:
        raise DomainError("shadow_price_1m needs a one-month contract")
    S, T, L = contract.start, contract.end, contract.length
    if t > T:
        raise DomainError("valuation after contract end")
    if t <= S:
        return integrated_positive_mean(params, state, t, T, quad, start=S) / L
    rates = realized_fixings(contract, t, accrued)
    realized = float(rates @ contract.coverage[: len(rates)]) / L
    if T - t <= 0:
        return realized
    return realized + integrated_positive_mean(params, state, t, T, quad) / L


def shadow_price_3m(params: ModelParams, state, contract: FuturesContract, t: float = 0.0,
                    accrued=None, quad: QuadratureScheme | None = None):
    _require_shadow(params)
    if contract.kind is not ContractKind.THREE_MONTH:
        raise DomainError("shadow_price_3m needs a three-month contract")
    S, T, L = contract.start, contract.end, contract.length
    if t > T:
        raise DomainError("valuation after contract end")
    mult = 1.0
    start = S
    if t > S:
        rates = realized_fixings(contract, t, accrued)
        mult = float(np.prod(1.0 + contract.day_weights[: len(rates)] * rates))
        start = t
        if T - t <= 0:
            return (mult - 1.0) / L
    m1 = integrated_positive_mean(params, state, t, T, quad, start=start)
    m2 = integrated_positive_second_moment(params, state, t, T, quad, start=start)
    return (mult * np.exp(m1 + 0.5 * (m2 - m1 * m1)) - 1.0) / L


def shadow_price(params: ModelParams, state, contract: FuturesContract, t: float = 0.0,
                 accrued=None, quad: QuadratureScheme | None = None):
    if contract.kind is ContractKind.ONE_MONTH:
        return shadow_price_1m(params, state, contract, t, accrued, quad)
    return shadow_price_3m(params, state, contract, t, accrued, quad)


def shadow_zcb(params: ModelParams, state, t: float, tau, quad: QuadratureScheme | None = None):
    """``p(t, t+tau) ~ exp(-E + Var/2)`` for the integrated floored rate."""
    _require_shadow(params)
    taus = np.asarray(tau, dtype=float)
    if np.any(taus < 0):
        raise DomainError("tau must be nonnegative")

    def one(h):
        if h == 0.0:
            return 1.0
        m1 = integrated_positive_mean(params, state, t, t + h, quad)
        m2 = integrated_positive_second_moment(params, state, t, t + h, quad)
        return np.exp(-m1 + 0.5 * (m2 - np.square(m1)))

    if taus.ndim == 0:
        return one(float(taus))
    results = [one(float(h)) for h in taus.ravel()]
    return np.array(results).reshape(taus.shape + np.shape(results[0]))
