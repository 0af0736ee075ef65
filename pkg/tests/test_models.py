"""Gaussian loadings against matrix-exponential and quadrature oracles."""

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, quad_vec
from scipy.linalg import expm

from sofrcurve.errors import DomainError, UnsupportedVariantError
from sofrcurve.models import (
    ModelParams,
    Variant,
    integrated_rate_moments,
    loading_A,
    loading_B,
    log_zcb,
    q_cov,
    q_state_moments,
    rate_state_cross,
    short_rate,
    transition_q,
    zcb_price,
)

from conftest import FIXTURE

TAUS = [1e-6, 0.01, 0.25, 1.0, 5.0, 10.0]


def _models():
    return [
        ModelParams.afns3(**FIXTURE),
        ModelParams.afns2(0.7, (0.01, 0.02), (0.2, 0.4), (0.03, -0.01)),
        ModelParams.vasicek(0.3, 0.012, 0.25, 0.02, thetaQ=0.035),
    ]


def _B_oracle(p, tau):
    KQ, rho = p.KQ, p.rho1
    return -quad_vec(lambda s: expm(-KQ.T * s) @ rho, 0.0, tau, epsabs=0, epsrel=1e-13)[0]


def _qcov_oracle(p, tau):
    KQ, S = p.KQ, p.sigma

    def f(s):
        e = expm(-KQ * s)
        return e @ S @ S.T @ e.T

    return quad_vec(f, 0.0, tau, epsabs=0, epsrel=1e-13)[0]


def _int_var_oracle(p, tau):
    """Variance of int_0^tau r: int_0^tau B(tau-s)' Sigma Sigma' B(tau-s) ds."""
    S2 = p.sigma @ p.sigma.T
    return quad(lambda s: (lambda b: b @ S2 @ b)(_B_oracle(p, tau - s)), 0.0, tau,
                epsabs=0, epsrel=1e-12, limit=200)[0]


@pytest.mark.parametrize("p", _models(), ids=lambda p: p.variant.value)
@pytest.mark.parametrize("tau", TAUS)
def test_transition_is_matrix_exponential(p, tau):
    np.testing.assert_allclose(transition_q(p, tau), expm(-p.KQ * tau), rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("p", _models(), ids=lambda p: p.variant.value)
@pytest.mark.parametrize("tau", TAUS)
def test_loading_B_matches_integral(p, tau):
    np.testing.assert_allclose(loading_B(p, tau), _B_oracle(p, tau), rtol=1e-12, atol=1e-18)


@pytest.mark.parametrize("p", _models(), ids=lambda p: p.variant.value)
@pytest.mark.parametrize("tau", TAUS)
def test_q_cov_matches_integral(p, tau):
    np.testing.assert_allclose(q_cov(p, tau), _qcov_oracle(p, tau), rtol=1e-12, atol=1e-22)


@pytest.mark.parametrize("p", _models(), ids=lambda p: p.variant.value)
@pytest.mark.parametrize("tau", [0.01, 0.25, 1.0, 5.0, 10.0])
def test_loading_A_is_half_integrated_variance(p, tau):
    assert loading_A(p, tau) == pytest.approx(0.5 * _int_var_oracle(p, tau), rel=1e-10)


@pytest.mark.parametrize("p", _models(), ids=lambda p: p.variant.value)
@pytest.mark.parametrize("tau", [0.01, 0.5, 3.0])
def test_rate_state_cross_matches_integral(p, tau):
    KQ, S2 = p.KQ, p.sigma @ p.sigma.T
    want = quad_vec(lambda s: _B_oracle(p, tau - s) @ S2 @ expm(-KQ * (tau - s)).T, 0.0, tau,
                    epsabs=0, epsrel=1e-12)[0]
    np.testing.assert_allclose(rate_state_cross(p, tau), want, rtol=1e-10, atol=1e-20)


def test_small_lambda_tau_series_matches_high_precision():
    mp.mp.dps = 40
    p = ModelParams.afns3(**FIXTURE)
    for tau in [1e-9, 1e-6, 1e-4, 1e-3, 0.01, 0.02, 0.05]:
        lam = mp.mpf(p.lam)
        t = mp.mpf(tau)
        x = lam * t
        b2 = -(1 - mp.e ** (-x)) / lam
        b3 = -((1 - mp.e ** (-x)) / lam - t * mp.e ** (-x))
        got = loading_B(p, tau)
        assert got[1] == pytest.approx(float(b2), rel=1e-14)
        assert got[2] == pytest.approx(float(b3), rel=1e-13)
        s2 = p.sigma_diag[1] ** 2
        a2 = s2 / (2 * lam**2) * (t - 2 * (1 - mp.e ** (-x)) / lam + (1 - mp.e ** (-2 * x)) / (2 * lam))
        # slope factor contribution to A
        only_slope = ModelParams.afns2(p.lam, (0.0, p.sigma_diag[1]), (0.1, 0.1), (0.0, 0.0))
        assert loading_A(only_slope, tau) == pytest.approx(float(a2), rel=1e-12)


def test_vasicek_bond_price_closed_form():
    k, s, th = 0.3, 0.012, 0.035
    p = ModelParams.vasicek(k, s, 0.25, 0.02, thetaQ=th)
    for tau in [0.1, 1.0, 7.0]:
        B = (1 - np.exp(-k * tau)) / k
        lnA = (th - s**2 / (2 * k**2)) * (B - tau) - s**2 * B**2 / (4 * k)
        r = 0.01
        assert log_zcb(p, [r], tau) == pytest.approx(lnA - B * r, rel=1e-12)


def test_integrated_moments_and_bond_price_agree(afns3):
    x = np.array([0.02, -0.01, 0.003])
    m, v = integrated_rate_moments(afns3, x, 2.0)
    assert np.log(zcb_price(afns3, x, 2.0)) == pytest.approx(-m + 0.5 * v, rel=1e-13)


def test_q_state_moments_mean(afns3):
    x = np.array([0.02, -0.01, 0.003])
    mom = q_state_moments(afns3, x, 1.5)
    np.testing.assert_allclose(mom.mean, expm(-afns3.KQ * 1.5) @ x, rtol=1e-13, atol=1e-16)


def test_short_rate_floor(shadow, afns3):
    x = np.array([0.001, -0.004, 0.0])
    assert short_rate(afns3, x) == pytest.approx(-0.003)
    assert short_rate(shadow, x) == 0.0


def test_shadow_integrated_moments_unsupported(shadow):
    with pytest.raises(UnsupportedVariantError):
        integrated_rate_moments(shadow, shadow.thetaP, 1.0)


def test_batched_states_broadcast(afns3):
    X = np.random.default_rng(0).normal(0, 0.01, (5, 3))
    got = log_zcb(afns3, X, 2.0)
    want = [log_zcb(afns3, x, 2.0) for x in X]
    np.testing.assert_allclose(got, want, rtol=1e-15)


@pytest.mark.parametrize("bad", [
    dict(lam=-1.0), dict(sigma=(-0.01, 0.01, 0.01)), dict(thetaP=(0.1, 0.2)),
])
def test_params_validation(bad):
    kw = dict(FIXTURE)
    kw.update(bad)
    with pytest.raises(DomainError):
        ModelParams.afns3(**kw)


def test_negative_tau_rejected(afns3):
    with pytest.raises(DomainError):
        loading_B(afns3, -0.1)


def test_nonstationary_unconditional_cov():
    p = ModelParams.afns3(1.0, (0.01,) * 3, (0.0, 0.5, 1.0), (0, 0, 0))
    with pytest.raises(DomainError):
        p.unconditional_cov()


pos = st.floats(1e-3, 5.0)


@settings(max_examples=50, deadline=None)
@given(lam=pos, s=st.tuples(pos, pos, pos), k=st.tuples(pos, pos, pos),
       th=st.tuples(*[st.floats(-0.05, 0.05)] * 3), shadow=st.booleans())
def test_params_dict_round_trip(lam, s, k, th, shadow):
    p = ModelParams.afns3(lam, np.array(s) / 100, k, th, shadow=shadow)
    q = ModelParams.from_dict(p.to_dict())
    assert q.variant is p.variant and q.lam == p.lam
    np.testing.assert_array_equal(q.sigma, p.sigma)
    np.testing.assert_array_equal(q.kP, p.kP)
    np.testing.assert_array_equal(q.thetaP, p.thetaP)


@settings(max_examples=40, deadline=None)
@given(tau=st.floats(0.0, 30.0), lam=st.floats(0.05, 5.0))
def test_A_nonnegative_and_B_nonpositive(tau, lam):
    p = ModelParams.afns3(lam, (0.01, 0.01, 0.01), (0.1, 0.2, 0.3), (0, 0, 0))
    assert loading_A(p, tau) >= 0.0
    assert np.all(loading_B(p, tau) <= 0.0)
    assert Variant(p.variant) is Variant.AFNS3
