"""Gaussian affine short-rate models: Vasicek, AFNS2, AFNS3 and the shadow AFNS3.

The state follows ``dX = K^Q (theta^Q - X) dt + Sigma dW^Q`` and the short rate
is ``rho0 + rho1'X`` (floored at zero in the shadow variant). Bond prices are
``p(t, t+tau) = exp(A(tau) - a0(tau) + B(tau)'X)`` where ``A`` is half the
variance of the integrated short rate, ``B`` the state loading, and ``a0`` the
deterministic drift contribution (nonzero only for Vasicek with ``theta^Q != 0``).

Time arguments are year fractions; every loading accepts scalar or array
``tau`` and broadcasts over it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Any

import numpy as np

from . import _expoly as ep
from .errors import DomainError, UnsupportedVariantError


class Variant(str, enum.Enum):
    VASICEK = "VASICEK"
    AFNS2 = "AFNS2"
    AFNS3 = "AFNS3"
    SHADOW_AFNS3 = "SHADOW_AFNS3"


_N_FACTORS = {Variant.VASICEK: 1, Variant.AFNS2: 2, Variant.AFNS3: 3, Variant.SHADOW_AFNS3: 3}
FACTOR_NAMES = ("level", "slope", "curve")


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def n_factors(self) -> int:
        return _N_FACTORS[self.variant]

    @property
    def is_shadow(self) -> bool:
        return self.variant is Variant.SHADOW_AFNS3

    @property
    def is_afns(self) -> bool:
        return self.variant is not Variant.VASICEK


def _diag(x, n: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim <= 1:
        a = np.diag(np.broadcast_to(a, (n,)).astype(float))
    if a.shape != (n, n):
        raise DomainError(f"{name} must be {n}x{n}, got {a.shape}")
    if np.any(np.abs(a - np.diag(np.diag(a))) > 0):
        raise DomainError(f"{name} must be diagonal")
    return a


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Full parameter set of one model variant.

    ``sigma`` and ``kP`` are stored as dense diagonal matrices. For AFNS
    variants ``lam`` is the Nelson-Siegel decay and ``theta_q``/``rho0`` are
    zero; Vasicek instead uses a free ``kappa_q`` and ``theta_q``.
    """

    spec: ModelSpec
    sigma: np.ndarray
    kP: np.ndarray
    thetaP: np.ndarray
    lam: float | None = None
    kappa_q: float | None = None
    thetaQ: np.ndarray = field(default=None)

    def __post_init__(self):
        spec = self.spec if isinstance(self.spec, ModelSpec) else ModelSpec(self.spec)
        n = spec.n_factors
        set_ = object.__setattr__
        set_(self, "spec", spec)
        set_(self, "sigma", _diag(self.sigma, n, "sigma"))
        set_(self, "kP", _diag(self.kP, n, "kP"))
        thetaP = np.asarray(self.thetaP, dtype=float).reshape(-1)
        if thetaP.shape != (n,):
            raise DomainError(f"thetaP must have length {n}")
        set_(self, "thetaP", thetaP)
        if np.any(np.diag(self.sigma) < 0):
            raise DomainError("sigma diagonal must be nonnegative")
        if spec.is_afns:
            if self.lam is None or not self.lam > 0:
                raise DomainError("AFNS variants need lam > 0")
            set_(self, "lam", float(self.lam))
            if self.thetaQ is not None and np.any(np.asarray(self.thetaQ) != 0):
                raise DomainError("AFNS variants fix thetaQ = 0")
            set_(self, "thetaQ", np.zeros(n))
            set_(self, "kappa_q", None)
        else:
            if self.kappa_q is None or self.kappa_q < 0:
                raise DomainError("Vasicek needs kappa_q >= 0")
            set_(self, "kappa_q", float(self.kappa_q))
            thetaQ = np.zeros(1) if self.thetaQ is None else np.asarray(self.thetaQ, float).reshape(1)
            set_(self, "thetaQ", thetaQ)
            set_(self, "lam", None)

    # constructors -------------------------------------------------------
    @classmethod
    def afns3(cls, lam, sigma, kP, thetaP, shadow: bool = False) -> "ModelParams":
        variant = Variant.SHADOW_AFNS3 if shadow else Variant.AFNS3
        return cls(ModelSpec(variant), sigma=sigma, kP=kP, thetaP=thetaP, lam=lam)

    @classmethod
    def afns2(cls, lam, sigma, kP, thetaP) -> "ModelParams":
        return cls(ModelSpec(Variant.AFNS2), sigma=sigma, kP=kP, thetaP=thetaP, lam=lam)

    @classmethod
    def vasicek(cls, kappa_q, sigma, kP, thetaP, thetaQ=0.0) -> "ModelParams":
        return cls(ModelSpec(Variant.VASICEK), sigma=sigma, kP=kP, thetaP=thetaP,
                   kappa_q=kappa_q, thetaQ=thetaQ)

    # derived quantities -------------------------------------------------
    @property
    def n(self) -> int:
        return self.spec.n_factors

    @property
    def variant(self) -> Variant:
        return self.spec.variant

    @property
    def sigma_diag(self) -> np.ndarray:
        return np.diag(self.sigma).copy()

    @property
    def kP_diag(self) -> np.ndarray:
        return np.diag(self.kP).copy()

    @property
    def rho0(self) -> float:
        return 0.0

    @property
    def rho1(self) -> np.ndarray:
        return np.array([1.0, 1.0, 0.0][: self.n]) if self.spec.is_afns else np.ones(1)

    @property
    def KQ(self) -> np.ndarray:
        if not self.spec.is_afns:
            return np.array([[self.kappa_q]])
        lam = self.lam
        k = np.array([[0.0, 0.0, 0.0], [0.0, lam, -lam], [0.0, 0.0, lam]])
        return k[: self.n, : self.n]

    def with_sigma_scale(self, factor: float) -> "ModelParams":
        return replace(self, sigma=self.sigma * factor)

    def unconditional_cov(self) -> np.ndarray:
        k = self.kP_diag
        if np.any(k <= 0):
            raise DomainError("stationarity requires positive kP eigenvalues")
        s2 = self.sigma_diag**2
        return np.diag(s2 / (2.0 * k))

    def to_dict(self) -> dict[str, Any]:
        d = {
            "variant": self.variant.value,
            "sigma": self.sigma_diag.tolist(),
            "kP": self.kP_diag.tolist(),
            "thetaP": self.thetaP.tolist(),
        }
        if self.spec.is_afns:
            d["lambda"] = self.lam
        else:
            d["kappaQ"] = self.kappa_q
            d["thetaQ"] = self.thetaQ.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelParams":
        spec = ModelSpec(Variant(d["variant"]))
        if spec.is_afns:
            return cls(spec, sigma=d["sigma"], kP=d["kP"], thetaP=d["thetaP"], lam=d["lambda"])
        return cls(spec, sigma=d["sigma"], kP=d["kP"], thetaP=d["thetaP"],
                   kappa_q=d["kappaQ"], thetaQ=d.get("thetaQ", 0.0))


@dataclass(frozen=True, eq=False)
class StateVector:
    values: np.ndarray
    as_of: date | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(-1))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray


def state_values(state, n: int | None = None) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    if n is not None and x.shape[-1] != n:
        raise DomainError(f"state must have {n} components, got {x.shape[-1]}")
    return x


def _tau(tau) -> np.ndarray:
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0):
        raise DomainError("tau must be nonnegative")
    return t


def _afns_pieces(lam: float, tau: np.ndarray):
    x = lam * tau
    return x, np.exp(-x)


def transition_q(params: ModelParams, tau) -> np.ndarray:
    """``exp(-K^Q tau)`` from its closed form."""
    t = _tau(tau)
    if not params.spec.is_afns:
        return np.exp(-params.kappa_q * t)[..., None, None]
    x, ex = _afns_pieces(params.lam, t)
    out = np.zeros(t.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = ex
    out[..., 1, 2] = x * ex
    out[..., 2, 2] = ex
    n = params.n
    return out[..., :n, :n]


def loading_B(params: ModelParams, tau) -> np.ndarray:
    """State loading of the log bond price; ``-E[int r] = B'X`` for AFNS."""
    t = _tau(tau)
    if not params.spec.is_afns:
        x = params.kappa_q * t
        return (-t * ep.ONE_MINUS_EXP.value_over_power(x, 1))[..., None]
    x = params.lam * t
    out = np.stack(
        [-t, -t * ep.ONE_MINUS_EXP.value_over_power(x, 1), -t * ep.CURV_B.value_over_power(x, 1)],
        axis=-1,
    )
    return out[..., : params.n]


def loading_A(params: ModelParams, tau) -> np.ndarray | float:
    """Half the Q-variance of ``int_t^{t+tau} r_s ds`` (diagonal-Sigma closed form)."""
    t = _tau(tau)
    s = params.sigma_diag
    t3 = t**3
    if not params.spec.is_afns:
        x = params.kappa_q * t
        return s[0] ** 2 * t3 * ep.SLOPE_A.value_over_power(x, 3)
    x = params.lam * t
    out = s[0] ** 2 * t3 / 6.0 + s[1] ** 2 * t3 * ep.SLOPE_A.value_over_power(x, 3)
    if params.n == 3:
        out = out + s[2] ** 2 * t3 * ep.CURV_A.value_over_power(x, 3)
    return out


def drift_loading(params: ModelParams, tau) -> np.ndarray | float:
    """Deterministic part of ``E^Q[int r]`` not carried by ``B'X``."""
    t = _tau(tau)
    if params.spec.is_afns:
        return np.zeros_like(t) if t.ndim else 0.0
    x = params.kappa_q * t
    return params.thetaQ[0] * t * ep.X_MINUS_ONE_MINUS_EXP.value_over_power(x, 1)


def q_cov(params: ModelParams, tau) -> np.ndarray:
    """``V^Q[X_{t+tau} | F_t]``."""
    t = _tau(tau)
    s = params.sigma_diag
    if not params.spec.is_afns:
        x = params.kappa_q * t
        return (s[0] ** 2 * t * ep.ONE_MINUS_EXP2.value_over_power(x, 1) / 2.0)[..., None, None]
    x = params.lam * t
    s3 = s[2] if params.n == 3 else 0.0
    out = np.zeros(t.shape + (3, 3))
    half = t * ep.ONE_MINUS_EXP2.value_over_power(x, 1) / 2.0
    out[..., 0, 0] = s[0] ** 2 * t
    out[..., 1, 1] = s[1] ** 2 * half + s3**2 * t * ep.CURV_VAR.value_over_power(x, 1) / 4.0
    c23 = s3**2 * t * ep.CURV_COV.value_over_power(x, 1) / 4.0
    out[..., 1, 2] = c23
    out[..., 2, 1] = c23
    out[..., 2, 2] = s3**2 * half
    n = params.n
    return out[..., :n, :n]


def rate_state_cross(params: ModelParams, tau) -> np.ndarray:
    """``int_0^tau B(s)' Sigma Sigma' exp(-K^Q s)' ds``, the covariance of
    ``-int r`` with the terminal state over a horizon ``tau``."""
    t = _tau(tau)
    s = params.sigma_diag
    t2 = t**2
    if not params.spec.is_afns:
        x = params.kappa_q * t
        return (-s[0] ** 2 * t2 * ep.CROSS_SLOPE.value_over_power(x, 2))[..., None]
    x = params.lam * t
    s3 = s[2] if params.n == 3 else 0.0
    c1 = -s[0] ** 2 * t2 / 2.0
    c2 = (-s[1] ** 2 * t2 * ep.CROSS_SLOPE.value_over_power(x, 2)
          + s3**2 * t2 * ep.CROSS_CURV_SLOPE.value_over_power(x, 2))
    c3 = s3**2 * t2 * ep.CROSS_CURV.value_over_power(x, 2)
    out = np.stack(np.broadcast_arrays(c1, c2, c3), axis=-1)
    return out[..., : params.n]


def q_transition(params: ModelParams, dt) -> tuple[np.ndarray, np.ndarray]:
    if np.any(np.asarray(dt) <= 0):
        raise DomainError("dt must be positive")
    return transition_q(params, dt), q_cov(params, dt)


def q_state_moments(params: ModelParams, state, tau) -> GaussianMoments:
    x = state_values(state, params.n)
    phi = transition_q(params, tau)
    th = params.thetaQ
    mean = th + np.einsum("...ij,...j->...i", phi, x - th)
    return GaussianMoments(mean=mean, cov=q_cov(params, tau))


def integrated_rate_moments(params: ModelParams, state, tau) -> tuple[Any, Any]:
    """Mean and variance of ``int_t^{t+tau} r_s ds`` under Q (Gaussian variants)."""
    if params.spec.is_shadow:
        raise UnsupportedVariantError("integrated rate is not Gaussian in the shadow model")
    x = state_values(state, params.n)
    b = loading_B(params, tau)
    mean = drift_loading(params, tau) - b @ x
    return mean, 2.0 * loading_A(params, tau)


def short_rate(params: ModelParams, state):
    x = state_values(state, params.n)
    s = params.rho0 + x @ params.rho1
    return np.maximum(s, 0.0) if params.spec.is_shadow else s


def log_zcb(params: ModelParams, state, tau):
    x = state_values(state, params.n)
    bx = np.einsum("...i,...i->...", loading_B(params, tau), x)
    return loading_A(params, tau) - drift_loading(params, tau) + bx


def zcb_price(params: ModelParams, state, tau, quad=None):
    """Zero-coupon bond ``p(t, t+tau)``; shadow variant via the two-cumulant approximation."""
    if params.spec.is_shadow:
        from .shadow import shadow_zcb

        return shadow_zcb(params, state, 0.0, tau, quad=quad)
    return np.exp(log_zcb(params, state, tau))
