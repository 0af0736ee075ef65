"""Bivariate normal CDF and Gauss-Kronrod rules."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import ndtr

from .errors import DomainError

_TWO_PI = 2.0 * np.pi
_CLIP = 40.0


@lru_cache(maxsize=None)
def _half_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = legendre.leggauss(n)
    return x, w


def _bvnu(h, k, r):
    """P(X > h, Y > k) for standard normals with correlation r (|r| < 1).

    Drezner-Wesolowsky quadrature with Genz's refinements; arrays of equal
    shape, finite entries.
    """
    out = np.empty_like(h)
    ar = np.abs(r)
    for lo, hi, n in ((0.0, 0.3, 6), (0.3, 0.75, 12), (0.75, 0.925, 20)):
        m = (ar >= lo) & (ar < hi)
        if np.any(m):
            out[m] = _bvnu_small(h[m], k[m], r[m], n)
    m = ar >= 0.925
    if np.any(m):
        out[m] = _bvnu_large(h[m], k[m], r[m])
    return np.clip(out, 0.0, 1.0)


def _bvnu_small(h, k, r, n):
    x, w = _half_legendre(n)
    hk = h * k
    hs = (h * h + k * k) / 2.0
    asr = np.arcsin(r)
    sn = np.sin(asr[:, None] * (1.0 + x[None, :]) / 2.0)
    terms = w[None, :] * np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn))
    return terms.sum(axis=1) * asr / (2.0 * _TWO_PI) + ndtr(-h) * ndtr(-k)


def _bvnu_large(h, k, r):
    x, w = _half_legendre(20)
    neg = r < 0
    k = np.where(neg, -k, k)
    hk = h * k
    rr = (1.0 - r) * (1.0 + r)
    a = np.sqrt(rr)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr = -(bs / rr + hk) / 2.0
    bvn = np.where(asr > -100.0,
                   a * np.exp(asr) * (1.0 - c * (bs - rr) * (1.0 - d * bs / 5.0) / 3.0
                                      + c * d * rr * rr / 5.0), 0.0)
    b = np.sqrt(bs)
    sp = np.sqrt(_TWO_PI) * ndtr(-b / a)
    bvn = bvn - np.where(hk > -100.0,
                         np.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0), 0.0)
    half = a / 2.0
    xs = (half[:, None] * (x[None, :] + 1.0)) ** 2
    rs = np.sqrt(1.0 - xs)
    asr2 = -(bs[:, None] / xs + hk[:, None]) / 2.0
    spx = 1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs)
    epx = np.exp(-hk[:, None] * xs / (2.0 * (1.0 + rs) ** 2)) / rs
    add = np.where(asr2 > -100.0, half[:, None] * w[None, :] * np.exp(asr2) * (epx - spx), 0.0)
    bvn = -(bvn + add.sum(axis=1)) / _TWO_PI
    pos_part = bvn + ndtr(-np.maximum(h, k))
    lower = np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
    neg_part = np.where(h >= k, -bvn, lower - bvn)
    return np.where(neg, neg_part, pos_part)


def bivariate_normal_cdf(z1, z2, chi):
    """``P(X <= z1, Y <= z2)`` for standard normals with correlation ``chi``."""
    z1, z2, chi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (z1, z2, chi)))
    if np.any(np.abs(chi) > 1.0):
        raise DomainError("correlation must lie in [-1, 1]")
    scalar = z1.ndim == 0
    z1, z2, chi = (np.atleast_1d(np.clip(v, -_CLIP, _CLIP) if v is not chi else v).astype(float)
                   for v in (z1, z2, chi))
    out = np.empty_like(z1)
    plus = 1.0 - chi * chi < 1e-12
    comono = plus & (chi > 0)
    counter = plus & (chi < 0)
    out[comono] = ndtr(np.minimum(z1[comono], z2[comono]))
    out[counter] = np.maximum(ndtr(z1[counter]) + ndtr(z2[counter]) - 1.0, 0.0)
    m = ~plus
    if np.any(m):
        out[m] = _bvnu(-z1[m], -z2[m], chi[m])
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Gauss-Kronrod

_KRONROD_EXTRA = {
    2: [0.0, 0.9258200997725514615665667765839995],
    3: [0.4342437493468025580020715028686, 0.9604912687080202834235070925791],
    7: [0.2077849550078984676006894037732, 0.5860872354676911302941448382587,
        0.8648644233597690727897127886409, 0.9914553711208126392068546975263],
    10: [0.0, 0.2943928627014601981311266031039, 0.5627571346686046833390000992727,
         0.7808177265864168970637175783450, 0.9301574913557082260012071800595,
         0.9956571630258080807355272806890],
}


@lru_cache(maxsize=None)
def gauss_kronrod(points: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes, Kronrod weights and embedded Gauss weights on [-1, 1].

    ``points`` is the Kronrod count ``2n + 1`` (5, 7, 15 or 21). Weights are
    the interpolatory weights of the node set, computed in the Legendre basis.
    """
    n = (points - 1) // 2
    if n not in _KRONROD_EXTRA:
        raise DomainError(f"unsupported Gauss-Kronrod size {points}")
    g, _ = legendre.leggauss(n)
    extra = np.array(_KRONROD_EXTRA[n])
    extra = np.concatenate([-extra[extra > 0], extra])
    nodes = np.sort(np.concatenate([g, extra]))
    mom = np.zeros(len(nodes))
    mom[0] = 2.0
    wk = np.linalg.solve(legendre.legvander(nodes, len(nodes) - 1).T, mom)
    gx, gw = legendre.leggauss(n)
    wg = np.zeros(len(nodes))
    for xi, wi in zip(gx, gw):
        wg[np.argmin(np.abs(nodes - xi))] = wi
    return nodes, wk, wg
