"""Cancellation-free evaluation of exponential polynomials.

Many AFNS loadings are combinations such as ``x/2 - (1 - e^-x) + (1 - e^-2x)/4``
whose leading Taylor terms cancel. :class:`ExpPoly` stores the combination
symbolically as ``sum c * x**p * exp(-a*x)`` with exact rational
coefficients, and below a switch point evaluates the Taylor series whose
coefficients were computed exactly. ``value_over_power(x, k)`` returns
``f(x) / x**k`` which stays finite at ``x = 0`` whenever the first ``k``
series coefficients vanish.
"""

from __future__ import annotations

from fractions import Fraction
from math import factorial

import numpy as np

_SERIES_ORDER = 44
_SWITCH = 1.0


class ExpPoly:
    def __init__(self, terms: list[tuple[Fraction | int, int, int]]):
        self.terms = [(Fraction(c), int(p), int(a)) for c, p, a in terms]
        coefs = []
        for n in range(_SERIES_ORDER + 1):
            total = Fraction(0)
            for c, p, a in self.terms:
                if n >= p:
                    total += c * Fraction((-a) ** (n - p), factorial(n - p))
            coefs.append(total)
        self._exact = coefs
        self._float: dict[int, np.ndarray] = {}

    def _series(self, x: np.ndarray, k: int) -> np.ndarray:
        coefs = self._float.get(k)
        if coefs is None:
            if any(self._exact[n] != 0 for n in range(k)):
                raise ValueError(f"expression does not vanish to order {k} at zero")
            coefs = self._float[k] = np.array([float(c) for c in self._exact[k:]])
        return (x[..., None] ** np.arange(len(coefs))) @ coefs

    def _direct(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        for c, p, a in self.terms:
            out = out + float(c) * x**p * np.exp(-a * x)
        return out

    def value_over_power(self, x, k: int = 0):
        x = np.asarray(x, dtype=float)
        small = np.abs(x) <= _SWITCH
        if small.all():
            res = self._series(x, k)
        elif not small.any():
            res = self._direct(x) / x**k
        else:
            xs = np.where(small, x, 0.0)
            xl = np.where(small, 1.0, x)
            res = np.where(small, self._series(xs, k), self._direct(xl) / xl**k)
        return res if res.ndim else float(res)

    def __call__(self, x):
        return self.value_over_power(x, 0)


# (1 - e^-x)
ONE_MINUS_EXP = ExpPoly([(1, 0, 0), (-1, 0, 1)])
# (1 - e^-2x)
ONE_MINUS_EXP2 = ExpPoly([(1, 0, 0), (-1, 0, 2)])
# x - 1 + e^-x
X_MINUS_ONE_MINUS_EXP = ExpPoly([(1, 1, 0), (-1, 0, 0), (1, 0, 1)])
# 1 - e^-x - x e^-x  (curvature loading, ~ x^2/2)
CURV_B = ExpPoly([(1, 0, 0), (-1, 0, 1), (-1, 1, 1)])
# x/2 - (1 - e^-x) + (1 - e^-2x)/4  (~ x^3/6)
SLOPE_A = ExpPoly([(Fraction(1, 2), 1, 0), (-1, 0, 0), (1, 0, 1),
                   (Fraction(1, 4), 0, 0), (Fraction(-1, 4), 0, 2)])
# curvature contribution to A (~ x^5/40)
CURV_A = ExpPoly([(Fraction(1, 2), 1, 0), (1, 1, 1), (Fraction(-1, 4), 2, 2),
                  (Fraction(-3, 4), 1, 2), (-2, 0, 0), (2, 0, 1),
                  (Fraction(5, 8), 0, 0), (Fraction(-5, 8), 0, 2)])
# 1 - e^-2x (2x^2 + 2x + 1)  (~ 4x^3/3)
CURV_VAR = ExpPoly([(1, 0, 0), (-2, 2, 2), (-2, 1, 2), (-1, 0, 2)])
# 1 - e^-2x (2x + 1)  (~ 2x^2)
CURV_COV = ExpPoly([(1, 0, 0), (-2, 1, 2), (-1, 0, 2)])

# rate/state cross-moment pieces
# (1 - e^-x) - (1 - e^-2x)/2  (~ x^2/2)
CROSS_SLOPE = ExpPoly([(1, 0, 0), (-1, 0, 1), (Fraction(-1, 2), 0, 0), (Fraction(1, 2), 0, 2)])
# -1/2 + e^-x (1 + x) - e^-2x (x^2/2 + x + 1/2)  (~ -x^4/8)
CROSS_CURV_SLOPE = ExpPoly([(Fraction(-1, 2), 0, 0), (1, 0, 1), (1, 1, 1),
                            (Fraction(-1, 2), 2, 2), (-1, 1, 2), (Fraction(-1, 2), 0, 2)])
# -1/4 + e^-x - 3/4 e^-2x - x/2 e^-2x  (~ -x^3/6)
CROSS_CURV = ExpPoly([(Fraction(-1, 4), 0, 0), (1, 0, 1), (Fraction(-3, 4), 0, 2),
                      (Fraction(-1, 2), 1, 2)])
